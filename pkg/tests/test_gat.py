import numpy as np
import pytest

from hetscene import autodiff as ad
from hetscene import gat
from hetscene.graph import HeteroGraph, Relation, Schema
from hetscene.gradcheck import check_gradients

from oracles import (edge_gat_attention_oracle, edge_gat_oracle,
                     het_layer_oracle, params_to_arrays)


def rand_params(rng, d_in, d_edge, d_out, heads=2, with_edge=True):
    return gat.init_edge_gat(rng, d_in, d_edge, d_out, num_heads=heads,
                             with_edge_features=with_edge, dtype=np.float64)


def t64(a):
    return ad.Tensor(np.asarray(a, dtype=np.float64))


class TestAttention:
    def test_singleton_edge_alpha_one(self):
        rng = np.random.default_rng(0)
        p = rand_params(rng, 3, 2, 4)
        edges = np.array([[0, 1]])
        alpha = gat.edge_gat_attention(p, edges, 2, t64(rng.normal(size=(2, 3))),
                                       t64(rng.normal(size=(2, 3))),
                                       t64(rng.normal(size=(1, 2))))
        assert np.allclose(alpha.data, 1.0)

    def test_identical_sources_get_half(self):
        rng = np.random.default_rng(1)
        p = rand_params(rng, 3, 2, 4)
        src = np.tile(rng.normal(size=(1, 3)), (2, 1))
        efeat = np.tile(rng.normal(size=(1, 2)), (2, 1))
        edges = np.array([[0, 0], [1, 0]])
        alpha = gat.edge_gat_attention(p, edges, 1, t64(src),
                                       t64(rng.normal(size=(1, 3))), t64(efeat))
        assert np.allclose(alpha.data, 0.5)

    def test_two_edge_scalar_oracle(self):
        rng = np.random.default_rng(2)
        p = rand_params(rng, 2, 1, 2, heads=1)
        edges = np.array([[0, 2], [1, 2]])
        src = rng.normal(size=(3, 2))
        ef = rng.normal(size=(2, 1))
        alpha = gat.edge_gat_attention(p, edges, 3, t64(src), t64(src), t64(ef))
        arr = params_to_arrays(p)
        expected = edge_gat_attention_oracle(arr["theta_n"], arr["theta_e"],
                                             arr["attn"], edges, 3, src, src, ef)
        assert np.allclose(alpha.data, expected, atol=1e-12)

    def test_sums_to_one_per_destination(self):
        rng = np.random.default_rng(3)
        p = rand_params(rng, 3, 2, 6, heads=3)
        edges = rng.integers(0, 4, size=(15, 2))
        alpha = gat.edge_gat_attention(p, edges, 4, t64(rng.normal(size=(4, 3))),
                                       t64(rng.normal(size=(4, 3))),
                                       t64(rng.normal(size=(15, 2)))).data
        for i in np.unique(edges[:, 1]):
            sums = alpha[edges[:, 1] == i].sum(axis=0)
            assert np.allclose(sums, 1.0, atol=1e-6)


class TestForward:
    def test_no_incoming_edges_residual_only(self):
        rng = np.random.default_rng(4)
        p = rand_params(rng, 3, 2, 4)
        dst = rng.normal(size=(2, 3))
        out = gat.edge_gat_forward(p, np.zeros((0, 2), dtype=int), 2,
                                   t64(np.zeros((0, 3))), t64(dst),
                                   t64(np.zeros((0, 2))))
        assert np.allclose(out.data, dst @ p.theta_s.data.T)

    def test_identity_passthrough(self):
        # K=1, theta_s=0, theta_e=0, theta_n=I: single edge copies the source
        rng = np.random.default_rng(5)
        p = rand_params(rng, 3, 2, 3, heads=1)
        p.theta_s.data[...] = 0.0
        p.theta_e[0].data[...] = 0.0
        p.theta_n[0].data[...] = np.eye(3)
        src = rng.normal(size=(2, 3))
        out = gat.edge_gat_forward(p, np.array([[0, 1]]), 2, t64(src), t64(src),
                                   t64(rng.normal(size=(1, 2))))
        assert np.allclose(out.data[1], src[0])
        assert np.allclose(out.data[0], 0.0)

    def test_loop_oracle_and_gradient(self):
        rng = np.random.default_rng(6)
        p = rand_params(rng, 2, 2, 4)
        edges = np.array([[0, 1], [2, 1]])
        src = rng.normal(size=(3, 2))
        ef = rng.normal(size=(2, 2))
        out = gat.edge_gat_forward(p, edges, 3, t64(src), t64(src), t64(ef))
        arr = params_to_arrays(p)
        expected = edge_gat_oracle(arr["theta_s"], arr["theta_n"], arr["theta_e"],
                                   arr["attn"], edges, 3, src, src, ef)
        assert np.allclose(out.data, expected, atol=1e-10)

        params = p.tensors()

        def loss():
            return ad.sum_all(ad.relu(
                gat.edge_gat_forward(p, edges, 3, t64(src), t64(src), t64(ef))))

        worst, _ = check_gradients(loss, params)
        assert worst < 1e-5

    def test_randomized_oracle_cases(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 7))
            e_count = int(rng.integers(0, 10))
            edges = rng.integers(0, n, size=(e_count, 2))
            d_in, d_edge, heads = 3, 2, int(rng.integers(1, 4))
            d_out = heads * 2
            p = rand_params(rng, d_in, d_edge, d_out, heads=heads)
            src = rng.normal(size=(n, d_in))
            ef = rng.normal(size=(e_count, d_edge))
            out = gat.edge_gat_forward(p, edges, n, t64(src), t64(src), t64(ef))
            arr = params_to_arrays(p)
            expected = edge_gat_oracle(arr["theta_s"], arr["theta_n"],
                                       arr["theta_e"], arr["attn"], edges, n,
                                       src, src, ef)
            assert np.allclose(out.data, expected, atol=1e-10)


def toy_het_graph():
    schema = Schema(
        node_types={"agent": 3, "lane": 3},
        relations={"interacts": Relation("interacts", "agent", "agent", 2),
                   "under": Relation("under", "lane", "agent", 1)})
    rng = np.random.default_rng(8)
    g = HeteroGraph(
        schema,
        nodes={"agent": rng.normal(size=(4, 3)), "lane": rng.normal(size=(2, 3))},
        edges={"interacts": [[0, 1], [1, 0], [2, 3]], "under": [[0, 0], [1, 2]]},
        edge_feats={"interacts": rng.normal(size=(3, 2)),
                    "under": rng.normal(size=(2, 1))})
    return g, rng


class TestHetLayer:
    def test_single_relation_matches_edge_gat(self):
        g, rng = toy_het_graph()
        p = rand_params(rng, 3, 1, 4)
        layer = gat.HetLayerParams("agent", {"under": p})
        feats = {t: t64(g.nodes[t]) for t in g.nodes}
        efeats = {r: t64(g.edge_feats[r]) for r in g.edge_feats}
        out = gat.het_layer_forward(layer, g, feats, efeats)
        direct = gat.edge_gat_forward(p, g.edges["under"], 4,
                                      feats["lane"], feats["agent"],
                                      efeats["under"])
        assert np.allclose(out.data, np.maximum(direct.data, 0.0))

    def test_negative_preactivation_clamps_to_zero(self):
        g, rng = toy_het_graph()
        p = rand_params(rng, 3, 1, 4, heads=1)
        # force large negative residual, zero messages
        p.theta_s.data[...] = 0.0
        p.theta_n[0].data[...] = 0.0
        p.theta_e[0].data[...] = 0.0
        bias_like = rand_params(rng, 3, 1, 4, heads=1)
        feats = {t: t64(g.nodes[t]) for t in g.nodes}
        efeats = {r: t64(g.edge_feats[r]) for r in g.edge_feats}
        layer = gat.HetLayerParams("agent", {"under": p})
        out = gat.het_layer_forward(layer, g, feats, efeats)
        assert np.allclose(out.data, 0.0)
        del bias_like

    def test_two_relation_composition_oracle(self):
        g, rng = toy_het_graph()
        p1 = rand_params(rng, 3, 2, 4)
        p2 = rand_params(rng, 3, 1, 4)
        layer = gat.HetLayerParams("agent", {"interacts": p1, "under": p2})
        feats = {t: t64(g.nodes[t]) for t in g.nodes}
        efeats = {r: t64(g.edge_feats[r]) for r in g.edge_feats}
        out = gat.het_layer_forward(layer, g, feats, efeats)
        rels = {"interacts": (params_to_arrays(p1), "agent", "agent"),
                "under": (params_to_arrays(p2), "lane", "agent")}
        expected = het_layer_oracle(rels, g.edges, 4,
                                    {t: g.nodes[t].astype(np.float64) for t in g.nodes},
                                    {r: g.edge_feats[r].astype(np.float64)
                                     for r in g.edge_feats})
        assert np.allclose(out.data, expected, atol=1e-10)

    def test_empty_relation_set_rejected(self):
        g, _ = toy_het_graph()
        with pytest.raises(gat.ConfigurationError):
            gat.het_layer_forward(gat.HetLayerParams("agent", {}), g, {}, {})

    def test_wrong_destination_rejected(self):
        g, rng = toy_het_graph()
        p = rand_params(rng, 3, 1, 4)
        layer = gat.HetLayerParams("lane", {"under": p})
        feats = {t: t64(g.nodes[t]) for t in g.nodes}
        with pytest.raises(gat.ConfigurationError):
            gat.het_layer_forward(layer, g, feats, {})


class TestStructuralProperties:
    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        n = 5
        edges = rng.integers(0, n, size=(8, 2))
        src = rng.normal(size=(n, 3))
        ef = rng.normal(size=(8, 2))
        p = rand_params(rng, 3, 2, 4)
        out = gat.edge_gat_forward(p, edges, n, t64(src), t64(src), t64(ef)).data

        perm = rng.permutation(n)
        inv = np.argsort(perm)
        # node i moves to position inv[i]... use perm as new ordering
        src_p = src[perm]
        edges_p = np.stack([inv[edges[:, 0]], inv[edges[:, 1]]], axis=1)
        out_p = gat.edge_gat_forward(p, edges_p, n, t64(src_p), t64(src_p),
                                     t64(ef)).data
        assert np.allclose(out_p, out[perm], atol=1e-10)

    def test_zero_edge_feature_reduction(self):
        rng = np.random.default_rng(10)
        edges = np.array([[0, 1], [1, 2], [2, 0]])
        src = rng.normal(size=(3, 3))
        outs = []
        keep = None
        for d_edge in (1, 4):
            p = rand_params(rng, 3, d_edge, 4)
            for te in p.theta_e:
                te.data[...] = 0.0
            # keep the non-edge pieces identical across edge dims
            if keep is None:
                keep = {"s": p.theta_s.data.copy(),
                        "n": [t.data.copy() for t in p.theta_n],
                        "a": [t.data.copy() for t in p.attn]}
            else:
                p.theta_s.data[...] = keep["s"]
                for k in range(2):
                    p.theta_n[k].data[...] = keep["n"][k]
                    p.attn[k].data[...] = keep["a"][k]
            ef = rng.normal(size=(3, d_edge))
            outs.append(gat.edge_gat_forward(p, edges, 3, t64(src), t64(src),
                                             t64(ef)).data)
        assert np.allclose(outs[0], outs[1], atol=1e-12)

    def test_locality(self):
        g, rng = toy_het_graph()
        p = rand_params(rng, 3, 2, 4)
        layer = gat.HetLayerParams("agent", {"interacts": p})
        efeats = {r: t64(g.edge_feats[r]) for r in g.edge_feats}

        def run(agent_feats):
            feats = {"agent": t64(agent_feats), "lane": t64(g.nodes["lane"])}
            return gat.het_layer_forward(layer, g, feats, efeats).data

        base = g.nodes["agent"].astype(np.float64)
        out1 = run(base)
        changed = base.copy()
        changed[2] += 10.0  # agent 2 only feeds agent 3 via interacts
        out2 = run(changed)
        assert np.array_equal(out1[0], out2[0])
        assert np.array_equal(out1[1], out2[1])
        assert not np.allclose(out1[3], out2[3])
