"""Edge-featured graph attention convolution over one relation type, and the
heterogeneous layer that sums several relations into one node update.

Per relation the update of destination node i is

    out_i = Th_s @ v_i  +  ||_k  sum_{j -> i} alpha_k(j,i) (Th_n^k @ v_j + Th_e^k @ e_ji)

with attention logits per head

    l_k(j,i) = leaky_relu( a_k . [Th_n^k @ v_i || Th_n^k @ v_j || Th_e^k @ e_ji] )

normalized by softmax over the incoming edges of i within the relation.  Note
the destination is transformed by the neighbor matrix Th_n, and nodes without
incoming edges keep only the Th_s residual.  The heterogeneous layer applies
ReLU to the sum of the per-relation outputs; each relation contributes its own
residual term inside the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LEAKY_SLOPE = 0.2


class ConfigurationError(ValueError):
    pass


@dataclass
class EdgeGatParams:
    """Weights for one relation: residual transform, per-head neighbor/edge
    transforms and attention vectors.

    theta_s: [d_out x d_in]; theta_n[k]: [d_head x d_in];
    theta_e[k]: [d_head x d_edge] or None when edge features are disabled;
    attn[k]: [3*d_head x 1] (or [2*d_head x 1] without edge features).
    d_out must equal num_heads * d_head so residual and heads line up.
    """

    theta_s: ad.Tensor
    theta_n: list
    theta_e: list
    attn: list

    @property
    def num_heads(self):
        return len(self.theta_n)

    @property
    def d_head(self):
        return self.theta_n[0].shape[0]

    @property
    def d_out(self):
        return self.theta_s.shape[0]

    @property
    def uses_edge_features(self):
        return self.theta_e[0] is not None

    def tensors(self, prefix=""):
        out = {prefix + "theta_s": self.theta_s}
        for k in range(self.num_heads):
            out[f"{prefix}theta_n.{k}"] = self.theta_n[k]
            if self.theta_e[k] is not None:
                out[f"{prefix}theta_e.{k}"] = self.theta_e[k]
            out[f"{prefix}attn.{k}"] = self.attn[k]
        return out


def init_edge_gat(rng, d_in, d_edge, d_out, num_heads=2, with_edge_features=True,
                  dtype=np.float32):
    if d_out % num_heads:
        raise ConfigurationError(f"d_out {d_out} not divisible by {num_heads} heads")
    d_head = d_out // num_heads
    theta_n, theta_e, attn = [], [], []
    attn_in = (3 if with_edge_features else 2) * d_head
    for _ in range(num_heads):
        theta_n.append(ad.glorot(rng, d_head, d_in, dtype=dtype))
        theta_e.append(ad.glorot(rng, d_head, d_edge, dtype=dtype)
                       if with_edge_features else None)
        attn.append(ad.glorot(rng, attn_in, 1, dtype=dtype))
    return EdgeGatParams(theta_s=ad.glorot(rng, d_out, d_in, dtype=dtype),
                         theta_n=theta_n, theta_e=theta_e, attn=attn)


def _tr(w):
    return ad.record_op(w.data.T.copy(), (w,), (lambda g: g.T,))


def _head_terms(p, k, src_feats, dst_feats, edge_feats, src_idx, dst_idx):
    hn_src = ad.matmul(src_feats, _tr(p.theta_n[k]))
    hn_dst = hn_src if dst_feats is src_feats else ad.matmul(dst_feats, _tr(p.theta_n[k]))
    hs_g = ad.gather_rows(hn_src, src_idx)
    hd_g = ad.gather_rows(hn_dst, dst_idx)
    parts = [hd_g, hs_g]
    he = None
    if p.uses_edge_features:
        he = ad.matmul(edge_feats, _tr(p.theta_e[k]))
        parts.append(he)
    logits = ad.matmul(ad.concat_cols(parts), p.attn[k])
    return logits, hs_g, he


def edge_gat_attention(p, edges, n_dst, src_feats, dst_feats, edge_feats):
    """Attention coefficients, shape [E x K]; columns are heads.

    ``edges`` is an (E, 2) int array; coefficients of edges sharing a
    destination sum to 1 per head.
    """
    src_idx, dst_idx = edges[:, 0], edges[:, 1]
    cols = []
    for k in range(p.num_heads):
        logits, _, _ = _head_terms(p, k, src_feats, dst_feats, edge_feats,
                                   src_idx, dst_idx)
        lr = ad.leaky_relu(logits, LEAKY_SLOPE)
        cols.append(ad.segment_softmax(lr, dst_idx, n_dst))
    return ad.concat_cols(cols)


def edge_gat_forward(p, edges, n_dst, src_feats, dst_feats, edge_feats):
    """Per-relation node update, shape [n_dst x d_out]."""
    src_idx, dst_idx = edges[:, 0], edges[:, 1]
    residual = ad.matmul(dst_feats, _tr(p.theta_s))
    if len(edges) == 0:
        return residual
    head_outs = []
    for k in range(p.num_heads):
        logits, hs_g, he = _head_terms(p, k, src_feats, dst_feats, edge_feats,
                                       src_idx, dst_idx)
        alpha = ad.segment_softmax(ad.leaky_relu(logits, LEAKY_SLOPE),
                                   dst_idx, n_dst)
        msg = ad.add(hs_g, he) if he is not None else hs_g
        head_outs.append(ad.segment_sum(ad.mul(alpha, msg), dst_idx, n_dst))
    return ad.add(residual, ad.concat_cols(head_outs))


@dataclass
class HetLayerParams:
    """One heterogeneous layer: the node type it updates and the per-relation
    attention parameters of every active relation."""

    target_type: str
    per_relation: dict  # relation name -> EdgeGatParams

    def tensors(self, prefix=""):
        out = {}
        for name, p in self.per_relation.items():
            out.update(p.tensors(prefix=f"{prefix}{name}."))
        return out


def het_layer_forward(layer, graph, feats, edge_feats):
    """ReLU of the sum of per-relation attention updates for one node type.

    ``feats``/``edge_feats`` map node type / relation name to embedding
    tensors (all node embeddings share one width).  Relations with zero edges
    still contribute their residual transform.
    """
    if not layer.per_relation:
        raise ConfigurationError("heterogeneous layer with empty relation set")
    total = None
    for name, p in layer.per_relation.items():
        rel = graph.schema.relation(name)
        if rel.dst != layer.target_type:
            raise ConfigurationError(
                f"relation {name!r} points into {rel.dst!r}, layer updates "
                f"{layer.target_type!r}")
        out = edge_gat_forward(
            p, graph.edges[name], graph.num_nodes(rel.dst),
            feats[rel.src], feats[rel.dst],
            edge_feats.get(name) if p.uses_edge_features else None)
        total = out if total is None else ad.add(total, out)
    return ad.relu(total)
