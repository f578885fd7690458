import numpy as np
import pytest

from hetscene import kg
from hetscene.graph import validate


def iri(v):
    return kg.Term("iri", v)


def write_nt(tmp_path, text, name="data.nt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestParser:
    def test_simple_triple(self, tmp_path):
        store = kg.parse_ntriples(write_nt(tmp_path, "<a> <p> <b> .\n"))
        assert store.triples == [(iri("a"), iri("p"), iri("b"))]

    def test_empty_file(self, tmp_path):
        assert kg.parse_ntriples(write_nt(tmp_path, "")).triples == []

    def test_comments_and_blank_lines(self, tmp_path):
        text = "# header\n\n<a> <p> <b> .\n   \n# tail\n"
        assert len(kg.parse_ntriples(write_nt(tmp_path, text)).triples) == 1

    def test_literal_with_escape_and_lang(self, tmp_path):
        store = kg.parse_ntriples(
            write_nt(tmp_path, '<a> <p> "x\\"y"@en .\n'))
        obj = store.triples[0][2]
        assert obj == kg.Term("literal", 'x"y', lang="en")

    def test_typed_literal(self, tmp_path):
        store = kg.parse_ntriples(write_nt(
            tmp_path, '<a> <p> "4"^^<http://www.w3.org/2001/XMLSchema#int> .\n'))
        obj = store.triples[0][2]
        assert obj.value == "4"
        assert obj.datatype == "http://www.w3.org/2001/XMLSchema#int"

    def test_blank_nodes(self, tmp_path):
        store = kg.parse_ntriples(write_nt(tmp_path, "_:b1 <p> _:b2 .\n"))
        s, _, o = store.triples[0]
        assert s == kg.Term("blank", "b1") and o == kg.Term("blank", "b2")

    def test_unicode_escapes(self, tmp_path):
        store = kg.parse_ntriples(
            write_nt(tmp_path, '<a> <p> "snow\\u2603man\\U0001F600" .\n'))
        assert store.triples[0][2].value == "snow☃man\U0001F600"

    def test_malformed_reports_line(self, tmp_path):
        path = write_nt(tmp_path, "<a> <p> <b> .\n<a> <p> nonsense .\n")
        with pytest.raises(kg.KgParseError, match="line 2"):
            kg.parse_ntriples(path)

    def test_literal_predicate_rejected(self, tmp_path):
        with pytest.raises(kg.KgParseError, match="predicate"):
            kg.parse_ntriples(write_nt(tmp_path, '<a> "p" <b> .\n'))

    def test_missing_dot(self, tmp_path):
        with pytest.raises(kg.KgParseError, match="'\\.'"):
            kg.parse_ntriples(write_nt(tmp_path, "<a> <p> <b>\n"))

    def test_round_trip_term_identical(self, tmp_path):
        text = (
            "<http://ex/s> <http://ex/p> <http://ex/o> .\n"
            '<http://ex/s> <http://ex/p> "tab\\there\\nnl" .\n'
            '_:x <http://ex/p> "fran\\u00e7ais"@fr .\n'
            '<http://ex/s> <http://ex/q> "1.5"^^<http://ex/t> .\n')
        store = kg.parse_ntriples(write_nt(tmp_path, text))
        out = tmp_path / "rt.nt"
        kg.serialize_ntriples(store, out)
        again = kg.parse_ntriples(out)
        assert again.triples == store.triples


def toy_task(train, test):
    return kg.make_task(train, test)


class TestBuildGraph:
    def test_single_triple(self):
        store = kg.TripleStore([(iri("t1"), iri("p"), iri("x"))])
        task = toy_task([("t1", "A")], [])
        out = kg.build_kg_graph(store, task, prune_threshold=0)
        g = out.graph
        assert g.num_nodes("target") == 1 and g.num_nodes("other") == 1
        assert len(g.schema.relations) == 2
        assert sum(g.num_edges(r) for r in g.schema.relations) == 2
        assert validate(g) == []

    def test_prune_degree_one_literal(self):
        lit = kg.Term("literal", "leaf")
        store = kg.TripleStore([
            (iri("t1"), iri("p"), iri("hub")),
            (iri("t2"), iri("p"), iri("hub")),
            (iri("hub"), iri("q"), lit),
        ])
        task = toy_task([("t1", "A")], [("t2", "B")])
        out = kg.build_kg_graph(store, task, prune_threshold=2)
        assert out.num_other == 1  # hub survives, the literal does not
        assert all("q" not in name for name in out.graph.schema.relations)

    def test_targets_never_pruned(self):
        store = kg.TripleStore([(iri("t1"), iri("p"), iri("x")),
                                (iri("x"), iri("p"), iri("y"))])
        task = toy_task([("t1", "A")], [])
        out = kg.build_kg_graph(store, task, prune_threshold=99)
        assert "t1" in out.target_index

    def test_isolated_masked_target_kept(self):
        store = kg.TripleStore([(iri("t1"), iri("p"), iri("t2")),
                                (iri("t3"), iri("q"), iri("t3"))])
        task = toy_task([("t1", "A"), ("t3", "B")], [("t2", "B")])
        out = kg.build_kg_graph(store, task, prune_threshold=0)
        assert set(out.target_index) == {"t1", "t2", "t3"}

    def test_missing_target_error(self):
        store = kg.TripleStore([(iri("a"), iri("p"), iri("b"))])
        task = toy_task([("nope", "A")], [])
        with pytest.raises(kg.KgTaskError, match="nope"):
            kg.build_kg_graph(store, task)

    def test_pruning_monotone(self):
        rng = np.random.default_rng(0)
        triples = [(iri(f"n{rng.integers(20)}"), iri(f"p{rng.integers(3)}"),
                    iri(f"n{rng.integers(20)}")) for _ in range(60)]
        store = kg.TripleStore(triples)
        task = toy_task([("n0", "A")], [("n1", "B")])
        prev_nodes = prev_edges = None
        for th in (0, 1, 2, 3, 5):
            out = kg.build_kg_graph(store, task, prune_threshold=th)
            nodes = out.num_other + len(out.target_order)
            edges = sum(out.graph.num_edges(r)
                        for r in out.graph.schema.relations)
            if prev_nodes is not None:
                assert nodes <= prev_nodes and edges <= prev_edges
            prev_nodes, prev_edges = nodes, edges

    def test_merge_rare_predicates(self):
        store = kg.TripleStore(
            [(iri(f"t{i}"), iri("common"), iri("hub")) for i in range(5)]
            + [(iri("t0"), iri("rare"), iri("hub"))])
        task = toy_task([(f"t{i}", "A") for i in range(5)], [])
        out = kg.build_kg_graph(store, task, prune_threshold=0, merge_min=3)
        preds = {name.split("|")[0] for name in out.graph.schema.relations}
        assert "rare" not in preds and "__rare__" in preds


class TestTaskLoading:
    def test_tsv_by_header_name(self, tmp_path):
        path = tmp_path / "train.tsv"
        path.write_text("person\tlabel\nhttp://ex/a\tX\nhttp://ex/b\tY\n")
        pairs = kg.load_split_tsv(path, entity_col="person", label_col="label")
        assert pairs == [("http://ex/a", "X"), ("http://ex/b", "Y")]

    def test_tsv_missing_column(self, tmp_path):
        path = tmp_path / "train.tsv"
        path.write_text("a\tb\nx\ty\n")
        with pytest.raises(kg.KgTaskError, match="nope"):
            kg.load_split_tsv(path, entity_col="nope")

    def test_overlapping_masks_rejected(self):
        with pytest.raises(kg.KgTaskError, match="overlap"):
            kg.KgTask(labels={"e": 0}, train_entities=["e"],
                      test_entities=["e"], classes=["A"])


def hub_store(n_targets=30, n_classes=3, seed=0):
    """Targets connect to one of ``n_classes`` hubs; the hub is the class."""
    rng = np.random.default_rng(seed)
    triples = []
    labels = []
    for i in range(n_targets):
        c = int(rng.integers(n_classes))
        labels.append((f"t{i}", f"C{c}"))
        triples.append((iri(f"t{i}"), iri("memberOf"), iri(f"hub{c}")))
        # noise: a literal attribute per target
        triples.append((iri(f"t{i}"), iri("name"),
                        kg.Term("literal", f"entity {i}")))
    for c in range(n_classes):
        triples.append((iri(f"hub{c}"), iri("partOf"), iri("org")))
    return kg.TripleStore(triples), labels


class TestModel:
    def test_isolated_target_finite(self):
        store = kg.TripleStore([(iri("t1"), iri("p"), iri("x"))])
        task = toy_task([("t1", "A"), ("iso", "B")], [])
        store.triples.append((iri("iso"), iri("selfp"), iri("iso")))
        out = kg.build_kg_graph(store, task, prune_threshold=0)
        model = kg.build_kg_model(out, 2, kg.KgConfig(d=4), seed=0)
        logits = kg.kg_forward(out, model)
        assert logits.shape == (2, 2)
        assert np.all(np.isfinite(logits.data))

    def test_triple_order_equivariance(self):
        store, labels = hub_store(n_targets=8)
        task = toy_task(labels[:6], labels[6:])
        out1 = kg.build_kg_graph(store, task)
        shuffled = kg.TripleStore(list(reversed(store.triples)))
        out2 = kg.build_kg_graph(shuffled, task)
        m1 = kg.build_kg_model(out1, task.num_classes, kg.KgConfig(d=4), seed=3)
        m2 = kg.build_kg_model(out2, task.num_classes, kg.KgConfig(d=4), seed=3)
        # copy m1's parameters onto m2's layout: relations are name-keyed,
        # the target bias permutes with the node order, and the other-node
        # bias is made constant so its (internal) ordering cannot matter
        p1, p2 = m1.tensors(), m2.tensors()
        perm_t = [out1.target_index[e] for e in out2.target_order]
        for name in p2:
            if name == "bias.target":
                p2[name].data = p1[name].data[perm_t]
            elif name != "bias.other":
                p2[name].data = p1[name].data.copy()
        p2["bias.other"].data[...] = 1.0
        p1["bias.other"].data[...] = 1.0
        l1 = kg.kg_forward(out1, m1).data
        l2 = kg.kg_forward(out2, m2).data
        l1_by_entity = {e: l1[i] for e, i in out1.target_index.items()}
        for e, i in out2.target_index.items():
            assert np.allclose(l2[i], l1_by_entity[e], atol=1e-5)

    def test_composed_loop_oracle(self):
        from oracles import het_layer_oracle, params_to_arrays
        store, labels = hub_store(n_targets=4)
        task = toy_task(labels[:3], labels[3:])
        out = kg.build_kg_graph(store, task, prune_threshold=0)
        model = kg.build_kg_model(out, task.num_classes,
                                  kg.KgConfig(d=4, heads=2), seed=1,
                                  dtype=np.float64)
        got = kg.kg_forward(out, model).data

        g = out.graph
        cur = {"target": model.bias["target"].data.copy(),
               "other": model.bias["other"].data.copy()}
        ef = {r: g.edge_feats[r].astype(np.float64) for r in g.edge_feats}
        for layer in model.layers:
            if layer is None:
                continue
            rels = {name: (params_to_arrays(p),
                           g.schema.relation(name).src,
                           g.schema.relation(name).dst)
                    for name, p in layer.per_relation.items()}
            cur[layer.target_type] = het_layer_oracle(
                rels, g.edges, g.num_nodes(layer.target_type), cur, ef)
        expected = cur["target"] @ model.head["w"].data.T + model.head["b"].data
        assert np.allclose(got, expected, atol=1e-10)

    def test_hub_classification_learnable(self):
        store, labels = hub_store(n_targets=30, seed=4)
        task = toy_task(labels[:20], labels[20:])
        out = kg.build_kg_graph(store, task, prune_threshold=0)
        cfg = kg.KgConfig(d=16, lr=0.1, epochs=60)
        _, acc = kg.train_kg(out, task, cfg, seed=0)
        assert acc >= 0.9, acc

    def test_train_determinism(self):
        store, labels = hub_store(n_targets=12, seed=5)
        task = toy_task(labels[:8], labels[8:])
        out = kg.build_kg_graph(store, task)
        cfg = kg.KgConfig(d=8, epochs=5)
        _, a1 = kg.train_kg(out, task, cfg, seed=2)
        _, a2 = kg.train_kg(out, task, cfg, seed=2)
        assert a1 == a2

    def test_unknown_dataset_name(self, tmp_path):
        with pytest.raises(kg.KgTaskError, match="unknown dataset"):
            kg.dataset_paths(tmp_path, "wordnet")

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="aifb"):
            kg.dataset_paths(tmp_path, "aifb")
