"""Knowledge-graph node classification: N-Triples ingestion, preprocessing
into a two-node-type heterogeneous graph, and the cascaded attention model
with learnable per-node bias features.

The graph splits nodes into ``target`` (the task's labeled entities) and
``other`` (everything else, including literals).  Every distinct predicate
becomes one relation per occurring (source type, destination type) pair, plus
an inverse relation so information can flow against triple direction.  Layers
1-2 update ``other`` nodes from all their neighbors, layer 3 aggregates from
``other`` into ``target``, layer 4 from ``target`` into ``target``; a linear
head maps final target embeddings to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gat
from . import training as tr
from .graph import HeteroGraph, Relation, Schema


class KgParseError(ValueError):
    pass


class KgTaskError(ValueError):
    pass


# ---------------------------------------------------------------------------
# N-Triples terms and parsing


@dataclass(frozen=True)
class Term:
    kind: str               # "iri" | "blank" | "literal"
    value: str
    datatype: str = None    # IRI of the datatype, literals only
    lang: str = None        # language tag, literals only


@dataclass
class TripleStore:
    triples: list  # of (Term, Term, Term)


_ESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f",
            '"': '"', "'": "'", "\\": "\\"}


def _unescape(text, what):
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        if i + 1 >= len(text):
            raise KgParseError(f"dangling escape in {what}")
        e = text[i + 1]
        if e in _ESCAPES:
            out.append(_ESCAPES[e])
            i += 2
        elif e in ("u", "U"):
            n = 4 if e == "u" else 8
            hexpart = text[i + 2:i + 2 + n]
            if len(hexpart) != n:
                raise KgParseError(f"truncated \\{e} escape in {what}")
            try:
                out.append(chr(int(hexpart, 16)))
            except ValueError:
                raise KgParseError(f"bad \\{e} escape {hexpart!r} in {what}")
            i += 2 + n
        else:
            raise KgParseError(f"unknown escape \\{e} in {what}")
    return "".join(out)


def _escape_literal(text):
    return (text.replace("\\", "\\\\").replace('"', '\\"')
            .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t"))


def _skip_ws(line, pos):
    while pos < len(line) and line[pos] in " \t":
        pos += 1
    return pos


def _scan_term(line, pos):
    pos = _skip_ws(line, pos)
    if pos >= len(line):
        raise KgParseError("unexpected end of line, expected a term")
    c = line[pos]
    if c == "<":
        end = line.find(">", pos + 1)
        if end < 0:
            raise KgParseError("unterminated IRI")
        return Term("iri", _unescape(line[pos + 1:end], "IRI")), end + 1
    if c == "_" and line[pos:pos + 2] == "_:":
        end = pos + 2
        while end < len(line) and line[end] not in " \t":
            end += 1
        if end == pos + 2:
            raise KgParseError("empty blank node label")
        return Term("blank", line[pos + 2:end]), end
    if c == '"':
        i = pos + 1
        while i < len(line):
            if line[i] == "\\":
                i += 2
                continue
            if line[i] == '"':
                break
            i += 1
        if i >= len(line):
            raise KgParseError("unterminated literal")
        value = _unescape(line[pos + 1:i], "literal")
        i += 1
        lang = datatype = None
        if line[i:i + 1] == "@":
            end = i + 1
            while end < len(line) and line[end] not in " \t":
                end += 1
            lang = line[i + 1:end]
            if not lang:
                raise KgParseError("empty language tag")
            i = end
        elif line[i:i + 2] == "^^":
            if line[i + 2:i + 3] != "<":
                raise KgParseError("datatype must be an IRI")
            end = line.find(">", i + 3)
            if end < 0:
                raise KgParseError("unterminated datatype IRI")
            datatype = _unescape(line[i + 3:end], "datatype IRI")
            i = end + 1
        return Term("literal", value, datatype=datatype, lang=lang), i
    raise KgParseError(f"cannot parse term starting at {line[pos:pos + 20]!r}")


def parse_ntriples_line(line):
    """One triple from one N-Triples line (without trailing newline)."""
    s, pos = _scan_term(line, 0)
    p, pos = _scan_term(line, pos)
    o, pos = _scan_term(line, pos)
    pos = _skip_ws(line, pos)
    if line[pos:pos + 1] != ".":
        raise KgParseError("missing terminating '.'")
    if line[pos + 1:].strip(" \t"):
        raise KgParseError(f"trailing content after '.': {line[pos + 1:]!r}")
    if p.kind != "iri":
        raise KgParseError(f"predicate must be an IRI, got {p.kind}")
    return (s, p, o)


def parse_ntriples(path) -> TripleStore:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                triples.append(parse_ntriples_line(line.rstrip("\r\n")))
            except KgParseError as e:
                raise KgParseError(f"{path}: line {lineno}: {e}") from None
    return TripleStore(triples)


def term_to_nt(t: Term):
    if t.kind == "iri":
        return f"<{t.value}>"
    if t.kind == "blank":
        return f"_:{t.value}"
    body = f'"{_escape_literal(t.value)}"'
    if t.lang:
        return f"{body}@{t.lang}"
    if t.datatype:
        return f"{body}^^<{t.datatype}>"
    return body


def serialize_ntriples(store: TripleStore, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s, p, o in store.triples:
            fh.write(f"{term_to_nt(s)} {term_to_nt(p)} {term_to_nt(o)} .\n")


# ---------------------------------------------------------------------------
# task definition


@dataclass
class KgTask:
    labels: dict            # entity IRI -> class index
    train_entities: list
    test_entities: list
    classes: list           # class names in index order

    def __post_init__(self):
        overlap = set(self.train_entities) & set(self.test_entities)
        if overlap:
            raise KgTaskError(f"train/test masks overlap: {sorted(overlap)[:3]}")
        missing = [e for e in self.train_entities + self.test_entities
                   if e not in self.labels]
        if missing:
            raise KgTaskError(f"masked entities without labels: {missing[:3]}")

    @property
    def num_classes(self):
        return len(self.classes)


def load_split_tsv(path, entity_col=0, label_col=1):
    """(entity, label) pairs from a TSV file with a header row.

    Columns may be addressed by index or by header name.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise KgTaskError(f"{path}: empty split file")
    header = lines[0].split("\t")

    def resolve(col):
        if isinstance(col, int):
            return col
        if col not in header:
            raise KgTaskError(f"{path}: no column {col!r} in header {header}")
        return header.index(col)

    ei, li = resolve(entity_col), resolve(label_col)
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if max(ei, li) >= len(cells):
            raise KgTaskError(f"{path}: line {lineno}: too few columns")
        pairs.append((cells[ei], cells[li]))
    return pairs


def make_task(train_pairs, test_pairs) -> KgTask:
    classes = sorted({lab for _, lab in train_pairs + test_pairs})
    index = {c: i for i, c in enumerate(classes)}
    labels = {e: index[lab] for e, lab in train_pairs + test_pairs}
    return KgTask(labels=labels,
                  train_entities=[e for e, _ in train_pairs],
                  test_entities=[e for e, _ in test_pairs],
                  classes=classes)


# ---------------------------------------------------------------------------
# graph construction


def _node_key(term: Term):
    if term.kind == "iri":
        return ("iri", term.value)
    if term.kind == "blank":
        return ("blank", term.value)
    return ("literal", term.value, term.datatype, term.lang)


@dataclass
class KgGraph:
    graph: HeteroGraph
    target_order: list      # entity IRI per target node index
    target_index: dict      # entity IRI -> target node index
    num_other: int


def build_kg_graph(store: TripleStore, task: KgTask, prune_threshold=2,
                   merge_min=0) -> KgGraph:
    """Two-type heterogeneous graph per the preprocessing recipe.

    ``other`` nodes with total degree below ``prune_threshold`` are removed
    (single pass) together with their incident triples; target nodes are
    never pruned.  Predicates occurring fewer than ``merge_min`` times are
    merged into a catch-all predicate first (off when ``merge_min`` is 0).
    """
    target_set = set(task.labels)
    pred_count = {}
    for _, p, _ in store.triples:
        pred_count[p.value] = pred_count.get(p.value, 0) + 1

    def pred_name(p):
        if merge_min and pred_count[p.value] < merge_min:
            return "__rare__"
        return p.value

    degree = {}
    for s, _, o in store.triples:
        for t in (s, o):
            k = _node_key(t)
            degree[k] = degree.get(k, 0) + 1
    present = {k[1] for k in degree if k[0] == "iri"}
    absent = [e for e in task.train_entities + task.test_entities
              if e not in present]
    if absent:
        raise KgTaskError(f"masked entities not in the store: {absent[:3]}")

    def node_type(key):
        return "target" if key[0] == "iri" and key[1] in target_set else "other"

    def keep(key):
        return node_type(key) == "target" or degree[key] >= prune_threshold

    kept_triples = [(s, p, o) for s, p, o in store.triples
                    if keep(_node_key(s)) and keep(_node_key(o))]

    target_order, target_index = [], {}
    other_index = {}
    for s, _, o in kept_triples:
        for t in (s, o):
            k = _node_key(t)
            if node_type(k) == "target":
                if k[1] not in target_index:
                    target_index[k[1]] = len(target_order)
                    target_order.append(k[1])
            elif k not in other_index:
                other_index[k] = len(other_index)
    # masked entities must exist even if isolated
    for e in task.train_entities + task.test_entities:
        if e not in target_index:
            target_index[e] = len(target_order)
            target_order.append(e)

    def index_of(t):
        k = _node_key(t)
        return (node_type(k),
                target_index[k[1]] if node_type(k) == "target"
                else other_index[k])

    rel_edges = {}
    for s, p, o in kept_triples:
        st, si = index_of(s)
        ot, oi = index_of(o)
        fwd = (pred_name(p), st, ot)
        rel_edges.setdefault(fwd, []).append((si, oi))
        inv = (pred_name(p) + "^inv", ot, st)
        rel_edges.setdefault(inv, []).append((oi, si))

    relations = {}
    edges = {}
    edge_feats = {}
    for (pred, st, dt), pairs in sorted(rel_edges.items()):
        name = f"{pred}|{st}>{dt}"
        relations[name] = Relation(name, st, dt, 1)
        edges[name] = np.array(pairs, dtype=np.int64)
        edge_feats[name] = np.ones((len(pairs), 1), dtype=np.float32)

    schema = Schema(node_types={"target": 1, "other": 1}, relations=relations)
    nodes = {"target": np.zeros((len(target_order), 1), dtype=np.float32),
             "other": np.zeros((len(other_index), 1), dtype=np.float32)}
    graph = HeteroGraph(schema=schema, nodes=nodes, edges=edges,
                        edge_feats=edge_feats)
    return KgGraph(graph=graph, target_order=target_order,
                   target_index=target_index, num_other=len(other_index))


# ---------------------------------------------------------------------------
# model


@dataclass
class KgConfig:
    d: int = 32             # learnable bias dimension
    heads: int = 2
    prune_threshold: int = 2
    merge_min: int = 0
    lr: float = 0.01
    epochs: int = 50

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class KgModel:
    config: KgConfig
    num_classes: int
    bias: dict              # node type -> (n, d) Tensor, learnable features
    layers: list            # 4 x (HetLayerParams or None)
    head: dict              # {"w", "b"}

    def tensors(self):
        out = {f"bias.{t}": b for t, b in self.bias.items()}
        for li, layer in enumerate(self.layers):
            if layer is not None:
                out.update(layer.tensors(prefix=f"layer{li}."))
        out["head.w"], out["head.b"] = self.head["w"], self.head["b"]
        return out

    def num_parameters(self):
        return sum(t.data.size for t in self.tensors().values())


def _layer_relations(graph, stage):
    """Relation names participating in cascade stage 0..3."""
    rels = graph.schema.relations.values()
    if stage in (0, 1):
        return [r.name for r in rels if r.dst == "other"]
    if stage == 2:
        return [r.name for r in rels if r.src == "other" and r.dst == "target"]
    return [r.name for r in rels if r.src == "target" and r.dst == "target"]


def build_kg_model(kg: KgGraph, num_classes, cfg: KgConfig = None, seed=0,
                   dtype=np.float32) -> KgModel:
    cfg = cfg or KgConfig()
    rng = np.random.default_rng(seed)
    d = cfg.d
    bias = {
        "target": ad.glorot(rng, len(kg.target_order), d, dtype=dtype),
        "other": ad.glorot(rng, max(kg.num_other, 1), d, dtype=dtype),
    }
    layers = []
    for stage in range(4):
        names = _layer_relations(kg.graph, stage)
        if not names:
            layers.append(None)
            continue
        per_rel = {name: gat.init_edge_gat(rng, d, 1, d, num_heads=cfg.heads,
                                           with_edge_features=True,
                                           dtype=dtype)
                   for name in names}
        target_type = "other" if stage in (0, 1) else "target"
        layers.append(gat.HetLayerParams(target_type, per_rel))
    head = {"w": ad.glorot(rng, num_classes, d, dtype=dtype),
            "b": ad.zeros_param((1, num_classes), dtype=dtype)}
    return KgModel(config=cfg, num_classes=num_classes, bias=bias,
                   layers=layers, head=head)


def kg_forward(kg: KgGraph, model: KgModel):
    """Class logits for all target nodes, in target_order."""
    g = kg.graph
    feats = {"target": model.bias["target"], "other": model.bias["other"]}
    efeats = {r: ad.Tensor(g.edge_feats[r].astype(model.head["w"].dtype))
              for r in g.edge_feats}
    for layer in model.layers:
        if layer is None:
            continue
        feats[layer.target_type] = gat.het_layer_forward(layer, g, feats,
                                                         efeats)
    wt = ad.record_op(model.head["w"].data.T.copy(), (model.head["w"],),
                      (lambda grad: grad.T,))
    return ad.add(ad.matmul(feats["target"], wt), model.head["b"])


# ---------------------------------------------------------------------------
# training / benchmark


def train_kg(kg: KgGraph, task: KgTask, cfg: KgConfig = None, seed=0,
             log=None):
    """Full-batch training; returns (model, test accuracy)."""
    cfg = cfg or KgConfig()
    model = build_kg_model(kg, task.num_classes, cfg, seed=seed)
    params = model.tensors()
    state = tr.AdamState(lr=cfg.lr)
    train_idx = np.array([kg.target_index[e] for e in task.train_entities])
    train_lab = np.array([task.labels[e] for e in task.train_entities])
    for epoch in range(cfg.epochs):
        ad.zero_grads(params.values())
        with ad.Tape() as tape:
            logits = kg_forward(kg, model)
            loss = tr.cross_entropy_loss(ad.gather_rows(logits, train_idx),
                                         train_lab)
        ad.backward(tape, loss)
        tr.adam_step(params, state)
        if log:
            log(epoch, float(loss.data))
    return model, evaluate_kg(kg, model, task)


def evaluate_kg(kg: KgGraph, model: KgModel, task: KgTask):
    """Accuracy on the masked test entities."""
    logits = kg_forward(kg, model).data
    idx = np.array([kg.target_index[e] for e in task.test_entities])
    lab = np.array([task.labels[e] for e in task.test_entities])
    pred = logits[idx].argmax(axis=1)
    return float(np.mean(pred == lab))


DATASETS = ("aifb", "mutag", "bgs", "am")


def dataset_paths(data_dir, name):
    """Conventional file layout: <name>.nt, <name>_train.tsv, <name>_test.tsv."""
    if name not in DATASETS:
        raise KgTaskError(f"unknown dataset {name!r}, expected one of {DATASETS}")
    base = Path(data_dir)
    paths = {"nt": base / f"{name}.nt",
             "train": base / f"{name}_train.tsv",
             "test": base / f"{name}_test.tsv"}
    for kind, p in paths.items():
        if not p.exists():
            raise FileNotFoundError(f"{name}: missing {kind} file {p}")
    return paths


def run_benchmark(name, data_dir, cfg: KgConfig = None, seeds=10, log=None):
    """Mean/std test accuracy over seeds on one named dataset."""
    cfg = cfg or KgConfig()
    paths = dataset_paths(data_dir, name)
    store = parse_ntriples(paths["nt"])
    task = make_task(load_split_tsv(paths["train"]),
                     load_split_tsv(paths["test"]))
    kg = build_kg_graph(store, task, prune_threshold=cfg.prune_threshold,
                        merge_min=cfg.merge_min)
    accs = []
    for seed in range(seeds):
        _, acc = train_kg(kg, task, cfg, seed=seed)
        accs.append(acc)
        if log:
            log(seed, acc)
    return {"dataset": name, "seeds": seeds, "accuracies": accs,
            **{f"acc_{k}": v for k, v in tr.summarize(accs).items()}}
