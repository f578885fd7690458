"""Directed heterogeneous graph with typed nodes, typed edges and edge features.

A :class:`Schema` fixes the node types, the relation types, each relation's
source/destination node type, and the feature dimensionalities.  A
:class:`HeteroGraph` holds dense per-type feature matrices and per-relation
coordinate edge lists.  Graphs are immutable after construction; batching is a
disjoint union with index offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str
    edge_dim: int


@dataclass(frozen=True)
class Schema:
    node_types: dict  # type name -> feature dim
    relations: dict   # relation name -> Relation

    def __post_init__(self):
        for r in self.relations.values():
            if r.src not in self.node_types or r.dst not in self.node_types:
                raise SchemaError(
                    f"relation {r.name}: endpoint types ({r.src}, {r.dst}) "
                    f"not all declared")

    def relation(self, name):
        try:
            return self.relations[name]
        except KeyError:
            raise SchemaError(f"unknown relation type {name!r}") from None


class HeteroGraph:
    """Typed node sets with features plus typed edge lists with edge features.

    ``nodes[t]`` is an ``(n_t, d_t)`` float array; ``edges[r]`` an ``(E_r, 2)``
    int array of (source, destination) indices into the dom/ran node types;
    ``edge_feats[r]`` an ``(E_r, d_r)`` float array.  ``graph_ids[t]`` tracks
    batch membership after a disjoint union (all zero for a single graph).
    """

    def __init__(self, schema, nodes=None, edges=None, edge_feats=None,
                 graph_ids=None):
        self.schema = schema
        self.nodes = {}
        self.edges = {}
        self.edge_feats = {}
        self.graph_ids = {}
        for t, dim in schema.node_types.items():
            feats = None if nodes is None else nodes.get(t)
            if feats is None:
                feats = np.zeros((0, dim), dtype=np.float32)
            self.nodes[t] = np.asarray(feats, dtype=np.float32).reshape(-1, dim)
        for name, rel in schema.relations.items():
            e = None if edges is None else edges.get(name)
            if e is None:
                e = np.zeros((0, 2), dtype=np.int64)
            self.edges[name] = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            f = None if edge_feats is None else edge_feats.get(name)
            if f is None:
                f = np.zeros((len(self.edges[name]), rel.edge_dim), dtype=np.float32)
            self.edge_feats[name] = np.asarray(f, dtype=np.float32)
        for t in schema.node_types:
            gid = None if graph_ids is None else graph_ids.get(t)
            if gid is None:
                gid = np.zeros(len(self.nodes[t]), dtype=np.int64)
            self.graph_ids[t] = np.asarray(gid, dtype=np.int64)

    def num_nodes(self, t):
        return len(self.nodes[t])

    def num_edges(self, r):
        return len(self.edges[r])


def validate(g: HeteroGraph):
    """Collect every invariant violation; empty list means the graph is ok."""
    problems = []
    for t, feats in g.nodes.items():
        if t not in g.schema.node_types:
            problems.append(f"unknown node type {t!r}")
            continue
        want = g.schema.node_types[t]
        if feats.ndim != 2 or feats.shape[1] != want:
            problems.append(
                f"node type {t!r}: feature dim {feats.shape[1:]} != {want}")
        if len(g.graph_ids[t]) != len(feats):
            problems.append(f"node type {t!r}: graph-id length mismatch")
    for name, e in g.edges.items():
        if name not in g.schema.relations:
            problems.append(f"unknown relation type {name!r}")
            continue
        rel = g.schema.relations[name]
        n_src = g.num_nodes(rel.src)
        n_dst = g.num_nodes(rel.dst)
        for col, limit, side in ((0, n_src, "source"), (1, n_dst, "destination")):
            bad = (e[:, col] < 0) | (e[:, col] >= limit)
            for row in np.flatnonzero(bad):
                problems.append(
                    f"relation {name!r} edge {row}: {side} index "
                    f"{e[row, col]} out of range [0, {limit})")
        feats = g.edge_feats[name]
        if feats.shape[0] != len(e):
            problems.append(
                f"relation {name!r}: {feats.shape[0]} edge-feature rows "
                f"for {len(e)} edges")
        elif feats.ndim != 2 or feats.shape[1] != rel.edge_dim:
            problems.append(
                f"relation {name!r}: edge-feature dim {feats.shape[1]} "
                f"!= {rel.edge_dim}")
    return problems


def in_neighbors(g: HeteroGraph, r: str, i: int):
    """Edges of relation r arriving at destination i, in insertion order.

    Returns a list of (source index, edge row) pairs.
    """
    rel = g.schema.relation(r)
    if not 0 <= i < g.num_nodes(rel.dst):
        raise IndexError(
            f"destination {i} out of range for {rel.dst!r} "
            f"({g.num_nodes(rel.dst)} nodes)")
    e = g.edges[r]
    rows = np.flatnonzero(e[:, 1] == i)
    return [(int(e[row, 0]), int(row)) for row in rows]


def disjoint_union(graphs):
    """Block-diagonal merge of graphs sharing one schema.

    Edge indices are offset by the cumulative node counts of preceding graphs;
    ``graph_ids`` records the originating graph per node.
    """
    if not graphs:
        raise ValueError("disjoint_union of no graphs")
    schema = graphs[0].schema
    for g in graphs[1:]:
        if g.schema is not schema and g.schema != schema:
            raise SchemaError("disjoint_union: graphs use different schemas")
    nodes, edges, edge_feats, graph_ids = {}, {}, {}, {}
    offsets = {t: np.zeros(len(graphs) + 1, dtype=np.int64)
               for t in schema.node_types}
    for t in schema.node_types:
        counts = [g.num_nodes(t) for g in graphs]
        offsets[t][1:] = np.cumsum(counts)
        nodes[t] = np.concatenate([g.nodes[t] for g in graphs], axis=0)
        graph_ids[t] = np.concatenate(
            [np.full(c, k, dtype=np.int64) for k, c in enumerate(counts)])
    for name, rel in schema.relations.items():
        parts = []
        for k, g in enumerate(graphs):
            e = g.edges[name].copy()
            e[:, 0] += offsets[rel.src][k]
            e[:, 1] += offsets[rel.dst][k]
            parts.append(e)
        edges[name] = np.concatenate(parts, axis=0)
        edge_feats[name] = np.concatenate(
            [g.edge_feats[name] for g in graphs], axis=0)
    return HeteroGraph(schema, nodes, edges, edge_feats, graph_ids)
