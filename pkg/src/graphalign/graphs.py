"""Undirected graphs with scalar node/edge features, and padded query/corpus pairs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph without self-loops.

    Real nodes carry feature 1.0, padding nodes 0.0; edges carry feature 1.0.
    `adjacency` is the dense symmetric 0/1 matrix implied by `edges`.
    Identity semantics (eq=False): instances are compared and cached by object.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_feat: np.ndarray
    edge_feat: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        self.adjacency.setflags(write=False)
        self.node_feat.setflags(write=False)
        self.edge_feat.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[u])

    def degree(self, u: int) -> int:
        return int(self.adjacency[u].sum())


def make_graph(n_nodes: int, edges, node_feat=None) -> Graph:
    """Build a Graph from a node count and an iterable of index pairs.

    Edges are stored with the lower index first, in input order; duplicates
    and self-loops are rejected.
    """
    if n_nodes < 0:
        raise GraphError(f"negative node count {n_nodes}")
    canon = []
    seen = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise GraphError(f"self-loop at node {u}")
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphError(f"edge ({u},{v}) out of range for {n_nodes} nodes")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        canon.append(key)
    adjacency = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    for u, v in canon:
        adjacency[u, v] = 1.0
        adjacency[v, u] = 1.0
    if node_feat is None:
        node_feat = np.ones(n_nodes, dtype=np.float64)
    else:
        node_feat = np.asarray(node_feat, dtype=np.float64).copy()
        if node_feat.shape != (n_nodes,):
            raise GraphError(f"node_feat shape {node_feat.shape} != ({n_nodes},)")
    edge_feat = np.ones(len(canon), dtype=np.float64)
    return Graph(n_nodes, tuple(canon), node_feat, edge_feat, adjacency)


def pad_graph(graph: Graph, n_total: int) -> Graph:
    """Append isolated zero-feature nodes until the graph has `n_total` nodes."""
    if n_total < graph.n_nodes:
        raise GraphError(f"cannot pad {graph.n_nodes} nodes down to {n_total}")
    if n_total == graph.n_nodes:
        return graph
    feat = np.zeros(n_total, dtype=np.float64)
    feat[: graph.n_nodes] = graph.node_feat
    return make_graph(n_total, graph.edges, node_feat=feat)


def relabel_graph(graph: Graph, perm) -> Graph:
    """Relabel nodes so that old index i becomes perm[i]."""
    perm = list(perm)
    if sorted(perm) != list(range(graph.n_nodes)):
        raise GraphError("not a permutation of the node indices")
    feat = np.empty(graph.n_nodes, dtype=np.float64)
    for old, new in enumerate(perm):
        feat[new] = graph.node_feat[old]
    edges = [(perm[u], perm[v]) for u, v in graph.edges]
    return make_graph(graph.n_nodes, edges, node_feat=feat)


@dataclass(frozen=True, eq=False)
class GraphPair:
    """A query/corpus pair padded to a common node count and edge count.

    `gold_mappings` holds injective edge-preserving maps from real query
    nodes into corpus nodes (empty unless requested at construction).
    """

    query: Graph
    corpus: Graph
    n_pad: int
    e_pad: int
    n_query_real: int
    n_corpus_real: int
    gold_mappings: tuple[tuple[int, ...], ...] = field(default=())


def pad_pair(query: Graph, corpus: Graph, with_gold: bool = False,
             gold_limit: int | None = 10000) -> GraphPair:
    """Pad the smaller side with isolated nodes so both graphs share a node count.

    With `with_gold`, every injective edge-preserving node map of the real
    query into the real corpus is enumerated (capped at `gold_limit`).
    """
    from .vf2 import vf2_mappings

    n_pad = max(query.n_nodes, corpus.n_nodes)
    e_pad = max(query.n_edges, corpus.n_edges)
    gold = ()
    if with_gold:
        gold = tuple(vf2_mappings(query, corpus, limit=gold_limit))
    return GraphPair(
        query=pad_graph(query, n_pad),
        corpus=pad_graph(corpus, n_pad),
        n_pad=n_pad,
        e_pad=e_pad,
        n_query_real=query.n_nodes,
        n_corpus_real=corpus.n_nodes,
        gold_mappings=gold,
    )


def mapping_to_permutation(pair: GraphPair, mapping) -> np.ndarray:
    """Complete a real-node mapping into a hard n_pad x n_pad permutation matrix.

    Unmatched query rows (pads) are assigned to the unused corpus columns in
    increasing order; callers needing a specific completion should build it
    themselves.
    """
    n = pair.n_pad
    perm = np.zeros((n, n), dtype=np.float64)
    used = set()
    for u, v in enumerate(mapping):
        perm[u, v] = 1.0
        used.add(v)
    free = [c for c in range(n) if c not in used]
    rows = [u for u in range(n) if u >= len(mapping)]
    for u, v in zip(rows, free):
        perm[u, v] = 1.0
    return perm
