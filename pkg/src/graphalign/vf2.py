"""VF2-style search for injective, edge-preserving embeddings of one graph in another."""
from __future__ import annotations

from .graphs import Graph


def _neighbor_masks(graph: Graph) -> list[int]:
    masks = [0] * graph.n_nodes
    for u, v in graph.edges:
        masks[u] |= 1 << v
        masks[v] |= 1 << u
    return masks


def vf2_mappings(query: Graph, corpus: Graph, limit: int | None = None) -> list[tuple[int, ...]]:
    """Enumerate injective node maps g: V_query -> V_corpus preserving every query edge.

    Returns up to `limit` maps (all of them when `limit` is None), each as a
    tuple indexed by query node. An empty list means the query is not
    subgraph-isomorphic to the corpus. Candidate pairs are tried in
    descending query-degree order, which prunes hopeless branches early.
    """
    nq, nc = query.n_nodes, corpus.n_nodes
    if nq == 0:
        return [()] if limit is None or limit >= 1 else []
    if nq > nc:
        return []

    q_masks = _neighbor_masks(query)
    c_masks = _neighbor_masks(corpus)
    q_deg = [bin(m).count("1") for m in q_masks]
    c_deg = [bin(m).count("1") for m in c_masks]

    order = sorted(range(nq), key=lambda u: (-q_deg[u], u))
    # query neighbors already placed when node order[i] is matched
    placed_nbrs: list[list[int]] = []
    placed_set = 0
    for i, u in enumerate(order):
        placed_nbrs.append([v for v in order[:i] if (q_masks[u] >> v) & 1])
        placed_set |= 1 << u

    results: list[tuple[int, ...]] = []
    assign = [-1] * nq

    def extend(i: int, used: int) -> bool:
        if i == nq:
            results.append(tuple(assign))
            return limit is not None and len(results) >= limit
        u = order[i]
        need = q_deg[u]
        for w in range(nc):
            if (used >> w) & 1 or c_deg[w] < need:
                continue
            ok = True
            for v in placed_nbrs[i]:
                if not (c_masks[w] >> assign[v]) & 1:
                    ok = False
                    break
            if not ok:
                continue
            assign[u] = w
            if extend(i + 1, used | (1 << w)):
                return True
            assign[u] = -1
        return False

    extend(0, 0)
    return results


def is_subgraph_isomorphic(query: Graph, corpus: Graph) -> bool:
    return bool(vf2_mappings(query, corpus, limit=1))
