"""BFS sampling of query/corpus graphs, relevance labeling, and dataset persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, GraphError, make_graph
from .vf2 import is_subgraph_isomorphic
from .parallel import parallel_map


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    n_queries: int = 300
    n_corpus: int = 800
    query_size: tuple[int, int] = (6, 15)
    corpus_size: tuple[int, int] = (17, 20)
    split_fractions: tuple[float, float, float] = (0.60, 0.15, 0.25)

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "n_corpus": self.n_corpus,
            "query_size": list(self.query_size),
            "corpus_size": list(self.corpus_size),
            "split_fractions": list(self.split_fractions),
        }

    @staticmethod
    def from_dict(d: dict) -> "SamplingConfig":
        return SamplingConfig(
            n_queries=int(d["n_queries"]),
            n_corpus=int(d["n_corpus"]),
            query_size=tuple(d["query_size"]),
            corpus_size=tuple(d["corpus_size"]),
            split_fractions=tuple(d["split_fractions"]),
        )


@dataclass
class Dataset:
    queries: list[Graph]
    corpus: list[Graph]
    splits: list[str]                 # per-query: train / val / test
    relevance: np.ndarray             # (|Q|, |C|) 0/1
    rng_seed: int
    cfg: SamplingConfig = field(default_factory=SamplingConfig)
    _pair_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def query_ids(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def pair(self, query_idx: int, corpus_idx: int):
        """Padded pair for a (query, corpus) index combination, cached:
        training and ranking revisit the same combinations every epoch."""
        from .graphs import pad_pair

        key = (query_idx, corpus_idx)
        if key not in self._pair_cache:
            self._pair_cache[key] = pad_pair(self.queries[query_idx],
                                             self.corpus[corpus_idx])
        return self._pair_cache[key]

    @property
    def positive_fraction(self) -> float:
        return float(self.relevance.mean())


def bfs_sample(source: Graph, target_size: int, rng: np.random.Generator) -> Graph:
    """Induced subgraph on the first min(target_size, reachable) BFS-visited nodes.

    The center is drawn uniformly and neighbor visit order is shuffled, so the
    draw is random but reproducible. Node order in the result is BFS discovery
    order; the result is always connected.
    """
    if source.n_nodes == 0:
        raise GraphError("cannot sample from an empty graph")
    if target_size < 1:
        raise GraphError(f"target_size must be >= 1, got {target_size}")
    center = int(rng.integers(source.n_nodes))
    visited = [center]
    in_visited = {center}
    frontier = 0
    while frontier < len(visited) and len(visited) < target_size:
        u = visited[frontier]
        frontier += 1
        nbrs = source.neighbors(u).tolist()
        rng.shuffle(nbrs)
        for v in nbrs:
            if v not in in_visited:
                visited.append(v)
                in_visited.add(v)
                if len(visited) == target_size:
                    break
    index = {old: new for new, old in enumerate(visited)}
    edges = [
        (index[u], index[v])
        for u, v in source.edges
        if u in in_visited and v in in_visited
    ]
    return make_graph(len(visited), edges)


def _ring_chain_graph(rng: np.random.Generator, n_target: int, ring_prob: float,
                      ring_sizes: tuple[int, ...], max_degree: int) -> Graph:
    size = int(rng.choice(ring_sizes))
    edges = [(i, (i + 1) % size) for i in range(size)]
    degree = {i: 2 for i in range(size)}
    n = size
    while n < n_target:
        anchors = [u for u, d in degree.items() if d <= max_degree - 2]
        if not anchors:
            break
        a = int(anchors[rng.integers(len(anchors))])
        if rng.random() < ring_prob:
            size = int(rng.choice(ring_sizes))
            ring = [a] + list(range(n, n + size - 1))
            for i in range(size):
                u, v = ring[i], ring[(i + 1) % size]
                edges.append((u, v))
                degree[u] = degree.get(u, 0) + 1
                degree[v] = degree.get(v, 0) + 1
            n += size - 1
        else:
            length = int(rng.integers(1, 4))
            prev = a
            for _ in range(length):
                edges.append((prev, n))
                degree[prev] = degree.get(prev, 0) + 1
                degree[n] = degree.get(n, 0) + 1
                prev = n
                n += 1
    return make_graph(n, edges)


def synthetic_seed_graphs(count: int, rng: np.random.Generator,
                          size_range: tuple[int, int] = (30, 60),
                          ring_prob: float = 0.5,
                          ring_sizes: tuple[int, ...] = (3, 4, 5, 6),
                          max_degree: int = 4) -> list[Graph]:
    """Connected molecule-like graphs: small rings of varied sizes joined by chains.

    Ring-size diversity is what makes subgraph containment discriminative:
    a sampled query carrying a triangle cannot embed in a corpus chunk whose
    rings are all hexagons, which keeps the positive-pair rate in the range
    real molecule collections show rather than saturating near 1 (trees) or 0.
    """
    return [
        _ring_chain_graph(rng, int(rng.integers(size_range[0], size_range[1] + 1)),
                          ring_prob, ring_sizes, max_degree)
        for _ in range(count)
    ]


def random_connected_graph(n: int, rng: np.random.Generator,
                           edge_prob: float = 0.4) -> Graph:
    """Random spanning tree plus independent extra edges; always connected."""
    edges = set()
    for v in range(1, n):
        edges.add((int(rng.integers(v)), v))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < edge_prob:
                edges.add((u, v))
    return make_graph(n, sorted(edges))


def _sample_sized(seeds: list[Graph], size_range: tuple[int, int],
                  rng: np.random.Generator, max_tries: int = 2000) -> Graph:
    lo, hi = size_range
    for _ in range(max_tries):
        target = int(rng.integers(lo, hi + 1))
        seed = seeds[rng.integers(len(seeds))]
        g = bfs_sample(seed, target, rng)
        if g.n_nodes == target:
            return g
    raise GraphError(
        f"seed graphs too small for requested size range [{lo}, {hi}]"
    )


def split_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = round(n * fractions[0])
    n_val = round(n * fractions[1])
    return n_train, n_val, n - n_train - n_val


def generate_dataset(seed_graphs: list[Graph], cfg: SamplingConfig,
                     rng_seed: int, threads: int = 1) -> Dataset:
    """Sample queries and corpus graphs, label every pair with the VF2 oracle.

    Deterministic given `rng_seed`; the relevance matrix records whether each
    query embeds in each corpus graph.
    """
    if not seed_graphs:
        raise GraphError("no seed graphs supplied")
    rng = np.random.default_rng(rng_seed)
    queries = [_sample_sized(seed_graphs, cfg.query_size, rng) for _ in range(cfg.n_queries)]
    corpus = [_sample_sized(seed_graphs, cfg.corpus_size, rng) for _ in range(cfg.n_corpus)]

    n_train, n_val, n_test = split_sizes(cfg.n_queries, cfg.split_fractions)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    order = rng.permutation(cfg.n_queries)
    assigned = [""] * cfg.n_queries
    for pos, qi in enumerate(order):
        assigned[qi] = splits[pos]

    def label_row(q: Graph) -> np.ndarray:
        return np.array([1.0 if is_subgraph_isomorphic(q, c) else 0.0 for c in corpus])

    rows = parallel_map(label_row, queries, threads=threads)
    relevance = np.stack(rows) if rows else np.zeros((0, cfg.n_corpus))
    return Dataset(queries, corpus, assigned, relevance, rng_seed, cfg)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the dataset as line-delimited JSON: header, graphs, relevance rows."""
    with open(path, "w") as fh:
        header = {
            "kind": "header",
            "seed": dataset.rng_seed,
            "cfg": dataset.cfg.to_dict(),
            "n_queries": len(dataset.queries),
            "n_corpus": len(dataset.corpus),
        }
        fh.write(json.dumps(header) + "\n")
        for i, g in enumerate(dataset.queries):
            rec = {
                "kind": "graph",
                "id": i,
                "role": "query",
                "split": dataset.splits[i],
                "n_nodes": g.n_nodes,
                "edges": [list(e) for e in g.edges],
            }
            fh.write(json.dumps(rec) + "\n")
        for i, g in enumerate(dataset.corpus):
            rec = {
                "kind": "graph",
                "id": i,
                "role": "corpus",
                "split": None,
                "n_nodes": g.n_nodes,
                "edges": [list(e) for e in g.edges],
            }
            fh.write(json.dumps(rec) + "\n")
        for i in range(len(dataset.queries)):
            bits = "".join("1" if x else "0" for x in dataset.relevance[i])
            fh.write(json.dumps({"kind": "relevance", "query_id": i, "bits": bits}) + "\n")


def load_dataset(path: str) -> Dataset:
    """Read a dataset file, failing loudly (with a line number) on any defect."""
    queries: dict[int, Graph] = {}
    corpus: dict[int, Graph] = {}
    splits: dict[int, str] = {}
    rel_rows: dict[int, str] = {}
    header = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            kind = rec.get("kind")
            if kind == "header":
                header = rec
            elif kind == "graph":
                try:
                    g = make_graph(rec["n_nodes"], [tuple(e) for e in rec["edges"]])
                except (KeyError, GraphError) as exc:
                    raise DatasetFormatError(f"line {lineno}: bad graph record ({exc})") from exc
                if rec["role"] == "query":
                    queries[rec["id"]] = g
                    splits[rec["id"]] = rec["split"]
                else:
                    corpus[rec["id"]] = g
            elif kind == "relevance":
                rel_rows[rec["query_id"]] = rec["bits"]
            else:
                raise DatasetFormatError(f"line {lineno}: unknown record kind {kind!r}")
    if header is None:
        raise DatasetFormatError("line 1: missing header record")
    nq, nc = header["n_queries"], header["n_corpus"]
    if len(queries) != nq or len(corpus) != nc or len(rel_rows) != nq:
        raise DatasetFormatError(
            f"truncated file: header promises {nq} queries / {nc} corpus graphs, "
            f"found {len(queries)} / {len(corpus)} with {len(rel_rows)} relevance rows"
        )
    relevance = np.zeros((nq, nc), dtype=np.float64)
    for qid, bits in rel_rows.items():
        if len(bits) != nc:
            raise DatasetFormatError(f"relevance row for query {qid} has {len(bits)} bits, expected {nc}")
        relevance[qid] = [1.0 if b == "1" else 0.0 for b in bits]
    return Dataset(
        queries=[queries[i] for i in range(nq)],
        corpus=[corpus[i] for i in range(nc)],
        splits=[splits[i] for i in range(nq)],
        relevance=relevance,
        rng_seed=header["seed"],
        cfg=SamplingConfig.from_dict(header["cfg"]),
    )
