"""Retrieval ranking, rank metrics, and alignment quality against gold mappings."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .graphs import GraphPair
from .model import ModelConfig, forward_pair
from .params import ParamStore
from .parallel import parallel_map
from .qapgw import max_weight_assignment

logger = logging.getLogger(__name__)


@dataclass
class RankedList:
    corpus_ids: list[int]
    distances: list[float]
    labels: list[int]


def rank_corpus(query_idx: int, dataset: Dataset, store: ParamStore, cfg: ModelConfig,
                threads: int = 1) -> RankedList:
    """Rank every corpus graph for one query, ascending by distance, ties by id."""

    def distance(c_idx: int) -> float:
        pair = dataset.pair(query_idx, c_idx)
        return forward_pair(pair, store, cfg, rng=None).delta.item()

    dists = parallel_map(distance, range(len(dataset.corpus)), threads=threads)
    order = sorted(range(len(dataset.corpus)), key=lambda c: (dists[c], c))
    return RankedList(
        corpus_ids=order,
        distances=[dists[c] for c in order],
        labels=[int(dataset.relevance[query_idx, c]) for c in order],
    )


def average_precision(labels) -> float:
    """Mean over positives of (index among positives) / (rank in the list)."""
    labels = list(labels)
    n_pos = sum(labels)
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    total = 0.0
    seen = 0
    for rank, lab in enumerate(labels, start=1):
        if lab:
            seen += 1
            total += seen / rank
    return total / n_pos


def hits_at_k(labels, k: int) -> float:
    """Fraction of positives ranked before the k-th negative (all, if fewer negatives)."""
    labels = list(labels)
    n_pos = sum(labels)
    if n_pos == 0:
        raise ValueError("hits@k needs at least one positive")
    negatives_seen = 0
    cutoff = len(labels)
    for i, lab in enumerate(labels):
        if not lab:
            negatives_seen += 1
            if negatives_seen == k:
                cutoff = i
                break
    return sum(labels[:cutoff]) / n_pos


def mrr_and_precision_at_k(labels, k: int) -> tuple[float, float]:
    labels = list(labels)
    if sum(labels) == 0:
        raise ValueError("reciprocal rank needs at least one positive")
    first = labels.index(1) + 1
    return 1.0 / first, sum(labels[:k]) / k


@dataclass
class MetricSummary:
    map: float
    hits_at_20: float
    mrr: float
    precision_at_20: float
    per_query: list[dict] = field(default_factory=list)


def evaluate_split(dataset: Dataset, store: ParamStore, cfg: ModelConfig,
                   split: str = "test", k: int = 20, threads: int = 1,
                   warn: bool = True) -> MetricSummary:
    """Mean metrics over the split's queries; queries without positives are skipped."""
    rows = []
    for qi in dataset.query_ids(split):
        if dataset.relevance[qi].sum() == 0:
            if warn:
                logger.warning("query %d has no positive corpus graph; skipped", qi)
            continue
        ranked = rank_corpus(qi, dataset, store, cfg, threads=threads)
        rr, p_at_k = mrr_and_precision_at_k(ranked.labels, k)
        rows.append({
            "query_id": qi,
            "ap": average_precision(ranked.labels),
            f"hits{k}": hits_at_k(ranked.labels, k),
            "rr": rr,
            f"p{k}": p_at_k,
        })
    if not rows:
        raise ValueError(f"no scorable queries in split {split!r}")
    return MetricSummary(
        map=float(np.mean([r["ap"] for r in rows])),
        hits_at_20=float(np.mean([r[f"hits{k}"] for r in rows])),
        mrr=float(np.mean([r["rr"] for r in rows])),
        precision_at_20=float(np.mean([r[f"p{k}"] for r in rows])),
        per_query=rows,
    )


# ---------------------------------------------------------------------------
# alignment quality against gold mappings


@dataclass
class AlignmentQualityRecord:
    pair_id: tuple[int, int]
    traces: list[float]              # real-row trace per refinement stage
    normalized: list[float]          # traces / number of real rows
    n_real: int


def _complete_mapping(mapping, final_alignment: np.ndarray) -> np.ndarray:
    """Extend a real-node gold map to a full permutation, placing the leftover
    rows on the leftover columns by maximum residual weight (best-case completion)."""
    n = final_alignment.shape[0]
    perm = np.zeros((n, n))
    used_cols = set()
    for u, v in enumerate(mapping):
        perm[u, v] = 1.0
        used_cols.add(v)
    free_rows = [r for r in range(len(mapping), n)]
    free_cols = [c for c in range(n) if c not in used_cols]
    if free_rows:
        block = final_alignment[np.ix_(free_rows, free_cols)]
        assign, _ = max_weight_assignment(block)
        for r, ci in zip(free_rows, assign):
            perm[r, free_cols[ci]] = 1.0
    return perm


def _real_row_trace(alignment: np.ndarray, perm: np.ndarray, n_real: int) -> float:
    return float((alignment[:n_real] * perm[:n_real]).sum())


def _edge_gold_mapping(pair: GraphPair, node_map) -> list[int]:
    """The edge correspondence a gold node map induces: query edge -> corpus edge index."""
    corpus_index = {e: i for i, e in enumerate(pair.corpus.edges)}
    out = []
    for u, v in pair.query.edges:
        a, b = node_map[u], node_map[v]
        out.append(corpus_index[(min(a, b), max(a, b))])
    return out


def alignment_quality(alignment_stages: list[np.ndarray], pair: GraphPair,
                      pair_id: tuple[int, int] = (0, 0),
                      granularity: str = "node") -> AlignmentQualityRecord | None:
    """Trace similarity of each refinement stage to the closest gold permutation.

    The gold permutation is chosen to maximize agreement with the final stage,
    then held fixed while earlier stages are scored. Restricted to real query
    rows so padding never inflates the numbers. Returns None without gold maps.
    """
    if not pair.gold_mappings:
        logger.warning("pair %s has no gold mappings; skipped", pair_id)
        return None
    final = alignment_stages[-1]
    if granularity == "node":
        mappings = list(pair.gold_mappings)
        n_real = pair.n_query_real
    else:
        mappings = [_edge_gold_mapping(pair, m) for m in pair.gold_mappings]
        n_real = pair.query.n_edges
    best_perm, best_trace = None, -1.0
    for mapping in mappings:
        perm = _complete_mapping(mapping, final)
        tr = _real_row_trace(final, perm, n_real)
        if tr > best_trace:
            best_trace, best_perm = tr, perm
    traces = [_real_row_trace(stage, best_perm, n_real) for stage in alignment_stages]
    return AlignmentQualityRecord(
        pair_id=pair_id,
        traces=traces,
        normalized=[t / n_real for t in traces],
        n_real=n_real,
    )


def histogram_and_summary(records: list[AlignmentQualityRecord],
                          bin_width: float = 0.1) -> tuple[list[dict], list[dict]]:
    """Per-stage histograms of normalized traces (densities sum to 1) and means."""
    if not records:
        return [], []
    n_stages = len(records[0].normalized)
    n_bins = int(round(1.0 / bin_width))
    hist_rows, mean_rows = [], []
    for t in range(n_stages):
        values = [r.normalized[t] for r in records]
        counts = np.zeros(n_bins)
        for v in values:
            idx = min(int(v / bin_width), n_bins - 1)
            counts[idx] += 1
        density = counts / counts.sum()
        for b in range(n_bins):
            hist_rows.append({
                "stage": t + 1,
                "bin_lo": round(b * bin_width, 10),
                "density": float(density[b]),
            })
        mean_rows.append({"stage": t + 1, "mean_normalized_trace": float(np.mean(values))})
    return hist_rows, mean_rows
