"""Rank metrics against hand values and an independent brute-force reimplementation."""
import numpy as np
import pytest

from graphalign.datagen import SamplingConfig, generate_dataset, synthetic_seed_graphs
from graphalign.evaluation import (AlignmentQualityRecord, alignment_quality,
                                   average_precision, histogram_and_summary, hits_at_k,
                                   mrr_and_precision_at_k, rank_corpus)
from graphalign.graphs import make_graph, pad_pair
from graphalign.model import ModelConfig, build_params


# ---------------------------------------------------------------- oracles
# straight re-statements of the metric definitions, kept deliberately naive


def oracle_ap(labels):
    positions = [i + 1 for i, l in enumerate(labels) if l]
    return sum((k + 1) / pos for k, pos in enumerate(positions)) / len(positions)


def oracle_hits(labels, k):
    neg_positions = [i for i, l in enumerate(labels) if not l]
    cutoff = neg_positions[k - 1] if len(neg_positions) >= k else len(labels)
    return sum(labels[:cutoff]) / sum(labels)


def oracle_mrr_prec(labels, k):
    first = next(i for i, l in enumerate(labels) if l)
    return 1.0 / (first + 1), sum(labels[:k]) / k


def test_ap_hand_values():
    assert average_precision([1, 1, 0]) == 1.0
    assert average_precision([0, 1]) == 0.5
    assert average_precision([1, 0, 1]) == pytest.approx((1 / 1 + 2 / 3) / 2)


def test_hits_hand_values():
    assert hits_at_k([1, 1, 0, 1], 1) == pytest.approx(2 / 3)
    assert hits_at_k([1, 1, 1, 0], 2) == 1.0
    assert hits_at_k([0, 0, 1], 1) == 0.0
    # fewer negatives than k: every positive counts
    assert hits_at_k([0, 1, 1], 2) == 1.0


def test_mrr_precision_hand_values():
    assert mrr_and_precision_at_k([1, 0, 0], 2) == (1.0, 0.5)
    assert mrr_and_precision_at_k([0, 0, 1], 3) == (pytest.approx(1 / 3), pytest.approx(1 / 3))
    assert mrr_and_precision_at_k([1, 0, 0, 0], 2) == (1.0, 0.5)


def test_metrics_need_a_positive():
    for fn in (average_precision, lambda l: hits_at_k(l, 2),
               lambda l: mrr_and_precision_at_k(l, 2)):
        with pytest.raises(ValueError):
            fn([0, 0, 0])


def test_metrics_match_brute_force_on_random_lists():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        labels = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int).tolist()
        if sum(labels) == 0:
            labels[int(rng.integers(n))] = 1
        k = int(rng.integers(1, 25))
        assert average_precision(labels) == oracle_ap(labels)
        assert hits_at_k(labels, k) == oracle_hits(labels, k)
        assert mrr_and_precision_at_k(labels, k) == oracle_mrr_prec(labels, k)


# ---------------------------------------------------------------- ranking


def tiny_dataset(seed=0):
    rng = np.random.default_rng(seed)
    seeds = synthetic_seed_graphs(6, rng)
    cfg = SamplingConfig(n_queries=3, n_corpus=5, query_size=(4, 6), corpus_size=(8, 10))
    return generate_dataset(seeds, cfg, rng_seed=seed)


MODEL_CFG = ModelConfig(variant="node", schedule="lazy", rounds=1, layers=2)


def test_rank_corpus_sorted_with_stable_ties():
    ds = tiny_dataset()
    store = build_params(MODEL_CFG, np.random.default_rng(0))
    ranked = rank_corpus(0, ds, store, MODEL_CFG)
    assert len(ranked.corpus_ids) == 5
    assert ranked.distances == sorted(ranked.distances)
    for (c1, d1), (c2, d2) in zip(zip(ranked.corpus_ids, ranked.distances),
                                  zip(ranked.corpus_ids[1:], ranked.distances[1:])):
        if d1 == d2:
            assert c1 < c2


def test_rank_corpus_duplicate_corpus_graph_ties_adjacent():
    ds = tiny_dataset(1)
    ds.corpus[3] = ds.corpus[1]
    ds.relevance[:, 3] = ds.relevance[:, 1]
    store = build_params(MODEL_CFG, np.random.default_rng(0))
    ranked = rank_corpus(0, ds, store, MODEL_CFG)
    where1 = ranked.corpus_ids.index(1)
    where3 = ranked.corpus_ids.index(3)
    assert abs(where1 - where3) == 1
    assert ranked.distances[where1] == ranked.distances[where3]


def test_rank_corpus_invariant_to_presentation_order():
    ds = tiny_dataset(2)
    store = build_params(MODEL_CFG, np.random.default_rng(1))
    base = rank_corpus(1, ds, store, MODEL_CFG)
    again = rank_corpus(1, ds, store, MODEL_CFG, threads=3)
    assert base.corpus_ids == again.corpus_ids
    assert base.distances == again.distances


# ------------------------------------------------------- alignment quality


def test_alignment_quality_exact_match_traces_n():
    q = make_graph(3, [(0, 1), (1, 2)])
    c = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    pair = pad_pair(q, c, with_gold=True)
    from graphalign.graphs import mapping_to_permutation

    gold = mapping_to_permutation(pair, pair.gold_mappings[0])
    rec = alignment_quality([gold], pair, granularity="node")
    assert rec.traces == [3.0]
    assert rec.normalized == [1.0]


def test_alignment_quality_uniform_gives_one_without_padding():
    q = make_graph(3, [(0, 1), (1, 2)])
    c = make_graph(3, [(0, 1), (1, 2)])
    pair = pad_pair(q, c, with_gold=True)
    rec = alignment_quality([np.full((3, 3), 1 / 3)], pair, granularity="node")
    assert rec.traces[0] == pytest.approx(1.0)  # each row contributes 1/n


def test_alignment_quality_uniform_with_padding_counts_real_rows():
    q = make_graph(3, [(0, 1), (1, 2)])
    c = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    pair = pad_pair(q, c, with_gold=True)
    rec = alignment_quality([np.full((5, 5), 0.2)], pair, granularity="node")
    assert rec.traces[0] == pytest.approx(3 * 0.2)


def test_alignment_quality_partial_between_bounds():
    q = make_graph(3, [(0, 1), (1, 2)])
    c = make_graph(3, [(0, 1), (1, 2)])
    pair = pad_pair(q, c, with_gold=True)
    soft = np.array([[0.8, 0.1, 0.1],
                     [0.1, 0.8, 0.1],
                     [0.1, 0.1, 0.8]])
    rec = alignment_quality([soft], pair, granularity="node")
    assert 1.0 < rec.traces[0] < 3.0
    assert rec.traces[0] == pytest.approx(2.4)


def test_alignment_quality_picks_closest_gold():
    # two gold embeddings of an edge into a path of 3: (0,1)->(0,1),(1,0),(1,2),(2,1)
    q = make_graph(2, [(0, 1)])
    c = make_graph(3, [(0, 1), (1, 2)])
    pair = pad_pair(q, c, with_gold=True)
    near_12 = np.array([[0.05, 0.9, 0.05],
                        [0.05, 0.05, 0.9],
                        [0.9, 0.05, 0.05]])
    rec = alignment_quality([near_12], pair, granularity="node")
    assert rec.traces[0] == pytest.approx(1.8)  # gold map (1, 2) matches best


def test_alignment_quality_skips_without_gold():
    q = make_graph(3, [(0, 1), (1, 2), (0, 2)])
    c = make_graph(3, [(0, 1), (1, 2)])
    pair = pad_pair(q, c, with_gold=True)
    assert pair.gold_mappings == ()
    assert alignment_quality([np.eye(3)], pair) is None


def test_alignment_quality_edge_granularity():
    q = make_graph(3, [(0, 1), (1, 2)])
    c = make_graph(4, [(0, 1), (1, 2), (2, 3)])
    pair = pad_pair(q, c, with_gold=True)
    stage = np.full((3, 3), 1 / 3)
    rec = alignment_quality([stage], pair, granularity="edge")
    assert rec.n_real == 2
    assert rec.traces[0] == pytest.approx(2 / 3)


def test_untrained_model_map_near_positive_rate():
    # random-init distances rank arbitrarily; over many queries the mean AP
    # settles near the positive rate
    rng = np.random.default_rng(9)
    seeds = synthetic_seed_graphs(24, rng, ring_prob=1.0)
    cfg_s = SamplingConfig(n_queries=24, n_corpus=32, query_size=(6, 12),
                           corpus_size=(13, 16))
    ds = generate_dataset(seeds, cfg_s, rng_seed=9)
    cfg = ModelConfig(variant="node", schedule="lazy", rounds=1, layers=2)
    store = build_params(cfg, np.random.default_rng(0))
    maps = []
    for qi in range(len(ds.queries)):
        if ds.relevance[qi].sum() == 0:
            continue
        ranked = rank_corpus(qi, ds, store, cfg)
        maps.append(average_precision(ranked.labels))
    assert abs(float(np.mean(maps)) - ds.positive_fraction) < 0.1


def test_histogram_densities_sum_to_one():
    records = [AlignmentQualityRecord((0, i), [0.5, 2.5], [0.17, 0.83], 3)
               for i in range(7)]
    hist, means = histogram_and_summary(records)
    for stage in (1, 2):
        total = sum(r["density"] for r in hist if r["stage"] == stage)
        assert total == pytest.approx(1.0)
    assert means[0]["mean_normalized_trace"] == pytest.approx(0.17)
    assert means[1]["mean_normalized_trace"] == pytest.approx(0.83)


def test_histogram_single_record_one_bin():
    hist, _ = histogram_and_summary([AlignmentQualityRecord((0, 0), [1.0], [0.34], 3)])
    nonzero = [r for r in hist if r["density"] > 0]
    assert len(nonzero) == 1
    assert nonzero[0]["bin_lo"] == pytest.approx(0.3)


def test_histogram_value_one_lands_in_last_bin():
    hist, _ = histogram_and_summary([AlignmentQualityRecord((0, 0), [3.0], [1.0], 3)])
    nonzero = [r for r in hist if r["density"] > 0]
    assert nonzero[0]["bin_lo"] == pytest.approx(0.9)
