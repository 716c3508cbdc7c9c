"""Sampling, labeling, and persistence of query/corpus datasets."""
import numpy as np
import pytest

from graphalign.datagen import (DatasetFormatError, SamplingConfig, bfs_sample,
                                generate_dataset, load_dataset, random_connected_graph,
                                save_dataset, split_sizes, synthetic_seed_graphs)
from graphalign.graphs import GraphError, make_graph
from graphalign.vf2 import is_subgraph_isomorphic


def path_graph(n):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)])


def is_connected(g):
    if g.n_nodes == 0:
        return False
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in g.neighbors(u):
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return len(seen) == g.n_nodes


def test_bfs_sample_path_graph_segments():
    p10 = path_graph(10)
    for seed in range(20):
        out = bfs_sample(p10, 4, np.random.default_rng(seed))
        assert out.n_nodes == 4
        assert is_connected(out)
        # a connected induced subgraph of a path is a path segment
        assert out.n_edges == 3


def test_bfs_sample_target_at_least_n_returns_whole_graph():
    g = random_connected_graph(6, np.random.default_rng(0))
    out = bfs_sample(g, 99, np.random.default_rng(1))
    assert out.n_nodes == 6
    assert out.n_edges == g.n_edges


def test_bfs_sample_single_node():
    g = make_graph(1, [])
    out = bfs_sample(g, 1, np.random.default_rng(0))
    assert out.n_nodes == 1 and out.n_edges == 0


def test_bfs_sample_errors():
    with pytest.raises(GraphError):
        bfs_sample(make_graph(0, []), 1, np.random.default_rng(0))
    with pytest.raises(GraphError):
        bfs_sample(make_graph(1, []), 0, np.random.default_rng(0))


def test_bfs_sample_always_connected_and_size_capped():
    rng = np.random.default_rng(2)
    seeds = synthetic_seed_graphs(5, rng)
    for g in seeds:
        for target in (1, 3, 7, g.n_nodes + 5):
            out = bfs_sample(g, target, rng)
            assert is_connected(out)
            assert out.n_nodes == min(target, g.n_nodes)  # seeds are connected


def test_bfs_sample_stops_at_component_boundary():
    two_parts = make_graph(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    rng = np.random.default_rng(3)
    for _ in range(10):
        out = bfs_sample(two_parts, 6, rng)
        assert out.n_nodes == 3
        assert is_connected(out)


def test_split_sizes_default_fractions():
    assert split_sizes(300, (0.60, 0.15, 0.25)) == (180, 45, 75)
    assert split_sizes(32, (0.60, 0.15, 0.25)) == (19, 5, 8)


def small_dataset(seed=0, n_queries=4, n_corpus=6):
    rng = np.random.default_rng(seed)
    seeds = synthetic_seed_graphs(6, rng)
    cfg = SamplingConfig(n_queries=n_queries, n_corpus=n_corpus,
                         query_size=(4, 6), corpus_size=(8, 10))
    return generate_dataset(seeds, cfg, rng_seed=seed)


def test_generate_dataset_shapes_and_labels():
    ds = small_dataset(n_queries=2, n_corpus=4)
    assert ds.relevance.shape == (2, 4)
    for qi, q in enumerate(ds.queries):
        assert 4 <= q.n_nodes <= 6
        for ci, c in enumerate(ds.corpus):
            assert 8 <= c.n_nodes <= 10
            assert ds.relevance[qi, ci] == float(is_subgraph_isomorphic(q, c))


def test_generate_dataset_deterministic():
    a = small_dataset(seed=5)
    b = small_dataset(seed=5)
    assert [g.edges for g in a.queries] == [g.edges for g in b.queries]
    assert [g.edges for g in a.corpus] == [g.edges for g in b.corpus]
    assert a.splits == b.splits
    np.testing.assert_array_equal(a.relevance, b.relevance)


def test_generate_dataset_threads_match_serial():
    rng = np.random.default_rng(6)
    seeds = synthetic_seed_graphs(5, rng)
    cfg = SamplingConfig(n_queries=3, n_corpus=5, query_size=(4, 5), corpus_size=(7, 9))
    serial = generate_dataset(seeds, cfg, rng_seed=1, threads=1)
    pooled = generate_dataset(seeds, cfg, rng_seed=1, threads=4)
    np.testing.assert_array_equal(serial.relevance, pooled.relevance)


def test_generate_dataset_split_assignment():
    ds = small_dataset(seed=7, n_queries=8)
    assert sorted(ds.splits).count("train") == 5
    assert ds.splits.count("val") == 1
    assert ds.splits.count("test") == 2


def test_generate_dataset_impossible_size_errors():
    tiny = [make_graph(3, [(0, 1), (1, 2)])]
    cfg = SamplingConfig(n_queries=1, n_corpus=1, query_size=(2, 3), corpus_size=(10, 12))
    with pytest.raises(GraphError, match=r"\[10, 12\]"):
        generate_dataset(tiny, cfg, rng_seed=0)


def test_round_trip_identity(tmp_path):
    ds = small_dataset(seed=8)
    path = tmp_path / "data.jsonl"
    save_dataset(ds, str(path))
    back = load_dataset(str(path))
    assert [g.edges for g in back.queries] == [g.edges for g in ds.queries]
    assert [g.edges for g in back.corpus] == [g.edges for g in ds.corpus]
    assert back.splits == ds.splits
    assert back.rng_seed == ds.rng_seed
    assert back.cfg == ds.cfg
    np.testing.assert_array_equal(back.relevance, ds.relevance)
    for g, h in zip(back.queries, ds.queries):
        np.testing.assert_array_equal(g.node_feat, h.node_feat)
        np.testing.assert_array_equal(g.adjacency, h.adjacency)


def test_round_trip_empty_dataset(tmp_path):
    from graphalign.datagen import Dataset

    empty = Dataset([], [], [], np.zeros((0, 0)), rng_seed=3,
                    cfg=SamplingConfig(n_queries=0, n_corpus=0))
    path = tmp_path / "empty.jsonl"
    save_dataset(empty, str(path))
    back = load_dataset(str(path))
    assert back.queries == [] and back.corpus == []
    assert back.relevance.shape == (0, 0)


def test_truncated_file_is_rejected(tmp_path):
    ds = small_dataset(seed=9)
    path = tmp_path / "data.jsonl"
    save_dataset(ds, str(path))
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(DatasetFormatError, match="truncated"):
        load_dataset(str(path))


def test_malformed_line_reports_line_number(tmp_path):
    ds = small_dataset(seed=10)
    path = tmp_path / "data.jsonl"
    save_dataset(ds, str(path))
    lines = path.read_text().splitlines()
    lines[2] = '{"kind": "graph", broken'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(str(path))


def test_synthetic_seeds_are_connected_and_degree_capped():
    seeds = synthetic_seed_graphs(10, np.random.default_rng(11), max_degree=4)
    for g in seeds:
        assert is_connected(g)
        assert max(g.degree(u) for u in range(g.n_nodes)) <= 4
