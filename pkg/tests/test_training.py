"""Hinge loss, batching, Adam, and the early-stopped training loop."""
import logging

import numpy as np
import pytest

from graphalign import autodiff as ad
from graphalign.autodiff import Value
from graphalign.datagen import SamplingConfig, generate_dataset, synthetic_seed_graphs
from graphalign.model import ModelConfig, build_params
from graphalign.params import ParamStore
from graphalign.training import (OptimizerState, TrainConfig, TrainingError, adam_step,
                                 hinge_ranking_loss, make_batches, train_loop,
                                 triple_loss_and_grads)


def loss_value(pos, neg, margin):
    return hinge_ranking_loss(Value([[pos]]), Value([[neg]]), margin).item()


def test_hinge_hand_values():
    assert loss_value(0.2, 1.0, 0.5) == 0.0
    assert loss_value(1.0, 0.2, 0.5) == pytest.approx(1.3)
    assert loss_value(0.7, 0.7, 0.5) == pytest.approx(0.5)


def test_hinge_zero_margin_zero_loss_zero_gradient():
    pos, neg = Value([[0.3]]), Value([[0.9]])
    loss = hinge_ranking_loss(pos, neg, 0.0)
    assert loss.item() == 0.0
    ad.backward(loss)
    assert pos.grad[0, 0] == 0.0 and neg.grad[0, 0] == 0.0


def test_hinge_gradients_flow_both_ways():
    pos, neg = Value([[1.0]]), Value([[0.2]])
    ad.backward(hinge_ranking_loss(pos, neg, 0.5))
    assert pos.grad[0, 0] == 1.0
    assert neg.grad[0, 0] == -1.0


def dataset_with_relevance(relevance, splits):
    from graphalign.datagen import Dataset
    from graphalign.graphs import make_graph

    relevance = np.asarray(relevance, dtype=np.float64)
    nq, nc = relevance.shape
    path = lambda n: make_graph(n, [(i, i + 1) for i in range(n - 1)])
    return Dataset(
        queries=[path(3) for _ in range(nq)],
        corpus=[path(5) for _ in range(nc)],
        splits=splits,
        relevance=relevance,
        rng_seed=0,
        cfg=SamplingConfig(n_queries=nq, n_corpus=nc),
    )


def test_make_batches_full_product():
    ds = dataset_with_relevance([[1, 1, 0, 0, 0]], ["train"])
    batches = make_batches(ds, "train", np.random.default_rng(0), 100, None)
    triples = [t for b in batches for t in b]
    assert len(triples) == 2 * 3
    assert len(set(triples)) == 6


def test_make_batches_cap_per_query():
    ds = dataset_with_relevance([[1, 1, 0, 0, 0]], ["train"])
    batches = make_batches(ds, "train", np.random.default_rng(0), 100, 2)
    assert sum(len(b) for b in batches) == 2


def test_make_batches_deterministic():
    ds = dataset_with_relevance([[1, 0, 1, 0, 1]], ["train"])
    a = make_batches(ds, "train", np.random.default_rng(5), 2, 3)
    b = make_batches(ds, "train", np.random.default_rng(5), 2, 3)
    assert a == b


def test_make_batches_skips_degenerate_queries(caplog):
    ds = dataset_with_relevance([[1, 1, 1], [1, 0, 1]], ["train", "train"])
    with caplog.at_level(logging.WARNING):
        batches = make_batches(ds, "train", np.random.default_rng(0), 10, None)
    triples = [t for b in batches for t in b]
    assert all(t[0] == 1 for t in triples)
    assert "lacks positives or negatives" in caplog.text


def fresh_store():
    return build_params(ModelConfig(variant="node", rounds=1, layers=1),
                        np.random.default_rng(0))


def test_adam_zero_gradient_no_decay_is_identity():
    store = fresh_store()
    before = {n: v.data.copy() for n, v in store.items()}
    grads = {n: np.zeros_like(v.data) for n, v in store.items()}
    cfg = TrainConfig(weight_decay=0.0)
    adam_step(store, grads, OptimizerState(), cfg)
    for n, v in store.items():
        np.testing.assert_array_equal(v.data, before[n])


def test_adam_first_step_moves_against_gradient_sign():
    store = fresh_store()
    before = {n: v.data.copy() for n, v in store.items()}
    rng = np.random.default_rng(1)
    grads = {n: rng.choice([-1.0, 1.0], size=v.shape) for n, v in store.items()}
    adam_step(store, grads, OptimizerState(), TrainConfig(weight_decay=0.0))
    for n, v in store.items():
        np.testing.assert_allclose(before[n] - v.data,
                                   TrainConfig().learning_rate * np.sign(grads[n]),
                                   atol=1e-10)


def test_adam_deterministic():
    results = []
    for _ in range(2):
        store = fresh_store()
        state = OptimizerState()
        cfg = TrainConfig()
        g = {n: np.full(v.shape, 0.3) for n, v in store.items()}
        adam_step(store, g, state, cfg)
        adam_step(store, g, state, cfg)
        results.append(np.concatenate([v.data.ravel() for _, v in store.items()]))
    np.testing.assert_array_equal(results[0], results[1])


def test_adam_nan_gradient_names_parameter():
    store = fresh_store()
    grads = {n: np.zeros_like(v.data) for n, v in store.items()}
    grads["msg.w"][0, 0] = np.nan
    with pytest.raises(TrainingError, match="msg.w"):
        adam_step(store, grads, OptimizerState(), TrainConfig())


def test_adam_touches_only_parameters():
    # one step changes every trainable tensor and nothing else exists to change
    store = fresh_store()
    state = OptimizerState()
    g = {n: np.full(v.shape, 0.5) for n, v in store.items()}
    adam_step(store, g, state, TrainConfig())
    assert state.step == 1
    assert set(state.first) == set(store.names())


def training_dataset(seed=0):
    rng = np.random.default_rng(seed)
    seeds = synthetic_seed_graphs(8, rng)
    cfg = SamplingConfig(n_queries=6, n_corpus=8, query_size=(4, 6),
                         corpus_size=(8, 10))
    ds = generate_dataset(seeds, cfg, rng_seed=seed)
    # make sure each split has a scorable query
    ok = (ds.relevance.sum(axis=1) > 0) & (ds.relevance.sum(axis=1) < len(ds.corpus))
    assert ok.any()
    return ds


MODEL = ModelConfig(variant="node", schedule="lazy", rounds=1, layers=1)


def test_triple_loss_produces_gradients():
    ds = training_dataset()
    qi = int(np.flatnonzero((ds.relevance.sum(axis=1) > 0)
                            & (ds.relevance.sum(axis=1) < 8))[0])
    pos = int(np.flatnonzero(ds.relevance[qi] == 1)[0])
    neg = int(np.flatnonzero(ds.relevance[qi] == 0)[0])
    store = build_params(MODEL, np.random.default_rng(0))
    # a huge margin guarantees an active hinge, so gradients must flow
    wide = ModelConfig(variant="node", schedule="lazy", rounds=1, layers=1, margin=50.0)
    loss, grads = triple_loss_and_grads(ds, (qi, pos, neg), store, wide, None)
    assert loss > 0.0
    assert any(np.any(g != 0) for g in grads.values())
    # and an inactive hinge leaves every gradient at zero
    tight = ModelConfig(variant="node", schedule="lazy", rounds=1, layers=1, margin=-50.0)
    loss, grads = triple_loss_and_grads(ds, (qi, pos, neg), store, tight, None)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_train_loop_patience_one_stops_after_two_epochs():
    ds = training_dataset(1)
    cfg = TrainConfig(max_epochs=50, patience=1, batch_size=4, triples_per_query=2, seed=0)
    result = train_loop(ds, MODEL, cfg)
    # constant-ish val MAP cannot improve by the tolerance forever; with
    # patience 1, the loop ends as soon as one epoch fails to improve
    assert len(result.history) <= 50
    maps = [h["val_map"] for h in result.history]
    if len(result.history) < 50:
        assert maps[-1] <= max(maps[:-1]) + cfg.tolerance


def test_train_loop_best_checkpoint_is_max_val_map():
    ds = training_dataset(2)
    cfg = TrainConfig(max_epochs=3, patience=10, batch_size=4, triples_per_query=2, seed=1)
    result = train_loop(ds, MODEL, cfg)
    maps = [h["val_map"] for h in result.history]
    assert result.best_val_map == max(maps)
    assert result.best_epoch == maps.index(max(maps)) + 1


def test_train_loop_bitwise_reproducible():
    ds = training_dataset(3)
    cfg = TrainConfig(max_epochs=2, patience=10, batch_size=4, triples_per_query=2, seed=2)
    a = train_loop(ds, MODEL, cfg)
    b = train_loop(ds, MODEL, cfg)
    assert a.best_val_map == b.best_val_map
    for name in a.best_params:
        np.testing.assert_array_equal(a.best_params[name], b.best_params[name])
    assert [h["train_loss"] for h in a.history] == [h["train_loss"] for h in b.history]
