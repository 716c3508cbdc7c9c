"""Pairwise hinge training with Adam, early stopping on validation MAP."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .datagen import Dataset
from .evaluation import evaluate_split
from .model import ModelConfig, build_params, forward_pair
from .params import ParamStore

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    tolerance: float = 1e-4
    triples_per_query: int = 20
    seed: int = 0
    threads: int = 1

    def validate(self) -> "TrainConfig":
        for name in ("learning_rate", "batch_size", "max_epochs", "tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "learning_rate", "weight_decay", "batch_size", "max_epochs",
            "patience", "tolerance", "triples_per_query", "seed", "threads")}


def hinge_ranking_loss(delta_pos: Value, delta_neg: Value, margin: float) -> Value:
    """max(0, margin + delta_pos - delta_neg), differentiable through both distances."""
    gap = ad.add(ad.constant([[margin]]), ad.sub(delta_pos, delta_neg))
    return ad.relu(gap)


def make_batches(dataset: Dataset, split: str, rng: np.random.Generator,
                 batch_size: int, triples_per_query: int | None = 20,
                 warn: bool = True) -> list[list[tuple[int, int, int]]]:
    """Shuffled (query, positive, negative) triples, capped per query, chunked."""
    query_ids = dataset.query_ids(split)
    if not query_ids:
        raise ValueError(f"split {split!r} is empty")
    triples: list[tuple[int, int, int]] = []
    for qi in query_ids:
        pos = np.flatnonzero(dataset.relevance[qi] == 1)
        neg = np.flatnonzero(dataset.relevance[qi] == 0)
        if len(pos) == 0 or len(neg) == 0:
            if warn:
                logger.warning("query %d lacks positives or negatives; skipped", qi)
            continue
        combos = [(qi, int(p), int(n)) for p in pos for n in neg]
        rng.shuffle(combos)
        if triples_per_query is not None:
            combos = combos[:triples_per_query]
        triples.extend(combos)
    order = rng.permutation(len(triples))
    triples = [triples[i] for i in order]
    return [triples[i:i + batch_size] for i in range(0, len(triples), batch_size)]


@dataclass
class OptimizerState:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, grads: dict[str, np.ndarray],
              state: OptimizerState, cfg: TrainConfig) -> None:
    """Adam with decoupled weight decay (lr * wd * param subtracted directly)."""
    state.step += 1
    t = state.step
    for name, param in store.items():
        g = grads[name]
        if np.isnan(g).any():
            raise TrainingError(f"NaN gradient for parameter {name!r}")
        if name not in state.first:
            state.first[name] = np.zeros_like(param.data)
            state.second[name] = np.zeros_like(param.data)
        m = state.first[name]
        v = state.second[name]
        m[:] = state.beta1 * m + (1 - state.beta1) * g
        v[:] = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        if cfg.weight_decay:
            update = update + cfg.learning_rate * cfg.weight_decay * param.data
        param.data = param.data - update


def triple_loss_and_grads(dataset: Dataset, triple: tuple[int, int, int],
                          store: ParamStore, model_cfg: ModelConfig,
                          rng: np.random.Generator | None) -> tuple[float, dict[str, np.ndarray]]:
    """Forward both pairs of one preference triple and backprop the hinge."""
    qi, pi, ni = triple
    store.zero_grads()
    delta_pos = forward_pair(dataset.pair(qi, pi), store, model_cfg, rng).delta
    delta_neg = forward_pair(dataset.pair(qi, ni), store, model_cfg, rng).delta
    loss = hinge_ranking_loss(delta_pos, delta_neg, model_cfg.margin)
    ad.backward(loss)
    return loss.item(), store.grads()


@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    best_val_map: float
    best_epoch: int
    history: list[dict]


def train_loop(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
               store: ParamStore | None = None) -> TrainResult:
    """Epochs of batched hinge updates; keeps the checkpoint with the best
    validation MAP and stops once it has not improved by `tolerance` for
    `patience` consecutive epochs."""
    model_cfg.validate()
    train_cfg.validate()
    if store is None:
        store = build_params(model_cfg, np.random.default_rng(train_cfg.seed))
    batch_rng = np.random.default_rng([train_cfg.seed, 1])
    noise_rng = np.random.default_rng([train_cfg.seed, 2]) if model_cfg.noise else None

    history: list[dict] = []
    best_map = -np.inf
    significant_map = -np.inf  # patience resets only on improvements > tolerance
    best_params = {n: v.data.copy() for n, v in store.items()}
    best_epoch = 0
    stale = 0
    opt_state = OptimizerState()

    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(dataset, "train", batch_rng,
                               train_cfg.batch_size, train_cfg.triples_per_query,
                               warn=epoch == 1)
        epoch_loss = 0.0
        n_triples = 0
        for batch in batches:
            accum: dict[str, np.ndarray] = {n: np.zeros_like(v.data) for n, v in store.items()}
            batch_loss = 0.0
            for triple in batch:
                loss, grads = triple_loss_and_grads(dataset, triple, store, model_cfg, noise_rng)
                batch_loss += loss
                for name in accum:
                    accum[name] += grads[name]
            scale = 1.0 / len(batch)  # mean keeps the step size batch-size stable
            for name in accum:
                accum[name] *= scale
            adam_step(store, accum, opt_state, train_cfg)
            epoch_loss += batch_loss
            n_triples += len(batch)
        val = evaluate_split(dataset, store, model_cfg, split="val",
                             threads=train_cfg.threads, warn=epoch == 1)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_triples, 1),
            "val_map": val.map,
            "wall_ms": wall_ms,
        })
        if val.map > best_map:
            best_map = val.map
            best_params = {n: v.data.copy() for n, v in store.items()}
            best_epoch = epoch
        if val.map > significant_map + train_cfg.tolerance:
            significant_map = val.map
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    return TrainResult(best_params=best_params, best_val_map=float(best_map),
                       best_epoch=best_epoch, history=history)
