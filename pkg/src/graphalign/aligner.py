"""Temperature-scaled Sinkhorn normalization and the alignment refinement networks.

The operator exponentiates a square score matrix at temperature tau and then
alternates column/row normalizations, ending on a row normalization, so row
sums are 1 to machine precision and column sums converge with the iteration
count. Refinement maps both embedding matrices through one shared
linear-ReLU-linear network, takes pairwise inner products, and pushes the
scores through the operator; the whole pipeline is row/column equivariant to
node (or edge) shuffles and differentiable end to end.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value


@dataclass
class AlignerParams:
    lrl_w1: Value
    lrl_b1: Value
    lrl_w2: Value
    lrl_b2: Value
    temperature: float = 0.1
    sinkhorn_iters: int = 20
    noise_enabled: bool = False


def gumbel_noise(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(low=np.finfo(float).tiny, high=1.0, size=shape)
    return -np.log(-np.log(u))


def sinkhorn_normalize(scores: np.ndarray, tau: float = 0.1, iters: int = 20,
                       noise: np.random.Generator | None = None) -> np.ndarray:
    """Plain-array Sinkhorn; the autodiff twin is `sinkhorn_ops`."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"sinkhorn_normalize needs a square matrix, got {scores.shape}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    if noise is not None:
        scores = scores + gumbel_noise(scores.shape, noise)
    mat = np.exp(scores / tau)
    for _ in range(iters):
        mat = mat / mat.sum(axis=0, keepdims=True)
        mat = mat / mat.sum(axis=1, keepdims=True)
    return mat


def sinkhorn_ops(scores: Value, tau: float = 0.1, iters: int = 20,
                 noise: np.random.Generator | None = None) -> Value:
    """Unrolled differentiable Sinkhorn on a square score matrix."""
    if scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"sinkhorn needs a square matrix, got {scores.shape}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    if noise is not None:
        scores = ad.add(scores, ad.constant(gumbel_noise(scores.shape, noise)))
    mat = ad.exp(ad.scalar_mul(scores, 1.0 / tau))
    for _ in range(iters):
        mat = ad.col_normalize(mat)
        mat = ad.row_normalize(mat)
    return mat


def lrl_apply(x: Value, params: AlignerParams) -> Value:
    """Linear-ReLU-Linear with one weight set shared by both input sides."""
    h = ad.relu(ad.add_bias(ad.matmul(x, params.lrl_w1), params.lrl_b1))
    return ad.add_bias(ad.matmul(h, params.lrl_w2), params.lrl_b2)


def _refine(query_emb: Value, corpus_emb: Value, params: AlignerParams,
            rng: np.random.Generator | None) -> Value:
    if query_emb.shape[0] != corpus_emb.shape[0]:
        raise ShapeError(
            f"aligner inputs must share a row count, got {query_emb.shape} vs {corpus_emb.shape}"
        )
    scores = ad.matmul(lrl_apply(query_emb, params), ad.transpose(lrl_apply(corpus_emb, params)))
    noise = rng if params.noise_enabled else None
    return sinkhorn_ops(scores, tau=params.temperature, iters=params.sinkhorn_iters, noise=noise)


def node_aligner_refine(query_emb: Value, corpus_emb: Value, params: AlignerParams,
                        rng: np.random.Generator | None = None) -> Value:
    """Doubly stochastic node alignment from end-of-round node embeddings."""
    return _refine(query_emb, corpus_emb, params, rng)


def edge_aligner_refine(query_emb: Value, corpus_emb: Value, params: AlignerParams,
                        rng: np.random.Generator | None = None) -> Value:
    """Doubly stochastic edge alignment from zero-padded edge embedding matrices."""
    return _refine(query_emb, corpus_emb, params, rng)
