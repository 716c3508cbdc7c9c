"""Combinatorial and continuous solvers for the adjacency coverage cost.

The coverage cost of an alignment counts query adjacency entries left
uncovered after transporting the corpus adjacency through the alignment; it
is zero for some hard permutation exactly when the query embeds in the
corpus. This module provides the exact brute-force minimizer, an entropic
projected-gradient relaxation, and exact assignment rounding, all usable as
independent referees for the learned aligners.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .aligner import sinkhorn_normalize


class QapError(ValueError):
    pass


@dataclass(frozen=True)
class QapInstance:
    a_q: np.ndarray
    a_c: np.ndarray

    def __post_init__(self):
        for name, a in (("a_q", self.a_q), ("a_c", self.a_c)):
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise QapError(f"{name} must be square, got {a.shape}")
            if not np.array_equal(a, a.T):
                raise QapError(f"{name} must be symmetric")
            if np.any(np.diag(a) != 0):
                raise QapError(f"{name} must have a zero diagonal")
        if self.a_q.shape != self.a_c.shape:
            raise QapError(f"shape mismatch {self.a_q.shape} vs {self.a_c.shape} (pad first)")

    @property
    def n(self) -> int:
        return self.a_q.shape[0]


def qap_cost(inst: QapInstance, plan: np.ndarray) -> float:
    """sum of max(0, A_q - plan A_c plan^T), for hard or doubly stochastic plans."""
    plan = np.asarray(plan, dtype=np.float64)
    if plan.shape != (inst.n, inst.n):
        raise QapError(f"plan shape {plan.shape} does not match instance n={inst.n}")
    deficit = inst.a_q - plan @ inst.a_c @ plan.T
    return float(np.maximum(deficit, 0.0).sum())


def _perm_cost(inst: QapInstance, perm: tuple[int, ...]) -> float:
    covered = inst.a_c[np.ix_(perm, perm)]
    return float(np.maximum(inst.a_q - covered, 0.0).sum())


def brute_force_min_cost(inst: QapInstance) -> tuple[float, np.ndarray]:
    """Exact minimum over all hard permutations; ties go to the lexicographically
    first permutation. Guarded at n <= 8 (8! evaluations)."""
    if inst.n > 8:
        raise QapError(
            f"brute force refuses n={inst.n} > 8; use gw_pgd for larger instances"
        )
    best_cost = np.inf
    best_perm: tuple[int, ...] = tuple(range(inst.n))
    for perm in itertools.permutations(range(inst.n)):
        c = _perm_cost(inst, perm)
        if c < best_cost:
            best_cost = c
            best_perm = perm
            if c == 0.0:
                break  # cannot improve on zero; lex order makes this the tie-winner
    matrix = np.zeros((inst.n, inst.n))
    for u, v in enumerate(best_perm):
        matrix[u, v] = 1.0
    return float(best_cost), matrix


def entropic_ot(cost: np.ndarray, tau: float, iters: int = 20) -> np.ndarray:
    """Entropy-regularized transport plan argmin <plan, cost> + tau * sum plan log plan,
    computed by Sinkhorn on the negated costs."""
    return sinkhorn_normalize(-np.asarray(cost, dtype=np.float64), tau=tau, iters=iters)


def smoothed_qap_cost(inst: QapInstance, plan: np.ndarray, sharpness: float = 20.0) -> float:
    """Softplus relaxation of qap_cost used only to derive usable gradients."""
    deficit = inst.a_q - plan @ inst.a_c @ plan.T
    return float(np.logaddexp(0.0, sharpness * deficit).sum() / sharpness)


def smoothed_qap_grad(inst: QapInstance, plan: np.ndarray, sharpness: float = 20.0) -> np.ndarray:
    """Closed-form gradient of the softplus cost.

    With D = A_q - P A_c P^T and W = sigmoid(sharpness * D), differentiating
    sum softplus(sharpness*D)/sharpness through both appearances of P gives
    -(W P A_c^T + W^T P A_c); the adjacencies are symmetric so both terms use A_c.
    """
    deficit = inst.a_q - plan @ inst.a_c @ plan.T
    w = 1.0 / (1.0 + np.exp(-sharpness * deficit))
    return -(w @ plan @ inst.a_c.T + w.T @ plan @ inst.a_c)


def gw_pgd(inst: QapInstance, tau: float = 0.05, steps: int = 30,
           p0: np.ndarray | None = None, sharpness: float = 20.0,
           sinkhorn_iters: int = 20, proximal: bool = True) -> tuple[list[np.ndarray], list[float]]:
    """Projected gradient descent on the coverage cost over doubly stochastic plans.

    Each step solves an entropic OT problem on the current cost gradient.
    The default proximal step keeps the previous plan as the transport prior
    (a multiplicative update, the form the cited PGD solvers use), which both
    preserves already-optimal plans and avoids the step-to-step oscillation
    the memoryless pure-entropy step exhibits at low temperature;
    `proximal=False` drops the prior and re-solves from the gradient alone.
    Returns the plan trajectory (including the start) and the exact coverage
    cost recorded after every update.
    """
    if steps < 1:
        raise QapError(f"steps must be >= 1, got {steps}")
    n = inst.n
    plan = np.full((n, n), 1.0 / n) if p0 is None else np.asarray(p0, dtype=np.float64)
    plans = [plan.copy()]
    costs = [qap_cost(inst, plan)]
    for _ in range(steps):
        grad = smoothed_qap_grad(inst, plan, sharpness=sharpness)
        if proximal:
            # KL step: argmin <plan, grad> + tau*KL(plan || previous), i.e.
            # Sinkhorn on previous * exp(-grad/tau), folded into one OT solve
            grad = grad - tau * np.log(np.maximum(plan, 1e-300))
        plan = entropic_ot(grad, tau=tau, iters=sinkhorn_iters)
        plans.append(plan.copy())
        costs.append(qap_cost(inst, plan))
    return plans, costs


def min_cost_assignment(cost: np.ndarray) -> list[int]:
    """Exact square assignment minimizing sum cost[i, col[i]] (Hungarian, O(n^3))."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise QapError(f"assignment needs a square matrix, got {cost.shape}")
    n = cost.shape[0]
    if n == 0:
        return []
    INF = np.inf
    # classic potentials formulation, 1-indexed with a virtual column 0
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[j] = row occupying column j
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        way = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[match[j] - 1] = j - 1
    return col_of_row


def max_weight_assignment(weight: np.ndarray) -> tuple[list[int], float]:
    col_of_row = min_cost_assignment(-np.asarray(weight, dtype=np.float64))
    value = float(sum(weight[i, c] for i, c in enumerate(col_of_row)))
    return col_of_row, value


def round_to_permutation(plan: np.ndarray) -> np.ndarray:
    """Hard permutation of maximum total plan weight.

    Ties are broken by lowest row index: row 0 takes the smallest column that
    still allows an optimal completion, then row 1, and so on; on a uniform
    plan this yields the identity (the lexicographically first permutation).
    """
    plan = np.asarray(plan, dtype=np.float64)
    if plan.ndim != 2 or plan.shape[0] != plan.shape[1]:
        raise QapError(f"rounding needs a square matrix, got {plan.shape}")
    n = plan.shape[0]
    _, best = max_weight_assignment(plan)
    tol = 1e-9 * max(1.0, abs(best))
    chosen: list[int] = []
    free_cols = list(range(n))
    fixed_value = 0.0
    for row in range(n):
        rest_rows = list(range(row + 1, n))
        for ci, col in enumerate(free_cols):
            candidate = fixed_value + plan[row, col]
            remaining_cols = free_cols[:ci] + free_cols[ci + 1:]
            if rest_rows:
                _, rest = max_weight_assignment(plan[np.ix_(rest_rows, remaining_cols)])
                candidate += rest
            if candidate >= best - tol:
                chosen.append(col)
                free_cols = remaining_cols
                fixed_value += plan[row, col]
                break
        else:
            raise QapError("no column preserves the optimal value; numerical trouble")
    matrix = np.zeros((n, n))
    for row, col in enumerate(chosen):
        matrix[row, col] = 1.0
    return matrix
