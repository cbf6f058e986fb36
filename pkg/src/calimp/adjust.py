"""Smallest adjustments keeping predictions inside per-cell intervals.

The problem: given predictions ``x``, boxes ``[l, u]`` (sides may be
infinite) and positive weights ``w``, find the adjustment vector ``a``
minimizing the weighted squared size ``sum w_i a_i**2`` subject to the
box and to ``sum w_i a_i = 0`` (so the weighted prediction total is
preserved).  With unit weights this is the classic least-squares
zero-sum adjustment; the weighted form keeps a weighted total fixed and
reduces to the unweighted one when all weights are equal.

``zero_sum_interval_adjust`` solves it with the simple alternating scheme
(shift everything by a common offset, re-clip to the boxes, update the
offset from the weighted mean) whose fixed point matches the KKT
conditions.  ``qp_reference_solve`` solves the same program independently
by enumerating active sets in closed form; it exists as a test oracle for
small problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, InfeasibleAdjustmentError

DEFAULT_ADJUST_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
ORACLE_MAX_SIZE = 12


@dataclass(frozen=True)
class AdjustmentProblem:
    """Predictions with per-cell bounds and unit weights by default."""

    predictions: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.predictions, dtype=float).ravel()
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if not (x.shape == lo.shape == hi.shape):
            raise ValueError("predictions, lower and upper must share one shape")
        if np.any(lo > hi):
            k = int(np.argmax(lo > hi))
            raise ValueError(f"lower bound exceeds upper bound at position {k}")
        w = np.ones_like(x) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.shape != x.shape:
            raise ValueError("weights must match the prediction shape")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "predictions", x)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.predictions.shape[0]


def _shifted_target(problem: AdjustmentProblem, target_sum: float | None) -> float:
    """Required weighted sum of the adjustments."""
    if target_sum is None:
        return 0.0
    return float(target_sum - np.sum(problem.weights * problem.predictions))


def _check_feasible(
    problem: AdjustmentProblem, T: float, tol: float, feasibility_scale: float = 1.0
) -> float:
    """Fail fast on an unreachable target; clamp a roundoff-level near miss.

    ``feasibility_scale`` lets callers whose targets were formed by
    cancelling much larger quantities (for example column totals) widen the
    roundoff allowance to the scale of those quantities.
    """
    w = problem.weights
    lo = problem.lower - problem.predictions
    hi = problem.upper - problem.predictions
    least = float(np.sum(np.where(np.isneginf(lo), -np.inf, w * lo)))
    most = float(np.sum(np.where(np.isposinf(hi), np.inf, w * hi)))
    scale = max(
        1.0,
        feasibility_scale,
        float(np.sum(np.abs(w * problem.predictions))),
        abs(T),
    )
    if T < least - tol * scale or T > most + tol * scale:
        raise InfeasibleAdjustmentError(
            f"required weighted adjustment sum {T:.6g} lies outside the achievable "
            f"range [{least:.6g}, {most:.6g}]"
        )
    return float(np.clip(T, least, most))


def zero_sum_interval_adjust(
    problem: AdjustmentProblem,
    tol: float = DEFAULT_ADJUST_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    target_sum: float | None = None,
    feasibility_scale: float = 1.0,
) -> np.ndarray:
    """Adjustment vector from the alternating clip/re-center scheme.

    By default the adjusted values keep the weighted sum of the
    predictions; pass ``target_sum`` to aim the weighted sum of the
    adjusted values somewhere else instead (used when re-centering drawn
    residuals to zero).  Iteration stops once the largest per-cell change
    drops below ``tol``.
    """
    T = _shifted_target(problem, target_sum)
    T = _check_feasible(problem, T, tol=1e-9, feasibility_scale=feasibility_scale)
    w = problem.weights
    lo = problem.lower - problem.predictions
    hi = problem.upper - problem.predictions
    W = float(np.sum(w))

    b = np.zeros(problem.size)
    b_bar = 0.0
    delta = np.inf
    for _ in range(max_iter):
        b_new = np.clip(0.0, lo + b_bar, hi + b_bar)
        b_bar_new = float((np.sum(w * b_new) - T) / W)
        delta = max(float(np.max(np.abs(b_new - b))), abs(b_bar_new - b_bar))
        b, b_bar = b_new, b_bar_new
        if delta < tol:
            # At the fixed point a = b - b_bar satisfies the weighted sum
            # exactly; the final clip only shaves float dust off the box.
            return np.clip(b - b_bar, lo, hi)
    raise ConvergenceError(
        f"adjustment did not converge within {max_iter} iterations "
        f"(last change {delta:.3g})",
        last_iterate=b - b_bar,
        residual=delta,
    )


@lru_cache(maxsize=None)
def _assignments(m: int) -> np.ndarray:
    """All {free, at-lower, at-upper} codes for m cells, as an (3**m, m) array."""
    codes = np.zeros((3**m, m), dtype=np.int8)
    for j in range(m):
        block = 3 ** (m - 1 - j)
        codes[:, j] = (np.arange(3**m) // block) % 3
    return codes


def qp_reference_solve(
    problem: AdjustmentProblem,
    target_sum: float | None = None,
    tol: float = 1e-9,
    feasibility_scale: float = 1.0,
) -> np.ndarray:
    """Independent solution by exhaustive active-set enumeration.

    Each cell is assumed free, at its lower bound, or at its upper bound;
    the equality-constrained minimizer over the free cells is a single
    common offset, and the first assignment passing primal and dual
    feasibility is the optimum.  Only intended for small test problems.
    """
    m = problem.size
    if m > ORACLE_MAX_SIZE:
        raise ValueError(f"reference solver handles at most {ORACLE_MAX_SIZE} cells, got {m}")
    T = _shifted_target(problem, target_sum)
    T = _check_feasible(problem, T, tol=1e-9, feasibility_scale=feasibility_scale)
    w = problem.weights
    lo = problem.lower - problem.predictions
    hi = problem.upper - problem.predictions

    codes = _assignments(m)
    valid = ~np.any(((codes == 1) & np.isneginf(lo)) | ((codes == 2) & np.isposinf(hi)), axis=1)
    codes = codes[valid]

    at_lo = codes == 1
    at_hi = codes == 2
    free = codes == 0
    wlo = np.where(np.isneginf(lo), 0.0, w * lo)
    whi = np.where(np.isposinf(hi), 0.0, w * hi)
    fixed_sum = at_lo @ wlo + at_hi @ whi
    free_mass = free @ w

    scale = max(1.0, float(np.max(np.abs(np.where(np.isfinite(lo), lo, 0.0)))),
                float(np.max(np.abs(np.where(np.isfinite(hi), hi, 0.0)))), abs(T))
    eps = tol * scale

    has_free = free_mass > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(has_free, (T - fixed_sum) / np.where(has_free, free_mass, 1.0), 0.0)
    # All-pinned assignments: the sum must already match, and some offset
    # must dually separate the two bound groups.
    lam_floor = np.max(np.where(at_hi, hi[None, :], -np.inf), axis=1)
    lam_ceil = np.min(np.where(at_lo, lo[None, :], np.inf), axis=1)
    pinned_ok = (~has_free) & (np.abs(fixed_sum - T) <= eps) & (lam_floor <= lam_ceil + eps)
    lam = np.where(pinned_ok, np.clip(0.0, lam_floor, np.maximum(lam_floor, lam_ceil)), lam)

    ok_primal = np.all(~free | ((lam[:, None] >= lo[None, :] - eps) & (lam[:, None] <= hi[None, :] + eps)), axis=1)
    ok_dual = np.all(~at_lo | (lo[None, :] >= lam[:, None] - eps), axis=1) & np.all(
        ~at_hi | (hi[None, :] <= lam[:, None] + eps), axis=1
    )
    ok = ok_primal & ok_dual & (has_free | pinned_ok)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        raise InfeasibleAdjustmentError("active-set enumeration found no feasible optimum")
    k = int(hits[0])
    code = codes[k]
    return np.where(code == 1, lo, np.where(code == 2, hi, lam[k]))
