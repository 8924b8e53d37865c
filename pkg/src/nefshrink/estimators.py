"""The shrinkage estimator classes and the benchmark competitors.

Every estimator here is an entrywise convex combination
``theta_hat_ij = (1 - b_i) * Y_ij + b_i * target_j`` for some feasible
weights and target, so each entry lies between the observation and the
target.  Competitors instantiate fixed members of the feasible class for
dominance experiments; the loss-oracle competitor additionally needs the
true means and exists purely for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .families import DataMatrix, FamilySpec
from .optimize import (
    FitResult,
    RowOrder,
    SolverOptions,
    check_feasible_location,
    check_feasible_weights,
    isotonic_box_projection,
    minimize_aure,
    minimize_ure,
)
from .risk import grand_mean, squared_error_loss

__all__ = [
    "Provenance",
    "EstimateMatrix",
    "shrink_to_location",
    "shrink_to_grand_mean",
    "fit",
    "competitor",
    "minimize_true_loss",
]

COMPETITOR_KINDS = ("no_shrinkage", "half_to_zero", "oracle_loss")
FIT_MODES = ("location", "grand_mean")


class Provenance(str, Enum):
    LOCATION_SHRINKAGE = "location_shrinkage"
    GRAND_MEAN_SHRINKAGE = "grand_mean_shrinkage"
    NO_SHRINKAGE = "no_shrinkage"
    FIXED_COMPETITOR = "fixed_competitor"
    ORACLE_LOSS = "oracle_loss"


@dataclass
class EstimateMatrix:
    """An n-by-p estimate with the weights and target that produced it."""

    theta_hat: np.ndarray
    provenance: Provenance
    b: np.ndarray | None = None
    mu: np.ndarray | None = None


def _combine(data: DataMatrix, b: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return (1.0 - b)[:, None] * data.y + b[:, None] * mu


def shrink_to_location(data: DataMatrix, b, mu) -> EstimateMatrix:
    """Shrink each row toward ``mu``; ``(b, mu)`` must be feasible."""
    order = RowOrder.from_tau(data.tau)
    b = check_feasible_weights(b, order)
    mu = check_feasible_location(mu, data.data_range)
    if mu.size != data.p:
        raise ValueError(f"expected {data.p} target coordinates, got {mu.size}")
    return EstimateMatrix(
        theta_hat=_combine(data, b, mu),
        provenance=Provenance.LOCATION_SHRINKAGE,
        b=b,
        mu=mu,
    )


def shrink_to_grand_mean(data: DataMatrix, b) -> EstimateMatrix:
    """Shrink each row toward the column means."""
    order = RowOrder.from_tau(data.tau)
    b = check_feasible_weights(b, order)
    ybar = grand_mean(data)
    return EstimateMatrix(
        theta_hat=_combine(data, b, ybar),
        provenance=Provenance.GRAND_MEAN_SHRINKAGE,
        b=b,
        mu=ybar,
    )


def fit(
    data: DataMatrix,
    spec: FamilySpec,
    mode: str = "location",
    opts: SolverOptions | None = None,
) -> tuple[FitResult, EstimateMatrix]:
    """Minimize the risk estimate of the requested class and materialize
    the fitted estimate."""
    if mode == "location":
        result = minimize_ure(data, spec, opts)
        estimate = shrink_to_location(data, result.b, result.mu)
    elif mode == "grand_mean":
        result = minimize_aure(data, spec)
        estimate = shrink_to_grand_mean(data, result.b)
    else:
        raise ValueError(f"unknown fit mode {mode!r}; expected one of {FIT_MODES}")
    return result, estimate


def competitor(
    data: DataMatrix,
    kind: str,
    theta=None,
    opts: SolverOptions | None = None,
) -> EstimateMatrix:
    """Fixed members of the location class used in dominance experiments.

    ``no_shrinkage`` returns the observations (b = 0); ``half_to_zero``
    pulls halfway toward the zero vector (always inside the data box);
    ``oracle_loss`` picks feasible weights and target minimizing the true
    loss and therefore requires ``theta`` (evaluation only, not deployable).
    """
    n = data.n
    if kind == "no_shrinkage":
        return EstimateMatrix(
            theta_hat=data.y.copy(),
            provenance=Provenance.NO_SHRINKAGE,
            b=np.zeros(n),
            mu=np.zeros(data.p),
        )
    if kind == "half_to_zero":
        b = np.full(n, 0.5)
        mu = np.clip(np.zeros(data.p), -data.data_range, data.data_range)
        return EstimateMatrix(
            theta_hat=_combine(data, b, mu),
            provenance=Provenance.FIXED_COMPETITOR,
            b=b,
            mu=mu,
        )
    if kind == "oracle_loss":
        if theta is None:
            raise ValueError("the loss oracle competitor requires the true means")
        result = minimize_true_loss(data, theta, opts)
        return EstimateMatrix(
            theta_hat=_combine(data, result.b, result.mu),
            provenance=Provenance.ORACLE_LOSS,
            b=result.b,
            mu=result.mu,
        )
    raise ValueError(f"unknown competitor {kind!r}; expected one of {COMPETITOR_KINDS}")


def minimize_true_loss(
    data: DataMatrix, theta, opts: SolverOptions | None = None
) -> FitResult:
    """Feasible ``(b, mu)`` minimizing the realized loss against known means.

    Same coordinate-descent scheme as the risk-estimate fit, applied to the
    loss itself: the weight step projects the per-row stationary points
    ``sum_j (Y_ij - theta_ij)(Y_ij - mu_j) / A_i(mu)`` and the target step
    uses the clipped closed form.  Benchmark-side only.
    """
    opts = opts or SolverOptions()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape != data.y.shape:
        raise ValueError("theta shape must match the observation matrix")
    order = RowOrder.from_tau(data.tau)
    m_range = data.data_range
    mu0 = np.clip(grand_mean(data), -m_range, m_range)
    dev = data.y - theta

    def b_step(mu: np.ndarray) -> np.ndarray:
        resid = data.y - mu
        a = (resid**2).sum(axis=1)
        s = (dev * resid).sum(axis=1)
        targets = np.empty(data.n)
        pos = a > 0
        targets[pos] = s[pos] / a[pos]
        targets[~pos] = 0.5  # row equals the target: loss ignores b there
        return isotonic_box_projection(targets, a, order)

    def mu_step(b: np.ndarray) -> np.ndarray:
        wsum = float((b**2).sum())
        if wsum == 0.0:
            return mu0.copy()
        num = (b[:, None] * (theta - (1.0 - b)[:, None] * data.y)).sum(axis=0)
        return np.clip(num / wsum, -m_range, m_range)

    def loss_at(b: np.ndarray, mu: np.ndarray) -> float:
        return squared_error_loss(_combine(data, b, mu), theta)

    best = None
    for start in (0.5, 0.0, 1.0):
        b = np.full(data.n, start)
        mu = mu0.copy()
        obj = loss_at(b, mu)
        converged = False
        iterations = 0
        for iterations in range(1, opts.max_outer_iterations + 1):
            candidate = b_step(mu)
            if loss_at(candidate, mu) <= obj:
                b = candidate
            mu = mu_step(b)
            new_obj = loss_at(b, mu)
            if obj - new_obj < opts.tolerance:
                obj = new_obj
                converged = True
                break
            obj = new_obj
        if best is None or obj < best[2]:
            best = (b, mu, obj, iterations, converged)
    b, mu, obj, iterations, converged = best
    return FitResult(
        b=b,
        mu=mu,
        objective=obj,
        iterations=iterations,
        converged=converged,
        target_kind="location",
    )
