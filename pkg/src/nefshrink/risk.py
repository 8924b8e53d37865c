"""Squared-error loss, unbiased risk estimates, and the closed-form risk.

For shrinkage weights ``b`` (one per row) and a target vector ``mu`` (one
per column), the location-shrinkage estimator is
``theta_hat_ij = (1 - b_i) * Y_ij + b_i * mu_j``.  Its realized loss is the
average squared deviation from the true means; :func:`ure` computes a
statistic whose expectation equals the risk (the expected loss) for any
fixed feasible ``(b, mu)``, and :func:`aure` does the same for the class
that shrinks toward the grand mean.  Neither estimate is clamped at zero:
negative values are legitimate, only the expectation matters.
"""

from __future__ import annotations

import numpy as np

from .families import DataMatrix, FamilySpec, validate_mean_matrix, variance_function

__all__ = ["squared_error_loss", "ure", "aure", "true_risk", "grand_mean"]


def _estimate_array(estimate) -> np.ndarray:
    # EstimateMatrix instances expose theta_hat; plain arrays pass through.
    theta_hat = getattr(estimate, "theta_hat", estimate)
    return np.atleast_2d(np.asarray(theta_hat, dtype=float))


def squared_error_loss(estimate, theta) -> float:
    """Average squared error ``(1/np) * sum_ij (theta_hat_ij - theta_ij)**2``."""
    theta_hat = _estimate_array(estimate)
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta_hat.shape != theta.shape:
        raise ValueError(
            f"estimate shape {theta_hat.shape} does not match mean shape {theta.shape}"
        )
    return float(np.mean((theta_hat - theta) ** 2))


def _weight_vector(b, n: int) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (n,):
        raise ValueError(f"expected {n} shrinkage weights, got shape {b.shape}")
    return b


def _unit_variance_terms(data: DataMatrix, spec: FamilySpec) -> np.ndarray:
    """Per-entry ``V(Y_ij)/(tau_ij + nu2)``, the unbiased variance surrogate."""
    denom = data.tau + spec.nu2
    if not np.all(denom > 0):
        raise ValueError("tau + nu2 must be positive for every entry")
    return variance_function(spec, data.y) / denom


def ure(data: DataMatrix, b, mu, spec: FamilySpec) -> float:
    """Unbiased estimate of the risk of shrinking toward the location ``mu``.

    ``(1/np) * sum_ij [ b_i^2 (Y_ij - mu_j)^2 + (1 - 2 b_i) V(Y_ij)/(tau_ij + nu2) ]``
    """
    b = _weight_vector(b, data.n)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.shape != (data.p,):
        raise ValueError(f"expected {data.p} target coordinates, got shape {mu.shape}")
    v = _unit_variance_terms(data, spec)
    terms = b[:, None] ** 2 * (data.y - mu) ** 2 + (1.0 - 2.0 * b)[:, None] * v
    return float(np.mean(terms))


def aure(data: DataMatrix, b, spec: FamilySpec) -> float:
    """Unbiased estimate of the risk of shrinking toward the grand mean.

    ``(1/np) * sum_ij [ b_i^2 (Y_ij - Ybar_j)^2
    + (1 - 2 (1 - 1/n) b_i) V(Y_ij)/(tau_ij + nu2) ]``

    Requires ``n >= 2``; at ``b = 0`` it coincides with :func:`ure`.
    """
    if data.n < 2:
        raise ValueError("grand-mean shrinkage requires at least two rows")
    b = _weight_vector(b, data.n)
    ybar = data.y.mean(axis=0)
    v = _unit_variance_terms(data, spec)
    factor = 1.0 - 2.0 * (1.0 - 1.0 / data.n) * b
    terms = b[:, None] ** 2 * (data.y - ybar) ** 2 + factor[:, None] * v
    return float(np.mean(terms))


def true_risk(theta, b, mu, spec: FamilySpec, tau) -> float:
    """Exact risk of the location-shrinkage estimator for fixed ``(b, mu)``.

    ``(1/np) * sum_ij [ b_i^2 (theta_ij - mu_j)^2 + (1 - b_i)^2 V(theta_ij)/tau_ij ]``

    Used as a Monte Carlo oracle in tests; it needs the unknown means and
    is never part of the fitting path.
    """
    theta = np.atleast_2d(validate_mean_matrix(spec, theta))
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    n, p = theta.shape
    b = _weight_vector(b, n)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.shape != (p,):
        raise ValueError(f"expected {p} target coordinates, got shape {mu.shape}")
    bias = b[:, None] ** 2 * (theta - mu) ** 2
    noise = (1.0 - b)[:, None] ** 2 * variance_function(spec, theta) / tau
    return float(np.mean(bias + noise))


def grand_mean(data) -> np.ndarray:
    """Column means ``Ybar_j = (1/n) sum_i Y_ij``."""
    y = data.y if isinstance(data, DataMatrix) else np.atleast_2d(np.asarray(data, dtype=float))
    return y.mean(axis=0)
