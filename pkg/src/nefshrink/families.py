"""Diagonal exponential-family models with quadratic variance functions.

Five families (normal, Poisson, gamma, multinomial, negative multinomial)
share the structure ``Var(Y_ij) = V(theta_ij) / tau_ij`` where
``V(t) = nu0 + nu1*t + nu2*t**2`` and the ``tau_ij`` are known positive
integer within-group sample sizes.  This module defines the family
descriptors, their mean domains, exact samplers, and closed-form moment
oracles used throughout the rest of the library.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "FamilyKind",
    "FamilySpec",
    "DataMatrix",
    "make_family",
    "variance_function",
    "theoretical_moments",
    "validate_mean_matrix",
    "default_tau",
    "sample_matrix",
]

FAMILY_TOKENS = ("normal", "poisson", "gamma", "multinomial", "negmultinomial")


class FamilyKind(str, Enum):
    """Lowercase serialization tokens for the five supported families."""

    NORMAL = "normal"
    POISSON = "poisson"
    GAMMA = "gamma"
    MULTINOMIAL = "multinomial"
    NEGMULTINOMIAL = "negmultinomial"


@dataclass(frozen=True)
class FamilySpec:
    """Variance structure of one family.

    Attributes
    ----------
    kind : FamilyKind
    nu0, nu1, nu2 : float
        Coefficients of the quadratic variance function
        ``V(t) = nu0 + nu1*t + nu2*t**2``.
    shape : float, optional
        Gamma shape parameter (``lambda``); absent for other families.
    trials : int or tuple of int, optional
        Per-row trial counts ``N_i`` for the multinomial and negative
        multinomial families; a scalar applies to every row.
    """

    kind: FamilyKind
    nu0: float
    nu1: float
    nu2: float
    shape: float | None = None
    trials: int | tuple[int, ...] | None = None


def make_family(
    kind: str | FamilyKind,
    shape: float | None = None,
    trials: int | tuple[int, ...] | None = None,
) -> FamilySpec:
    """Build the :class:`FamilySpec` for one of the five families.

    ``shape`` must be supplied exactly for the gamma family and ``trials``
    exactly for the (negative) multinomial families.  The variance
    coefficients are fixed per family:

    ========================  ==============================
    normal                    (1, 0, 0)
    poisson                   (0, 1, 0)
    gamma(lambda)             (0, 0, 1/lambda)
    multinomial               (0, 1, -1)
    negative multinomial      (0, 1, 1)
    ========================  ==============================
    """
    try:
        kind = FamilyKind(kind)
    except ValueError:
        raise ValueError(f"unknown family token {kind!r}") from None

    if (shape is not None) != (kind is FamilyKind.GAMMA):
        raise ValueError("shape is required for gamma and forbidden otherwise")
    needs_trials = kind in (FamilyKind.MULTINOMIAL, FamilyKind.NEGMULTINOMIAL)
    if (trials is not None) != needs_trials:
        raise ValueError(
            "trials are required for multinomial/negmultinomial and forbidden otherwise"
        )

    if kind is FamilyKind.NORMAL:
        return FamilySpec(kind, 1.0, 0.0, 0.0)
    if kind is FamilyKind.POISSON:
        return FamilySpec(kind, 0.0, 1.0, 0.0)
    if kind is FamilyKind.GAMMA:
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        return FamilySpec(kind, 0.0, 0.0, 1.0 / shape, shape=float(shape))

    trials_norm: int | tuple[int, ...]
    if np.isscalar(trials):
        trials_norm = int(trials)
        counts = np.array([trials_norm])
    else:
        trials_norm = tuple(int(t) for t in trials)
        counts = np.array(trials_norm)
    if kind is FamilyKind.MULTINOMIAL:
        if np.any(counts < 2):
            raise ValueError("multinomial trial counts must satisfy N_i >= 2")
        return FamilySpec(kind, 0.0, 1.0, -1.0, trials=trials_norm)
    if np.any(counts < 1):
        raise ValueError("negative multinomial trial counts must satisfy N_i >= 1")
    return FamilySpec(kind, 0.0, 1.0, 1.0, trials=trials_norm)


def variance_function(spec: FamilySpec, t):
    """Evaluate ``V(t) = nu0 + nu1*t + nu2*t**2`` elementwise.

    Defined for all real ``t``; positivity is only guaranteed strictly
    inside the family's mean domain.
    """
    return spec.nu0 + spec.nu1 * t + spec.nu2 * t * t


def validate_mean_matrix(spec, theta, allow_poisson_boundary=False):
    """Check that every entry of ``theta`` lies in the family's mean domain.

    The domain is all reals for the normal family, the positive reals for
    Poisson, gamma and negative multinomial, and the open interval (0, 1)
    with strict row sums below 1 for the multinomial family.  Poisson
    entries equal to 0 are admitted only when ``allow_poisson_boundary``
    is set (a degenerate point-mass limit used by the sampler).
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("mean parameters must be finite")
    kind = spec.kind
    if kind is FamilyKind.NORMAL:
        return theta
    if kind is FamilyKind.POISSON:
        lo_ok = np.all(theta >= 0) if allow_poisson_boundary else np.all(theta > 0)
        if not lo_ok:
            raise ValueError("poisson means must be positive")
        return theta
    if kind in (FamilyKind.GAMMA, FamilyKind.NEGMULTINOMIAL):
        if not np.all(theta > 0):
            raise ValueError(f"{kind.value} means must be positive")
        return theta
    # multinomial: entries interior to (0, 1), strict row mass below 1
    if not (np.all(theta > 0) and np.all(theta < 1)):
        raise ValueError("multinomial means must lie strictly inside (0, 1)")
    if theta.ndim == 2 and not np.all(theta.sum(axis=1) < 1):
        raise ValueError("multinomial mean rows must sum to strictly less than 1")
    return theta


def theoretical_moments(spec: FamilySpec, theta, tau):
    """Exact mean and variance of an observation: ``(theta, V(theta)/tau)``.

    Accepts scalars or arrays; ``theta`` must lie strictly inside the mean
    domain and ``tau`` must be a positive integer (elementwise).
    """
    theta = validate_mean_matrix(spec, theta)
    tau = _check_tau(tau)
    return theta, variance_function(spec, theta) / tau


def _check_tau(tau):
    tau = np.asarray(tau)
    if not np.all(tau >= 1) or not np.all(tau == np.floor(tau)):
        raise ValueError("tau entries must be positive integers")
    return tau.astype(float)


def default_tau(spec: FamilySpec, n: int, p: int) -> np.ndarray:
    """Canonical tau matrix: all ones, or rows of N_i for trial-based families."""
    if spec.kind in (FamilyKind.MULTINOMIAL, FamilyKind.NEGMULTINOMIAL):
        trials = spec.trials
        if np.isscalar(trials):
            col = np.full(n, int(trials))
        else:
            if len(trials) != n:
                raise ValueError(f"expected {n} per-row trial counts, got {len(trials)}")
            col = np.asarray(trials, dtype=int)
        return np.repeat(col[:, None], p, axis=1)
    return np.ones((n, p), dtype=int)


@dataclass
class DataMatrix:
    """An n-by-p observation matrix together with its tau matrix."""

    y: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.tau = np.atleast_2d(_check_tau(self.tau))
        if self.y.shape != self.tau.shape:
            raise ValueError(
                f"observation shape {self.y.shape} does not match tau shape {self.tau.shape}"
            )
        if self.y.size == 0:
            raise ValueError("observation matrix must be non-empty")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observations must be finite")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def data_range(self) -> float:
        """Largest absolute observation; box bound for shrinkage targets."""
        return float(np.abs(self.y).max())

    def row_tau_sums(self) -> np.ndarray:
        return self.tau.sum(axis=1)


def _row_trial_counts(tau: np.ndarray, minimum: int, label: str) -> np.ndarray:
    """Extract per-row constant N_i from tau, enforcing the row-constant rule."""
    if not np.all(tau == tau[:, :1]):
        raise ValueError(f"{label} tau rows must be constant (one N_i per row)")
    counts = tau[:, 0].astype(int)
    if np.any(counts < minimum):
        raise ValueError(f"{label} trial counts must satisfy N_i >= {minimum}")
    return counts


def sample_matrix(spec: FamilySpec, theta, tau, seed) -> DataMatrix:
    """Draw one observation matrix with ``E(Y_ij) = theta_ij`` and
    ``Var(Y_ij) = V(theta_ij)/tau_ij``.

    Rows are independent.  Entry laws per family:

    * normal: mean of ``tau`` unit-variance draws, i.e. ``N(theta, 1/tau)``;
    * poisson: ``Poisson(tau*theta)/tau`` (theta = 0 rows degenerate to 0);
    * gamma: shape ``tau*lambda``, scale ``theta/(tau*lambda)``;
    * multinomial: a genuine ``N_i``-trial draw over the p categories plus
      an implicit remainder category, divided by ``N_i``;
    * negative multinomial: the exact gamma-Poisson mixture, divided by
      ``N_i`` (marginals negative binomial, positively coupled).

    Deterministic for a fixed ``seed`` (int or ``numpy.random.SeedSequence``);
    a fresh generator is created per call, so concurrent invocations never
    share state.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    tau = np.atleast_2d(_check_tau(tau))
    if theta.shape != tau.shape:
        raise ValueError(
            f"theta shape {theta.shape} does not match tau shape {tau.shape}"
        )
    validate_mean_matrix(
        spec, theta, allow_poisson_boundary=spec.kind is FamilyKind.POISSON
    )
    n, p = theta.shape
    rng = np.random.default_rng(seed)

    if spec.kind is FamilyKind.NORMAL:
        y = rng.normal(theta, 1.0 / np.sqrt(tau))
    elif spec.kind is FamilyKind.POISSON:
        y = rng.poisson(tau * theta) / tau
    elif spec.kind is FamilyKind.GAMMA:
        k = tau * spec.shape
        y = rng.gamma(k, theta / k)
    elif spec.kind is FamilyKind.MULTINOMIAL:
        counts = _row_trial_counts(tau, 2, "multinomial")
        row_mass = theta.sum(axis=1)
        if not np.all(row_mass < 1):
            raise ValueError("multinomial mean rows must sum to strictly less than 1")
        pvals = np.hstack([theta, (1.0 - row_mass)[:, None]])
        draws = rng.multinomial(counts, pvals)
        y = draws[:, :p] / counts[:, None]
    else:  # negative multinomial
        counts = _row_trial_counts(tau, 1, "negative multinomial")
        mix = rng.gamma(counts.astype(float), 1.0)
        y = rng.poisson(mix[:, None] * theta) / counts[:, None]

    return DataMatrix(y=y, tau=tau)
