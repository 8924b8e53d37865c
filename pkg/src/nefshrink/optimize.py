"""Minimization of the risk estimates over the monotone feasible sets.

Feasible shrinkage weights live in the box [0, 1] and must be ordered
against the tau row sums: rows with a larger sum get no more shrinkage
than rows with a smaller sum, and rows with equal sums share one common
weight (the ordering applies in both directions for ties).  Both risk
estimates are separable quadratics in the weights once the target is
fixed, so each minimization reduces to a weighted isotonic regression
with box clipping, implemented here as pool-adjacent-violators over the
tie groups.  The location target is handled by coordinate descent with a
closed-form clipped update.  Grid oracles used by the test suite live
here as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .families import DataMatrix, FamilySpec, variance_function
from .risk import aure, grand_mean, ure

__all__ = [
    "RowOrder",
    "SolverOptions",
    "FitResult",
    "isotonic_box_projection",
    "minimize_ure",
    "minimize_aure",
    "grid_oracle_ure",
    "grid_minimize_separable_quadratic",
    "sample_feasible_weights",
    "check_feasible_weights",
    "check_feasible_location",
]


@dataclass(frozen=True)
class RowOrder:
    """Row permutation by descending tau row sums, with tie groups.

    Along ``permutation`` the feasible weights are nondecreasing; positions
    whose row sums tie form a group that must share a single value.
    """

    permutation: np.ndarray
    group_ids: np.ndarray  # group index per permutation position, nondecreasing

    @classmethod
    def from_row_sums(cls, sums) -> "RowOrder":
        sums = np.asarray(sums, dtype=float).reshape(-1)
        perm = np.argsort(-sums, kind="stable")
        ordered = sums[perm]
        # new group wherever the sorted sum strictly drops
        group_ids = np.concatenate([[0], np.cumsum(ordered[:-1] > ordered[1:])])
        return cls(permutation=perm, group_ids=group_ids.astype(int))

    @classmethod
    def from_tau(cls, tau) -> "RowOrder":
        return cls.from_row_sums(np.asarray(tau).sum(axis=1))

    @property
    def n(self) -> int:
        return self.permutation.size

    @property
    def n_groups(self) -> int:
        return int(self.group_ids[-1]) + 1 if self.n else 0

    def group_of_row(self) -> np.ndarray:
        """Group index per original row."""
        out = np.empty(self.n, dtype=int)
        out[self.permutation] = self.group_ids
        return out

    def expand_group_values(self, values) -> np.ndarray:
        """Map one value per group back to a per-row vector."""
        values = np.asarray(values, dtype=float)
        out = np.empty(self.n, dtype=float)
        out[self.permutation] = values[self.group_ids]
        return out

    def is_feasible(self, b, tol: float = 0.0) -> bool:
        b = np.asarray(b, dtype=float).reshape(-1)
        if b.shape != (self.n,):
            return False
        if np.any(b < -tol) or np.any(b > 1.0 + tol):
            return False
        along = b[self.permutation]
        if np.any(np.diff(along) < -tol):
            return False
        # ties: all positions of a group must agree
        for g in range(self.n_groups):
            vals = along[self.group_ids == g]
            if vals.max() - vals.min() > tol:
                return False
        return True


def check_feasible_weights(b, order: RowOrder, tol: float = 0.0) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(-1)
    if not order.is_feasible(b, tol=tol):
        raise ValueError(
            "shrinkage weights are infeasible: they must lie in [0, 1] and be "
            "monotone against the tau row-sum ordering (equal within ties)"
        )
    return b


def check_feasible_location(mu, data_range: float, tol: float = 0.0) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if np.any(np.abs(mu) > data_range + tol):
        raise ValueError(
            f"shrinkage target exceeds the data range [{-data_range}, {data_range}]"
        )
    return mu


def isotonic_box_projection(targets, weights, order: RowOrder) -> np.ndarray:
    """Weighted least-squares fit of a feasible weight vector to ``targets``.

    Solves ``min sum_i w_i (b_i - t_i)^2`` subject to the box [0, 1] and the
    ordering constraint of ``order``.  Tie groups are collapsed to pooled
    points first, then adjacent violators are pooled along the order, and
    the result is clipped to [0, 1]; clipping after pooling is exact
    because the box bounds commute with monotone pooling.

    Coordinates with zero weight do not influence any pooled average: they
    take the value their block forces or, when no pooling touches them, the
    feasible value nearest their clipped target.  A block whose total
    weight is zero takes the plain mean of its member targets.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if targets.shape != weights.shape or targets.size != order.n:
        raise ValueError("targets, weights and order must have matching length")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if not (np.all(np.isfinite(targets)) and np.all(np.isfinite(weights))):
        raise ValueError("targets and weights must be finite")

    t = targets[order.permutation]
    w = weights[order.permutation]
    gids = order.group_ids
    n_groups = order.n_groups

    # per-block accumulators: weighted target sum, weight, plain target sum, count
    swt = np.bincount(gids, weights=w * t, minlength=n_groups)
    sw = np.bincount(gids, weights=w, minlength=n_groups)
    st = np.bincount(gids, weights=t, minlength=n_groups)
    cnt = np.bincount(gids, minlength=n_groups).astype(float)

    # pool adjacent violators: stack of merged block accumulators
    stack: list[list[float]] = []
    for g in range(n_groups):
        cur = [swt[g], sw[g], st[g], cnt[g], float(g)]  # last slot: rightmost group
        while stack:
            prev = stack[-1]
            pv = prev[0] / prev[1] if prev[1] > 0 else prev[2] / prev[3]
            cv = cur[0] / cur[1] if cur[1] > 0 else cur[2] / cur[3]
            if pv <= cv:
                break
            stack.pop()
            cur = [prev[k] + cur[k] for k in range(4)] + [cur[4]]
        stack.append(cur)

    group_values = np.empty(n_groups)
    left = 0
    for blk in stack:
        right = int(blk[4])
        value = blk[0] / blk[1] if blk[1] > 0 else blk[2] / blk[3]
        group_values[left : right + 1] = value
        left = right + 1

    return np.clip(order.expand_group_values(group_values), 0.0, 1.0)


def sample_feasible_weights(order: RowOrder, rng: np.random.Generator) -> np.ndarray:
    """Random feasible weight vector: sorted uniforms, one per tie group."""
    u = np.sort(rng.uniform(0.0, 1.0, order.n_groups))
    return order.expand_group_values(u)


@dataclass
class SolverOptions:
    """Knobs for the coordinate-descent location fit."""

    max_outer_iterations: int = 200
    tolerance: float = 1e-10
    mu_update: str = "closed_form"

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.mu_update != "closed_form":
            raise ValueError(f"unsupported mu_update {self.mu_update!r}")


@dataclass
class FitResult:
    """Fitted shrinkage weights and target with solver diagnostics."""

    b: np.ndarray
    mu: np.ndarray
    objective: float
    iterations: int
    converged: bool
    target_kind: str = "location"  # "location" | "grand_mean"


def _quadratic_targets(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Unconstrained minimizers of ``a_i b^2 - 2 s_i b`` with zero-curvature fills.

    Flat coordinates (``a_i = 0``) push to 1 when the linear pull is toward
    shrinkage (``s_i > 0``), sit at 0.5 when the objective ignores them, and
    drop to 0 for a negative pull; the projection's zero-weight rule then
    yields the nearest feasible value.
    """
    targets = np.empty_like(a)
    pos = a > 0
    targets[pos] = s[pos] / a[pos]
    flat = ~pos
    targets[flat] = np.where(s[flat] > 0, 1.0, np.where(s[flat] == 0, 0.5, 0.0))
    return targets


def _surrogate_sums(data: DataMatrix, spec: FamilySpec) -> np.ndarray:
    """Row sums of the unbiased variance surrogate, ``S_i``."""
    denom = data.tau + spec.nu2
    if not np.all(denom > 0):
        raise ValueError("tau + nu2 must be positive for every entry")
    return (variance_function(spec, data.y) / denom).sum(axis=1)


def minimize_aure(data: DataMatrix, spec: FamilySpec) -> FitResult:
    """Exact minimizer of :func:`~nefshrink.risk.aure` over the feasible set.

    The objective is separable per row: ``A_i b_i^2 - 2 (1 - 1/n) S_i b_i``
    with ``A_i = sum_j (Y_ij - Ybar_j)^2`` and ``S_i`` the row sum of
    ``V(Y_ij)/(tau_ij + nu2)``, so a single weighted isotonic projection of
    the per-row stationary points solves it globally.
    """
    if data.n < 2:
        raise ValueError("grand-mean shrinkage requires at least two rows")
    order = RowOrder.from_tau(data.tau)
    ybar = grand_mean(data)
    a = ((data.y - ybar) ** 2).sum(axis=1)
    s = (1.0 - 1.0 / data.n) * _surrogate_sums(data, spec)
    b = isotonic_box_projection(_quadratic_targets(a, s), a, order)
    return FitResult(
        b=b,
        mu=ybar,
        objective=aure(data, b, spec),
        iterations=1,
        converged=True,
        target_kind="grand_mean",
    )


# descend from every data row as a target candidate only for small matrices
_ROW_RESTART_CAP = 12


def minimize_ure(
    data: DataMatrix, spec: FamilySpec, opts: SolverOptions | None = None
) -> FitResult:
    """Minimize :func:`~nefshrink.risk.ure` jointly over weights and target.

    Coordinate descent: for fixed ``mu`` the weights solve a weighted
    isotonic projection (weights ``A_i(mu) = sum_j (Y_ij - mu_j)^2``,
    stationary points ``S_i / A_i``); for fixed weights the target has the
    closed form ``mu_j = sum_i b_i^2 Y_ij / sum_i b_i^2`` clipped into the
    data box (exact, the objective is a separable convex quadratic in each
    ``mu_j``).  A weight step is only accepted if it does not increase the
    objective, so the recorded value is nonincreasing.

    Joint minimization is biconvex, not convex, and descent from the grand
    mean alone can miss targets that sit near one data cluster.  Restarts
    therefore cover the no/half/full-shrinkage weights plus data-driven
    targets: the clipped zero vector and, for small matrices, every
    clipped data row; the best final iterate wins.
    """
    opts = opts or SolverOptions()
    order = RowOrder.from_tau(data.tau)
    s = _surrogate_sums(data, spec)
    m_range = data.data_range
    mu0 = np.clip(grand_mean(data), -m_range, m_range)

    def b_step(mu: np.ndarray) -> np.ndarray:
        a = ((data.y - mu) ** 2).sum(axis=1)
        return isotonic_box_projection(_quadratic_targets(a, s), a, order)

    def mu_step(b: np.ndarray) -> np.ndarray:
        wsum = float((b**2).sum())
        if wsum == 0.0:
            return mu0.copy()
        return np.clip((b**2) @ data.y / wsum, -m_range, m_range)

    def descend(b: np.ndarray, mu: np.ndarray):
        obj = ure(data, b, mu, spec)
        converged = False
        iterations = 0
        for iterations in range(1, opts.max_outer_iterations + 1):
            candidate = b_step(mu)
            cand_obj = ure(data, candidate, mu, spec)
            if cand_obj <= obj:
                b, obj_b = candidate, cand_obj
            else:
                obj_b = obj  # flat-direction fill would backtrack; keep iterate
            mu = mu_step(b)
            obj_mu = ure(data, b, mu, spec)
            _check_descent(obj_b, obj_mu)
            if obj - obj_mu < opts.tolerance:
                obj = obj_mu
                converged = True
                break
            obj = obj_mu
        return b, mu, obj, iterations, converged

    starts = [(np.full(data.n, c), mu0) for c in (0.5, 0.0, 1.0)]
    mu_candidates = [np.clip(np.zeros(data.p), -m_range, m_range)]
    if data.n <= _ROW_RESTART_CAP:
        mu_candidates.extend(np.clip(row, -m_range, m_range) for row in data.y)
    starts.extend((np.full(data.n, 0.5), mu) for mu in mu_candidates)

    best = None
    for b_init, mu_init in starts:
        result = descend(b_init.copy(), mu_init.copy())
        if best is None or result[2] < best[2]:
            best = result
    b, mu, _, iterations, converged = best
    return FitResult(
        b=b,
        mu=mu,
        objective=ure(data, b, mu, spec),
        iterations=iterations,
        converged=converged,
        target_kind="location",
    )


def _check_descent(before: float, after: float) -> None:
    if after > before + 1e-12 * (1.0 + abs(before)):
        raise RuntimeError(
            f"objective increased across a descent step ({before} -> {after})"
        )


def _unit_grid(resolution: float) -> np.ndarray:
    if not 0 < resolution <= 1:
        raise ValueError("resolution must lie in (0, 1]")
    steps = int(np.floor(1.0 / resolution + 1e-9))
    return np.minimum(np.arange(steps + 1) * resolution, 1.0)


def _box_grid(bound: float, resolution: float) -> np.ndarray:
    steps = int(np.floor(2.0 * bound / resolution + 1e-9))
    return np.minimum(-bound + np.arange(steps + 1) * resolution, bound)


_MAX_ORACLE_POINTS = 30_000_000


def grid_oracle_ure(
    data: DataMatrix, spec: FamilySpec, resolution: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exhaustive lattice minimizer of the location-shrinkage risk estimate.

    Enumerates every feasible monotone weight vector on a ``resolution``
    lattice over [0, 1]^n; for each one the best lattice target follows
    per column from the exact quadratic in ``mu_j`` (the lattice point
    nearest the clipped vertex).  Intended as a test oracle, so the size
    is guarded: ``n <= 5`` and ``p <= 3``.
    """
    if data.n > 5 or data.p > 3:
        raise ValueError("grid oracle guard: requires n <= 5 and p <= 3")
    order = RowOrder.from_tau(data.tau)
    bvals = _unit_grid(resolution)
    m_range = data.data_range
    mvals = _box_grid(m_range, resolution)
    n_b = len(bvals)
    n_groups = order.n_groups
    total = _n_monotone(n_b, n_groups)
    if total > _MAX_ORACLE_POINTS:
        raise ValueError(
            f"grid oracle guard: {total} monotone weight vectors at this resolution"
        )

    group_rows = order.group_of_row()
    s = _surrogate_sums(data, spec)
    y = data.y
    y2 = y * y
    s_total = float(s.sum())
    np_scale = data.n * data.p
    lattice_top = mvals[-1]

    best_val = np.inf
    best_b = None
    best_mu = None
    combos = itertools.combinations_with_replacement(range(n_b), n_groups)
    while True:
        chunk = list(itertools.islice(combos, 200_000))
        if not chunk:
            break
        gb = bvals[np.asarray(chunk, dtype=np.intp)]  # (K, G) group values
        b = gb[:, group_rows]  # (K, n) row values
        w = b * b
        r = w.sum(axis=1)  # (K,)
        q = w @ y  # (K, p)
        pterm = w @ y2  # (K, p)
        with np.errstate(invalid="ignore", divide="ignore"):
            vertex = np.where(r[:, None] > 0, q / r[:, None], 0.0)
        vertex = np.clip(vertex, -m_range, lattice_top)
        idx = np.rint((vertex + m_range) / resolution).astype(np.intp)
        idx = np.clip(idx, 0, len(mvals) - 1)
        mu = mvals[idx]
        quad = pterm - 2.0 * mu * q + mu * mu * r[:, None]
        obj = (quad.sum(axis=1) + s_total - 2.0 * (b @ s)) / np_scale
        k = int(np.argmin(obj))
        if obj[k] < best_val:
            best_val = float(obj[k])
            best_b = b[k].copy()
            best_mu = mu[k].copy()
    return best_b, best_mu, best_val


def _n_monotone(n_values: int, n_groups: int) -> int:
    return comb(n_values + n_groups - 1, n_groups)


def grid_minimize_separable_quadratic(
    quad, lin, order: RowOrder, resolution: float
) -> tuple[np.ndarray, float]:
    """Exact lattice minimizer of ``sum_i quad_i b_i^2 + lin_i b_i`` over the
    feasible monotone set.

    Dynamic program over tie groups and lattice values; exhaustive over the
    lattice without enumerating vectors, so it stays an independent check
    of the pool-adjacent-violators route even at fine resolutions.
    """
    quad = np.asarray(quad, dtype=float).reshape(-1)
    lin = np.asarray(lin, dtype=float).reshape(-1)
    if quad.shape != lin.shape or quad.size != order.n:
        raise ValueError("coefficients and order must have matching length")
    grid = _unit_grid(resolution)
    n_vals = len(grid)
    gids_by_row = order.group_of_row()
    gq = np.bincount(gids_by_row, weights=quad, minlength=order.n_groups)
    gl = np.bincount(gids_by_row, weights=lin, minlength=order.n_groups)

    running = np.zeros(n_vals)
    parents = []
    for g in range(order.n_groups):
        cum = np.minimum.accumulate(running)
        strictly_new = running < np.concatenate(([np.inf], cum[:-1]))
        parent = np.where(strictly_new, np.arange(n_vals), -1)
        parent = np.maximum.accumulate(parent)
        parents.append(parent)
        running = gq[g] * grid * grid + gl[g] * grid + cum

    k = int(np.argmin(running))
    value = float(running[k])
    choice = np.empty(order.n_groups, dtype=int)
    for g in range(order.n_groups - 1, -1, -1):
        choice[g] = k
        k = int(parents[g][k])
    return order.expand_group_values(grid[choice]), value
