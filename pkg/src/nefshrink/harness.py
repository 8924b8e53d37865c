"""Monte Carlo experiment engine with deterministic, order-independent seeding.

An experiment sweeps a grid of sample sizes: for each ``n`` it derives the
dimension ``p``, draws one fixed mean matrix, and runs ``M`` independent
replications, each of which samples data, fits the configured shrinkage
class, evaluates the fixed competitors, and records losses, risk
estimates, and a sampled proxy for the largest gap between the risk
estimate and the realized loss over the feasible set.  Every random
stream is derived from the master seed through a spawn key
``(n_index, replication, purpose)``, so results are byte-identical no
matter how replications are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .estimators import (
    COMPETITOR_KINDS,
    FIT_MODES,
    competitor,
    fit,
    shrink_to_grand_mean,
    shrink_to_location,
)
from .families import (
    FAMILY_TOKENS,
    DataMatrix,
    FamilySpec,
    default_tau,
    make_family,
    sample_matrix,
    validate_mean_matrix,
)
from .optimize import (
    FitResult,
    RowOrder,
    SolverOptions,
    minimize_aure,
    minimize_ure,
    sample_feasible_weights,
)
from .risk import aure, grand_mean, squared_error_loss, ure

__all__ = [
    "ExperimentConfig",
    "ReplicationRecord",
    "AggregateRecord",
    "ExperimentResult",
    "RateFit",
    "estimate_sup_gap",
    "estimate_sup_gap_grand_mean",
    "run_experiment",
    "aggregate_records",
    "fit_rate",
    "records_csv_text",
    "write_records_csv",
    "read_records_csv",
]

CSV_HEADER = "rep,n,p,estimator,loss,risk_estimate,sup_gap,iters,converged"

# stream purposes for seed derivation
_THETA, _TAU, _SAMPLE, _SUPGAP = 0, 1, 2, 3


def _substream(seed: int, n_index: int, rep: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(n_index, rep, purpose))


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one Monte Carlo experiment."""

    family: str
    theta_rule: str
    n_grid: tuple[int, ...]
    p_rule: str
    gamma: float | None = None
    lam: float | None = None
    trials: int | None = None
    tau_rule: str = "ones"
    replications: int = 100
    seed: int = 0
    mode: str = "location"
    competitors: tuple[str, ...] = ()
    sup_gap_samples: int = 20
    max_iter: int = 200
    tol: float = 1e-10

    def __post_init__(self):
        if self.family not in FAMILY_TOKENS:
            raise ValueError(f"unknown family token {self.family!r}")
        if not self.n_grid:
            raise ValueError("n_grid must be non-empty")
        if any(n < 2 for n in self.n_grid):
            raise ValueError("n_grid entries must be at least 2")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if self.replications < 1:
            raise ValueError("replication count must be at least 1")
        if self.mode not in FIT_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {FIT_MODES}")
        for kind in self.competitors:
            if kind not in COMPETITOR_KINDS:
                raise ValueError(
                    f"unknown competitor {kind!r}; expected one of {COMPETITOR_KINDS}"
                )
        if self.sup_gap_samples < 0:
            raise ValueError("K_grid must be nonnegative")
        self.p_for(self.n_grid[0])  # validate the p rule eagerly

    def p_for(self, n: int) -> int:
        kind, _, arg = self.p_rule.partition(":")
        if kind == "fixed":
            p = int(arg)
            if p < 1:
                raise ValueError("fixed p must be positive")
            return p
        if kind == "power":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("p_rule 'power' requires a positive gamma")
            return max(1, int(np.floor(n**self.gamma)))
        raise ValueError(f"unknown p rule {self.p_rule!r}; use 'fixed:<int>' or 'power'")

    def family_spec(self) -> FamilySpec:
        return make_family(self.family, shape=self.lam, trials=self.trials)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(max_outer_iterations=self.max_iter, tolerance=self.tol)

    @classmethod
    def from_dict(cls, entries: dict[str, str]) -> "ExperimentConfig":
        spec = {
            "family": ("family", str),
            "lambda": ("lam", float),
            "N": ("trials", int),
            "theta_rule": ("theta_rule", str),
            "n_grid": ("n_grid", _int_tuple),
            "p_rule": ("p_rule", str),
            "gamma": ("gamma", float),
            "tau_rule": ("tau_rule", str),
            "M": ("replications", int),
            "seed": ("seed", int),
            "mode": ("mode", str),
            "competitors": ("competitors", _token_tuple),
            "K_grid": ("sup_gap_samples", int),
            "max_iter": ("max_iter", int),
            "tol": ("tol", float),
        }
        kwargs = {}
        for key, value in entries.items():
            if key not in spec:
                raise ValueError(f"unknown config key {key!r}")
            name, convert = spec[key]
            kwargs[name] = convert(value)
        for required in ("family", "theta_rule", "n_grid", "p_rule"):
            if required not in kwargs:
                raise ValueError(f"missing required config key {required!r}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(parse_config_text(Path(path).read_text()))


def _int_tuple(value: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in value.split(",") if tok.strip())


def _token_tuple(value: str) -> tuple[str, ...]:
    value = value.strip()
    if not value or value == "none":
        return ()
    return tuple(tok.strip() for tok in value.split(","))


def parse_config_text(text: str) -> dict[str, str]:
    """Parse the flat ``key = value`` configuration format ('#' comments)."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in entries:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


@dataclass
class ReplicationRecord:
    rep: int
    n: int
    p: int
    estimator: str
    loss: float
    risk_estimate: float
    sup_gap: float
    iters: int
    converged: bool


@dataclass
class AggregateRecord:
    n: int
    p: int
    estimator: str
    count: int
    mean_loss: float
    se_loss: float
    mean_risk_estimate: float
    se_risk_estimate: float
    mean_sup_gap: float
    se_sup_gap: float
    mean_iters: float
    se_iters: float
    mean_converged: float
    se_converged: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[ReplicationRecord]
    aggregates: list[AggregateRecord]


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float
    n_points: int


def _fitted_pair(data, spec, fitted) -> tuple[np.ndarray, np.ndarray]:
    if fitted is None:
        fitted = minimize_ure(data, spec)
    if isinstance(fitted, FitResult):
        return fitted.b, fitted.mu
    b, mu = fitted
    return np.asarray(b, float), np.asarray(mu, float)


def estimate_sup_gap(
    data: DataMatrix,
    theta,
    spec: FamilySpec,
    samples: int,
    seed,
    fitted: FitResult | tuple | None = None,
) -> float:
    """Sampled proxy for the largest |risk estimate - loss| over the
    location-shrinkage feasible set.

    Evaluates the gap at the no- and full-shrinkage corners, at the fitted
    pair (computed here unless supplied), and at ``samples`` seeded random
    feasible pairs (monotone weights from sorted uniforms, targets uniform
    in the data box).  Random pairs are derived one stream per index, so
    enlarging ``samples`` keeps the smaller set as a prefix.  The result is
    a lower bound on the true supremum.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    order = RowOrder.from_tau(data.tau)
    m_range = data.data_range
    mu_center = np.clip(grand_mean(data), -m_range, m_range)
    pairs = [
        (np.zeros(data.n), mu_center),
        (np.ones(data.n), mu_center),
        _fitted_pair(data, spec, fitted),
    ]
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for child in root.spawn(samples):
        rng = np.random.default_rng(child)
        b = sample_feasible_weights(order, rng)
        mu = rng.uniform(-m_range, m_range, data.p)
        pairs.append((b, mu))
    gap = 0.0
    for b, mu in pairs:
        realized = squared_error_loss(shrink_to_location(data, b, mu), theta)
        gap = max(gap, abs(ure(data, b, mu, spec) - realized))
    return gap


def estimate_sup_gap_grand_mean(
    data: DataMatrix,
    theta,
    spec: FamilySpec,
    samples: int,
    seed,
    fitted: FitResult | np.ndarray | None = None,
) -> float:
    """Grand-mean analogue of :func:`estimate_sup_gap` (weights only)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    order = RowOrder.from_tau(data.tau)
    if fitted is None:
        fitted = minimize_aure(data, spec)
    fitted_b = fitted.b if isinstance(fitted, FitResult) else np.asarray(fitted, float)
    weight_vectors = [np.zeros(data.n), np.ones(data.n), fitted_b]
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for child in root.spawn(samples):
        rng = np.random.default_rng(child)
        weight_vectors.append(sample_feasible_weights(order, rng))
    gap = 0.0
    for b in weight_vectors:
        realized = squared_error_loss(shrink_to_grand_mean(data, b), theta)
        gap = max(gap, abs(aure(data, b, spec) - realized))
    return gap


def _generate_theta(config: ExperimentConfig, spec: FamilySpec, n: int, p: int, seed_seq) -> np.ndarray:
    rule = config.theta_rule
    name, _, args = rule.partition(":")
    if name == "fixed":
        theta = np.loadtxt(args, delimiter=",", ndmin=2)
        if theta.shape != (n, p):
            raise ValueError(
                f"fixed theta matrix has shape {theta.shape}, expected {(n, p)}"
            )
    elif name == "uniform":
        lo, hi = (float(tok) for tok in args.split(","))
        theta = np.random.default_rng(seed_seq).uniform(lo, hi, (n, p))
    elif name == "normal":
        center, sd = (float(tok) for tok in args.split(","))
        theta = np.random.default_rng(seed_seq).normal(center, sd, (n, p))
    else:
        raise ValueError(f"unknown theta rule {rule!r}")
    try:
        validate_mean_matrix(spec, theta)
    except ValueError as exc:
        raise ValueError(f"theta rule {rule!r} left the family mean domain: {exc}") from None
    return theta


def _generate_tau(config: ExperimentConfig, spec: FamilySpec, n: int, p: int, seed_seq) -> np.ndarray:
    if spec.trials is not None:
        if config.tau_rule != "ones":
            raise ValueError("tau for trial-based families is determined by N")
        return default_tau(spec, n, p)
    rule = config.tau_rule
    if rule == "ones":
        return np.ones((n, p), dtype=int)
    name, _, args = rule.partition(":")
    if name == "randint":
        lo, hi = (int(tok) for tok in args.split(","))
        if lo < 1 or hi < lo:
            raise ValueError("randint tau rule needs 1 <= lo <= hi")
        return np.random.default_rng(seed_seq).integers(lo, hi + 1, (n, p))
    raise ValueError(f"unknown tau rule {rule!r}")


def _run_replication(
    config: ExperimentConfig,
    task: tuple[int, int, int, np.ndarray, np.ndarray, int],
) -> list[ReplicationRecord]:
    ni, n, p, theta, tau, rep = task
    spec = config.family_spec()
    opts = config.solver_options()
    data = sample_matrix(spec, theta, tau, _substream(config.seed, ni, rep, _SAMPLE))
    result, estimate = fit(data, spec, config.mode, opts)
    sup_seed = _substream(config.seed, ni, rep, _SUPGAP)
    if config.mode == "location":
        sup_gap = estimate_sup_gap(
            data, theta, spec, config.sup_gap_samples, sup_seed, fitted=result
        )
    else:
        sup_gap = estimate_sup_gap_grand_mean(
            data, theta, spec, config.sup_gap_samples, sup_seed, fitted=result
        )
    rows = [
        ReplicationRecord(
            rep=rep,
            n=n,
            p=p,
            estimator="fit",
            loss=squared_error_loss(estimate, theta),
            risk_estimate=result.objective,
            sup_gap=sup_gap,
            iters=result.iterations,
            converged=result.converged,
        )
    ]
    for kind in config.competitors:
        est = competitor(data, kind, theta=theta if kind == "oracle_loss" else None, opts=opts)
        rows.append(
            ReplicationRecord(
                rep=rep,
                n=n,
                p=p,
                estimator=kind,
                loss=squared_error_loss(est, theta),
                risk_estimate=ure(data, est.b, est.mu, spec),
                sup_gap=sup_gap,
                iters=0,
                converged=True,
            )
        )
    return rows


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Execute every replication of the configured experiment.

    Fully deterministic given ``(config, config.seed)``: replication
    streams are keyed by position, and results are collected in task
    order, so the output is identical for any ``workers`` count.
    """
    records: list[ReplicationRecord] = []
    spec = config.family_spec()
    for ni, n in enumerate(config.n_grid):
        p = config.p_for(n)
        theta = _generate_theta(config, spec, n, p, _substream(config.seed, ni, 0, _THETA))
        tau = _generate_tau(config, spec, n, p, _substream(config.seed, ni, 0, _TAU))
        tasks = [(ni, n, p, theta, tau, rep) for rep in range(config.replications)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                chunks = pool.map(
                    partial(_run_replication, config),
                    tasks,
                    chunksize=max(1, len(tasks) // (4 * workers)),
                )
                for rows in chunks:
                    records.extend(rows)
        else:
            for task in tasks:
                records.extend(_run_replication(config, task))
    return ExperimentResult(
        config=config, records=records, aggregates=aggregate_records(records)
    )


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan")
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def aggregate_records(records: list[ReplicationRecord]) -> list[AggregateRecord]:
    """Per-(n, estimator) means and standard errors, in first-seen order."""
    groups: dict[tuple[int, str], list[ReplicationRecord]] = {}
    for record in records:
        groups.setdefault((record.n, record.estimator), []).append(record)
    out = []
    for (n, estimator), rows in groups.items():
        loss = np.array([r.loss for r in rows])
        risk = np.array([r.risk_estimate for r in rows])
        sup = np.array([r.sup_gap for r in rows])
        iters = np.array([float(r.iters) for r in rows])
        conv = np.array([float(r.converged) for r in rows])
        stats = [_mean_se(col) for col in (loss, risk, sup, iters, conv)]
        out.append(
            AggregateRecord(
                n=n,
                p=rows[0].p,
                estimator=estimator,
                count=len(rows),
                mean_loss=stats[0][0],
                se_loss=stats[0][1],
                mean_risk_estimate=stats[1][0],
                se_risk_estimate=stats[1][1],
                mean_sup_gap=stats[2][0],
                se_sup_gap=stats[2][1],
                mean_iters=stats[3][0],
                se_iters=stats[3][1],
                mean_converged=stats[4][0],
                se_converged=stats[4][1],
            )
        )
    return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def records_csv_text(result: ExperimentResult) -> str:
    """Serialize raw records plus aggregate rows (rep = mean/se) losslessly."""
    lines = [CSV_HEADER]
    for r in result.records:
        lines.append(
            f"{r.rep},{r.n},{r.p},{r.estimator},{_fmt(r.loss)},{_fmt(r.risk_estimate)},"
            f"{_fmt(r.sup_gap)},{r.iters},{r.converged}"
        )
    for a in result.aggregates:
        lines.append(
            f"mean,{a.n},{a.p},{a.estimator},{_fmt(a.mean_loss)},{_fmt(a.mean_risk_estimate)},"
            f"{_fmt(a.mean_sup_gap)},{_fmt(a.mean_iters)},{_fmt(a.mean_converged)}"
        )
        lines.append(
            f"se,{a.n},{a.p},{a.estimator},{_fmt(a.se_loss)},{_fmt(a.se_risk_estimate)},"
            f"{_fmt(a.se_sup_gap)},{_fmt(a.se_iters)},{_fmt(a.se_converged)}"
        )
    return "\n".join(lines) + "\n"


def write_records_csv(result: ExperimentResult, path) -> None:
    Path(path).write_text(records_csv_text(result), newline="\n")


def read_records_csv(path) -> tuple[list[ReplicationRecord], list[dict]]:
    """Load a records CSV; returns (raw records, aggregate rows as dicts)."""
    text = Path(path).read_text()
    lines = text.strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected records header in {path}")
    records: list[ReplicationRecord] = []
    agg_rows: list[dict] = []
    for line in lines[1:]:
        rep, n, p, estimator, loss, risk, sup, iters, converged = line.split(",")
        if rep in ("mean", "se"):
            agg_rows.append(
                {
                    "stat": rep,
                    "n": int(n),
                    "p": int(p),
                    "estimator": estimator,
                    "loss": float(loss),
                    "risk_estimate": float(risk),
                    "sup_gap": float(sup),
                    "iters": float(iters),
                    "converged": float(converged),
                }
            )
            continue
        records.append(
            ReplicationRecord(
                rep=int(rep),
                n=int(n),
                p=int(p),
                estimator=estimator,
                loss=float(loss),
                risk_estimate=float(risk),
                sup_gap=float(sup),
                iters=int(iters),
                converged=converged == "True",
            )
        )
    return records, agg_rows


def fit_rate(
    aggregates: list[AggregateRecord],
    x: str = "n",
    y: str = "mean_sup_gap",
    estimator: str = "fit",
    reference: str = "oracle_loss",
) -> RateFit:
    """Least squares of ``log(y)`` on ``log(n)`` across the sample-size grid.

    ``y`` is either the mean sup-gap proxy of ``estimator`` or its mean
    excess loss over ``reference``.  Requires at least three grid points
    and strictly positive values.
    """
    if x != "n":
        raise ValueError("only x='n' is supported")
    by_n: dict[int, dict[str, AggregateRecord]] = {}
    for agg in aggregates:
        by_n.setdefault(agg.n, {})[agg.estimator] = agg
    ns = sorted(by_n)
    ys = []
    for n in ns:
        rows = by_n[n]
        if estimator not in rows:
            raise ValueError(f"no aggregate rows for estimator {estimator!r} at n={n}")
        if y == "mean_sup_gap":
            ys.append(rows[estimator].mean_sup_gap)
        elif y == "mean_excess_loss":
            if reference not in rows:
                raise ValueError(f"no aggregate rows for reference {reference!r} at n={n}")
            ys.append(rows[estimator].mean_loss - rows[reference].mean_loss)
        else:
            raise ValueError(f"unknown rate quantity {y!r}")
    if len(ns) < 3:
        raise ValueError("rate fitting needs at least three grid points")
    ys = np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        raise ValueError("rate fitting needs strictly positive values")
    lx = np.log(np.asarray(ns, dtype=float))
    ly = np.log(ys)
    lx_c = lx - lx.mean()
    slope = float((lx_c @ (ly - ly.mean())) / (lx_c @ lx_c))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = len(ns) - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    stderr = float(np.sqrt(sigma2 / (lx_c @ lx_c)))
    return RateFit(slope=slope, intercept=intercept, stderr=stderr, n_points=len(ns))
