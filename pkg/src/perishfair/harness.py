"""Replication runner, parameter sweeps, calibration, and named instances."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ConfConfig,
    ProblemInstance,
    SamplePath,
    Schedule,
    ScheduleKind,
    ScheduleSpec,
    TypeProfile,
    ZERO_CONF,
    build_schedule,
    sample_path,
)
from .engine import (
    Policy,
    perishing_guardrail,
    run_path,
    static_proportional,
    static_x_lower,
    vanilla_guardrail,
)
from .errors import DataIntegrity, InvalidConfig, UnknownInstance
from .guardrail import GuardrailPlan, compute_x_lower
from .metrics import compute_metrics
from .rng import derive_seed
from .stochastic import (
    DeterministicDemand,
    DeterministicPerish,
    GeometricPerish,
    PerishingSpec,
    PmfPerish,
    TruncatedNormalDemand,
    ceil_uniform_law,
)

__all__ = [
    "CSV_VERSION_HEADER",
    "DEFAULT_BETA",
    "GINGER_P_TABLE",
    "GINGER_P_MLE",
    "POLICY_NAMES",
    "ExperimentConfig",
    "AggregateStats",
    "ExperimentResult",
    "RetailSeries",
    "run_experiment",
    "sweep_tradeoff",
    "calibrate_retail",
    "make_paper_instance",
    "xlower_grid",
    "replication_rows_to_csv",
    "aggregate_from_rows",
    "sweep_rows_to_csv",
]

CSV_VERSION_HEADER = "# perishfair-csv v1"

# Envy-budget exponent at the empirical cusp of the trade-off curve.
DEFAULT_BETA = 0.35

# The source reports two fits of the same retail dataset; the instance
# uses the headline value, the MLE appendix value is kept for reference.
GINGER_P_TABLE = 0.00224
GINGER_P_MLE = 0.0024

POLICY_NAMES = (
    "static-proportional",
    "static-xlower",
    "vanilla-guardrail",
    "perishing-guardrail",
)

_METRIC_COLUMNS = (
    "counterfactual_envy",
    "hindsight_envy",
    "inefficiency",
    "spoilage",
    "leftover",
    "stockout",
    "offset_expiring",
)

# Confidence profile used by the synthetic geometric experiment family:
# Hoeffding demand bound for the baseline and threshold reserve, expected
# arrivals inside the slow process, and no Chernoff inflation of the
# spoilage forecast.  This is the calibration that reproduces the
# published stockout table; see README.
GEOMETRIC_FAMILY_CONF = ConfConfig(
    demand_bound="hoeffding", slow_demand="mean", perish_conf="zero"
)

# The retail-calibrated family additionally drops the demand bound
# (baselines divide by expected demand), matching the published
# real-data table's proportional benchmark of B / N-bar = 0.89.
RETAIL_FAMILY_CONF = ConfConfig(demand_bound="zero", slow_demand="mean", perish_conf="zero")

# Benchmark families give every unit its first round before memoryless
# perishing can trigger; see the decisions notes on offset-expiry rates.
_GEOMETRIC_START = 2


def _worker_count(requested: int | None) -> int:
    env = os.environ.get("PERISHFAIR_THREADS")
    if requested is not None:
        return max(1, requested)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidConfig(f"PERISHFAIR_THREADS={env!r} is not an integer")
    return 1


@dataclass(frozen=True)
class ExperimentConfig:
    instance: ProblemInstance
    policies: tuple = POLICY_NAMES
    replications: int = 150
    base_seed: int = 20240501
    lt: float | None = None  # overrides instance.envy_budget when set
    workers: int | None = None
    schedule_seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidConfig("replications must be >= 1")
        if not self.policies:
            raise InvalidConfig("policy list must be nonempty")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise InvalidConfig(f"unknown policies: {unknown}")


@dataclass(frozen=True)
class AggregateStats:
    """Mean and 95% normal-approximation CI per (policy, metric)."""

    replications: int
    table: dict  # policy -> metric -> (mean, ci_halfwidth)

    def mean(self, policy: str, metric: str) -> float:
        return self.table[policy][metric][0]

    def ci(self, policy: str, metric: str) -> float:
        return self.table[policy][metric][1]


@dataclass(frozen=True)
class ExperimentResult:
    stats: AggregateStats
    rows: tuple  # one dict per (policy, replication)
    plans: dict  # policy-independent plan info per replication index


def _policy_from_name(
    name: str,
    instance: ProblemInstance,
    schedule: Schedule,
    plan: GuardrailPlan,
    lt: float,
) -> Policy:
    if name == "perishing-guardrail":
        plan_lt = dataclasses.replace(plan, x_upper=plan.x_lower + lt)
        return perishing_guardrail(instance, schedule, plan_lt)
    if name == "vanilla-guardrail":
        return vanilla_guardrail(instance, plan, lt=lt)
    if name == "static-xlower":
        return static_x_lower(instance, plan)
    if name == "static-proportional":
        return static_proportional(instance, plan)
    raise InvalidConfig(f"unknown policy {name!r}")


class _PlanCache:
    """Plans keyed by schedule ranks; heuristic ties reshuffle per replication."""

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self._plans: dict = {}

    def schedule_for_rep(self, rep: int, schedule_seed: int, path: SamplePath) -> Schedule:
        spec = self.instance.schedule_spec
        if spec.kind in (ScheduleKind.IDENTITY, ScheduleKind.EXPLICIT):
            seed = schedule_seed
        else:
            seed = derive_seed(schedule_seed, 1_000_000 + rep)
        return build_schedule(spec, self.instance.perishing, seed, path=path)

    def plan_for(self, schedule: Schedule) -> GuardrailPlan:
        key = schedule.rank_of_unit.tobytes()
        if key not in self._plans:
            self._plans[key] = compute_x_lower(self.instance, schedule)
        return self._plans[key]


def _run_one_replication(
    instance: ProblemInstance,
    cache: _PlanCache,
    policies: tuple,
    lt: float,
    base_seed: int,
    schedule_seed: int,
    rep: int,
) -> tuple:
    path = sample_path(instance, derive_seed(base_seed, rep))
    schedule = cache.schedule_for_rep(rep, schedule_seed, path)
    plan = cache.plan_for(schedule)
    rows = []
    for name in policies:
        policy = _policy_from_name(name, instance, schedule, plan, lt)
        traj = run_path(instance, schedule, policy, path)
        report = compute_metrics(instance, path, traj)
        row = {"policy": name, "replication": rep, "seed": path.seed}
        row.update(report.as_dict())
        rows.append(row)
    info = {"replication": rep, "x_lower": plan.x_lower, "l_perish": plan.l_perish,
            "n_bar": plan.n_bar, "delta_bar": plan.delta_bar_at_x_lower}
    return rows, info


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every policy over shared sample paths and aggregate the metrics.

    Paths are common random numbers: within a replication all policies see
    the same arrivals and perishing times.  Results are deterministic in
    (instance, base_seed) regardless of worker count.
    """
    instance = config.instance
    lt = config.lt if config.lt is not None else instance.envy_budget
    cache = _PlanCache(instance)

    # warm the plan cache sequentially for fixed schedules so threads share it
    workers = _worker_count(config.workers)
    reps = range(config.replications)

    def job(rep: int):
        return _run_one_replication(
            instance, cache, tuple(config.policies), lt,
            config.base_seed, config.schedule_seed, rep,
        )

    if workers == 1:
        results = [job(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, reps))

    rows = tuple(row for rep_rows, _ in results for row in rep_rows)
    plans = {info["replication"]: info for _, info in results}
    stats = aggregate_from_rows(rows)
    return ExperimentResult(stats=stats, rows=rows, plans=plans)


def aggregate_from_rows(rows) -> AggregateStats:
    """Fold per-replication rows into per-policy means with 95% CIs."""
    by_policy: dict = {}
    for row in rows:
        by_policy.setdefault(row["policy"], []).append(row)
    table = {}
    reps = 0
    for policy, policy_rows in by_policy.items():
        reps = len(policy_rows)
        table[policy] = {}
        for metric in _METRIC_COLUMNS:
            vals = np.array([float(r[metric]) for r in policy_rows])
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            table[policy][metric] = (mean, 1.96 * sd / math.sqrt(len(vals)))
    return AggregateStats(replications=reps, table=table)


def replication_rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_HEADER + "\n")
    writer = csv.writer(buf)
    writer.writerow(["policy", "replication", "seed", *_METRIC_COLUMNS])
    for row in rows:
        writer.writerow(
            [row["policy"], row["replication"], row["seed"]]
            + [repr(float(row[m])) for m in _METRIC_COLUMNS]
        )
    return buf.getvalue()


def replication_rows_from_csv(text: str):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for rec in reader:
        row = {"policy": rec["policy"], "replication": int(rec["replication"]), "seed": int(rec["seed"])}
        for m in _METRIC_COLUMNS:
            row[m] = float(rec[m])
        rows.append(row)
    return tuple(rows)


# ---------------------------------------------------------------------------
# Trade-off sweep
# ---------------------------------------------------------------------------


def sweep_tradeoff(
    instance: ProblemInstance,
    betas,
    policies=("perishing-guardrail", "vanilla-guardrail"),
    replications: int = 150,
    base_seed: int = 20240501,
    workers: int | None = None,
    schedule_seed: int = 0,
):
    """One row per (policy, beta) with L_T = T^(-beta); beta = inf means L_T = 0.

    Sample paths and the baseline plan are shared across the whole grid,
    so points on a curve differ only through the envy budget.
    """
    horizon = instance.horizon
    rows = []
    for beta in betas:
        lt = 0.0 if math.isinf(beta) else float(horizon ** (-beta))
        config = ExperimentConfig(
            instance=instance,
            policies=tuple(policies),
            replications=replications,
            base_seed=base_seed,
            lt=lt,
            workers=workers,
            schedule_seed=schedule_seed,
        )
        result = run_experiment(config)
        for policy in policies:
            entry = {
                "policy": policy,
                "beta": beta,
                "lt": lt,
            }
            for metric in _METRIC_COLUMNS:
                mean, ci = result.stats.table[policy][metric]
                entry[f"{metric}_mean"] = mean
                entry[f"{metric}_ci"] = ci
            rows.append(entry)
    return rows


def sweep_rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_HEADER + "\n")
    cols = ["policy", "beta", "lt"]
    for metric in _METRIC_COLUMNS:
        cols += [f"{metric}_mean", f"{metric}_ci"]
    writer = csv.writer(buf)
    writer.writerow(cols)
    for row in rows:
        writer.writerow([row[c] for c in cols])
    return buf.getvalue()


def xlower_grid(instance: ProblemInstance, schedule: Schedule, epsilon: float | None = None):
    """(x, delta_bar(x), (B - delta_bar(x)) / n_bar) triples for plotting."""
    from .guardrail import delta_bar as _delta_bar
    from .stochastic import conf_n as _conf_n

    conf = instance.conf
    n_bar = instance.expected_total
    if conf.demand_bound == "hoeffding":
        n_bar += _conf_n(0, instance.horizon, instance.n_types, instance.rho_max,
                         instance.horizon, instance.delta)
    x0 = instance.budget / n_bar
    eps = epsilon if epsilon is not None else 1e-3 * x0
    rows = []
    k = 0
    while True:
        x = x0 - k * eps
        if x < 0:
            break
        db = _delta_bar(instance, schedule, x, conf)
        rows.append({"x": x, "delta_bar": db, "rhs": (instance.budget - db) / n_bar})
        k += 1
    return rows


# ---------------------------------------------------------------------------
# Retail calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetailSeries:
    """Daily stock ledger: begin, restock, sales, end quantities."""

    begin_stock: np.ndarray
    restock: np.ndarray
    sales: np.ndarray
    end_stock: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.begin_stock, self.restock, self.sales, self.end_stock)]
        n = arrays[0].shape[0]
        if n == 0 or any(a.shape != (n,) for a in arrays):
            raise InvalidConfig("retail series needs equal-length nonempty columns")
        for name, arr in zip(("begin_stock", "restock", "sales", "end_stock"), arrays):
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.begin_stock)

    @classmethod
    def from_csv(cls, text: str) -> "RetailSeries":
        lines = [l for l in text.splitlines() if l and not l.startswith("#")]
        reader = csv.DictReader(lines)
        cols = {"begin_stock": [], "restock": [], "sales": [], "end_stock": []}
        for rec in reader:
            for key in cols:
                if rec.get(key) is None:
                    raise InvalidConfig(f"retail csv missing column {key!r}")
                cols[key].append(float(rec[key]))
        return cls(**{k: np.array(v) for k, v in cols.items()})

    def perish_per_day(self) -> np.ndarray:
        """Units lost each day by the stock accounting identity."""
        perish = self.begin_stock + self.restock - self.sales - self.end_stock
        bad = np.where(perish < -1e-6)[0]
        if bad.size:
            day = int(bad[0])
            raise DataIntegrity(
                f"day {day}: computed perish {perish[day]:.6f} is negative beyond tolerance"
            )
        return np.maximum(perish, 0.0)


def calibrate_retail(series: RetailSeries) -> dict:
    """MLE of a daily geometric perishing rate plus a normal demand fit."""
    perish = series.perish_per_day()
    total_begin = float(series.begin_stock.sum())
    if total_begin <= 0:
        raise InvalidConfig("retail series has no stock on hand")
    p_hat = float(perish.sum()) / total_begin
    mean = float(series.sales.mean())
    sd = float(series.sales.std(ddof=1)) if len(series) > 1 else 0.0
    return {"p_hat": p_hat, "demand_mean": mean, "demand_sd": sd}


# ---------------------------------------------------------------------------
# Named instances
# ---------------------------------------------------------------------------


def _single_type() -> tuple:
    return (TypeProfile("default", 1.0),)


def make_paper_instance(name: str, seed: int = 0, **params):
    """Construct a named benchmark instance and its allocation schedule.

    Recognized names (case-insensitive): worked_example,
    reversed_schedule(T), geometric_sweep(T, alpha, B=2T),
    front_loaded(T, B, schedule), back_loaded(T, B, schedule),
    ginger_calibrated.  Numeric aliases (example_3_4, thm_3_2,
    instance_1, instance_2) are accepted.
    """
    key = name.strip().lower().replace("-", "_")
    if key in ("worked_example", "example_3_4", "example3_4"):
        instance = ProblemInstance(
            horizon=3,
            budget=3,
            types=_single_type(),
            demand=DeterministicDemand(values=[1.0, 2.0, 1.0]),
            perishing=PerishingSpec(
                (
                    PmfPerish((1, 3), (0.5, 0.5)),  # unit a
                    PmfPerish((2, 4), (0.5, 0.5)),  # unit b
                    PmfPerish((1, 2), (0.5, 0.5)),  # unit c
                )
            ),
            schedule_spec=ScheduleSpec(ScheduleKind.EXPLICIT, ranks=(2, 3, 1)),
            delta=0.1,
            envy_budget=float(params.get("lt", 0.0)),
            conf=ZERO_CONF,
        )
    elif key in ("reversed_schedule", "thm_3_2", "thm3_2"):
        horizon = int(params.get("T", 10))
        instance = ProblemInstance(
            horizon=horizon,
            budget=horizon,
            types=_single_type(),
            demand=DeterministicDemand(values=1.0),
            perishing=PerishingSpec(tuple(DeterministicPerish(b) for b in range(1, horizon + 1))),
            schedule_spec=ScheduleSpec(
                ScheduleKind.EXPLICIT, ranks=tuple(horizon + 1 - b for b in range(1, horizon + 1))
            ),
            delta=1.0 / horizon,
            envy_budget=float(params.get("lt", 0.0)),
            conf=ZERO_CONF,
        )
    elif key in ("geometric_sweep", "geometricsweep"):
        horizon = int(params.get("T", 100))
        alpha = float(params.get("alpha", 0.1))
        budget = int(params.get("B", 2 * horizon))
        lt = float(params.get("lt", horizon ** (-DEFAULT_BETA)))
        p = horizon ** (-(1.0 + alpha))
        instance = ProblemInstance(
            horizon=horizon,
            budget=budget,
            types=_single_type(),
            demand=TruncatedNormalDemand(mean=2.0, sd=0.5),
            perishing=PerishingSpec.homogeneous(GeometricPerish(p, start=_GEOMETRIC_START), budget),
            schedule_spec=ScheduleSpec(ScheduleKind.IDENTITY),
            delta=1.0 / horizon,
            envy_budget=lt,
            conf=GEOMETRIC_FAMILY_CONF,
        )
    elif key in ("front_loaded", "instance_1", "instance1"):
        horizon = int(params.get("T", 50))
        budget = int(params.get("B", 100))
        lt = float(params.get("lt", horizon ** (-DEFAULT_BETA)))
        laws = []
        for b in range(1, budget + 1):
            if b <= horizon:
                laws.append(ceil_uniform_law(horizon / 2 - b / 2, horizon / 2 + b / 2))
            else:
                laws.append(DeterministicPerish(horizon))
        instance = ProblemInstance(
            horizon=horizon,
            budget=budget,
            types=_single_type(),
            demand=TruncatedNormalDemand(mean=2.0, sd=0.5),
            perishing=PerishingSpec(tuple(laws)),
            schedule_spec=_schedule_spec_from_params(params),
            delta=1.0 / horizon,
            envy_budget=lt,
            conf=ZERO_CONF,
        )
    elif key in ("back_loaded", "instance_2", "instance2"):
        horizon = int(params.get("T", 50))
        budget = int(params.get("B", 100))
        lt = float(params.get("lt", horizon ** (-DEFAULT_BETA)))
        laws = []
        for b in range(1, budget + 1):
            if b <= horizon:
                laws.append(DeterministicPerish(b + 1))
            else:
                laws.append(ceil_uniform_law(float(horizon), float(b + 1)))
        instance = ProblemInstance(
            horizon=horizon,
            budget=budget,
            types=_single_type(),
            demand=TruncatedNormalDemand(mean=2.0, sd=0.5),
            perishing=PerishingSpec(tuple(laws)),
            schedule_spec=_schedule_spec_from_params(params),
            delta=1.0 / horizon,
            envy_budget=lt,
            conf=ZERO_CONF,
        )
    elif key in ("ginger_calibrated", "gingercalibrated", "ginger"):
        horizon = int(params.get("T", 365))
        budget = int(params.get("B", 1168))
        lt = float(params.get("lt", horizon ** (-DEFAULT_BETA)))
        instance = ProblemInstance(
            horizon=horizon,
            budget=budget,
            types=_single_type(),
            demand=TruncatedNormalDemand(mean=3.2, sd=1.85, lower=1.0, upper=3.2 + 6 * 1.85),
            perishing=PerishingSpec.homogeneous(
                GeometricPerish(GINGER_P_TABLE, start=_GEOMETRIC_START), budget
            ),
            schedule_spec=ScheduleSpec(ScheduleKind.IDENTITY),
            delta=1.0 / horizon,
            envy_budget=lt,
            conf=RETAIL_FAMILY_CONF,
        )
    else:
        raise UnknownInstance(f"unknown named instance {name!r}")

    schedule = build_schedule(instance.schedule_spec, instance.perishing, seed)
    return instance, schedule


def _schedule_spec_from_params(params: dict) -> ScheduleSpec:
    kind = str(params.get("schedule", "mean")).lower()
    try:
        return ScheduleSpec(ScheduleKind(kind))
    except ValueError:
        raise InvalidConfig(f"unknown schedule kind {kind!r}")
