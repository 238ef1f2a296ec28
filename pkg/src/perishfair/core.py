"""Problem instances, allocation schedules, and realized sample paths.

Everything here is immutable after construction and safe to share across
parallel replication workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InstanceParseError, InvalidConfig, InvalidSchedule, MissingPath
from .rng import path_streams, tiebreak_rng
from .stochastic import (
    DemandSpec,
    DeterministicDemand,
    DeterministicPerish,
    GeometricPerish,
    PerishingSpec,
    PmfPerish,
    TableDemand,
    TruncatedNormalDemand,
    UniformIntPerish,
    beyond_horizon_law,
    ceil_uniform_law,
)

__all__ = [
    "TypeProfile",
    "ConfConfig",
    "PAPER_CONF",
    "ZERO_CONF",
    "ScheduleKind",
    "ScheduleSpec",
    "Schedule",
    "ProblemInstance",
    "SamplePath",
    "build_schedule",
    "sample_path",
    "instance_from_dict",
    "load_instance",
]

# Schedule keys are quantized before tie detection so that analytically
# tied units (equal means/CVs up to float noise) really shuffle together.
_TIE_QUANTUM = 1e-9


@dataclass(frozen=True)
class TypeProfile:
    """An arrival type and its linear utility weight."""

    type_id: str
    weight: float

    def __post_init__(self):
        if self.weight <= 0:
            raise InvalidConfig(f"type {self.type_id!r} needs a positive weight")


@dataclass(frozen=True)
class ConfConfig:
    """Which confidence terms the planner and policies actually apply.

    demand_bound: 'hoeffding' uses the Hoeffding radius for the demand
        upper bound and the guardrail threshold reserve; 'zero' uses plain
        expectations.
    slow_demand: 'lower' runs the slow consumption process on the
        high-probability demand lower bound; 'mean' runs it on expected
        arrivals.
    perish_conf: 'chernoff' adds the Chernoff radius to spoilage
        forecasts; 'zero' uses the bare expectation.
    """

    demand_bound: str = "hoeffding"
    slow_demand: str = "lower"
    perish_conf: str = "chernoff"

    def __post_init__(self):
        if self.demand_bound not in ("hoeffding", "zero"):
            raise InvalidConfig(f"unknown demand_bound {self.demand_bound!r}")
        if self.slow_demand not in ("lower", "mean"):
            raise InvalidConfig(f"unknown slow_demand {self.slow_demand!r}")
        if self.perish_conf not in ("chernoff", "zero"):
            raise InvalidConfig(f"unknown perish_conf {self.perish_conf!r}")

    @classmethod
    def from_mode(cls, mode) -> "ConfConfig":
        """Accepts a ConfConfig, or the preset names 'paper' / 'zero'."""
        if isinstance(mode, cls):
            return mode
        if isinstance(mode, str):
            key = mode.lower()
            if key == "paper":
                return PAPER_CONF
            if key == "zero":
                return ZERO_CONF
        raise InvalidConfig(f"unknown conf mode {mode!r}")


PAPER_CONF = ConfConfig("hoeffding", "lower", "chernoff")
ZERO_CONF = ConfConfig("zero", "mean", "zero")


class ScheduleKind(str, Enum):
    IDENTITY = "identity"
    MEAN = "mean"
    CV = "cv"
    LCB = "lcb"
    EXPLICIT = "explicit"
    HINDSIGHT = "hindsight"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: ScheduleKind
    ranks: tuple | None = None  # explicit: ranks[b] = sigma(b)

    def __post_init__(self):
        if self.kind == ScheduleKind.EXPLICIT and self.ranks is None:
            raise InvalidSchedule("explicit schedule requires ranks")


@dataclass(frozen=True)
class Schedule:
    """A fixed consumption order: rank_of_unit[b] = sigma(b), 1-based ranks."""

    rank_of_unit: np.ndarray
    unit_at_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ranks = np.asarray(self.rank_of_unit, dtype=int)
        n = ranks.shape[0]
        if sorted(ranks.tolist()) != list(range(1, n + 1)):
            raise InvalidSchedule("ranks must be a bijection onto {1..B}")
        inv = np.empty(n, dtype=int)
        inv[ranks - 1] = np.arange(n)
        object.__setattr__(self, "rank_of_unit", ranks)
        object.__setattr__(self, "unit_at_rank", inv)

    @property
    def budget(self) -> int:
        return len(self.rank_of_unit)

    def sigma(self, unit: int) -> int:
        return int(self.rank_of_unit[unit])

    def sigma_inv(self, rank: int) -> int:
        return int(self.unit_at_rank[rank - 1])


@dataclass(frozen=True)
class ProblemInstance:
    """Immutable experiment definition shared by every module."""

    horizon: int
    budget: int
    types: tuple
    demand: DemandSpec
    perishing: PerishingSpec
    schedule_spec: ScheduleSpec
    delta: float
    envy_budget: float = 0.0
    conf: ConfConfig = PAPER_CONF
    round_arrivals: bool = False

    # derived, cached at construction
    round_means: np.ndarray = field(init=False, repr=False)
    mean_matrix: np.ndarray = field(init=False, repr=False)
    rho_max: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidConfig("horizon must be >= 1")
        if self.budget < 1:
            raise InvalidConfig("budget must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise InvalidConfig("delta must lie in (0, 1)")
        if self.envy_budget < 0:
            raise InvalidConfig("envy budget must be nonnegative")
        if len(self.types) == 0:
            raise InvalidConfig("at least one type is required")
        ids = [t.type_id for t in self.types]
        if len(set(ids)) != len(ids):
            raise InvalidConfig("type ids must be unique")
        if self.perishing.budget != self.budget:
            raise InvalidConfig(
                f"perishing spec covers {self.perishing.budget} units, budget is {self.budget}"
            )
        self.demand.validate(self.horizon, self.n_types)
        mean = self.demand.mean_matrix(self.horizon, self.n_types)
        rho = self.demand.rho_matrix(self.horizon, self.n_types)
        object.__setattr__(self, "mean_matrix", mean)
        object.__setattr__(self, "round_means", mean.sum(axis=1))
        object.__setattr__(self, "rho_max", float(rho.max()))
        if self.expected_total <= 0:
            raise InvalidConfig("expected total arrivals must be positive")

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.types])

    @property
    def w_max(self) -> float:
        return float(max(t.weight for t in self.types))

    @property
    def expected_total(self) -> float:
        return float(self.round_means.sum())

    @property
    def beta_avg(self) -> float:
        return self.budget / self.expected_total


@dataclass(frozen=True)
class SamplePath:
    """One realization of arrivals and perishing times for a fixed seed."""

    arrivals: np.ndarray  # (T, K) real-valued counts
    perish_time: np.ndarray  # (B,) positive ints
    seed: int

    def __post_init__(self):
        arrivals = np.asarray(self.arrivals, dtype=float)
        perish = np.asarray(self.perish_time, dtype=int)
        if (arrivals.sum(axis=1) < 1.0 - 1e-9).any():
            raise InvalidConfig("every round's total arrivals must be >= 1")
        if (perish < 1).any():
            raise InvalidConfig("perishing times must be >= 1")
        object.__setattr__(self, "arrivals", arrivals)
        object.__setattr__(self, "perish_time", perish)

    @property
    def round_totals(self) -> np.ndarray:
        return self.arrivals.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.arrivals.sum())

    def perish_counts(self, horizon: int) -> np.ndarray:
        """P_t = number of units with T_b = t, for t = 1..T."""
        counts = np.zeros(horizon, dtype=int)
        inside = self.perish_time[self.perish_time <= horizon]
        np.add.at(counts, inside - 1, 1)
        return counts


def build_schedule(
    spec: ScheduleSpec,
    perishing: PerishingSpec,
    seed: int,
    path: SamplePath | None = None,
) -> Schedule:
    """Materialize an allocation schedule from its spec.

    Heuristic orderings sort on per-unit summary statistics of the
    perishing laws; exact ties are broken by a seeded uniform shuffle.
    """
    b = perishing.budget
    kind = spec.kind
    if kind == ScheduleKind.EXPLICIT:
        ranks = np.asarray(spec.ranks, dtype=int)
        if ranks.shape[0] != b:
            raise InvalidSchedule(f"explicit ranks cover {ranks.shape[0]} units, budget is {b}")
        return Schedule(ranks)
    if kind == ScheduleKind.IDENTITY:
        return Schedule(np.arange(1, b + 1))
    if kind == ScheduleKind.HINDSIGHT:
        if path is None:
            raise MissingPath("hindsight-optimal ordering requires a sample path")
        keys = path.perish_time.astype(float)
    elif kind == ScheduleKind.MEAN:
        keys = perishing.means()
    elif kind == ScheduleKind.CV:
        means = perishing.means()
        keys = -perishing.stds() / means  # decreasing CV == increasing -CV
    elif kind == ScheduleKind.LCB:
        keys = perishing.means() - 1.96 * perishing.stds()
    else:  # pragma: no cover - enum is exhaustive
        raise InvalidSchedule(f"unsupported schedule kind {kind}")

    keys = np.round(np.asarray(keys, dtype=float) / _TIE_QUANTUM) * _TIE_QUANTUM
    jitter = tiebreak_rng(seed).uniform(size=b)
    order = np.lexsort((jitter, keys))  # stable: key first, jitter within ties
    ranks = np.empty(b, dtype=int)
    ranks[order] = np.arange(1, b + 1)
    return Schedule(ranks)


def sample_path(instance: ProblemInstance, seed: int) -> SamplePath:
    """Draw one sample path; bit-identical for identical (instance, seed)."""
    demand_rng, perish_rng = path_streams(seed)
    arrivals = instance.demand.sample(demand_rng, instance.horizon, instance.n_types)
    if instance.round_arrivals:
        arrivals = np.maximum(np.rint(arrivals), 1.0)
    perish = instance.perishing.sample(perish_rng)
    return SamplePath(arrivals=arrivals, perish_time=perish, seed=int(seed))


# ---------------------------------------------------------------------------
# Instance definition files
# ---------------------------------------------------------------------------


def _get(section: dict, key: str, path: str, required=True, default=None):
    if key not in section:
        if required:
            raise InstanceParseError(f"{path}.{key}", "missing required key")
        return default
    return section[key]


def _demand_from_dict(d: dict, path: str) -> DemandSpec:
    kind = str(_get(d, "kind", path)).lower()
    try:
        if kind == "deterministic":
            values = d.get("values", d.get("value"))
            if values is None:
                raise InstanceParseError(f"{path}.values", "deterministic demand needs value(s)")
            return DeterministicDemand(values=values)
        if kind == "truncated_normal":
            return TruncatedNormalDemand(
                mean=float(_get(d, "mean", path)),
                sd=float(_get(d, "sd", path)),
                lower=float(d.get("lower", 1.0)),
                upper=float(d["upper"]) if "upper" in d else None,
                rho=float(d["rho"]) if "rho" in d else None,
            )
        if kind == "table":
            return TableDemand(
                values=tuple(_get(d, "values", path)), probs=tuple(_get(d, "probs", path))
            )
    except InvalidConfig as exc:
        raise InstanceParseError(path, str(exc)) from exc
    raise InstanceParseError(f"{path}.kind", f"unknown demand kind {kind!r}")


def _perish_law_from_dict(d: dict, path: str, horizon: int):
    kind = str(_get(d, "kind", path)).lower()
    try:
        if kind == "deterministic":
            return DeterministicPerish(int(_get(d, "time", path)))
        if kind == "geometric":
            return GeometricPerish(float(_get(d, "p", path)))
        if kind == "uniform_int":
            return UniformIntPerish(int(_get(d, "lo", path)), int(_get(d, "hi", path)))
        if kind == "uniform":
            return ceil_uniform_law(float(_get(d, "lo", path)), float(_get(d, "hi", path)))
        if kind == "beyond_horizon":
            return beyond_horizon_law(horizon)
        if kind == "pmf":
            return PmfPerish(
                tuple(int(v) for v in _get(d, "values", path)),
                tuple(float(p) for p in _get(d, "probs", path)),
            )
    except InvalidConfig as exc:
        raise InstanceParseError(path, str(exc)) from exc
    raise InstanceParseError(f"{path}.kind", f"unknown perishing kind {kind!r}")


def _perishing_from_dict(d: dict, path: str, budget: int, horizon: int) -> PerishingSpec:
    kind = str(_get(d, "kind", path)).lower()
    if kind == "units":
        units = _get(d, "units", path)
        if len(units) != budget:
            raise InstanceParseError(f"{path}.units", f"{len(units)} unit laws for budget {budget}")
        laws = tuple(
            _perish_law_from_dict(u, f"{path}.units[{i}]", horizon) for i, u in enumerate(units)
        )
        return PerishingSpec(laws)
    if kind == "deterministic" and "times" in d:
        times = [int(v) for v in d["times"]]
        if len(times) != budget:
            raise InstanceParseError(f"{path}.times", f"{len(times)} times for budget {budget}")
        return PerishingSpec(tuple(DeterministicPerish(t) for t in times))
    law = _perish_law_from_dict(d, path, horizon)
    return PerishingSpec.homogeneous(law, budget)


def instance_from_dict(data: dict) -> ProblemInstance:
    """Build a ProblemInstance from a parsed config mapping.

    Errors name the offending key path so config mistakes are easy to find.
    """
    root = "instance"
    horizon = int(_get(data, "horizon", root))
    budget = int(_get(data, "budget", root))
    delta = float(_get(data, "delta", root))
    envy_budget = float(data.get("envy_budget", 0.0))

    types_raw = data.get("types", [{"type_id": "default", "weight": 1.0}])
    types = []
    for i, t in enumerate(types_raw):
        tid = str(_get(t, "type_id", f"{root}.types[{i}]"))
        w = float(_get(t, "weight", f"{root}.types[{i}]"))
        try:
            types.append(TypeProfile(tid, w))
        except InvalidConfig as exc:
            raise InstanceParseError(f"{root}.types[{i}]", str(exc)) from exc

    demand = _demand_from_dict(_get(data, "demand", root), f"{root}.demand")
    perishing = _perishing_from_dict(
        _get(data, "perishing", root), f"{root}.perishing", budget, horizon
    )

    sched_raw = data.get("schedule", {"kind": "identity"})
    kind_str = str(_get(sched_raw, "kind", f"{root}.schedule")).lower()
    try:
        kind = ScheduleKind(kind_str)
    except ValueError:
        raise InstanceParseError(f"{root}.schedule.kind", f"unknown schedule kind {kind_str!r}")
    ranks = tuple(int(r) for r in sched_raw["ranks"]) if "ranks" in sched_raw else None
    schedule_spec = ScheduleSpec(kind=kind, ranks=ranks)

    conf_raw = data.get("conf")
    if conf_raw is None:
        conf = PAPER_CONF
    elif isinstance(conf_raw, str):
        conf = ConfConfig.from_mode(conf_raw)
    else:
        try:
            conf = ConfConfig(
                demand_bound=str(conf_raw.get("demand_bound", "hoeffding")),
                slow_demand=str(conf_raw.get("slow_demand", "lower")),
                perish_conf=str(conf_raw.get("perish_conf", "chernoff")),
            )
        except InvalidConfig as exc:
            raise InstanceParseError(f"{root}.conf", str(exc)) from exc

    try:
        return ProblemInstance(
            horizon=horizon,
            budget=budget,
            types=tuple(types),
            demand=demand,
            perishing=perishing,
            schedule_spec=schedule_spec,
            delta=delta,
            envy_budget=envy_budget,
            conf=conf,
            round_arrivals=bool(data.get("round_arrivals", False)),
        )
    except InvalidConfig as exc:
        raise InstanceParseError(root, str(exc)) from exc


def load_instance(path: str | Path) -> ProblemInstance:
    """Load an instance definition from a TOML or JSON file."""
    p = Path(path)
    text = p.read_bytes()
    if p.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:  # pragma: no cover - py310 fallback
            import tomli as tomllib
        data = tomllib.loads(text.decode("utf-8"))
    return instance_from_dict(data)
