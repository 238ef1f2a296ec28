"""Distribution primitives and concentration-bound formulas.

Demand specs describe the arrival counts N_{t,theta}; perishing specs
describe each unit's integer perishing time.  The confidence helpers
(`conf_n`, `conf_p`, `chernoff_epsilon`) are pure formula evaluations
consumed by the guardrail planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidConfig, InvalidDelta, InvalidMean

__all__ = [
    "DemandSpec",
    "DeterministicDemand",
    "TruncatedNormalDemand",
    "TableDemand",
    "PerishLaw",
    "DeterministicPerish",
    "GeometricPerish",
    "UniformIntPerish",
    "PmfPerish",
    "ceil_uniform_law",
    "beyond_horizon_law",
    "PerishingSpec",
    "conf_n",
    "conf_p",
    "chernoff_epsilon",
    "n_lower",
]


# ---------------------------------------------------------------------------
# Demand
# ---------------------------------------------------------------------------


class DemandSpec:
    """Joint law of the arrival matrix N_{t,theta}, iid across cells.

    Subclasses expose per-cell expectations, an almost-sure deviation
    bound rho, and a sampler driven by an externally supplied generator.
    """

    def mean_matrix(self, horizon: int, n_types: int) -> np.ndarray:
        raise NotImplementedError

    def rho_matrix(self, horizon: int, n_types: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, horizon: int, n_types: int) -> np.ndarray:
        raise NotImplementedError

    def min_round_total(self, n_types: int) -> float:
        """Lower bound on any round's total arrivals (must be >= 1)."""
        raise NotImplementedError

    def validate(self, horizon: int, n_types: int) -> None:
        if self.min_round_total(n_types) < 1.0 - 1e-12:
            raise InvalidConfig("demand spec must guarantee per-round total arrivals >= 1")


@dataclass(frozen=True)
class DeterministicDemand(DemandSpec):
    """Point-mass arrivals; `values` is a scalar, per-round vector, or (T, K) matrix."""

    values: object

    def _matrix(self, horizon: int, n_types: int) -> np.ndarray:
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 0:
            return np.full((horizon, n_types), float(arr))
        if arr.ndim == 1:
            if arr.shape[0] != horizon:
                raise InvalidConfig(
                    f"deterministic demand has {arr.shape[0]} rounds, instance horizon is {horizon}"
                )
            # a per-round vector gives round totals, split evenly across types
            return np.tile((arr / n_types)[:, None], (1, n_types))
        if arr.shape != (horizon, n_types):
            raise InvalidConfig(f"deterministic demand matrix shape {arr.shape} != ({horizon}, {n_types})")
        return arr

    def mean_matrix(self, horizon, n_types):
        return self._matrix(horizon, n_types)

    def rho_matrix(self, horizon, n_types):
        return np.zeros((horizon, n_types))

    def sample(self, rng, horizon, n_types):
        return self._matrix(horizon, n_types).copy()

    def min_round_total(self, n_types):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 0:
            return float(arr) * n_types
        if arr.ndim == 1:
            return float(arr.min())
        return float(arr.sum(axis=1).min())


def _truncnorm_params(mean: float, sd: float, lower: float, upper: float):
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    return a, b


def truncated_normal_mean(mean: float, sd: float, lower: float, upper: float) -> float:
    a, b = _truncnorm_params(mean, sd, lower, upper)
    return float(stats.truncnorm.mean(a, b, loc=mean, scale=sd))


@dataclass(frozen=True)
class TruncatedNormalDemand(DemandSpec):
    """Normal(mean, sd^2) conditioned on [lower, upper], sampled by inverse CDF.

    The default truncation window [lower, 2*mean - lower] is symmetric
    around `mean`, which keeps the truncated mean equal to `mean` and
    gives the almost-sure deviation bound rho = mean - lower.  The window
    is a config knob; widening it widens rho and with it every demand
    confidence term downstream.
    """

    mean: float
    sd: float
    lower: float = 1.0
    upper: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.sd <= 0:
            raise InvalidConfig("truncated normal sd must be positive")
        if self.upper is not None and self.upper <= self.lower:
            raise InvalidConfig("truncated normal upper bound must exceed lower bound")

    @property
    def upper_bound(self) -> float:
        return self.upper if self.upper is not None else 2.0 * self.mean - self.lower

    @property
    def cell_mean(self) -> float:
        return truncated_normal_mean(self.mean, self.sd, self.lower, self.upper_bound)

    @property
    def cell_rho(self) -> float:
        if self.rho is not None:
            return self.rho
        m = self.cell_mean
        return max(m - self.lower, self.upper_bound - m)

    def mean_matrix(self, horizon, n_types):
        return np.full((horizon, n_types), self.cell_mean)

    def rho_matrix(self, horizon, n_types):
        return np.full((horizon, n_types), self.cell_rho)

    def sample(self, rng, horizon, n_types):
        a, b = _truncnorm_params(self.mean, self.sd, self.lower, self.upper_bound)
        u = rng.uniform(size=(horizon, n_types))
        return stats.truncnorm.ppf(u, a, b, loc=self.mean, scale=self.sd)

    def min_round_total(self, n_types):
        return self.lower * n_types


@dataclass(frozen=True)
class TableDemand(DemandSpec):
    """Finite-support arrivals; each cell drawn iid from (values, probs)."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise InvalidConfig("table demand needs matching 1-d values and probs")
        if abs(p.sum() - 1.0) > 1e-9 or (p < 0).any():
            raise InvalidConfig("table demand probs must be a distribution")

    @property
    def cell_mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def cell_rho(self) -> float:
        m = self.cell_mean
        return float(max(abs(v - m) for v in self.values))

    def mean_matrix(self, horizon, n_types):
        return np.full((horizon, n_types), self.cell_mean)

    def rho_matrix(self, horizon, n_types):
        return np.full((horizon, n_types), self.cell_rho)

    def sample(self, rng, horizon, n_types):
        idx = rng.choice(len(self.values), size=(horizon, n_types), p=np.asarray(self.probs))
        return np.asarray(self.values, dtype=float)[idx]

    def min_round_total(self, n_types):
        return float(min(self.values)) * n_types


# ---------------------------------------------------------------------------
# Perishing
# ---------------------------------------------------------------------------


class PerishLaw:
    """Law of a single unit's integer perishing time T_b >= 1."""

    def cdf(self, k: int | np.ndarray) -> float | np.ndarray:
        """Pr(T_b <= k)."""
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def std(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class DeterministicPerish(PerishLaw):
    time: int

    def __post_init__(self):
        if self.time < 1:
            raise InvalidConfig("perishing time must be >= 1")

    def cdf(self, k):
        return np.where(np.asarray(k) >= self.time, 1.0, 0.0) if np.ndim(k) else (1.0 if k >= self.time else 0.0)

    @property
    def mean(self):
        return float(self.time)

    @property
    def std(self):
        return 0.0

    def sample(self, rng):
        return int(self.time)


@dataclass(frozen=True)
class GeometricPerish(PerishLaw):
    """Memoryless perishing: Pr(T = start - 1 + j) = p (1-p)^(j-1), j >= 1.

    With start = 1 this is the textbook geometric on {1, 2, ...}; start = 2
    grants every unit its first round (perishing begins the round after
    arrival), which is how the benchmark experiment families behave.
    """

    p: float
    start: int = 1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise InvalidConfig("geometric parameter must lie in (0, 1)")
        if self.start < 1:
            raise InvalidConfig("geometric start must be >= 1")

    def cdf(self, k):
        k = np.asarray(k, dtype=float)
        shifted = k - (self.start - 1)
        out = 1.0 - np.power(1.0 - self.p, np.maximum(shifted, 0.0))
        out = np.where(shifted < 1, 0.0, out)
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self):
        return self.start - 1 + 1.0 / self.p

    @property
    def std(self):
        return math.sqrt(1.0 - self.p) / self.p

    def sample(self, rng):
        return self.start - 1 + int(rng.geometric(self.p))


@dataclass(frozen=True)
class UniformIntPerish(PerishLaw):
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 1 or self.hi < self.lo:
            raise InvalidConfig("uniform-int perishing needs 1 <= lo <= hi")

    def cdf(self, k):
        k = np.asarray(k, dtype=float)
        n = self.hi - self.lo + 1
        out = np.clip((np.floor(k) - self.lo + 1) / n, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self):
        return (self.lo + self.hi) / 2.0

    @property
    def std(self):
        n = self.hi - self.lo + 1
        return math.sqrt((n * n - 1) / 12.0)

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))


@dataclass(frozen=True)
class PmfPerish(PerishLaw):
    """Explicit pmf over integer perishing times."""

    values: tuple
    probs: tuple
    _mean: float = field(init=False, repr=False)
    _std: float = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=int)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise InvalidConfig("pmf perishing needs matching 1-d values and probs")
        if (v < 1).any():
            raise InvalidConfig("perishing times must be >= 1")
        if abs(p.sum() - 1.0) > 1e-9 or (p < -1e-15).any():
            raise InvalidConfig("pmf perishing probs must be a distribution")
        m = float(np.dot(v, p))
        var = float(np.dot((v - m) ** 2, p))
        # consistency to 1e-9 is by construction; stash the moments
        object.__setattr__(self, "_mean", m)
        object.__setattr__(self, "_std", math.sqrt(max(var, 0.0)))

    def cdf(self, k):
        k = np.asarray(k, dtype=float)
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        order = np.argsort(v)
        v, p = v[order], np.cumsum(p[order])
        idx = np.searchsorted(v, k, side="right")
        out = np.where(idx > 0, p[np.minimum(idx, len(p)) - 1], 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self):
        return self._mean

    @property
    def std(self):
        return self._std

    def sample(self, rng):
        return int(rng.choice(np.asarray(self.values), p=np.asarray(self.probs)))


def ceil_uniform_law(a: float, b: float) -> PmfPerish:
    """Discretize a continuous Uniform(a, b) perishing time to rounds.

    A unit whose continuous perishing time falls in (k-1, k] is gone by the
    end of round k, so T = max(1, ceil(U)).
    """
    if b <= a:
        raise InvalidConfig("uniform perishing needs a < b")
    lo_k = max(1, math.ceil(a))
    hi_k = max(1, math.ceil(b))
    values, probs = [], []
    width = b - a
    for k in range(lo_k, hi_k + 1):
        mass = (min(float(k), b) - max(float(k - 1), a)) / width
        if k == lo_k:
            # everything at or below lo_k collapses onto it (floor at 1)
            mass = (min(float(k), b) - a) / width
        if mass > 0:
            values.append(k)
            probs.append(mass)
    probs = np.asarray(probs)
    probs = probs / probs.sum()
    return PmfPerish(tuple(values), tuple(probs))


def beyond_horizon_law(horizon: int) -> DeterministicPerish:
    """Point mass just past the horizon: the unit never perishes in [1, T]."""
    return DeterministicPerish(horizon + 1)


# id(spec) -> {horizon: table, "_ref": spec}; the "_ref" entry pins the
# spec object so a recycled id can never alias a live cache entry
_CDF_TABLE_CACHE: dict = {}


@dataclass(frozen=True)
class PerishingSpec:
    """Per-unit perishing laws for all B units."""

    laws: tuple

    def __post_init__(self):
        if len(self.laws) == 0:
            raise InvalidConfig("perishing spec needs at least one unit")

    @classmethod
    def homogeneous(cls, law: PerishLaw, budget: int) -> "PerishingSpec":
        return cls(tuple([law] * budget))

    @property
    def budget(self) -> int:
        return len(self.laws)

    def cdf_matrix(self, ks: np.ndarray) -> np.ndarray:
        """Matrix [b, j] = Pr(T_b <= ks[b, j]) for per-unit query points."""
        out = np.empty_like(ks, dtype=float)
        for b, law in enumerate(self.laws):
            out[b] = law.cdf(ks[b])
        return out

    def cdf_table(self, horizon: int) -> np.ndarray:
        """Dense per-unit CDF lookup: table[b, k] = Pr(T_b <= k), k = 0..horizon.

        Cached on the spec; planner hot loops index this instead of
        calling law.cdf per query.
        """
        if len(_CDF_TABLE_CACHE) > 32:
            _CDF_TABLE_CACHE.clear()
        cache = _CDF_TABLE_CACHE.setdefault(id(self), {})
        if horizon not in cache:
            ks = np.arange(horizon + 1, dtype=float)
            table = np.empty((self.budget, horizon + 1))
            for b, law in enumerate(self.laws):
                table[b] = law.cdf(ks)
            cache[horizon] = table
            cache["_ref"] = self  # keep the spec alive so id() stays valid
        return cache[horizon]

    def means(self) -> np.ndarray:
        return np.array([law.mean for law in self.laws])

    def stds(self) -> np.ndarray:
        return np.array([law.std for law in self.laws])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([law.sample(rng) for law in self.laws], dtype=int)


# ---------------------------------------------------------------------------
# Concentration bounds
# ---------------------------------------------------------------------------


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")


def conf_n(t: int, t_prime: int, n_types: int, rho_max: float, horizon: int, delta: float) -> float:
    """Hoeffding radius for cumulative arrivals over the window (t, t'].

    sqrt(2 (t'-t) |Theta| rho_max^2 log(2 T^2 / delta)); zero-width windows
    return 0 so callers can use it uniformly at the horizon edge.
    """
    _check_delta(delta)
    if t_prime < t:
        raise InvalidConfig(f"window end {t_prime} precedes start {t}")
    width = t_prime - t
    if width == 0 or rho_max == 0.0:
        return 0.0
    return math.sqrt(2.0 * width * n_types * rho_max**2 * math.log(2.0 * horizon**2 / delta))


def _conf_p_log_arg(t: int, horizon: int, delta: float) -> float:
    # log T degenerates at T=1; fall back to log(3/delta) there.
    if horizon >= 2:
        return 3.0 * t * math.log(horizon) / delta
    return 3.0 / delta


def conf_p(t: int, eta: float, horizon: int, delta: float) -> float:
    """Chernoff-inverse radius for the round-t perishing forecast.

    (1/2) (L + sqrt(L^2 + 8 eta L)) with L = log(3 t log T / delta);
    strictly increasing and concave in eta.
    """
    _check_delta(delta)
    if t < 1:
        raise InvalidConfig("conf_p requires t >= 1")
    if eta < 0:
        raise InvalidConfig("eta must be nonnegative")
    big_l = math.log(_conf_p_log_arg(t, horizon, delta))
    return 0.5 * (big_l + math.sqrt(big_l**2 + 8.0 * eta * big_l))


def chernoff_epsilon(mu: float, delta: float) -> float:
    """Multiplicative Chernoff deviation: the eps solving eps^2 mu/(2+eps) = log(1/delta)."""
    _check_delta(delta)
    if mu <= 0:
        raise InvalidMean(f"chernoff_epsilon needs mu > 0, got {mu}")
    big_l = math.log(1.0 / delta)
    return (big_l + math.sqrt(big_l**2 + 8.0 * mu * big_l)) / (2.0 * mu)


def n_lower(instance, t: int, t_prime: int) -> float:
    """High-probability lower bound on arrivals over rounds [t, t']."""
    if not 1 <= t:
        raise InvalidConfig("n_lower requires t >= 1")
    if t_prime < t - 1:
        raise InvalidConfig("n_lower requires t' >= t - 1")
    if t_prime == t - 1:
        return 0.0
    expected = float(instance.round_means[t - 1 : t_prime].sum())
    radius = conf_n(t - 1, t_prime, instance.n_types, instance.rho_max, instance.horizon, instance.delta)
    return max(0.0, expected - radius)
