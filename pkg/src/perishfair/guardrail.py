"""Baseline-allocation construction and pessimistic perishing forecasts.

The planner bounds each unit's latest possible allocation time under a
"slow" consumption process that ignores perishing, converts those times
into spoilage estimates, and solves a one-dimensional fixed-point
inequality for the largest budget-respecting static allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfConfig, ProblemInstance, Schedule
from .errors import InvalidConfig
from .rng import path_streams
from .stochastic import GeometricPerish, conf_n, conf_p

__all__ = [
    "GuardrailPlan",
    "SlowProcess",
    "tau_b",
    "NEVER",
    "mu_of_x",
    "delta_bar",
    "compute_x_lower",
    "eta_t",
    "p_bar_sequence",
    "BoundResult",
    "AnalyticBoundsReport",
    "analytic_bounds",
]

NEVER = math.inf

# absolute slack when testing "consumed mass >= rank" so float dust never
# postpones an allocation time by a round
_RANK_EPS = 1e-9


class SlowProcess:
    """Cumulative lower bounds on arrival mass used by tau and eta.

    Precomputes, for every start round t, nothing; windows are formed on
    demand from the prefix expectation array plus a sqrt-width radius, so
    a tau sweep for one start round costs O(T) plus a sorted lookup.
    """

    def __init__(self, instance: ProblemInstance, conf: ConfConfig | None = None):
        self.instance = instance
        self.conf = conf or instance.conf
        t = instance.horizon
        self.cum_mean = np.concatenate([[0.0], np.cumsum(instance.round_means)])
        if self.conf.slow_demand == "lower" and instance.rho_max > 0:
            self._radius_unit = math.sqrt(
                2.0 * instance.n_types * instance.rho_max**2
                * math.log(2.0 * instance.horizon**2 / instance.delta)
            )
        else:
            self._radius_unit = 0.0

    def lower_prefix(self, t: int) -> float:
        """N-lower over rounds [1, t] ( = 0 for t = 0)."""
        if t <= 0:
            return 0.0
        return max(0.0, self.cum_mean[t] - self._radius_unit * math.sqrt(t))

    def lower_windows_from(self, t: int) -> np.ndarray:
        """Vector over t' = t..T of N-lower for windows [t, t']."""
        horizon = self.instance.horizon
        ends = np.arange(t, horizon + 1)
        sums = self.cum_mean[ends] - self.cum_mean[t - 1]
        widths = ends - (t - 1)
        return np.maximum(0.0, sums - self._radius_unit * np.sqrt(widths))

    def consumed_running_max(self, t: int, x: float) -> np.ndarray:
        """Running max of guaranteed consumed mass by t' = t..T under allocation x."""
        base = self.lower_prefix(t - 1) * x
        levels = base + self.lower_windows_from(t) * x
        return np.maximum.accumulate(levels)


def _tau_vector(slow: SlowProcess, schedule: Schedule, t: int, x: float) -> np.ndarray:
    """tau_b(t | x, sigma) for every unit, as floats with inf meaning Never."""
    b = schedule.budget
    taus = np.full(b, NEVER)
    if x <= 0:
        return taus
    consumed = slow.consumed_running_max(t, x)
    ranks = schedule.rank_of_unit.astype(float)
    idx = np.searchsorted(consumed, ranks - _RANK_EPS, side="left")
    found = idx < consumed.shape[0]
    taus[found] = t + idx[found]
    return taus


def tau_b(
    instance: ProblemInstance,
    schedule: Schedule,
    b: int,
    t: int,
    x: float,
    conf: ConfConfig | None = None,
) -> float:
    """Latest possible allocation time of unit b starting from round t.

    Returns the smallest t' in [t, T] at which the slow process has
    consumed at least sigma(b) units, or NEVER (inf) when no such round
    exists by the horizon; callers use min(T, tau).
    """
    if not 1 <= t <= instance.horizon:
        raise InvalidConfig(f"round {t} outside horizon")
    slow = SlowProcess(instance, conf)
    return float(_tau_vector(slow, schedule, t, x)[b])


def _mu_from_taus(instance: ProblemInstance, taus: np.ndarray) -> tuple[float, np.ndarray]:
    horizon = instance.horizon
    cutoff = (np.minimum(taus, horizon) - 1.0).astype(int)  # Pr(T_b <= min{T, tau} - 1)
    table = instance.perishing.cdf_table(horizon)
    probs = table[np.arange(len(taus)), cutoff]
    return float(probs.sum()), probs


def mu_of_x(
    instance: ProblemInstance,
    schedule: Schedule,
    x: float,
    method: str = "analytic",
    reps: int = 0,
    seed: int = 0,
    conf: ConfConfig | None = None,
) -> float:
    """Upper bound on the expected number of spoiled units under static x.

    'analytic' sums each unit's probability of perishing strictly before
    min{T, tau_b(1 | x)}; 'mc' estimates the same sum by sampling
    perishing times.
    """
    if x < 0:
        raise InvalidConfig("allocation must be nonnegative")
    slow = SlowProcess(instance, conf)
    taus = _tau_vector(slow, schedule, 1, x)
    if method == "analytic":
        return _mu_from_taus(instance, taus)[0]
    if method == "mc":
        if reps <= 0:
            raise InvalidConfig("monte-carlo mu needs reps > 0")
        cutoff = np.minimum(taus, instance.horizon)
        total = 0
        for r in range(reps):
            _, perish_rng = path_streams(seed + r)
            tb = instance.perishing.sample(perish_rng)
            total += int((tb < cutoff).sum())
        return total / reps
    raise InvalidConfig(f"unknown mu method {method!r}")


def delta_bar(
    instance: ProblemInstance,
    schedule: Schedule,
    x: float,
    conf: ConfConfig | None = None,
) -> float:
    """Worst-case spoilage loss: min(B, mu(x) + perishing confidence)."""
    conf = conf or instance.conf
    mu = mu_of_x(instance, schedule, x, conf=conf)
    radius = conf_p(1, mu, instance.horizon, instance.delta) if conf.perish_conf == "chernoff" else 0.0
    return min(float(instance.budget), mu + radius)


@dataclass(frozen=True)
class GuardrailPlan:
    """Everything the guardrail policy precomputes before round 1."""

    x_lower: float
    x_upper: float
    l_perish: float
    n_bar: float
    eta: np.ndarray  # eta[t-1] for t = 1..T
    tau_cache: np.ndarray  # min{T, tau_b(1 | x_lower)} per unit
    delta_bar_at_x_lower: float
    conf: ConfConfig
    epsilon: float

    def __post_init__(self):
        if self.x_lower < 0:
            raise InvalidConfig("x_lower must be nonnegative")
        if self.x_upper < self.x_lower:
            raise InvalidConfig("x_upper must be >= x_lower")
        if self.l_perish < -1e-9:
            raise InvalidConfig("perishing-induced loss cannot be negative")


def _eta_vector(
    instance: ProblemInstance,
    schedule: Schedule,
    x_lower: float,
    conf: ConfConfig,
) -> np.ndarray:
    """eta_t for all rounds: expected spoilage from t onward under the slow process."""
    horizon = instance.horizon
    slow = SlowProcess(instance, conf)
    ranks = schedule.rank_of_unit
    out = np.zeros(horizon)
    table = instance.perishing.cdf_table(horizon)
    unit_idx = np.arange(schedule.budget)
    for t in range(1, horizon + 1):
        start_rank = max(1, math.ceil(slow.lower_prefix(t - 1) * x_lower - _RANK_EPS))
        if start_rank > schedule.budget:
            continue
        taus = _tau_vector(slow, schedule, t, x_lower)
        in_set = ranks >= start_rank
        cutoff = (np.minimum(taus, horizon) - 1.0).astype(int)
        upper = table[unit_idx, cutoff]
        lower = table[:, t - 1]
        out[t - 1] = float(np.maximum(0.0, (upper - lower)[in_set]).sum())
    return out


def eta_t(
    instance: ProblemInstance,
    schedule: Schedule,
    plan: GuardrailPlan,
    t: int,
) -> float:
    """Expected number of still-unallocated units that perish in [t, tau)."""
    if not 1 <= t <= instance.horizon:
        raise InvalidConfig(f"round {t} outside horizon")
    return float(plan.eta[t - 1])


def p_bar_sequence(
    instance: ProblemInstance,
    schedule: Schedule,
    plan: GuardrailPlan,
) -> np.ndarray:
    """Nonincreasing pessimistic forecast of future unallocated spoilage."""
    horizon = instance.horizon
    out = np.empty(horizon)
    prev = float(instance.budget)
    for t in range(1, horizon + 1):
        eta = float(plan.eta[t - 1])
        radius = (
            conf_p(t, eta, horizon, instance.delta)
            if plan.conf.perish_conf == "chernoff"
            else 0.0
        )
        prev = min(prev, eta + radius)
        out[t - 1] = prev
    return out


def compute_x_lower(
    instance: ProblemInstance,
    schedule: Schedule,
    epsilon: float | None = None,
    conf_mode=None,
) -> GuardrailPlan:
    """Line search for the largest static allocation respecting the budget.

    Scans x downward from B / n_bar on a grid of step epsilon and stops at
    the first x with x <= (B - delta_bar(x)) / n_bar.  Since mu is
    nonincreasing in x, the first feasible grid point is the grid
    supremum; x = 0 always terminates the scan.
    """
    conf = ConfConfig.from_mode(conf_mode) if conf_mode is not None else instance.conf
    n_bar = instance.expected_total
    if conf.demand_bound == "hoeffding":
        n_bar += conf_n(0, instance.horizon, instance.n_types, instance.rho_max,
                        instance.horizon, instance.delta)
    x0 = instance.budget / n_bar
    eps = epsilon if epsilon is not None else 1e-3 * x0
    if eps <= 0:
        raise InvalidConfig("grid step must be positive")

    x = x0
    k = 0
    while x > 0:
        if x <= (instance.budget - delta_bar(instance, schedule, x, conf)) / n_bar + 1e-12:
            break
        k += 1
        x = x0 - k * eps
    x = max(x, 0.0)

    slow = SlowProcess(instance, conf)
    taus = np.minimum(_tau_vector(slow, schedule, 1, x), instance.horizon)
    dbar = delta_bar(instance, schedule, x, conf)
    eta = _eta_vector(instance, schedule, x, conf)
    return GuardrailPlan(
        x_lower=float(x),
        x_upper=float(x + instance.envy_budget),
        l_perish=float(x0 - x),
        n_bar=float(n_bar),
        eta=eta,
        tau_cache=taus,
        delta_bar_at_x_lower=float(dbar),
        conf=conf,
        epsilon=float(eps),
    )


# ---------------------------------------------------------------------------
# Analytic bounds for structured instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundResult:
    applicable: bool
    note: str = ""
    values: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AnalyticBoundsReport:
    applicable: bool
    reason: str
    offset_sufficient: BoundResult
    offset_necessary: BoundResult
    geometric: BoundResult
    schedule_quality: BoundResult


def _perish_prefix_moments(instance: ProblemInstance):
    """E[P_<t], Var(P_<t), and the random-unit count, for t = 2..T."""
    horizon = instance.horizon
    ts = np.arange(2, horizon + 1)
    qs = np.stack([law.cdf(ts - 1.0) for law in instance.perishing.laws])  # (B, T-1)
    mean = qs.sum(axis=0)
    var = (qs * (1.0 - qs)).sum(axis=0)
    n_rand = ((qs > 0.0) & (qs < 1.0)).sum(axis=0)
    return ts, mean, var, n_rand


def analytic_bounds(
    instance: ProblemInstance,
    schedule: Schedule,
    alpha: float | None = None,
) -> AnalyticBoundsReport:
    """Evaluate the closed-form offset-expiry and baseline bounds.

    Requires the structured setting B = E[N] = T with one deterministic
    arrival per round; otherwise the whole report is NotApplicable.
    """
    structured = (
        instance.budget == instance.horizon
        and instance.rho_max == 0.0
        and np.allclose(instance.round_means, 1.0)
    )
    if not structured:
        na = BoundResult(False, "requires B = N = T with deterministic unit demand")
        return AnalyticBoundsReport(
            applicable=False,
            reason="structural preconditions not met (B = N = T, N_t = 1)",
            offset_sufficient=na,
            offset_necessary=na,
            geometric=na,
            schedule_quality=na,
        )

    horizon = instance.horizon
    ts, mean, var, n_rand = _perish_prefix_moments(instance)
    lag = ts - mean  # slack between the round index and expected prior perishing

    # sufficient condition on delta (requires E[P_<t] <= t-1 everywhere)
    if (mean <= ts - 1 + 1e-12).all():
        cheb = np.where(lag > 0, var / np.maximum(lag, 1e-300) ** 2, np.inf)
        hoef = np.where(n_rand > 0, np.exp(-2.0 * lag**2 / np.maximum(n_rand, 1)), 0.0)
        terms = np.where(n_rand > 0, np.minimum(cheb, hoef), 0.0)
        suff = BoundResult(True, values={"delta_sufficient": float(terms.sum())})
    else:
        suff = BoundResult(False, "E[P_<t] exceeds t-1 at some round; sufficient bound void")

    # necessary condition: any round with expected perishing ahead of arrivals
    witnesses = np.where(mean > ts - 1 + 1e-12)[0]
    if witnesses.size == 0:
        nec = BoundResult(False, "no round has E[P_<t] > t-1; necessary bound vacuous")
    else:
        impossible = bool((n_rand[witnesses] == 0).any())
        if impossible:
            nec = BoundResult(
                True,
                "deterministic excess perishing: no delta in (0,1) is offset-expiring",
                {"infeasible_for_all_delta": True},
            )
        else:
            stds = np.sqrt(np.maximum(var[witnesses], 0.0))
            bounds = 0.5 - stds**-3.0 * horizon
            t_star = int(ts[witnesses][np.argmax(bounds)])
            nec = BoundResult(
                True,
                values={
                    "delta_necessary": float(bounds.max()),
                    "witness_round": t_star,
                    "infeasible_for_all_delta": False,
                },
            )

    # iid geometric instantiation
    laws = instance.perishing.laws
    if all(isinstance(l, GeometricPerish) for l in laws) and len({l.p for l in laws}) == 1:
        p = laws[0].p
        tp = horizon * p
        log_term = math.log(3.0 * math.log(horizon) / instance.delta) / horizon
        vals = {
            "tp": tp,
            "vacuous": tp >= 1.0,
            "x_lower_bound": 1.0 - 3.0 * tp - log_term,
            "l_perish_upper": 3.0 * tp + log_term,
        }
        if tp < 1.0:
            vals["delta_sufficient"] = 2.0 * math.log(horizon) * tp / (1.0 - tp) ** 2
        note = "requires p = o(1/T); bound exceeds 1 and is vacuous" if tp >= 1.0 else ""
        geom = BoundResult(True, note, vals)
    else:
        geom = BoundResult(False, "perishing is not iid geometric")

    # schedule-quality conditions for a supplied alpha
    if alpha is None:
        qual = BoundResult(False, "no alpha supplied")
    elif not 0.0 < alpha < 1.0:
        qual = BoundResult(False, f"alpha must lie in (0,1), got {alpha}")
    else:
        rate = 1.0 - horizon ** (-alpha)
        alloc_time = np.minimum(
            horizon, np.ceil(schedule.rank_of_unit / rate)
        ).astype(float)
        means_b = instance.perishing.means()
        vars_b = instance.perishing.stds() ** 2
        room = means_b - alloc_time
        cond1 = bool((room > 0).all())
        cond2 = False
        cv_sum = math.inf
        if cond1:
            cv_sum = float((vars_b / room**2).sum())
            cond2 = cv_sum <= 0.5 * horizon ** (1.0 - alpha)
        qual = BoundResult(
            True,
            values={
                "alpha": alpha,
                "condition_room_to_breathe": cond1,
                "condition_cv": cond2,
                "cv_sum": cv_sum,
                "delta_threshold": 3.0 * math.log(horizon) * math.exp(-(horizon ** (1.0 - alpha)) / 8.0),
                "x_lower_bound": 1.0 - horizon ** (-alpha),
                "l_perish_upper": horizon ** (-alpha),
                "holds": cond1 and cond2,
            },
        )

    return AnalyticBoundsReport(
        applicable=True,
        reason="",
        offset_sufficient=suff,
        offset_necessary=nec,
        geometric=geom,
        schedule_quality=qual,
    )
