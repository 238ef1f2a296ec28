"""Per-round allocation state machine.

Observes arrivals, picks a per-individual amount per policy, consumes
units fractionally in schedule order, applies end-of-round perishing,
and logs the full trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfConfig, ProblemInstance, SamplePath, Schedule
from .errors import InvalidConfig, Overdraw
from .guardrail import GuardrailPlan, p_bar_sequence
from .stochastic import conf_n

__all__ = [
    "CONSUME_TOL",
    "BRANCH_DEPLETED",
    "BRANCH_UPPER",
    "BRANCH_LOWER",
    "InventoryState",
    "RoundRecord",
    "Trajectory",
    "Policy",
    "perishing_guardrail",
    "vanilla_guardrail",
    "static_x_lower",
    "static_proportional",
    "allocate_round",
    "apply_perishing",
    "step_policy",
    "run_path",
]

CONSUME_TOL = 1e-9

BRANCH_DEPLETED = "depleted"
BRANCH_UPPER = "upper"
BRANCH_LOWER = "lower"


@dataclass
class InventoryState:
    """Remaining fraction of each unit plus a cursor into the schedule."""

    remaining: np.ndarray
    cursor: int = 0

    @classmethod
    def fresh(cls, budget: int) -> "InventoryState":
        return cls(remaining=np.ones(budget), cursor=0)

    @property
    def budget(self) -> float:
        return float(self.remaining.sum())


def allocate_round(
    state: InventoryState, schedule: Schedule, quantity: float
) -> tuple[InventoryState, np.ndarray]:
    """Consume `quantity` units in increasing schedule rank.

    Each unit's remaining fraction is taken fully before the cursor
    advances; perished (zeroed) units are skipped.  Mutates and returns
    the same state for convenience.
    """
    if quantity < 0:
        raise InvalidConfig("cannot allocate a negative quantity")
    available = state.budget
    if quantity > available + CONSUME_TOL:
        raise Overdraw(f"requested {quantity}, only {available} remaining")
    consumed = np.zeros_like(state.remaining)
    need = min(quantity, available)
    order = schedule.unit_at_rank
    while need > CONSUME_TOL and state.cursor < len(order):
        unit = order[state.cursor]
        take = min(state.remaining[unit], need)
        if take > 0:
            state.remaining[unit] -= take
            consumed[unit] += take
            need -= take
        if state.remaining[unit] <= CONSUME_TOL:
            state.remaining[unit] = max(state.remaining[unit], 0.0)
            state.cursor += 1
    return state, consumed


def apply_perishing(
    state: InventoryState, path: SamplePath, t: int
) -> tuple[InventoryState, float, list]:
    """Remove every unit with T_b = t; returns perished-unallocated mass."""
    ids = np.where(path.perish_time == t)[0]
    spoiled = [int(b) for b in ids if state.remaining[b] > CONSUME_TOL]
    pua = float(state.remaining[ids].sum())
    state.remaining[ids] = 0.0
    return state, pua, spoiled


@dataclass(frozen=True)
class RoundRecord:
    round: int
    n_t: float
    x_t: float
    branch: str
    budget_before: float
    pua: float
    spoiled_units: tuple


@dataclass(frozen=True)
class Trajectory:
    records: tuple
    leftover: float
    instance_budget: float

    @property
    def allocations(self) -> np.ndarray:
        return np.array([r.x_t for r in self.records])

    @property
    def total_allocated(self) -> float:
        return float(sum(r.n_t * r.x_t for r in self.records))

    @property
    def total_spoilage(self) -> float:
        return float(sum(r.pua for r in self.records))

    @property
    def stockout(self) -> bool:
        return any(r.branch == BRANCH_DEPLETED for r in self.records)

    def conservation_gap(self) -> float:
        """| B - (allocated + spoiled + leftover) |; should be ~0."""
        return abs(self.instance_budget - self.total_allocated - self.total_spoilage - self.leftover)


@dataclass(frozen=True)
class Policy:
    """A per-round allocation rule with its precomputed forecast state."""

    kind: str
    baseline: float
    upper: float
    pbar: np.ndarray  # forecast of future unallocated spoilage, len T
    reserve_tail: np.ndarray  # baseline * (E[N_>t] + Conf_{t,T}) for t = 1..T
    threshold: bool  # guardrail policies compare against the reserve

    def label(self) -> str:
        return self.kind


def _tail_reserve(instance: ProblemInstance, baseline: float, conf: ConfConfig) -> np.ndarray:
    horizon = instance.horizon
    tail_mean = np.concatenate([np.cumsum(instance.round_means[::-1])[::-1][1:], [0.0]])
    out = np.empty(horizon)
    for t in range(1, horizon + 1):
        radius = 0.0
        if conf.demand_bound == "hoeffding" and t < horizon:
            radius = conf_n(t, horizon, instance.n_types, instance.rho_max,
                            instance.horizon, instance.delta)
        out[t - 1] = baseline * (tail_mean[t - 1] + radius)
    return out


def perishing_guardrail(instance: ProblemInstance, schedule: Schedule, plan: GuardrailPlan) -> Policy:
    """Adaptive two-guardrail policy with a pessimistic perishing forecast."""
    pbar = p_bar_sequence(instance, schedule, plan)
    return Policy(
        kind="perishing-guardrail",
        baseline=plan.x_lower,
        upper=plan.x_upper,
        pbar=pbar,
        reserve_tail=_tail_reserve(instance, plan.x_lower, plan.conf),
        threshold=True,
    )


def vanilla_guardrail(instance: ProblemInstance, plan: GuardrailPlan, lt: float | None = None) -> Policy:
    """Perishing-agnostic guardrail: baseline B / n_bar, zero perishing forecast."""
    baseline = instance.budget / plan.n_bar
    if lt is None:
        lt = instance.envy_budget
    return Policy(
        kind="vanilla-guardrail",
        baseline=baseline,
        upper=baseline + lt,
        pbar=np.zeros(instance.horizon),
        reserve_tail=_tail_reserve(instance, baseline, plan.conf),
        threshold=True,
    )


def static_x_lower(instance: ProblemInstance, plan: GuardrailPlan) -> Policy:
    return Policy(
        kind="static-xlower",
        baseline=plan.x_lower,
        upper=plan.x_lower,
        pbar=np.zeros(instance.horizon),
        reserve_tail=np.zeros(instance.horizon),
        threshold=False,
    )


def static_proportional(instance: ProblemInstance, plan: GuardrailPlan) -> Policy:
    target = instance.budget / plan.n_bar
    return Policy(
        kind="static-proportional",
        baseline=target,
        upper=target,
        pbar=np.zeros(instance.horizon),
        reserve_tail=np.zeros(instance.horizon),
        threshold=False,
    )


def step_policy(policy: Policy, state_budget: float, t: int, n_t: float) -> tuple[float, str]:
    """Choose the per-individual amount and branch for round t."""
    if n_t <= 0:
        raise InvalidConfig("arrivals must be positive")
    if state_budget < n_t * policy.baseline - CONSUME_TOL:
        return max(state_budget, 0.0) / n_t, BRANCH_DEPLETED
    if policy.threshold:
        if state_budget - n_t * policy.upper >= policy.reserve_tail[t - 1] + policy.pbar[t - 1] - CONSUME_TOL:
            return policy.upper, BRANCH_UPPER
        return policy.baseline, BRANCH_LOWER
    return policy.baseline, BRANCH_LOWER


def run_path(
    instance: ProblemInstance,
    schedule: Schedule,
    policy: Policy,
    path: SamplePath,
) -> Trajectory:
    """Deterministically replay one policy over one sample path."""
    if path.arrivals.shape != (instance.horizon, instance.n_types):
        raise InvalidConfig("sample path does not match the instance dimensions")
    if len(path.perish_time) != instance.budget:
        raise InvalidConfig("sample path does not match the instance budget")
    state = InventoryState.fresh(instance.budget)
    records = []
    for t in range(1, instance.horizon + 1):
        n_t = float(path.round_totals[t - 1])
        budget_before = state.budget
        x_t, branch = step_policy(policy, budget_before, t, n_t)
        quantity = min(n_t * x_t, budget_before)
        state, _ = allocate_round(state, schedule, quantity)
        x_t = quantity / n_t
        state, pua, spoiled = apply_perishing(state, path, t)
        records.append(
            RoundRecord(
                round=t,
                n_t=n_t,
                x_t=x_t,
                branch=branch,
                budget_before=budget_before,
                pua=pua,
                spoiled_units=tuple(spoiled),
            )
        )
    return Trajectory(records=tuple(records), leftover=state.budget, instance_budget=float(instance.budget))
