"""Fairness and efficiency metrics, plus offset-expiry diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ProblemInstance, SamplePath, sample_path
from .engine import Trajectory
from .errors import InvalidInput
from .rng import derive_seed

__all__ = [
    "MetricsReport",
    "compute_metrics",
    "check_offset_expiry",
    "estimate_oe_probability",
]

_OE_TOL = 1e-9


@dataclass(frozen=True)
class MetricsReport:
    """Ex-post metrics of one trajectory on one sample path."""

    counterfactual_envy: float
    hindsight_envy: float
    inefficiency: float
    spoilage: float
    leftover: float
    stockout: bool
    offset_expiring: bool

    def as_dict(self) -> dict:
        return {
            "counterfactual_envy": self.counterfactual_envy,
            "hindsight_envy": self.hindsight_envy,
            "inefficiency": self.inefficiency,
            "spoilage": self.spoilage,
            "leftover": self.leftover,
            "stockout": float(self.stockout),
            "offset_expiring": float(self.offset_expiring),
        }


def compute_metrics(
    instance: ProblemInstance, path: SamplePath, trajectory: Trajectory
) -> MetricsReport:
    """Score a trajectory against the realized proportional benchmark.

    Counterfactual envy compares every round's allocation to B / N with
    the path's realized N; hindsight envy takes the worst weighted gap
    between any two rounds (the envious side carries the weight).
    """
    if len(trajectory.records) != instance.horizon:
        raise InvalidInput("trajectory does not cover the instance horizon")
    if path.arrivals.shape[0] != instance.horizon:
        raise InvalidInput("sample path does not cover the instance horizon")
    xs = trajectory.allocations
    fair_share = instance.budget / path.total
    w_max = instance.w_max
    cf_envy = w_max * float(np.abs(xs - fair_share).max())
    hindsight = w_max * float(xs.max() - xs.min())
    inefficiency = float(instance.budget - trajectory.total_allocated)
    return MetricsReport(
        counterfactual_envy=cf_envy,
        hindsight_envy=hindsight,
        inefficiency=inefficiency,
        spoilage=trajectory.total_spoilage,
        leftover=trajectory.leftover,
        stockout=trajectory.stockout,
        offset_expiring=check_offset_expiry(path),
    )


def check_offset_expiry(path: SamplePath) -> bool:
    """True iff cumulative perishing never outpaces cumulative arrivals.

    Checks P_<t / B <= N_<t / N for every t in [2, T] by cross
    multiplication, with a small absolute tolerance for real-valued
    demand.
    """
    horizon = path.arrivals.shape[0]
    budget = len(path.perish_time)
    perish_counts = path.perish_counts(horizon)
    cum_perish = np.concatenate([[0], np.cumsum(perish_counts)])  # P_<t = cum_perish[t-1]
    cum_arrivals = np.concatenate([[0.0], np.cumsum(path.round_totals)])
    total = path.total
    for t in range(2, horizon + 1):
        if cum_perish[t - 1] * total > cum_arrivals[t - 1] * budget + _OE_TOL:
            return False
    return True


def estimate_oe_probability(
    instance: ProblemInstance, reps: int, seed: int
) -> tuple[float, float]:
    """Monte-Carlo estimate of Pr(offset-expiring) with a 95% CI halfwidth."""
    if reps < 1:
        raise InvalidInput("reps must be >= 1")
    hits = 0
    for r in range(reps):
        path = sample_path(instance, derive_seed(seed, r))
        hits += int(check_offset_expiry(path))
    p_hat = hits / reps
    half = 1.96 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / reps)
    return p_hat, half
