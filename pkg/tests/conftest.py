import numpy as np
import pytest

from perishfair.core import (
    ProblemInstance,
    ScheduleKind,
    ScheduleSpec,
    TypeProfile,
    ZERO_CONF,
    build_schedule,
)
from perishfair.stochastic import (
    DeterministicDemand,
    DeterministicPerish,
    GeometricPerish,
    PerishingSpec,
    PmfPerish,
    TruncatedNormalDemand,
)


def single_type():
    return (TypeProfile("default", 1.0),)


@pytest.fixture
def worked_example():
    """B = T = 3, arrivals (1, 2, 1), units a/b/c with the two-point laws.

    sigma(a) = 2, sigma(b) = 3, sigma(c) = 1; all confidence terms off.
    """
    instance = ProblemInstance(
        horizon=3,
        budget=3,
        types=single_type(),
        demand=DeterministicDemand(values=[1.0, 2.0, 1.0]),
        perishing=PerishingSpec(
            (
                PmfPerish((1, 3), (0.5, 0.5)),  # a
                PmfPerish((2, 4), (0.5, 0.5)),  # b
                PmfPerish((1, 2), (0.5, 0.5)),  # c
            )
        ),
        schedule_spec=ScheduleSpec(ScheduleKind.EXPLICIT, ranks=(2, 3, 1)),
        delta=0.1,
        envy_budget=0.0,
        conf=ZERO_CONF,
    )
    schedule = build_schedule(instance.schedule_spec, instance.perishing, seed=0)
    return instance, schedule


def adversarial_instance(horizon: int, lt: float = 0.0) -> ProblemInstance:
    """Unit demand, T_b = b, reversed schedule: the worst-case construction."""
    return ProblemInstance(
        horizon=horizon,
        budget=horizon,
        types=single_type(),
        demand=DeterministicDemand(values=1.0),
        perishing=PerishingSpec(tuple(DeterministicPerish(b) for b in range(1, horizon + 1))),
        schedule_spec=ScheduleSpec(
            ScheduleKind.EXPLICIT, ranks=tuple(horizon + 1 - b for b in range(1, horizon + 1))
        ),
        delta=1.0 / horizon,
        envy_budget=lt,
        conf=ZERO_CONF,
    )


def small_geometric_instance(horizon=5, budget=5, p=0.3, conf=ZERO_CONF, envy_budget=0.0):
    return ProblemInstance(
        horizon=horizon,
        budget=budget,
        types=single_type(),
        demand=DeterministicDemand(values=1.0),
        perishing=PerishingSpec.homogeneous(GeometricPerish(p), budget),
        schedule_spec=ScheduleSpec(ScheduleKind.IDENTITY),
        delta=0.1,
        envy_budget=envy_budget,
        conf=conf,
    )


def random_instance(rng: np.random.Generator, conf=ZERO_CONF) -> ProblemInstance:
    """A small random but well-formed instance for property tests."""
    horizon = int(rng.integers(3, 12))
    budget = int(rng.integers(3, 25))
    kind = rng.integers(0, 3)
    if kind == 0:
        demand = DeterministicDemand(values=float(rng.integers(1, 4)))
    else:
        mean = float(rng.uniform(1.5, 3.0))
        demand = TruncatedNormalDemand(mean=mean, sd=float(rng.uniform(0.1, 0.6)))
    laws = []
    for _ in range(budget):
        which = rng.integers(0, 3)
        if which == 0:
            laws.append(DeterministicPerish(int(rng.integers(1, horizon + 3))))
        elif which == 1:
            laws.append(GeometricPerish(float(rng.uniform(0.02, 0.5))))
        else:
            lo = int(rng.integers(1, horizon))
            hi = int(rng.integers(lo, horizon + 3))
            values = list(range(lo, hi + 1))
            probs = rng.uniform(0.2, 1.0, size=len(values))
            probs = probs / probs.sum()
            laws.append(PmfPerish(tuple(values), tuple(probs)))
    return ProblemInstance(
        horizon=horizon,
        budget=budget,
        types=single_type(),
        demand=demand,
        perishing=PerishingSpec(tuple(laws)),
        schedule_spec=ScheduleSpec(ScheduleKind.IDENTITY),
        delta=0.1,
        envy_budget=float(rng.uniform(0.0, 0.3)),
        conf=conf,
    )
