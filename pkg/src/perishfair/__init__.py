"""Online fair allocation of perishable resources.

Library + CLI + service implementing the perishing-aware guardrail
policy, its fixed-point baseline allocation, benchmark policies,
fairness/efficiency metrics, offset-expiry diagnostics, and a
Monte-Carlo experiment harness.
"""

__version__ = "0.1.0"

from .core import (
    PAPER_CONF,
    ZERO_CONF,
    ConfConfig,
    ProblemInstance,
    SamplePath,
    Schedule,
    ScheduleKind,
    ScheduleSpec,
    TypeProfile,
    build_schedule,
    instance_from_dict,
    load_instance,
    sample_path,
)
from .guardrail import (
    GuardrailPlan,
    analytic_bounds,
    compute_x_lower,
    delta_bar,
    eta_t,
    mu_of_x,
    p_bar_sequence,
    tau_b,
)
from .engine import (
    Policy,
    Trajectory,
    perishing_guardrail,
    run_path,
    static_proportional,
    static_x_lower,
    vanilla_guardrail,
)
from .harness import (
    AggregateStats,
    ExperimentConfig,
    RetailSeries,
    calibrate_retail,
    make_paper_instance,
    run_experiment,
    sweep_tradeoff,
)
from .metrics import MetricsReport, check_offset_expiry, compute_metrics, estimate_oe_probability
from .stochastic import chernoff_epsilon, conf_n, conf_p, n_lower
