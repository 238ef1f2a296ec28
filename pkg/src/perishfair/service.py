"""FastAPI service exposing the library over HTTP.

Each endpoint wraps one harness or guardrail operation; request bodies
carry either an inline instance definition (same schema as the config
files) or a named benchmark instance.
"""

from __future__ import annotations

import io
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, model_validator

from . import __version__
from .core import (
    ProblemInstance,
    Schedule,
    build_schedule,
    instance_from_dict,
    sample_path,
)
from .engine import run_path
from .errors import PerishfairError
from .guardrail import compute_x_lower
from .harness import (
    CSV_VERSION_HEADER,
    ExperimentConfig,
    POLICY_NAMES,
    RetailSeries,
    _policy_from_name,
    calibrate_retail,
    make_paper_instance,
    replication_rows_to_csv,
    run_experiment,
    sweep_rows_to_csv,
    sweep_tradeoff,
    xlower_grid,
)
from .metrics import compute_metrics, estimate_oe_probability

__all__ = ["create_app", "app"]


class PaperRef(BaseModel):
    """A named benchmark instance plus its parameters."""

    name: str
    params: dict = Field(default_factory=dict)


class InstanceRequest(BaseModel):
    """Base request: exactly one of `instance` (config mapping) or `paper`."""

    instance: Optional[dict] = None
    paper: Optional[PaperRef] = None
    schedule_seed: int = 0

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.instance is None) == (self.paper is None):
            raise ValueError("provide exactly one of 'instance' or 'paper'")
        return self

    def resolve(self) -> tuple[ProblemInstance, Schedule]:
        if self.paper is not None:
            return make_paper_instance(self.paper.name, seed=self.schedule_seed, **self.paper.params)
        inst = instance_from_dict(self.instance)
        schedule = build_schedule(inst.schedule_spec, inst.perishing, self.schedule_seed)
        return inst, schedule


class HealthResponse(BaseModel):
    status: str
    version: str


class XLowerRequest(InstanceRequest):
    epsilon: Optional[float] = None
    grid: bool = False


class XLowerResponse(BaseModel):
    x_lower: float
    x_upper: float
    l_perish: float
    n_bar: float
    delta_bar: float
    grid_csv: Optional[str] = None


class MetricsModel(BaseModel):
    counterfactual_envy: float
    hindsight_envy: float
    inefficiency: float
    spoilage: float
    leftover: float
    stockout: bool
    offset_expiring: bool


class SimulateRequest(InstanceRequest):
    policy: str = "perishing-guardrail"
    seed: int = 0
    lt: Optional[float] = None


class SimulateResponse(BaseModel):
    policy: str
    seed: int
    x_lower: float
    metrics: MetricsModel
    trace_csv: str


class CheckOeRequest(InstanceRequest):
    reps: int = 150
    seed: int = 0


class CheckOeResponse(BaseModel):
    estimate: float
    ci_halfwidth: float
    reps: int


class RunRequest(InstanceRequest):
    policies: tuple = POLICY_NAMES
    replications: int = 150
    base_seed: int = 20240501
    lt: Optional[float] = None
    workers: Optional[int] = None


class PolicyMetricStat(BaseModel):
    mean: float
    ci_halfwidth: float


class RunResponse(BaseModel):
    replications: int
    summary: dict  # policy -> metric -> {mean, ci_halfwidth}
    replications_csv: str


class SweepRequest(InstanceRequest):
    betas: tuple = tuple(round(0.05 * i, 2) for i in range(21))
    policies: tuple = ("perishing-guardrail", "vanilla-guardrail")
    replications: int = 150
    base_seed: int = 20240501
    workers: Optional[int] = None


class SweepResponse(BaseModel):
    rows: list
    csv: str


class CalibrateRequest(BaseModel):
    csv_text: str


class CalibrateResponse(BaseModel):
    p_hat: float
    demand_mean: float
    demand_sd: float


def _trace_csv(traj) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_HEADER + "\n")
    buf.write("round,n_t,x_t,branch,budget,pua\n")
    for rec in traj.records:
        buf.write(
            f"{rec.round},{rec.n_t!r},{rec.x_t!r},{rec.branch},{rec.budget_before!r},{rec.pua!r}\n"
        )
    return buf.getvalue()


def create_app() -> FastAPI:
    app = FastAPI(title="perishfair", version=__version__)

    @app.exception_handler(PerishfairError)
    async def _domain_error(request, exc: PerishfairError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/xlower", response_model=XLowerResponse)
    def xlower(req: XLowerRequest):
        instance, schedule = req.resolve()
        plan = compute_x_lower(instance, schedule, epsilon=req.epsilon)
        grid_csv = None
        if req.grid:
            rows = xlower_grid(instance, schedule, epsilon=req.epsilon)
            buf = io.StringIO()
            buf.write(CSV_VERSION_HEADER + "\n")
            buf.write("x,delta_bar,rhs\n")
            for row in rows:
                buf.write(f"{row['x']!r},{row['delta_bar']!r},{row['rhs']!r}\n")
            grid_csv = buf.getvalue()
        return XLowerResponse(
            x_lower=plan.x_lower,
            x_upper=plan.x_upper,
            l_perish=plan.l_perish,
            n_bar=plan.n_bar,
            delta_bar=plan.delta_bar_at_x_lower,
            grid_csv=grid_csv,
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        instance, schedule = req.resolve()
        if req.policy not in POLICY_NAMES:
            raise HTTPException(status_code=422, detail=f"unknown policy {req.policy!r}")
        plan = compute_x_lower(instance, schedule)
        lt = req.lt if req.lt is not None else instance.envy_budget
        policy = _policy_from_name(req.policy, instance, schedule, plan, lt)
        path = sample_path(instance, req.seed)
        traj = run_path(instance, schedule, policy, path)
        report = compute_metrics(instance, path, traj)
        return SimulateResponse(
            policy=req.policy,
            seed=req.seed,
            x_lower=plan.x_lower,
            metrics=MetricsModel(
                counterfactual_envy=report.counterfactual_envy,
                hindsight_envy=report.hindsight_envy,
                inefficiency=report.inefficiency,
                spoilage=report.spoilage,
                leftover=report.leftover,
                stockout=report.stockout,
                offset_expiring=report.offset_expiring,
            ),
            trace_csv=_trace_csv(traj),
        )

    @app.post("/check-oe", response_model=CheckOeResponse)
    def check_oe(req: CheckOeRequest):
        instance, _ = req.resolve()
        est, half = estimate_oe_probability(instance, req.reps, req.seed)
        return CheckOeResponse(estimate=est, ci_halfwidth=half, reps=req.reps)

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest):
        instance, _ = req.resolve()
        config = ExperimentConfig(
            instance=instance,
            policies=tuple(req.policies),
            replications=req.replications,
            base_seed=req.base_seed,
            lt=req.lt,
            workers=req.workers,
            schedule_seed=req.schedule_seed,
        )
        result = run_experiment(config)
        summary = {
            policy: {
                metric: {"mean": mean, "ci_halfwidth": ci}
                for metric, (mean, ci) in metrics.items()
            }
            for policy, metrics in result.stats.table.items()
        }
        return RunResponse(
            replications=req.replications,
            summary=summary,
            replications_csv=replication_rows_to_csv(result.rows),
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        import math

        instance, _ = req.resolve()
        betas = tuple(float(b) for b in req.betas)
        rows = sweep_tradeoff(
            instance,
            betas,
            policies=tuple(req.policies),
            replications=req.replications,
            base_seed=req.base_seed,
            workers=req.workers,
            schedule_seed=req.schedule_seed,
        )
        # strict JSON cannot carry the beta = inf sentinel
        json_rows = [
            {**row, "beta": "inf" if math.isinf(row["beta"]) else row["beta"]} for row in rows
        ]
        return SweepResponse(rows=json_rows, csv=sweep_rows_to_csv(rows))

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest):
        series = RetailSeries.from_csv(req.csv_text)
        fit = calibrate_retail(series)
        return CalibrateResponse(**fit)

    return app


app = create_app()
