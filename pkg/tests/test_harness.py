import math

import numpy as np
import pytest

from perishfair.core import build_schedule, sample_path
from perishfair.errors import DataIntegrity, InvalidConfig, UnknownInstance
from perishfair.harness import (
    DEFAULT_BETA,
    GINGER_P_MLE,
    GINGER_P_TABLE,
    ExperimentConfig,
    RetailSeries,
    aggregate_from_rows,
    calibrate_retail,
    make_paper_instance,
    replication_rows_from_csv,
    replication_rows_to_csv,
    run_experiment,
    sweep_rows_to_csv,
    sweep_tradeoff,
    xlower_grid,
)
from perishfair.guardrail import compute_x_lower
from perishfair.metrics import compute_metrics
from perishfair.rng import derive_seed
from perishfair.stochastic import GeometricPerish

from .conftest import small_geometric_instance


class TestRunExperiment:
    def test_single_replication_matches_direct_metrics(self, worked_example):
        instance, schedule = worked_example
        config = ExperimentConfig(
            instance=instance, policies=("static-proportional",), replications=1, base_seed=5
        )
        result = run_experiment(config)
        from perishfair.engine import run_path, static_proportional

        plan = compute_x_lower(instance, schedule)
        path = sample_path(instance, derive_seed(5, 0))
        traj = run_path(instance, schedule, static_proportional(instance, plan), path)
        direct = compute_metrics(instance, path, traj)
        stats = result.stats
        for metric, value in direct.as_dict().items():
            mean, ci = stats.table["static-proportional"][metric]
            assert mean == pytest.approx(float(value))
            assert ci == 0.0

    def test_common_random_numbers_across_policies(self, worked_example):
        instance, _ = worked_example
        config = ExperimentConfig(instance=instance, replications=6, base_seed=9)
        result = run_experiment(config)
        by_rep = {}
        for row in result.rows:
            by_rep.setdefault(row["replication"], set()).add(row["seed"])
        for seeds in by_rep.values():
            assert len(seeds) == 1

    def test_worker_count_does_not_change_results(self):
        instance = small_geometric_instance(horizon=6, budget=8, p=0.2, envy_budget=0.1)
        base = ExperimentConfig(instance=instance, replications=10, base_seed=3, workers=1)
        multi = ExperimentConfig(instance=instance, replications=10, base_seed=3, workers=4)
        csv_a = replication_rows_to_csv(run_experiment(base).rows)
        csv_b = replication_rows_to_csv(run_experiment(multi).rows)
        assert csv_a == csv_b

    def test_aggregate_recomputed_from_csv(self):
        instance = small_geometric_instance(horizon=5, budget=6, p=0.3)
        config = ExperimentConfig(instance=instance, replications=7, base_seed=1)
        result = run_experiment(config)
        text = replication_rows_to_csv(result.rows)
        assert text.startswith("# perishfair-csv v1")
        rows = replication_rows_from_csv(text)
        again = aggregate_from_rows(rows)
        for policy, metrics in result.stats.table.items():
            for metric, (mean, ci) in metrics.items():
                assert again.table[policy][metric][0] == pytest.approx(mean, abs=1e-12)
                assert again.table[policy][metric][1] == pytest.approx(ci, abs=1e-12)

    def test_rejects_unknown_policy(self, worked_example):
        instance, _ = worked_example
        with pytest.raises(InvalidConfig):
            ExperimentConfig(instance=instance, policies=("nope",))


class TestSweep:
    def test_inf_beta_matches_static_baselines(self):
        instance = small_geometric_instance(horizon=8, budget=16, p=0.1)
        rows = sweep_tradeoff(
            instance,
            betas=[float("inf")],
            policies=("perishing-guardrail", "vanilla-guardrail"),
            replications=8,
            base_seed=42,
        )
        static = run_experiment(
            ExperimentConfig(
                instance=instance,
                policies=("static-xlower", "static-proportional"),
                replications=8,
                base_seed=42,
                lt=0.0,
            )
        )
        by_policy = {r["policy"]: r for r in rows}
        for metric in ("counterfactual_envy", "inefficiency", "spoilage"):
            assert by_policy["perishing-guardrail"][f"{metric}_mean"] == pytest.approx(
                static.stats.mean("static-xlower", metric), abs=1e-9
            )
            assert by_policy["vanilla-guardrail"][f"{metric}_mean"] == pytest.approx(
                static.stats.mean("static-proportional", metric), abs=1e-9
            )

    def test_csv_layout(self):
        instance = small_geometric_instance(horizon=5, budget=5, p=0.2)
        rows = sweep_tradeoff(instance, betas=[0.5], replications=3, base_seed=0)
        text = sweep_rows_to_csv(rows)
        lines = text.strip().splitlines()
        assert lines[0] == "# perishfair-csv v1"
        assert lines[1].startswith("policy,beta,lt,")
        assert len(lines) == 2 + len(rows)

    def test_envy_nondecreasing_in_lt_on_shared_paths(self):
        # stockout-free regime: both guardrails always deliver, so envy is
        # exactly w_max * L_T whenever the aggressive branch ever fires
        from perishfair.core import (
            PAPER_CONF,
            ProblemInstance,
            ScheduleKind,
            ScheduleSpec,
        )
        from perishfair.stochastic import (
            DeterministicPerish,
            PerishingSpec,
            TruncatedNormalDemand,
        )
        from .conftest import single_type

        horizon = 10
        instance = ProblemInstance(
            horizon=horizon,
            budget=30,
            types=single_type(),
            demand=TruncatedNormalDemand(mean=2.0, sd=0.5),
            perishing=PerishingSpec.homogeneous(DeterministicPerish(horizon + 1), 30),
            schedule_spec=ScheduleSpec(ScheduleKind.IDENTITY),
            delta=0.05,
            conf=PAPER_CONF,
        )
        rows = sweep_tradeoff(
            instance,
            betas=[1.0, 0.5, 0.0],
            policies=("perishing-guardrail",),
            replications=10,
            base_seed=7,
        )
        assert all(r["stockout_mean"] == 0.0 for r in rows)
        envies = [r["hindsight_envy_mean"] for r in rows]  # lt = T^-1, T^-.5, 1
        assert envies[0] <= envies[1] + 1e-9
        assert envies[1] <= envies[2] + 1e-9


class TestXLowerGrid:
    def test_grid_matches_direct_evaluation(self, worked_example):
        instance, schedule = worked_example
        rows = xlower_grid(instance, schedule, epsilon=0.25)
        from perishfair.guardrail import delta_bar

        assert rows[0]["x"] == pytest.approx(0.75)
        for row in rows:
            assert row["delta_bar"] == pytest.approx(
                delta_bar(instance, schedule, row["x"]), abs=1e-12
            )
            assert row["rhs"] == pytest.approx((3 - row["delta_bar"]) / 4, abs=1e-12)


class TestCalibrate:
    @staticmethod
    def _synthetic_series(p=0.01, days=365, seed=0):
        rng = np.random.default_rng(seed)
        begin, restock, sales, end = [], [], [], []
        stock = 120.0
        for _ in range(days):
            day_sales = float(min(stock, max(0.0, rng.normal(3.0, 1.0))))
            perished = float(rng.binomial(int(round(stock)), p))
            day_restock = float(rng.uniform(2.0, 5.0))
            day_end = stock + day_restock - day_sales - perished
            begin.append(stock)
            restock.append(day_restock)
            sales.append(day_sales)
            end.append(day_end)
            stock = day_end
        return RetailSeries(
            begin_stock=np.array(begin),
            restock=np.array(restock),
            sales=np.array(sales),
            end_stock=np.array(end),
        )

    def test_recovers_binomial_rate_within_two_se(self):
        p = 0.01
        series = self._synthetic_series(p=p, seed=4)
        fit = calibrate_retail(series)
        total_begin = series.begin_stock.sum()
        se = math.sqrt(p * (1 - p) / total_begin)
        assert abs(fit["p_hat"] - p) <= 2 * se

    def test_recovers_demand_moments_within_three_se(self):
        series = self._synthetic_series(p=0.005, days=800, seed=9)
        fit = calibrate_retail(series)
        n = len(series)
        se_mean = 1.0 / math.sqrt(n)
        assert abs(fit["demand_mean"] - 3.0) <= 3 * se_mean
        se_sd = 1.0 / math.sqrt(2 * (n - 1))
        assert abs(fit["demand_sd"] - 1.0) <= 3 * se_sd

    def test_zero_perishing_series(self):
        series = RetailSeries(
            begin_stock=np.array([10.0, 9.0]),
            restock=np.array([1.0, 0.0]),
            sales=np.array([2.0, 3.0]),
            end_stock=np.array([9.0, 6.0]),
        )
        assert calibrate_retail(series)["p_hat"] == 0.0

    def test_negative_perish_names_day(self):
        series = RetailSeries(
            begin_stock=np.array([10.0, 9.0]),
            restock=np.array([0.0, 0.0]),
            sales=np.array([1.0, 1.0]),
            end_stock=np.array([9.0, 9.5]),
        )
        with pytest.raises(DataIntegrity) as err:
            calibrate_retail(series)
        assert "day 1" in str(err.value)

    def test_csv_parsing(self):
        text = (
            "# perishfair-csv v1\n"
            "day,begin_stock,restock,sales,end_stock\n"
            "0,10,1,2,9\n"
            "1,9,0,3,6\n"
        )
        series = RetailSeries.from_csv(text)
        assert len(series) == 2
        assert series.sales.tolist() == [2.0, 3.0]


class TestPaperInstances:
    def test_worked_example_structure(self):
        instance, schedule = make_paper_instance("example_3_4")
        assert (instance.horizon, instance.budget) == (3, 3)
        assert instance.round_means.tolist() == [1.0, 2.0, 1.0]
        assert schedule.rank_of_unit.tolist() == [2, 3, 1]
        laws = instance.perishing.laws
        assert laws[0].cdf(1) == pytest.approx(0.5)
        assert laws[1].cdf(1) == 0.0
        assert laws[2].cdf(2) == pytest.approx(1.0)

    def test_adversarial_structure(self):
        instance, schedule = make_paper_instance("thm_3_2", T=10)
        assert instance.budget == 10
        assert [l.time for l in instance.perishing.laws] == list(range(1, 11))
        assert schedule.rank_of_unit.tolist() == [10 - b for b in range(10)]

    def test_geometric_sweep_rate(self):
        instance, _ = make_paper_instance("geometric_sweep", T=100, alpha=0.2)
        law = instance.perishing.laws[0]
        assert isinstance(law, GeometricPerish)
        assert law.p == pytest.approx(100 ** (-1.2))
        assert instance.budget == 200
        assert instance.envy_budget == pytest.approx(100 ** (-DEFAULT_BETA))

    def test_ginger_constants(self):
        instance, _ = make_paper_instance("ginger_calibrated")
        assert (instance.horizon, instance.budget) == (365, 1168)
        assert instance.perishing.laws[0].p == GINGER_P_TABLE
        assert GINGER_P_MLE == pytest.approx(0.0024)

    def test_unknown_name(self):
        with pytest.raises(UnknownInstance):
            make_paper_instance("mystery")

    def test_instance_families_build_schedules(self):
        for name, kw in (
            ("instance_1", {"schedule": "cv"}),
            ("instance_2", {"schedule": "lcb"}),
        ):
            instance, schedule = make_paper_instance(name, **kw)
            assert schedule.budget == instance.budget == 100
            assert sorted(schedule.rank_of_unit.tolist()) == list(range(1, 101))
