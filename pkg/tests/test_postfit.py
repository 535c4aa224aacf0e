import json

import numpy as np
import pytest

from mixlogit import postfit
from mixlogit.errors import MissingCoefficient, NegativeStatistic, NonPositiveIncome
from mixlogit.estimation import EstimationResult
from mixlogit.modelspec import ParamLayout, bundled_spec, theta_from_dict
from mixlogit.data import MODE_CAR, MODE_SDC, MODE_PT

from conftest import make_dataset


def reference_result(cov_scale=0.0):
    """Bundled correlated-mixed-logit reference values as a result object."""
    from importlib import resources
    payload = json.loads(
        (resources.files("mixlogit") / "specs" / "paper_mmnl2_truth.json").read_text())
    spec = bundled_spec(payload["spec"])
    theta = theta_from_dict(spec, payload["theta"])
    cov = cov_scale * np.eye(theta.size) if cov_scale else None
    return EstimationResult.from_parameters(spec, theta, covariance=cov)


class TestFitMetrics:
    def test_rho_squared_reference(self):
        assert postfit.rho_squared(-5246.34, -7196.3) == pytest.approx(0.271, abs=5e-4)

    def test_bic_arithmetic(self):
        assert postfit.bic(-100.0, 2, 100) == pytest.approx(209.2103, abs=1e-4)

    def test_rho_zero_at_null(self):
        assert postfit.rho_squared(-7196.3, -7196.3) == 0.0

    def test_null_loglik_availability_aware(self):
        ds = make_dataset(n_resp=30, n_tasks=4, seed=3)
        want = 0.0
        for r in ds.respondents:
            want -= 4 * np.log(6 if r.has_license else 4)
        assert postfit.null_loglik(ds) == pytest.approx(want, abs=1e-9)

    def test_bic_monotone_in_params(self):
        assert postfit.bic(-100.0, 5, 64) < postfit.bic(-100.0, 6, 64)


class TestLrTest:
    def test_reference_statistics(self):
        stat, p = postfit.lr_test(-6546.38, -5246.34, df=12)
        assert stat == pytest.approx(2600.08, abs=1e-9)
        assert p < 0.001
        stat, _ = postfit.lr_test(-5382.93, -5246.34, df=9)
        assert stat == pytest.approx(273.18, abs=1e-9)
        stat, p = postfit.lr_test(-5300.72, -5246.34, df=3)
        assert stat == pytest.approx(108.76, abs=1e-9)
        assert p < 0.001

    def test_equal_logliks(self):
        stat, p = postfit.lr_test(-10.0, -10.0, df=2)
        assert stat == 0.0 and p == 1.0

    def test_negative_statistic_rejected(self):
        with pytest.raises(NegativeStatistic):
            postfit.lr_test(-5.0, -6.0, df=1)

    def test_monotone_in_gap(self):
        s1, _ = postfit.lr_test(-105.0, -100.0, df=2)
        s2, _ = postfit.lr_test(-110.0, -100.0, df=2)
        assert s2 > s1


class TestVotTravelCost:
    def test_reference_means_and_sds(self):
        r = reference_result()
        want = {MODE_CAR: (25.26, 36.88), MODE_SDC: (24.02, 32.26), MODE_PT: (19.02, 32.82)}
        for mode, (mean, sd) in want.items():
            s = postfit.vot_travel_cost(r, mode)
            assert s.mean == pytest.approx(mean, abs=0.05)
            assert s.sd == pytest.approx(sd, abs=0.05)
            assert s.unit == "AUD/h"

    def test_zero_mean_time(self):
        r = reference_result()
        layout = ParamLayout(r.spec)
        theta = r.theta.copy()
        theta[layout.index_of("time_car:mu")] = 0.0
        r2 = EstimationResult.from_parameters(r.spec, theta)
        assert postfit.vot_travel_cost(r2, MODE_CAR).mean == 0.0

    def test_linear_in_time_moments(self):
        r = reference_result()
        layout = ParamLayout(r.spec)
        theta = r.theta.copy()
        theta[layout.index_of("time_car:mu")] *= 2.0
        r2 = EstimationResult.from_parameters(r.spec, theta)
        assert postfit.vot_travel_cost(r2, MODE_CAR).mean == pytest.approx(
            2.0 * postfit.vot_travel_cost(r, MODE_CAR).mean)

    def test_missing_coefficient(self):
        from mixlogit.modelspec import parse_spec_text
        spec = parse_spec_text(
            "model = CMNL\n[coefficients]\nrooms | h_rooms | housing | fixed | identity\n")
        r = EstimationResult.from_parameters(spec, np.zeros(1))
        with pytest.raises(MissingCoefficient):
            postfit.vot_travel_cost(r, MODE_CAR)


class TestVotHousingCost:
    def test_reference_owner_renter(self):
        r = reference_result()
        s = postfit.vot_housing_cost(r, MODE_CAR, "owner", 2244.7)
        assert s.mean == pytest.approx(111.62, abs=0.05)
        assert s.sd == pytest.approx(162.94, abs=0.05)
        s = postfit.vot_housing_cost(r, MODE_CAR, "renter", 1558.7)
        assert s.mean == pytest.approx(54.63, abs=0.05)
        assert s.sd == pytest.approx(79.75, abs=0.05)

    def test_doubling_income_doubles_vot(self):
        r = reference_result()
        a = postfit.vot_housing_cost(r, MODE_SDC, "owner", 2244.7)
        b = postfit.vot_housing_cost(r, MODE_SDC, "owner", 2 * 2244.7)
        assert b.mean == pytest.approx(2 * a.mean)
        assert b.sd == pytest.approx(2 * a.sd)

    def test_non_positive_income(self):
        r = reference_result()
        with pytest.raises(NonPositiveIncome):
            postfit.vot_housing_cost(r, MODE_CAR, "owner", 0.0)


class TestVotDistributionConsistency:
    def test_block_sd_matches_simulated_draws(self):
        # sd from the Cholesky row equals the sd of simulated coefficients
        r = reference_result()
        layout = ParamLayout(r.spec)
        L = layout.block_cholesky(r.theta, "ttime")
        rng = np.random.default_rng(0)
        z = rng.standard_normal((1_000_000, 3))
        sims = z @ L.T
        for row in range(3):
            want = np.sqrt((L[row, :row + 1] ** 2).sum())
            got = sims[:, row].std(ddof=1)
            assert abs(got - want) / want < 0.01

    def test_negative_share_reported(self):
        r = reference_result()
        s = postfit.vot_travel_cost(r, MODE_CAR)
        from scipy.stats import norm
        assert s.negative_share == pytest.approx(norm.cdf(-s.mean / s.sd))

    def test_cmnl_result_has_degenerate_sd(self):
        from mixlogit.modelspec import derive_class
        r = reference_result()
        cm = derive_class(r.spec, "CMNL")
        layout = ParamLayout(cm)
        theta = np.zeros(layout.n_params)
        theta[layout.index_of("travel_cost")] = -1.9562
        theta[layout.index_of("time_car")] = -1.8044
        rc = EstimationResult.from_parameters(cm, theta)
        s = postfit.vot_travel_cost(rc, MODE_CAR)
        assert s.sd == 0.0
        assert s.mean == pytest.approx(-(-1.8044) / np.exp(-1.9562), abs=1e-9)


class TestReports:
    ROWS = [
        dict(label="A", n_params=29, loglik=-6546.38, rho_sq=0.09, bic=13317.34),
        dict(label="B", n_params=34, loglik=-5382.93, rho_sq=0.25, bic=11015.39),
        dict(label="C", n_params=40, loglik=-5300.72, rho_sq=0.26, bic=10900.88),
        dict(label="D", n_params=43, loglik=-5246.34, rho_sq=0.27, bic=10817.07),
    ]

    def test_comparison_report_lr_columns(self):
        rep = postfit.comparison_report(self.ROWS)
        assert rep["reference"] == "D"
        by_label = {r["label"]: r for r in rep["models"]}
        assert by_label["A"]["lr_chi2"] == pytest.approx(2600.08, abs=1e-9)
        assert by_label["A"]["lr_df"] == 14  # from parameter counts
        assert by_label["B"]["lr_chi2"] == pytest.approx(273.18, abs=1e-9)
        assert by_label["C"]["lr_chi2"] == pytest.approx(108.76, abs=1e-9)
        assert "lr_chi2" not in by_label["D"]
        assert "flag" in rep["note"] or "BIC" in rep["note"]

    def test_markdown_renders(self):
        rep = postfit.comparison_report(self.ROWS)
        md = postfit.comparison_markdown(rep)
        assert "2600.08" in md and "< 0.001" in md

    def test_vot_table_covers_modes_and_tenures(self):
        r = reference_result()
        rows = postfit.vot_table(r)
        assert len(rows) == 9  # 3 travel-cost + 2 tenures x 3 modes
        md = postfit.vot_markdown(rows)
        for s in rows:
            assert f"{s.mean:.2f}" in md and f"{s.sd:.2f}" in md
        numeraires = {(s.numeraire, s.tenure) for s in rows}
        assert numeraires == {("travel-cost", None), ("housing-cost", "owner"),
                              ("housing-cost", "renter")}
