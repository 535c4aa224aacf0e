import math

import numpy as np
import pytest

from mixlogit import design
from mixlogit.data import load_choice_data, write_choice_csv
from mixlogit.errors import NonPositiveStatusQuo, TooManyAttributesForArray
from mixlogit.likelihood import choice_probabilities
from mixlogit.modelspec import ParamLayout, bundled_spec, parse_spec_text


class TestPivot:
    def test_housing_cost_clamp_low(self):
        got = design.pivot_levels(design.HOUSING_COST_RULE, 100.0)
        assert got == pytest.approx((142.5, 150.0, 157.5))

    def test_commute_clamp_low(self):
        got = design.pivot_levels(design.TRAVEL_TIME_RULE, 20.0)
        assert got == pytest.approx((31.5, 37.5, 45.0))

    def test_travel_cost_rates(self):
        minutes = 40.0
        costs = tuple(minutes * r for r in design.TRAVEL_COST_RATES)
        assert costs == pytest.approx((4.0, 5.0, 6.0))

    def test_non_positive_rejected(self):
        with pytest.raises(NonPositiveStatusQuo):
            design.pivot_levels(design.HOUSING_COST_RULE, 0.0)

    def test_monotone_inside_constant_outside(self):
        rule = design.HOUSING_COST_RULE
        inside = [design.pivot_levels(rule, x)[1] for x in (200.0, 400.0, 6000.0)]
        assert inside == sorted(inside) and inside[0] < inside[-1]
        assert design.pivot_levels(rule, 10.0) == design.pivot_levels(rule, 150.0)
        assert design.pivot_levels(rule, 6500.0) == design.pivot_levels(rule, 99999.0)


class TestOrthogonalArray:
    def test_shape_and_balance(self):
        oa = design.orthogonal_array()
        assert oa.shape == (27, 13)
        for col in range(13):
            counts = np.bincount(oa[:, col], minlength=3)
            assert np.all(counts == 9)

    def test_strength_two(self):
        oa = design.orthogonal_array()
        for a in range(13):
            for b in range(a + 1, 13):
                pairs = oa[:, a] * 3 + oa[:, b]
                counts = np.bincount(pairs, minlength=9)
                assert np.all(counts == 3), (a, b)

    def test_too_many_attributes(self):
        with pytest.raises(TooManyAttributesForArray):
            design.base_array_columns(14)


class TestGenerateDesign:
    def test_skeleton_shape(self):
        plan = design.DesignPlan()
        ds = design.generate_design(plan, design.PopulationModel(), 10, seed=1)
        assert ds.n_respondents == 10
        assert ds.n_tasks == 80
        assert all(t.chosen is None for t in ds.tasks)

    def test_no_license_no_mode1_rows(self):
        pop = design.PopulationModel(share_license=0.0)
        ds = design.generate_design(design.DesignPlan(), pop, 5, seed=2)
        for t in ds.tasks:
            assert all(a.l != 1 for a in t.alternatives)
            assert len(t.alternatives) == 4

    def test_congestion_only_for_car_modes(self):
        ds = design.generate_design(design.DesignPlan(), design.PopulationModel(), 8, seed=3)
        for t in ds.tasks:
            for a in t.alternatives:
                assert ("m_cong" in a.mode) == (a.l in (1, 2))

    def test_walk_absent_without_services(self):
        ds = design.generate_design(design.DesignPlan(), design.PopulationModel(), 12, seed=4)
        saw_none = saw_some = False
        for t in ds.tasks:
            for a in t.alternatives:
                if a.housing["h_services"] == 0:
                    assert np.isnan(a.housing["h_walk"])
                    saw_none = True
                else:
                    assert a.housing["h_walk"] in (10.0, 20.0, 30.0)
                    saw_some = True
        assert saw_none and saw_some

    def test_deterministic_in_seed(self):
        a = design.generate_design(design.DesignPlan(), design.PopulationModel(), 6, seed=9)
        b = design.generate_design(design.DesignPlan(), design.PopulationModel(), 6, seed=9)
        assert a.to_frame().equals(b.to_frame())

    def test_random_strategy_balance_where_divisible(self):
        plan = design.DesignPlan(strategy="random", tasks_per_respondent=9)
        ds = design.generate_design(plan, design.PopulationModel(), 4, seed=5)
        # 9 tasks -> each housing attribute level appears three times per k
        for resp in ds.respondents:
            rooms = {1: [], 2: []}
            for t in ds.tasks_of(resp.id):
                for k in (1, 2):
                    alt = next(a for a in t.alternatives if a.k == k)
                    rooms[k].append(alt.housing["h_rooms"])
            for k in (1, 2):
                counts = {v: rooms[k].count(v) for v in (0.0, 1.0, 2.0)}
                assert set(counts.values()) == {3}

    def test_pivot_respects_status_quo_bounds(self):
        ds = design.generate_design(design.DesignPlan(), design.PopulationModel(), 20, seed=6)
        for t in ds.tasks:
            for a in t.alternatives:
                assert 0.95 * 150.0 <= a.housing["h_cost"] <= 1.05 * 6500.0
                minutes = a.mode["m_time"] * 60.0
                assert 1.05 * 30.0 - 1e-9 <= minutes <= 1.50 * 80.0 + 1e-9


class TestSimulateChoices:
    def test_dominant_alternative_always_wins(self):
        # an alternative 50 utility units ahead is chosen essentially always
        rng = np.random.default_rng(0)
        V = np.array([50.0, 0.0, 0.0, 0.0])
        u = rng.random((10000, 4))
        picks = design.gumbel_argmax(V, u)
        assert (picks == 0).mean() > 0.999

    def test_single_task_shares_match_logit_probabilities(self):
        # one million Gumbel-argmax draws against the closed-form softmax
        rng = np.random.default_rng(7)
        V = np.array([0.8, -0.3, 0.1, 1.2, -0.9, 0.0])
        u = rng.random((1_000_000, V.size))
        picks = design.gumbel_argmax(V, u)
        shares = np.bincount(picks, minlength=V.size) / picks.size
        assert np.abs(shares - choice_probabilities(V)).max() < 0.003

    def test_same_seed_identical_different_seed_differs(self, mmnl2_spec):
        from mixlogit.design import load_truth
        spec, theta, _ = load_truth("paper_mmnl2_truth")
        skeleton = design.generate_design(design.DesignPlan(), design.PopulationModel(),
                                          15, seed=11)
        a = design.simulate_choices(skeleton, spec, theta, seed=1)
        b = design.simulate_choices(skeleton, spec, theta, seed=1)
        c = design.simulate_choices(skeleton, spec, theta, seed=2)
        assert a.to_frame().equals(b.to_frame())
        assert not a.to_frame()["chosen"].equals(c.to_frame()["chosen"])

    def test_roundtrip_export_load(self, tmp_path):
        spec, theta, _ = design.load_truth("paper_mmnl2_truth")
        skeleton = design.generate_design(design.DesignPlan(), design.PopulationModel(),
                                          12, seed=13)
        ds = design.simulate_choices(skeleton, spec, theta, seed=3)
        p = tmp_path / "synth.csv"
        write_choice_csv(ds, p)
        back = load_choice_data(p)
        f1, f2 = ds.to_frame(), back.to_frame()
        assert f1.shape == f2.shape
        for col in f1.columns:
            if f1[col].dtype.kind == "f":
                assert np.allclose(f1[col], f2[col], equal_nan=True, atol=1e-9)
            else:
                assert (f1[col].astype(str) == f2[col].astype(str)).all()

    def test_panel_taste_persistence(self):
        # within-respondent mode agreement must beat the cross-respondent
        # baseline when tastes are heterogeneous
        text = """
model = MMNL1

[coefficients]
cost | m_cost | mode:* | fixed  | negexp
t_a  | m_time | mode:2 | random | identity
t_b  | m_time | mode:3 | random | identity
"""
        spec = parse_spec_text(text)
        layout = ParamLayout(spec)
        theta = np.zeros(layout.n_params)
        theta[layout.index_of("cost")] = -2.0
        theta[layout.index_of("t_a:mu")] = -2.0
        theta[layout.index_of("t_b:mu")] = -2.0
        theta[layout.index_of("t_a:sigma")] = 4.0
        theta[layout.index_of("t_b:sigma")] = 4.0
        skeleton = design.generate_design(design.DesignPlan(), design.PopulationModel(),
                                          300, seed=17)
        ds = design.simulate_choices(skeleton, spec, theta, seed=5)
        modes_by_resp = {}
        for t in ds.tasks:
            modes_by_resp.setdefault(t.respondent_id, []).append(
                t.alternatives[t.chosen].l)
        within = []
        firsts = []
        for rid, ms in modes_by_resp.items():
            pairs = [(a, b) for i, a in enumerate(ms) for b in ms[i + 1:]]
            within.append(np.mean([a == b for a, b in pairs]))
            firsts.append(ms[0])
        cross = np.mean([a == b for i, a in enumerate(firsts)
                         for b in firsts[i + 1:]])
        assert np.mean(within) > cross + 0.05

    def test_binding_mismatch(self):
        bad = parse_spec_text(
            "model = CMNL\n[coefficients]\nx | h_cost | housing | fixed | identity\n")
        skeleton = design.generate_design(design.DesignPlan(), design.PopulationModel(),
                                          2, seed=19)
        from mixlogit.errors import BindingMismatch
        from mixlogit.data import Alternative, ChoiceTask, ChoiceDataset
        tasks = []
        for t in skeleton.tasks:
            alts = tuple(Alternative(k=a.k, l=a.l,
                                     housing={k_: v for k_, v in a.housing.items()
                                              if k_ != "h_cost"},
                                     mode=a.mode) for a in t.alternatives)
            tasks.append(ChoiceTask(respondent_id=t.respondent_id, index=t.index,
                                    alternatives=alts, chosen=None))
        broken = ChoiceDataset(respondents=skeleton.respondents, tasks=tasks)
        with pytest.raises(BindingMismatch):
            design.simulate_choices(broken, bad, np.zeros(1), seed=0)


class TestDescribe:
    def test_describe_covers_attributes(self):
        spec, theta, _ = design.load_truth("paper_mmnl2_truth")
        skeleton = design.generate_design(design.DesignPlan(), design.PopulationModel(),
                                          40, seed=23)
        ds = design.simulate_choices(skeleton, spec, theta, seed=29)
        table = design.describe_dataset(ds)
        assert {"h_cost", "h_rooms"} <= set(table["attribute"])
        assert (table["n"] > 0).all()
        assert "m_cong[mode=3]" not in set(table["attribute"])
