import json
from pathlib import Path

import numpy as np
import pytest

from mixlogit import cli
from mixlogit.data import write_choice_csv
from mixlogit.design import DesignPlan, PopulationModel, generate_design, load_truth, simulate_choices
from mixlogit.estimation import EstimationResult
from mixlogit.modelspec import ParamLayout, bundled_spec_text


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    """Small synthetic dataset written once for the CLI tests."""
    out = tmp_path_factory.mktemp("data") / "synth.csv"
    spec, theta, _ = load_truth("paper_mmnl2_truth")
    skeleton = generate_design(DesignPlan(), PopulationModel(), 40, seed=5)
    ds = simulate_choices(skeleton, spec, theta, seed=6)
    write_choice_csv(ds, out)
    return out


def truth_result_payload() -> dict:
    spec, theta, payload = load_truth("paper_mmnl2_truth")
    result = EstimationResult.from_parameters(spec, theta)
    result.n_respondents = 512
    result.n_tasks = 4096
    body = result.to_dict()
    body["spec_name"] = "paper_mmnl2"
    body["spec_text"] = bundled_spec_text("paper_mmnl2")
    return body


class TestEstimateCommand:
    def test_cmnl_forces_single_draw(self, synth_csv, tmp_path, capsys):
        code = cli.main(["estimate", "--data", str(synth_csv), "--spec", "paper_cmnl",
                         "--draws", "64", "--out-dir", str(tmp_path), "--start", "zeros"])
        assert code == 0
        err = capsys.readouterr().err
        assert "forcing --draws to 1" in err
        payload = json.loads((tmp_path / "result.json").read_text())
        assert payload["simulation"]["n_draws"] == 1
        assert payload["convergence"]["converged"] is True

    def test_missing_data_flag_exits_2(self):
        with pytest.raises(SystemExit) as ei:
            cli.main(["estimate", "--spec", "paper_cmnl"])
        assert ei.value.code == 2

    def test_deterministic_across_thread_counts(self, synth_csv, tmp_path):
        outs = []
        for threads in ("1", "2"):
            d = tmp_path / f"t{threads}"
            code = cli.main(["estimate", "--data", str(synth_csv), "--spec", "paper_mmnl1",
                             "--draws", "32", "--seed", "7", "--threads", threads,
                             "--out-dir", str(d), "--start", "zeros",
                             "--se-method", "none", "--max-iter", "300"])
            assert code == 0
            outs.append((d / "result.json").read_bytes())
        assert outs[0] == outs[1]

    def test_nonconvergence_exit_code_and_result(self, synth_csv, tmp_path):
        code = cli.main(["estimate", "--data", str(synth_csv), "--spec", "paper_cmnl",
                         "--max-iter", "2", "--out-dir", str(tmp_path),
                         "--start", "zeros", "--se-method", "none"])
        assert code == 3
        payload = json.loads((tmp_path / "result.json").read_text())
        assert payload["convergence"]["converged"] is False
        assert payload["convergence"]["criterion"] == "MaxIterations"

    def test_markdown_and_figure_written(self, synth_csv, tmp_path):
        code = cli.main(["estimate", "--data", str(synth_csv), "--spec", "paper_cmnl",
                         "--out-dir", str(tmp_path), "--start", "zeros"])
        assert code == 0
        md = (tmp_path / "result.md").read_text()
        assert "| Parameter | Est. | Std. err. |" in md
        assert (tmp_path / "estimates.png").stat().st_size > 0
        manifest = json.loads((tmp_path / "manifest-estimate.json").read_text())
        assert str(synth_csv) in manifest["inputs"]


class TestCompareCommand:
    @pytest.fixture()
    def two_results(self, synth_csv, tmp_path):
        paths = []
        for spec in ("paper_cmnl", "paper_ecmnl"):
            d = tmp_path / spec
            code = cli.main(["estimate", "--data", str(synth_csv), "--spec", spec,
                             "--draws", "32", "--seed", "3", "--out-dir", str(d),
                             "--start", "zeros", "--se-method", "none"])
            assert code == 0
            paths.append(d / "result.json")
        return paths

    def test_comparison_outputs(self, two_results, synth_csv, tmp_path):
        d = tmp_path / "cmp"
        code = cli.main(["compare", *map(str, two_results), "--data", str(synth_csv),
                         "--out-dir", str(d)])
        assert code == 0
        report = json.loads((d / "comparison.json").read_text())
        labels = {m["label"] for m in report["models"]}
        assert labels == {"paper_cmnl", "paper_ecmnl"}
        restricted = next(m for m in report["models"] if m["label"] == "paper_cmnl")
        if "lr_chi2" in restricted:
            lls = {m["label"]: m["loglik"] for m in report["models"]}
            assert restricted["lr_chi2"] == pytest.approx(
                2 * (lls["paper_ecmnl"] - lls["paper_cmnl"]), abs=1e-9)
            assert restricted["lr_df"] == 3
        assert (d / "comparison.png").stat().st_size > 0
        assert (d / "comparison.csv").exists()

    def test_single_input_exits_2(self, two_results, tmp_path):
        code = cli.main(["compare", str(two_results[0]), "--out-dir", str(tmp_path / "x")])
        assert code == 2

    def test_data_hash_mismatch(self, two_results, tmp_path):
        other = json.loads(two_results[0].read_text())
        other["data"]["hash"] = "0" * 64
        p = tmp_path / "tampered.json"
        p.write_text(json.dumps(other))
        code = cli.main(["compare", str(two_results[1]), str(p),
                         "--out-dir", str(tmp_path / "y")])
        assert code == 2


class TestVotCommand:
    def test_reference_vot_means(self, tmp_path):
        rp = tmp_path / "result.json"
        rp.write_text(json.dumps(truth_result_payload()))
        d = tmp_path / "vot"
        code = cli.main(["vot", "--result", str(rp), "--out-dir", str(d)])
        assert code == 0
        rows = json.loads((d / "vot.json").read_text())
        travel = {r["mode"]: r for r in rows if r["numeraire"] == "travel-cost"}
        assert travel[1]["mean"] == pytest.approx(25.26, abs=0.05)
        assert travel[2]["mean"] == pytest.approx(24.02, abs=0.05)
        assert travel[3]["mean"] == pytest.approx(19.02, abs=0.05)
        assert (d / "vot.png").stat().st_size > 0

    def test_owner_income_scaling(self, tmp_path):
        rp = tmp_path / "result.json"
        rp.write_text(json.dumps(truth_result_payload()))
        base, doubled = [], []
        for label, income in (("a", 2244.7), ("b", 2 * 2244.7)):
            d = tmp_path / label
            code = cli.main(["vot", "--result", str(rp), "--income-owner", str(income),
                             "--out-dir", str(d)])
            assert code == 0
            rows = json.loads((d / "vot.json").read_text())
            owner = [r for r in rows if r["tenure"] == "owner"]
            (base if label == "a" else doubled).extend(owner)
        for a, b in zip(base, doubled):
            assert b["mean"] == pytest.approx(2 * a["mean"], rel=1e-9)

    def test_cmnl_result_degenerate_sd(self, synth_csv, tmp_path):
        d = tmp_path / "est"
        assert cli.main(["estimate", "--data", str(synth_csv), "--spec", "paper_cmnl",
                         "--out-dir", str(d), "--start", "zeros",
                         "--se-method", "none"]) == 0
        v = tmp_path / "vot"
        assert cli.main(["vot", "--result", str(d / "result.json"),
                         "--out-dir", str(v)]) == 0
        rows = json.loads((v / "vot.json").read_text())
        assert all(r["sd"] == 0.0 for r in rows)


class TestSimulateCommand:
    def test_simulate_outputs(self, tmp_path):
        d = tmp_path / "sim"
        code = cli.main(["simulate", "--truth", "paper_mmnl2_truth", "--n", "25",
                         "--seed", "11", "--out-dir", str(d)])
        assert code == 0
        assert (d / "synth.csv").exists()
        assert (d / "descriptives.csv").exists()
        assert (d / "mode_shares.png").stat().st_size > 0
        truth = json.loads((d / "truth.json").read_text())
        assert truth["spec"] == "paper_mmnl2"
        from mixlogit.data import load_choice_data
        ds = load_choice_data(d / "synth.csv")
        assert ds.n_respondents == 25

    def test_simulate_deterministic(self, tmp_path):
        outs = []
        for run in ("r1", "r2"):
            d = tmp_path / run
            assert cli.main(["simulate", "--truth", "paper_mmnl2_truth", "--n", "10",
                             "--seed", "13", "--out-dir", str(d)]) == 0
            outs.append((d / "synth.csv").read_bytes())
        assert outs[0] == outs[1]


class TestDrawsDump:
    def test_dump_roundtrip(self, tmp_path):
        out = tmp_path / "draws.bin"
        code = cli.main(["draws-dump", "--spec", "paper_mmnl2", "--n", "6",
                         "--draws", "16", "--seed", "3", "--out", str(out)])
        assert code == 0
        from mixlogit.draws import allocate_draws, read_draws
        from mixlogit.modelspec import bundled_spec
        back = read_draws(out)
        want = allocate_draws(bundled_spec("paper_mmnl2"), 6, 16, seed=3)
        assert np.array_equal(back.values, want.values)
