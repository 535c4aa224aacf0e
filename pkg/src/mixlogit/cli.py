"""Command-line front end: simulate, estimate, compare, vot, draws-dump.

Every command writes a run manifest (command, flags, input hashes,
version, wall time) into the output directory. Exit codes: 0 success,
2 usage or validation failure, 3 optimizer non-convergence (the result
JSON is still written, with its convergence block filled in).

Worker threads are capped by --threads, falling back to the
MIXLOGIT_THREADS environment variable; the thread count never changes
numerical results.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, design, figures, postfit
from .data import load_choice_data, write_choice_csv
from .draws import DEFAULT_DRAWS, allocate_draws, write_draws
from .errors import EstimationError, MixlogitError
from .estimation import EstimateOptions, EstimationResult, estimate
from .modelspec import (
    ModelSpec,
    ParamLayout,
    bundled_spec_text,
    normalize_cholesky,
    parse_spec_text,
)

USAGE_EXIT, NONCONVERGENCE_EXIT = 2, 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_threads(value) -> int:
    import numba
    if value is None:
        value = os.environ.get("MIXLOGIT_THREADS")
    if value is None:
        return numba.get_num_threads()
    n = max(1, min(int(value), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _spec_text_from_arg(arg: str) -> str:
    try:
        return bundled_spec_text(arg)
    except (FileNotFoundError, ValueError):
        pass
    path = Path(arg)
    if not path.is_file():
        raise MixlogitError(f"--spec {arg!r} is neither a bundled spec name nor a file")
    return path.read_text(encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(o) for o in outputs],
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))


def _stars(p: float) -> str:
    if p <= 0.01:
        return "***"
    if p <= 0.05:
        return "**"
    if p <= 0.1:
        return "*"
    return ""


def estimate_markdown(result: EstimationResult) -> str:
    """Parameter table with significance stars, plus the quarter-hour view
    of any Cholesky blocks and their implied standard deviations."""
    from scipy.stats import norm

    layout = ParamLayout(result.spec)
    se = result.std_errors
    lines = ["| Parameter | Est. | Std. err. | |", "|---|---|---|---|"]
    for i, name in enumerate(result.names):
        if se is not None and se[i] > 0:
            p = 2 * norm.sf(abs(result.theta[i] / se[i]))
            lines.append(f"| {name} | {result.theta[i]:.4f} | {se[i]:.4f} | {_stars(p)} |")
        else:
            lines.append(f"| {name} | {result.theta[i]:.4f} |  |  |")
    lines.append("")
    lines.append(f"Log-likelihood: {result.loglik:.2f}; draws: {result.n_draws}; "
                 f"converged: {result.converged} ({result.criterion}, "
                 f"{result.iterations} iterations, grad norm {result.grad_norm:.2e}).")
    for block in result.spec.blocks:
        L = normalize_cholesky(layout.block_cholesky(result.theta, block.name))
        sds = np.sqrt((L ** 2).sum(axis=1))
        lines.append("")
        lines.append(f"Block {block.name} (column-sign normalized; travel-time rows "
                     f"shown per 0.25 h): ")
        for r, member in enumerate(block.members):
            entries = ", ".join(f"{L[r, c] / 4.0:.4f}" for c in range(r + 1))
            lines.append(f"- {member}: [{entries}]")
        if result.covariance is not None:
            kr_se = postfit.block_sd_std_errors(result, block.name)
            sd_txt = ", ".join(f"{member} {sd:.4f} (KR se {e:.4f})"
                               for member, sd, e in zip(block.members, sds, kr_se))
        else:
            sd_txt = ", ".join(f"{member} {sd:.4f}" for member, sd in zip(block.members, sds))
        lines.append(f"- implied per-hour sd: {sd_txt}")
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec, theta, payload = design.load_truth(args.truth)
    plan = design.DesignPlan(strategy=args.design, tasks_per_respondent=args.tasks)
    skeleton = design.generate_design(plan, design.PopulationModel(), args.n, seed=args.seed)
    ds = design.simulate_choices(skeleton, spec, theta, seed=args.seed)
    data_path = out_dir / "synth.csv"
    write_choice_csv(ds, data_path)
    truth_out = out_dir / "truth.json"
    truth_out.write_text(json.dumps(
        {"spec": payload["spec"], "theta": payload["theta"], "seed": args.seed,
         "design": args.design, "n": args.n}, indent=2))
    desc = design.describe_dataset(ds)
    desc_path = out_dir / "descriptives.csv"
    desc.to_csv(desc_path, index=False)
    frame = ds.to_frame()
    chosen = frame[frame["chosen"] == 1]
    shares = chosen["alt_l"].value_counts(normalize=True).to_dict()
    fig_path = out_dir / "mode_shares.png"
    figures.mode_share_figure(shares, fig_path)
    _write_manifest(out_dir, "simulate", args, [], [data_path, truth_out, desc_path, fig_path],
                    started)
    print(f"wrote {data_path} ({ds.n_respondents} respondents, {ds.n_tasks} tasks)")
    return 0


def cmd_estimate(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = _resolve_threads(args.threads)
    spec_text = _spec_text_from_arg(args.spec)
    spec = parse_spec_text(spec_text, origin=args.spec)
    ds = load_choice_data(args.data)
    layout = ParamLayout(spec)
    n_draws = args.draws
    if layout.n_draw_dims == 0 and n_draws != 1:
        print("specification has no mixing; forcing --draws to 1", file=sys.stderr)
        n_draws = 1
    draws = None
    if layout.n_draw_dims > 0:
        draws = allocate_draws(spec, ds.n_respondents, n_draws, seed=args.seed)
    opts = EstimateOptions(max_iter=args.max_iter, tol_grad=args.tol_grad,
                           start=args.start, se_method=args.se_method,
                           restarts=args.restarts)

    def finish(result: EstimationResult, code: int) -> int:
        payload = result.to_dict()
        payload["spec_name"] = args.spec
        payload["spec_text"] = spec_text
        payload["threads"] = None  # thread count never affects results
        result_path = out_dir / "result.json"
        result_path.write_text(json.dumps(payload, indent=2))
        md_path = out_dir / "result.md"
        md_path.write_text(estimate_markdown(result))
        fig_path = out_dir / "estimates.png"
        figures.estimate_figure(result, fig_path)
        _write_manifest(out_dir, "estimate", args, [args.data],
                        [result_path, md_path, fig_path], started)
        status = "converged" if result.converged else f"NOT converged ({result.criterion})"
        print(f"wrote {result_path}: LL {result.loglik:.2f}, {status}, threads={threads}")
        return code

    try:
        result = estimate(spec, ds, draws, opts, seed=args.seed)
    except EstimationError as err:
        theta_last, ll_last = err.last if err.last is not None else (np.zeros(layout.n_params),
                                                                     float("nan"))
        result = EstimationResult(
            spec=spec, names=layout.names, theta=np.asarray(theta_last, dtype=float),
            loglik=float(ll_last), grad_norm=float("nan"), iterations=args.max_iter,
            converged=False, criterion=type(err).__name__, covariance=None,
            n_draws=n_draws, seed=args.seed, n_respondents=ds.n_respondents,
            n_tasks=ds.n_tasks, data_hash=ds.content_hash())
        return finish(result, NONCONVERGENCE_EXIT)
    return finish(result, 0)


def _load_result(path) -> tuple:
    payload = json.loads(Path(path).read_text())
    spec = parse_spec_text(payload["spec_text"], origin=payload.get("spec_name", str(path)))
    return EstimationResult.from_dict(payload, spec), payload


def cmd_compare(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(args.results) < 2:
        print("compare needs at least two result files", file=sys.stderr)
        return USAGE_EXIT
    entries = []
    hashes = set()
    null_lls = []
    for path in args.results:
        result, payload = _load_result(path)
        hashes.add(result.data_hash)
        if len(hashes) > 1:
            from .errors import DataHashMismatch
            raise DataHashMismatch(
                f"{path} was estimated on different data than the preceding results")
        label = payload.get("spec_name", result.spec.model_class)
        ll0 = args.null_loglik
        if ll0 is None and args.data:
            ll0 = postfit.null_loglik(load_choice_data(args.data))
        null_lls.append(ll0)
        entries.append({
            "label": label, "n_params": len(result.names), "loglik": result.loglik,
            "rho_sq": postfit.rho_squared(result.loglik, ll0) if ll0 else None,
            "bic": postfit.bic(result.loglik, len(result.names), result.n_tasks),
        })
    report = postfit.comparison_report(entries, datasets_hash=next(iter(hashes)))
    json_path = out_dir / "comparison.json"
    json_path.write_text(json.dumps(report, indent=2))
    md_path = out_dir / "comparison.md"
    md_path.write_text(postfit.comparison_markdown(report))
    csv_path = out_dir / "comparison.csv"
    import pandas as pd
    pd.DataFrame(report["models"]).to_csv(csv_path, index=False)
    fig_path = out_dir / "comparison.png"
    figures.comparison_figure(report, fig_path)
    _write_manifest(out_dir, "compare", args, list(args.results),
                    [json_path, md_path, csv_path, fig_path], started)
    print(f"wrote {md_path}")
    return 0


def cmd_vot(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, _ = _load_result(args.result)
    summaries = postfit.vot_table(result, owner_income=args.income_owner,
                                  renter_income=args.income_renter,
                                  kr_draws=args.kr_draws, kr_seed=args.seed)
    json_path = out_dir / "vot.json"
    json_path.write_text(postfit.vot_json(summaries))
    md_path = out_dir / "vot.md"
    md_path.write_text(postfit.vot_markdown(summaries))
    csv_path = out_dir / "vot.csv"
    import pandas as pd
    pd.DataFrame([s.to_dict() for s in summaries]).to_csv(csv_path, index=False)
    fig_path = out_dir / "vot.png"
    figures.vot_figure(summaries, fig_path)
    _write_manifest(out_dir, "vot", args, [args.result],
                    [json_path, md_path, csv_path, fig_path], started)
    print(f"wrote {md_path}")
    return 0


def cmd_draws_dump(args) -> int:
    started = time.time()
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    spec = parse_spec_text(_spec_text_from_arg(args.spec), origin=args.spec)
    tensor = allocate_draws(spec, args.n, args.draws, seed=args.seed)
    write_draws(tensor, out_path)
    _write_manifest(out_path.parent, "draws-dump", args, [], [out_path], started)
    print(f"wrote {out_path} shape={tensor.values.shape}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixlogit",
        description="Panel mixed logit estimation and stated-choice simulation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="worker thread cap (env MIXLOGIT_THREADS as fallback)")
        p.add_argument("--out-dir", default="out")

    p = sub.add_parser("simulate", help="generate a design and simulate choices")
    common(p)
    p.add_argument("--spec", default=None,
                   help="unused when the truth file names its spec (kept for scripting)")
    p.add_argument("--truth", required=True,
                   help="truth JSON (bundled name or path) with spec and theta")
    p.add_argument("--n", type=int, required=True, help="number of respondents")
    p.add_argument("--design", choices=("oa", "random"), default="oa")
    p.add_argument("--tasks", type=int, default=8)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="maximum simulated likelihood fit")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True, help="bundled spec name or file path")
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol-grad", type=float, default=1e-6)
    p.add_argument("--start", default="auto", help="'auto', 'zeros'")
    p.add_argument("--se-method", choices=("grad-diff", "ll-diff", "none"),
                   default="grad-diff")
    p.add_argument("--restarts", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", help="model comparison table from result files")
    common(p)
    p.add_argument("results", nargs="*", help="two or more result JSON files")
    p.add_argument("--data", default=None,
                   help="dataset for the equal-share null log-likelihood")
    p.add_argument("--null-loglik", type=float, default=None,
                   help="override the null log-likelihood")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("vot", help="value-of-time distributions from a result file")
    common(p)
    p.add_argument("--result", required=True)
    p.add_argument("--income-owner", type=float, default=postfit.DEFAULT_OWNER_INCOME)
    p.add_argument("--income-renter", type=float, default=postfit.DEFAULT_RENTER_INCOME)
    p.add_argument("--kr-draws", type=int, default=10000)
    p.set_defaults(func=cmd_vot)

    p = sub.add_parser("draws-dump", help="binary dump of the draw tensor")
    common(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_draws_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MixlogitError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
