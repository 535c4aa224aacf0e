"""Fit metrics, model comparison, and value-of-time distributions.

Value of time (VOT) is the marginal rate of substitution between travel
time and a cost numeraire. Because travel-time coefficients are normal
and cost coefficients fixed (entered as -exp(gamma)), VOT distributions
are normal: in the travel-cost numeraire, mean = -mu_t / -exp(gamma)
and sd = sigma_t / exp(gamma) in AUD per hour. In the housing-cost
numeraire the marginal utility of one AUD/week of housing cost is
exp(gamma_h) * 10 / income (the attribute enters as cost over weekly
income, scaled by ten), and VOT is reported in units of 10 AUD/week per
hour. For a correlated block, sigma_t of a member is the Euclidean norm
of its Cholesky row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .data import ChoiceDataset, MODE_LABELS, build_alternative_universe
from .errors import MissingCoefficient, NegativeStatistic, NonPositiveIncome
from .estimation import EstimationResult, KrSample, krinsky_robb
from .modelspec import ModelSpec, ParamLayout

DEFAULT_OWNER_INCOME = 2244.7
DEFAULT_RENTER_INCOME = 1558.7


@dataclass
class FitMetrics:
    loglik: float
    loglik_null: float
    rho_sq: float
    bic: float
    n_params: int
    n_obs: int

    def to_dict(self) -> dict:
        return {"loglik": self.loglik, "loglik_null": self.loglik_null,
                "rho_sq": self.rho_sq, "bic": self.bic,
                "n_params": self.n_params, "n_obs": self.n_obs}


def null_loglik(dataset: ChoiceDataset) -> float:
    """Availability-aware equal-share log-likelihood."""
    total = 0.0
    counts = {r.id: len(build_alternative_universe(r)) for r in dataset.respondents}
    for t in dataset.tasks:
        total -= np.log(counts[t.respondent_id])
    return float(total)


def rho_squared(loglik: float, loglik_null: float) -> float:
    return 1.0 - loglik / loglik_null


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    return float(np.log(n_obs) * n_params - 2.0 * loglik)


def fit_metrics(result: EstimationResult, dataset: ChoiceDataset) -> FitMetrics:
    ll0 = null_loglik(dataset)
    return FitMetrics(
        loglik=result.loglik,
        loglik_null=ll0,
        rho_sq=rho_squared(result.loglik, ll0),
        bic=bic(result.loglik, len(result.names), dataset.n_tasks),
        n_params=len(result.names),
        n_obs=dataset.n_tasks,
    )


def lr_test(loglik_restricted: float, loglik_unrestricted: float, df: int):
    """Likelihood-ratio statistic 2*(LL_u - LL_r) and its upper-tail p."""
    if df < 1:
        raise ValueError("df must be >= 1")
    stat = 2.0 * (loglik_unrestricted - loglik_restricted)
    if stat < 0.0:
        raise NegativeStatistic(
            f"unrestricted log-likelihood is below the restricted one ({stat:.6g})")
    return stat, float(chi2.sf(stat, df))


@dataclass
class VotSummary:
    mode: int
    numeraire: str        # "travel-cost" or "housing-cost"
    tenure: str | None    # "owner" | "renter" for the housing numeraire
    income: float | None
    unit: str
    mean: float
    sd: float
    mean_ci: tuple | None = None
    sd_ci: tuple | None = None
    negative_share: float = 0.0

    def to_dict(self) -> dict:
        return {"mode": self.mode, "mode_label": MODE_LABELS[self.mode],
                "numeraire": self.numeraire, "tenure": self.tenure,
                "income": self.income, "unit": self.unit,
                "mean": self.mean, "sd": self.sd,
                "mean_ci": self.mean_ci, "sd_ci": self.sd_ci,
                "negative_share": self.negative_share}


def _time_coefficient(spec: ModelSpec, mode: int, attribute: str = "m_time"):
    for c in spec.coefficients:
        if not c.is_housing and c.attribute == attribute and c.modes == (mode,):
            return c
    raise MissingCoefficient(f"no travel-time coefficient bound to mode {mode}")


def _travel_cost_name(spec: ModelSpec, attribute: str = "m_cost") -> str:
    for c in spec.coefficients:
        if not c.is_housing and c.attribute == attribute and c.kind == "fixed" \
                and c.transform == "negexp":
            return c.name
    raise MissingCoefficient("no fixed negative-exponential travel-cost coefficient")


def _housing_cost_name(spec: ModelSpec, tenure: str, attribute: str = "h_cost") -> str:
    for c in spec.coefficients:
        if c.is_housing and c.attribute == attribute and c.kind == "fixed" \
                and c.transform == "negexp" and tenure in c.interactions \
                and "income10" in c.interactions:
            return c.name
    raise MissingCoefficient(f"no fixed negative-exponential housing-cost "
                             f"coefficient for tenure {tenure!r}")


def _time_moments(spec: ModelSpec, layout: ParamLayout, theta: np.ndarray, mode: int):
    """(mu_t, sigma_t) of the mode's travel-time coefficient; fixed
    coefficients have sigma_t = 0, block members use the Cholesky row norm."""
    decl = _time_coefficient(spec, mode)
    if decl.kind == "fixed":
        return float(theta[layout.index_of(decl.name)]), 0.0
    mu = float(theta[layout.index_of(f"{decl.name}:mu")])
    block = next((b for b in spec.blocks if decl.name in b.members), None)
    if block is None:
        sd = abs(float(theta[layout.index_of(f"{decl.name}:sigma")]))
    else:
        L = layout.block_cholesky(theta, block.name)
        row = block.members.index(decl.name)
        sd = float(np.linalg.norm(L[row, :row + 1]))
    return mu, sd


def _vot_travel_values(spec: ModelSpec, layout: ParamLayout, theta, mode: int):
    mu_t, sd_t = _time_moments(spec, layout, theta, mode)
    gamma = float(theta[layout.index_of(_travel_cost_name(spec))])
    cost_mu = np.exp(gamma)   # |dU/d cost| per AUD
    return -mu_t / cost_mu, sd_t / cost_mu


def _vot_housing_values(spec: ModelSpec, layout: ParamLayout, theta, mode: int,
                        tenure: str, income: float):
    mu_t, sd_t = _time_moments(spec, layout, theta, mode)
    gamma_h = float(theta[layout.index_of(_housing_cost_name(spec, tenure))])
    money_mu = np.exp(gamma_h) * 10.0 / income  # |dU| per AUD/week of housing cost
    # reported in 10 AUD/week per hour
    return -mu_t / money_mu / 10.0, sd_t / money_mu / 10.0


def _negative_share(mean: float, sd: float) -> float:
    if sd == 0.0:
        return float(mean < 0.0)
    return float(norm.cdf(-mean / sd))


def vot_travel_cost(result: EstimationResult, mode: int, kr_draws: int = 10000,
                    kr_seed: int = 0) -> VotSummary:
    """VOT distribution for a mode in the travel-cost numeraire [AUD/h]."""
    spec = result.spec
    layout = ParamLayout(spec)
    mean, sd = _vot_travel_values(spec, layout, result.theta, mode)
    mean_ci = sd_ci = None
    if result.covariance is not None:
        kr = krinsky_robb(result, lambda th: _vot_travel_values(spec, layout, th, mode),
                          n_draws=kr_draws, seed=kr_seed)
        mean_ci = (float(kr.lower[0]), float(kr.upper[0]))
        sd_ci = (float(kr.lower[1]), float(kr.upper[1]))
    return VotSummary(mode=mode, numeraire="travel-cost", tenure=None, income=None,
                      unit="AUD/h", mean=mean, sd=sd, mean_ci=mean_ci, sd_ci=sd_ci,
                      negative_share=_negative_share(mean, sd))


def vot_housing_cost(result: EstimationResult, mode: int, tenure: str, income: float,
                     kr_draws: int = 10000, kr_seed: int = 0) -> VotSummary:
    """VOT distribution in the housing-cost numeraire [10 AUD/week/h] at a
    given weekly household income."""
    if income <= 0:
        raise NonPositiveIncome(f"income must be positive, got {income}")
    if tenure not in ("owner", "renter"):
        raise ValueError("tenure must be 'owner' or 'renter'")
    spec = result.spec
    layout = ParamLayout(spec)
    mean, sd = _vot_housing_values(spec, layout, result.theta, mode, tenure, income)
    mean_ci = sd_ci = None
    if result.covariance is not None:
        kr = krinsky_robb(
            result, lambda th: _vot_housing_values(spec, layout, th, mode, tenure, income),
            n_draws=kr_draws, seed=kr_seed)
        mean_ci = (float(kr.lower[0]), float(kr.upper[0]))
        sd_ci = (float(kr.lower[1]), float(kr.upper[1]))
    return VotSummary(mode=mode, numeraire="housing-cost", tenure=tenure, income=income,
                      unit="10 AUD/week/h", mean=mean, sd=sd, mean_ci=mean_ci,
                      sd_ci=sd_ci, negative_share=_negative_share(mean, sd))


def block_sd_std_errors(result: EstimationResult, block: str, kr_draws: int = 10000,
                        kr_seed: int = 0) -> np.ndarray:
    """Krinsky-Robb standard errors of the row norms of a Cholesky block
    (the implied standard deviations of its member coefficients)."""
    layout = ParamLayout(result.spec)

    def row_norms(theta):
        L = layout.block_cholesky(theta, block)
        return np.sqrt((L ** 2).sum(axis=1))

    kr = krinsky_robb(result, row_norms, n_draws=kr_draws, seed=kr_seed)
    return kr.derived.std(axis=0, ddof=1)


BIC_NOTE = ("BIC follows ln(n_obs) * n_params - 2 * loglik; externally "
            "published figures that do not satisfy this identity are "
            "flagged rather than reproduced.")


def comparison_report(entries: list, datasets_hash: str | None = None) -> dict:
    """Model-comparison table: parameters, LL, rho^2, BIC, and LR tests of
    every model against the richest (highest-LL) one, df from parameter
    count differences."""
    rows = []
    richest = max(entries, key=lambda e: e["loglik"])
    for e in entries:
        row = dict(e)
        if e is not richest and richest["n_params"] > e["n_params"]:
            stat, p = lr_test(e["loglik"], richest["loglik"],
                              richest["n_params"] - e["n_params"])
            row["lr_chi2"] = stat
            row["lr_df"] = richest["n_params"] - e["n_params"]
            row["lr_p"] = p
        rows.append(row)
    return {"models": rows, "reference": richest["label"], "note": BIC_NOTE,
            "data_hash": datasets_hash}


def comparison_markdown(report: dict) -> str:
    lines = ["| Model | Params | Log-likelihood | rho^2 | BIC | LR chi^2 | df | p |",
             "|---|---|---|---|---|---|---|---|"]
    for row in report["models"]:
        lr = (f"{row['lr_chi2']:.2f}", str(row["lr_df"]),
              "< 0.001" if row["lr_p"] < 0.001 else f"{row['lr_p']:.3f}") \
            if "lr_chi2" in row else ("", "", "")
        lines.append(
            f"| {row['label']} | {row['n_params']} | {row['loglik']:.2f} | "
            f"{row['rho_sq']:.2f} | {row['bic']:.2f} | {lr[0]} | {lr[1]} | {lr[2]} |")
    lines.append("")
    lines.append(f"LR tests are against {report['reference']}. {report['note']}")
    return "\n".join(lines)


def vot_table(result: EstimationResult, owner_income: float = DEFAULT_OWNER_INCOME,
              renter_income: float = DEFAULT_RENTER_INCOME, kr_draws: int = 10000,
              kr_seed: int = 0, modes: tuple | None = None) -> list:
    """All VOT summaries: per mode in the travel-cost numeraire, then per
    tenure and mode in the housing-cost numeraire."""
    spec = result.spec
    if modes is None:
        modes = tuple(sorted({c.modes[0] for c in spec.coefficients
                              if not c.is_housing and c.attribute == "m_time"
                              and c.modes and len(c.modes) == 1}))
    out = []
    for mode in modes:
        out.append(vot_travel_cost(result, mode, kr_draws=kr_draws, kr_seed=kr_seed))
    for tenure, income in (("owner", owner_income), ("renter", renter_income)):
        for mode in modes:
            out.append(vot_housing_cost(result, mode, tenure, income,
                                        kr_draws=kr_draws, kr_seed=kr_seed))
    return out


def vot_markdown(summaries: list) -> str:
    def ci(pair):
        return "" if pair is None else f"[{pair[0]:.2f}, {pair[1]:.2f}]"

    lines = ["| Numeraire | Tenure | Mode | Mean | 95% CI | Std. dev. | 95% CI | P(VOT<0) |",
             "|---|---|---|---|---|---|---|---|"]
    for s in summaries:
        label = {1: "conventional car", 2: "self-driving car", 3: "public transit"}[s.mode]
        tenure = s.tenure or ""
        lines.append(
            f"| {s.numeraire} [{s.unit}] | {tenure} | {label} | {s.mean:.2f} | "
            f"{ci(s.mean_ci)} | {s.sd:.2f} | {ci(s.sd_ci)} | {s.negative_share:.3f} |")
    return "\n".join(lines)


def vot_json(summaries: list) -> str:
    return json.dumps([s.to_dict() for s in summaries], indent=2)
