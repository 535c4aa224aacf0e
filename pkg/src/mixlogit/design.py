"""Pivoted stated-choice design generation and choice simulation.

Each respondent faces `tasks_per_respondent` tasks pairing two housing
profiles with per-mode travel attributes. Housing cost and travel time
pivot around the respondent's clamped status quo; travel cost is priced
per minute of the mode's hypothetical travel time. Non-pivoted
attributes use fixed three-level tables.

The orthogonal-main-effects strategy draws levels from columns of an
embedded 27-run strength-2 orthogonal array over GF(3)^3 (13 columns:
one per line through the origin; entry = dot product with the run index
vector, mod 3). Column blocks: housing profile k uses columns 0-6 in
the order (cost, rooms, dwelling, neighbourhood, services, walk, age);
the mode block under profile k uses columns 0-7 as (time car, time sdc,
time pt, rate car, rate sdc, rate pt, congestion car, congestion sdc).
Each of the four blocks runs through an independently permuted copy of
the array; respondents advance cyclically so the population covers all
27 runs evenly.

Choice simulation realizes one taste draw per respondent (pseudo-random,
independent of the estimator's quasi-random stream), adds independent
Gumbel(0,1) noise per task and alternative, and records the argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import pandas as pd

from .data import (
    Alternative,
    CAR_MODES,
    ChoiceDataset,
    ChoiceTask,
    MODE_PT,
    MODES,
    Respondent,
    build_alternative_universe,
)
from .errors import BindingMismatch, NonPositiveStatusQuo, TooManyAttributesForArray
from .likelihood import assemble_utility
from .modelspec import ModelSpec, ParamLayout, bundled_spec, parse_spec, realize_coefficients, theta_from_dict


@dataclass(frozen=True)
class PivotRule:
    lower: float
    upper: float
    factors: tuple


HOUSING_COST_RULE = PivotRule(lower=150.0, upper=6500.0, factors=(0.95, 1.00, 1.05))
TRAVEL_TIME_RULE = PivotRule(lower=30.0, upper=80.0, factors=(1.05, 1.25, 1.50))
TRAVEL_COST_RATES = (0.100, 0.125, 0.150)  # AUD per minute of hypothetical time


def pivot_levels(rule: PivotRule, status_quo: float) -> tuple:
    """Clamp the status quo into [lower, upper], then scale by the factors."""
    if status_quo <= 0:
        raise NonPositiveStatusQuo(f"status quo must be positive, got {status_quo}")
    ref = min(rule.upper, max(rule.lower, status_quo))
    return tuple(ref * f for f in rule.factors)


def orthogonal_array() -> np.ndarray:
    """27-run, 13-column, 3-level orthogonal array of strength two."""
    runs = np.array([(a, b, c) for a in range(3) for b in range(3) for c in range(3)])
    columns = [(1, 0, 0), (0, 1, 0), (0, 0, 1),
               (1, 1, 0), (1, 2, 0), (1, 0, 1), (1, 0, 2),
               (0, 1, 1), (0, 1, 2),
               (1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2)]
    return np.array([[int(np.dot(run, col) % 3) for col in columns] for run in runs],
                    dtype=np.int64)


def base_array_columns(n_attributes: int) -> np.ndarray:
    """First `n_attributes` columns of the embedded array."""
    oa = orthogonal_array()
    if n_attributes > oa.shape[1]:
        raise TooManyAttributesForArray(
            f"{n_attributes} attributes exceed the {oa.shape[1]}-column array")
    return oa[:, :n_attributes]


@dataclass
class DesignPlan:
    strategy: str = "oa"               # "oa" | "random"
    tasks_per_respondent: int = 8
    rooms_levels: tuple = (0.0, 1.0, 2.0)
    dwell_levels: tuple = (1.0, 2.0, 3.0)
    neigh_levels: tuple = (1.0, 2.0, 3.0)
    services_levels: tuple = (0.0, 1.0, 2.0)
    walk_levels: tuple = (10.0, 20.0, 30.0)
    age_levels: tuple = (1.0, 2.0, 3.0)
    congestion_levels: tuple = (0.10, 0.35, 0.65)


@dataclass
class PopulationModel:
    """Synthetic respondent marginals (independent across characteristics)."""

    share_license: float = 0.914
    share_owner: float = 0.551
    share_female: float = 0.471
    age_shares: tuple = (0.172, 0.533, 0.295)   # 18-29 / 30-49 / 50+
    share_children: float = 0.338
    share_degree: float = 0.566
    share_ridehail: float = 0.584
    # four published income groups split uniformly over their sub-bands
    income_group_shares: tuple = (0.149, 0.288, 0.312, 0.251)
    income_group_bands: tuple = ((1, 2, 3, 4), (5,), (6, 7, 8), (9, 10, 11, 12))
    # status-quo quartile bands: weekly housing cost (AUD), commute (min)
    housing_cost_bands: tuple = ((150.0, 299.0), (300.0, 429.0),
                                 (430.0, 599.0), (600.0, 1500.0))
    commute_bands: tuple = ((5.0, 19.0), (20.0, 29.0), (30.0, 49.0), (50.0, 150.0))

    def band_probs(self) -> np.ndarray:
        probs = np.zeros(12)
        for share, bands in zip(self.income_group_shares, self.income_group_bands):
            for b in bands:
                probs[b - 1] = share / len(bands)
        return probs / probs.sum()

    def sample(self, rng: np.random.Generator, index: int):
        """One respondent plus status-quo housing cost and commute minutes."""
        age = ("18-29", "30-49", "50+")[rng.choice(3, p=np.array(self.age_shares)
                                                   / sum(self.age_shares))]
        resp = Respondent(
            id=f"s{index:06d}",
            income_band=int(rng.choice(12, p=self.band_probs()) + 1),
            is_owner=bool(rng.random() < self.share_owner),
            has_license=bool(rng.random() < self.share_license),
            female=bool(rng.random() < self.share_female),
            age_band=age,
            children=bool(rng.random() < self.share_children),
            degree=bool(rng.random() < self.share_degree),
            ridehail=bool(rng.random() < self.share_ridehail),
        )
        lo, hi = self.housing_cost_bands[rng.integers(4)]
        sq_cost = float(rng.uniform(lo, hi))
        lo, hi = self.commute_bands[rng.integers(4)]
        sq_minutes = float(rng.uniform(lo, hi))
        return resp, sq_cost, sq_minutes


_HOUSING_COLS = 7   # cost, rooms, dwell, neigh, services, walk, age
_MODE_COLS = 8      # time x3, cost rate x3, congestion x2 (car modes)


def _balanced_levels(rng: np.random.Generator, count: int) -> np.ndarray:
    """`count` level indices with exact three-way balance where divisible."""
    reps, rem = divmod(count, 3)
    pool = np.repeat(np.arange(3), reps)
    if rem:
        pool = np.concatenate([pool, rng.choice(3, size=rem, replace=False)])
    rng.shuffle(pool)
    return pool


def generate_design(plan: DesignPlan, population: PopulationModel, n_respondents: int,
                    seed: int = 0) -> ChoiceDataset:
    """Design skeleton: tasks and attributes, no chosen column."""
    if plan.strategy not in ("oa", "random"):
        raise ValueError(f"unknown design strategy {plan.strategy!r}")
    master = np.random.SeedSequence(seed)
    pop_rng = np.random.default_rng(master.spawn(1)[0])
    oa_rng = np.random.default_rng([seed, 3])

    n_blocks = 4  # housing k=1, housing k=2, modes k=1, modes k=2
    if plan.strategy == "oa":
        housing_base = base_array_columns(_HOUSING_COLS)
        mode_base = base_array_columns(_MODE_COLS)
        perms = [oa_rng.permutation(27) for _ in range(n_blocks)]

    T = plan.tasks_per_respondent
    respondents, tasks = [], []
    for i in range(n_respondents):
        resp, sq_cost, sq_minutes = population.sample(pop_rng, i)
        respondents.append(resp)
        rng = np.random.default_rng([seed, 17, i])  # per-respondent stream

        if plan.strategy == "oa":
            offset = (i * T) % 27
            hrows = {k: housing_base[perms[k - 1][(offset + np.arange(T)) % 27]]
                     for k in (1, 2)}
            mrows = {k: mode_base[perms[1 + k][(offset + np.arange(T)) % 27]]
                     for k in (1, 2)}
        else:
            hcols = {k: np.stack([_balanced_levels(rng, T) for _ in range(_HOUSING_COLS)],
                                 axis=1) for k in (1, 2)}
            mcols = {k: np.stack([_balanced_levels(rng, T) for _ in range(_MODE_COLS)],
                                 axis=1) for k in (1, 2)}
            hrows, mrows = hcols, mcols

        cost_levels = pivot_levels(HOUSING_COST_RULE, sq_cost)
        time_levels = pivot_levels(TRAVEL_TIME_RULE, sq_minutes)
        universe = build_alternative_universe(resp)
        for t in range(T):
            housing = {}
            for k in (1, 2):
                lv = hrows[k][t]
                services = plan.services_levels[lv[4]]
                housing[k] = {
                    "h_cost": cost_levels[lv[0]],
                    "h_rooms": plan.rooms_levels[lv[1]],
                    "h_dwell": plan.dwell_levels[lv[2]],
                    "h_neigh": plan.neigh_levels[lv[3]],
                    "h_services": services,
                    "h_walk": plan.walk_levels[lv[5]] if services > 0 else np.nan,
                    "h_age": plan.age_levels[lv[6]],
                }
            alts = []
            for (k, l) in universe:
                lv = mrows[k][t]
                minutes = time_levels[lv[l - 1]]
                rate = TRAVEL_COST_RATES[lv[3 + l - 1]]
                mode = {"m_time": minutes / 60.0, "m_cost": minutes * rate}
                if l in CAR_MODES:
                    mode["m_cong"] = plan.congestion_levels[lv[7 if l == 2 else 6]]
                alts.append(Alternative(k=k, l=l, housing=_with_derived(housing[k]),
                                        mode=mode))
            tasks.append(ChoiceTask(respondent_id=resp.id, index=t + 1,
                                    alternatives=tuple(alts), chosen=None))
    return ChoiceDataset(respondents=respondents, tasks=tasks,
                         provenance=f"generated design strategy={plan.strategy} seed={seed}")


def _with_derived(housing: dict) -> dict:
    from .data import _derive_housing
    return _derive_housing(housing)


def gumbel_argmax(V: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Argmax of V + Gumbel(0,1) noise, with uniforms `u` (same shape as V
    or [draws, len(V)])."""
    g = -np.log(-np.log(u))
    return np.argmax(np.atleast_2d(V) + np.atleast_2d(g), axis=1)


def simulate_choices(skeleton: ChoiceDataset, spec: ModelSpec, theta,
                     seed: int = 0) -> ChoiceDataset:
    """Fill the chosen column by utility-maximizing simulation.

    Tastes are drawn once per respondent (panel structure); Gumbel noise
    is independent per task and alternative. Per-respondent substreams
    make the output deterministic in `seed` and independent of
    processing order.
    """
    layout = ParamLayout(spec)
    theta = np.asarray(theta, dtype=float)
    tasks_by_resp: dict = {}
    for t in skeleton.tasks:
        tasks_by_resp.setdefault(t.respondent_id, []).append(t)
    out_tasks = []
    for i, resp in enumerate(skeleton.respondents):
        rng = np.random.default_rng([seed, 29, i])
        z = rng.standard_normal(layout.n_draw_dims)
        beta, eta = realize_coefficients(spec, theta, z)
        for task in sorted(tasks_by_resp.get(resp.id, []), key=lambda t: t.index):
            try:
                V = assemble_utility(spec, theta, resp, task, beta, eta)
            except KeyError as err:
                raise BindingMismatch(
                    f"specification binds attribute {err} absent from the design") from None
            u = rng.random(len(V))
            chosen = int(gumbel_argmax(V, u)[0])
            out_tasks.append(ChoiceTask(respondent_id=task.respondent_id, index=task.index,
                                        alternatives=task.alternatives, chosen=chosen))
    return ChoiceDataset(respondents=list(skeleton.respondents), tasks=out_tasks,
                         provenance=skeleton.provenance + f" simulated seed={seed}")


def load_truth(source) -> tuple:
    """Read a truth file: {'spec': name-or-path, 'theta': {name: value}}.

    `source` may be a path or the name of a bundled truth file. Returns
    (spec, theta vector, payload dict).
    """
    try:
        ref = resources.files("mixlogit") / "specs" / f"{source}.json"
        text = ref.read_text(encoding="utf-8") if ref.is_file() else None
    except (TypeError, ValueError):
        text = None
    if text is None:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    payload = json.loads(text)
    spec_field = payload["spec"]
    try:
        spec = bundled_spec(spec_field)
    except FileNotFoundError:
        spec = parse_spec(spec_field)
    return spec, theta_from_dict(spec, payload["theta"]), payload


def describe_dataset(dataset: ChoiceDataset) -> pd.DataFrame:
    """Chosen-alternative attribute summaries (min/median/mean/max/sd/N),
    split by travel mode for the mode attributes."""
    frame = dataset.to_frame()
    chosen = frame[frame["chosen"] == 1]
    rows = []

    def add(label, series):
        s = series.dropna()
        if not len(s):
            return
        rows.append({"attribute": label, "min": s.min(), "median": s.median(),
                     "mean": s.mean(), "max": s.max(), "sd": s.std(ddof=1),
                     "n": int(len(s))})

    for col in ("h_cost", "h_rooms", "h_dwell", "h_neigh", "h_age",
                "h_services", "h_walk"):
        add(col, chosen[col])
    for mode in MODES:
        sub = chosen[chosen["alt_l"] == mode]
        for col in ("m_cost", "m_time"):
            add(f"{col}[mode={mode}]", sub[col])
        if mode != MODE_PT:
            add(f"m_cong[mode={mode}]", sub["m_cong"])
    return pd.DataFrame(rows)
