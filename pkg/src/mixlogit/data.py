"""Panel choice data: ingestion, validation, income encoding.

The canonical input is a long-format CSV with one row per (respondent,
task, alternative). Column names are fixed:

    resp_id, task, alt_k, alt_l, available, chosen,
    h_cost, h_rooms, h_dwell, h_neigh, h_age, h_services, h_walk,
    m_time, m_cost, m_cong,
    income_band, owner, license, female, age_band, children, degree, ridehail

Housing categorical codes: h_dwell 1=unit 2=townhouse 3=separate house;
h_neigh 1=mostly single-family 2=mixed low-rise 3=high-rise; h_age
1=0-5y 2=5-15y 3=>15y; h_services 0=none 1=basic 2=basic+specialty;
h_walk in {10,20,30} minutes and empty when h_services=0. m_time is in
hours, m_cost in AUD per trip, m_cong a share in [0,1] and empty for
public transit rows. Derived binary attributes (h_sep, h_neigh_single,
h_age15p, h_services_any, h_walk10) are materialized at load time and
can be bound by model specifications alongside the raw columns.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    ChosenUnavailable,
    DanglingRespondent,
    DataError,
    MissingColumn,
    NonContiguousTask,
    UnknownBand,
)

MODE_CAR, MODE_SDC, MODE_PT = 1, 2, 3
MODES = (MODE_CAR, MODE_SDC, MODE_PT)
MODE_LABELS = {MODE_CAR: "car", MODE_SDC: "sdc", MODE_PT: "pt"}
CAR_MODES = (MODE_CAR, MODE_SDC)

AGE_BANDS = ("18-29", "30-49", "50+")

# Weekly household income bands (AUD/week). The survey instrument used
# twelve ordinal bands; the exact edges below are a documented convention
# chosen to nest the published four-group summary ([0,800), [800,1600),
# [1600,2500), [2500,+)). The open top band is top-coded to 1.3*4000.
INCOME_TOP_CODE = 5200.0
INCOME_BANDS = (
    (0.0, 200.0),
    (200.0, 400.0),
    (400.0, 600.0),
    (600.0, 800.0),
    (800.0, 1600.0),
    (1600.0, 1900.0),
    (1900.0, 2200.0),
    (2200.0, 2500.0),
    (2500.0, 3000.0),
    (3000.0, 3500.0),
    (3500.0, 4000.0),
    (4000.0, None),
)

RESPONDENT_COLUMNS = (
    "income_band", "owner", "license", "female", "age_band",
    "children", "degree", "ridehail",
)
ROW_COLUMNS = ("resp_id", "task", "alt_k", "alt_l", "available", "chosen")
HOUSING_COLUMNS = ("h_cost", "h_rooms", "h_dwell", "h_neigh", "h_age", "h_services", "h_walk")
MODE_COLUMNS = ("m_time", "m_cost", "m_cong")
ALL_COLUMNS = ROW_COLUMNS + HOUSING_COLUMNS + MODE_COLUMNS + RESPONDENT_COLUMNS

HOUSING_DERIVED = ("h_sep", "h_neigh_single", "h_age15p", "h_services_any", "h_walk10")
HOUSING_ATTRIBUTES = HOUSING_COLUMNS + HOUSING_DERIVED
MODE_ATTRIBUTES = MODE_COLUMNS


def band_midpoint(lo: float, hi: float | None) -> float:
    """Midpoint of a closed-below band; the open top band is top-coded."""
    if hi is None:
        return INCOME_TOP_CODE
    return (lo + hi) / 2.0


def encode_income(band: int) -> float:
    """Map a 1-based income band index to weekly AUD (band midpoint)."""
    if not isinstance(band, (int, np.integer)) or not 1 <= band <= len(INCOME_BANDS):
        raise UnknownBand(f"income band must be an integer in 1..{len(INCOME_BANDS)}, got {band!r}")
    lo, hi = INCOME_BANDS[band - 1]
    return band_midpoint(lo, hi)


@dataclass(frozen=True)
class Respondent:
    id: str
    income_band: int
    is_owner: bool
    has_license: bool
    female: bool
    age_band: str
    children: bool
    degree: bool
    ridehail: bool

    @property
    def weekly_income(self) -> float:
        return encode_income(self.income_band)

    def covariate(self, name: str) -> float:
        """Resolve a binary respondent covariate by token name."""
        table = {
            "owner": self.is_owner,
            "renter": not self.is_owner,
            "license": self.has_license,
            "female": self.female,
            "children": self.children,
            "degree": self.degree,
            "ridehail": self.ridehail,
            "age_18_29": self.age_band == "18-29",
            "age_50p": self.age_band == "50+",
        }
        if name not in table:
            raise KeyError(f"unknown respondent covariate {name!r}")
        return float(table[name])


@dataclass(frozen=True)
class Alternative:
    """One (housing option, travel mode) tuple of a choice task."""

    k: int
    l: int
    housing: dict  # attribute name -> float, raw and derived
    mode: dict     # m_time (h), m_cost (AUD), m_cong (share; car modes only)

    def attribute(self, name: str) -> float:
        if name.startswith("h_"):
            return float(self.housing[name])
        if name == "m_cong":
            return float(self.mode.get("m_cong", 0.0))
        return float(self.mode[name])


@dataclass(frozen=True)
class ChoiceTask:
    respondent_id: str
    index: int
    alternatives: tuple
    chosen: int | None  # position in `alternatives`; None for design skeletons


@dataclass
class ChoiceDataset:
    respondents: list
    tasks: list
    provenance: str = ""
    _by_resp: dict = field(default_factory=dict, repr=False, init=False, compare=False)

    def __post_init__(self):
        self._by_resp = {r.id: r for r in self.respondents}
        if len(self._by_resp) != len(self.respondents):
            raise DataError("duplicate respondent ids")
        for t in self.tasks:
            if t.respondent_id not in self._by_resp:
                raise DanglingRespondent(f"task references unknown respondent {t.respondent_id!r}")

    def respondent(self, rid: str) -> Respondent:
        return self._by_resp[rid]

    def tasks_of(self, rid: str) -> list:
        return [t for t in self.tasks if t.respondent_id == rid]

    @property
    def n_respondents(self) -> int:
        return len(self.respondents)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def to_frame(self) -> pd.DataFrame:
        """Canonical long-format frame (raw columns only, fixed row order)."""
        rows = []
        for t in self.tasks:
            r = self._by_resp[t.respondent_id]
            for pos, a in enumerate(t.alternatives):
                row = {
                    "resp_id": r.id, "task": t.index, "alt_k": a.k, "alt_l": a.l,
                    "available": 1,
                    "chosen": int(t.chosen == pos) if t.chosen is not None else 0,
                }
                for c in HOUSING_COLUMNS:
                    row[c] = a.housing.get(c, np.nan)
                row["m_time"] = a.mode["m_time"]
                row["m_cost"] = a.mode["m_cost"]
                row["m_cong"] = a.mode.get("m_cong", np.nan)
                row.update({
                    "income_band": r.income_band,
                    "owner": int(r.is_owner), "license": int(r.has_license),
                    "female": int(r.female), "age_band": r.age_band,
                    "children": int(r.children), "degree": int(r.degree),
                    "ridehail": int(r.ridehail),
                })
                rows.append(row)
        return pd.DataFrame(rows, columns=list(ALL_COLUMNS))

    def content_hash(self) -> str:
        """SHA-256 over the canonical CSV rendering; used as a compare guard."""
        csv = self.to_frame().to_csv(index=False, float_format="%.12g")
        return hashlib.sha256(csv.encode()).hexdigest()


def build_alternative_universe(respondent: Respondent) -> list:
    """(k, l) tuples available to a respondent, k-major l-minor order.

    Conventional car (mode 1) is withheld from respondents without a
    driving license.
    """
    modes = MODES if respondent.has_license else (MODE_SDC, MODE_PT)
    return [(k, l) for k in (1, 2) for l in modes]


def write_choice_csv(dataset: ChoiceDataset, path) -> None:
    dataset.to_frame().to_csv(path, index=False, float_format="%.12g")


def _derive_housing(attrs: dict) -> dict:
    out = dict(attrs)
    out["h_sep"] = float(attrs["h_dwell"] == 3)
    out["h_neigh_single"] = float(attrs["h_neigh"] == 1)
    out["h_age15p"] = float(attrs["h_age"] == 3)
    services_any = attrs["h_services"] > 0
    out["h_services_any"] = float(services_any)
    walk = attrs.get("h_walk")
    out["h_walk10"] = float(services_any and walk is not None and not np.isnan(walk) and walk == 10)
    return out


def _respondent_from_row(rid, row, rownum) -> Respondent:
    band = row["income_band"]
    age = str(row["age_band"])
    if age not in AGE_BANDS:
        raise DataError(f"age_band must be one of {AGE_BANDS}, got {age!r}", row=rownum)
    return Respondent(
        id=str(rid),
        income_band=int(band),
        is_owner=bool(int(row["owner"])),
        has_license=bool(int(row["license"])),
        female=bool(int(row["female"])),
        age_band=age,
        children=bool(int(row["children"])),
        degree=bool(int(row["degree"])),
        ridehail=bool(int(row["ridehail"])),
    )


def load_choice_data(path, schema: dict | None = None) -> ChoiceDataset:
    """Load and validate a long-format choice CSV.

    `schema` optionally maps canonical column names to the names used in
    the file. Raises MissingColumn, DanglingRespondent, NonContiguousTask
    or ChosenUnavailable; row numbers refer to 1-based data rows.
    """
    df = pd.read_csv(path)
    if schema:
        rename = {v: k for k, v in schema.items()}
        df = df.rename(columns=rename)
    for col in ALL_COLUMNS:
        if col not in df.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")

    df = df.reset_index(drop=True)
    df["_row"] = df.index + 1

    respondents: list = []
    tasks: list = []
    seen: dict = {}
    for rid, g in df.groupby("resp_id", sort=False):
        first = g.iloc[0]
        for col in RESPONDENT_COLUMNS:
            bad = g[g[col] != first[col]]
            if len(bad):
                raise DanglingRespondent(
                    f"respondent {rid!r} has inconsistent {col!r}", row=int(bad.iloc[0]["_row"]))
        try:
            resp = _respondent_from_row(rid, first, int(first["_row"]))
        except UnknownBand as e:
            raise DataError(str(e), row=int(first["_row"])) from e
        respondents.append(resp)
        seen[rid] = resp

        universe = build_alternative_universe(resp)
        task_ids = sorted(g["task"].unique())
        if task_ids != list(range(1, len(task_ids) + 1)):
            bad = g[~g["task"].isin(range(1, len(task_ids) + 1))]
            rownum = int((bad if len(bad) else g).iloc[0]["_row"])
            raise NonContiguousTask(
                f"respondent {rid!r} tasks are not contiguous 1..T", row=rownum)

        for tid in task_ids:
            tg = g[g["task"] == tid]
            chosen_rows = tg[tg["chosen"] == 1]
            for _, r in chosen_rows.iterrows():
                if not int(r["available"]):
                    raise ChosenUnavailable(
                        f"respondent {rid!r} task {tid}: chosen alternative is unavailable",
                        row=int(r["_row"]))
            avail = tg[tg["available"] == 1]
            pairs = list(zip(avail["alt_k"].astype(int), avail["alt_l"].astype(int)))
            if sorted(pairs) != sorted(universe):
                raise DataError(
                    f"respondent {rid!r} task {tid}: available set {sorted(pairs)} does not "
                    f"match the license-implied universe {universe}", row=int(tg.iloc[0]["_row"]))
            if len(chosen_rows) != 1:
                raise DataError(
                    f"respondent {rid!r} task {tid}: expected exactly one chosen row, "
                    f"found {len(chosen_rows)}", row=int(tg.iloc[0]["_row"]))

            alts = []
            chosen_pos = None
            avail = avail.sort_values(["alt_k", "alt_l"])
            for pos, (_, r) in enumerate(avail.iterrows()):
                k, l = int(r["alt_k"]), int(r["alt_l"])
                housing = {c: float(r[c]) for c in HOUSING_COLUMNS}
                if housing["h_services"] > 0 and np.isnan(housing["h_walk"]):
                    raise DataError(
                        f"h_walk required when local services are present", row=int(r["_row"]))
                mode = {"m_time": float(r["m_time"]), "m_cost": float(r["m_cost"])}
                cong = float(r["m_cong"])
                if l in CAR_MODES:
                    if np.isnan(cong):
                        raise DataError("m_cong required for car modes", row=int(r["_row"]))
                    mode["m_cong"] = cong
                elif not np.isnan(cong):
                    raise DataError("m_cong must be empty for public transit rows",
                                    row=int(r["_row"]))
                alts.append(Alternative(k=k, l=l, housing=_derive_housing(housing), mode=mode))
                if int(r["chosen"]) == 1:
                    chosen_pos = pos
            tasks.append(ChoiceTask(respondent_id=str(rid), index=int(tid),
                                    alternatives=tuple(alts), chosen=chosen_pos))

    if not respondents:
        raise DataError("no respondents found")
    return ChoiceDataset(respondents=respondents, tasks=tasks, provenance=f"loaded from {path}")
