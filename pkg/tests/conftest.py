import numpy as np
import pytest

from mixlogit.data import Alternative, ChoiceDataset, ChoiceTask, Respondent
from mixlogit.modelspec import bundled_spec


def make_respondent(rid="r1", band=5, owner=True, license=True, female=False,
                    age="30-49", children=False, degree=True, ridehail=False):
    return Respondent(id=rid, income_band=band, is_owner=owner, has_license=license,
                      female=female, age_band=age, children=children, degree=degree,
                      ridehail=ridehail)


def make_alternative(k, l, rng=None, **over):
    """A fully-populated alternative; attribute values random if rng given."""
    rng = rng or np.random.default_rng(0)
    housing = {
        "h_cost": float(rng.uniform(150, 900)),
        "h_rooms": float(rng.integers(0, 3)),
        "h_dwell": float(rng.integers(1, 4)),
        "h_neigh": float(rng.integers(1, 4)),
        "h_age": float(rng.integers(1, 4)),
        "h_services": float(rng.integers(0, 3)),
    }
    housing["h_walk"] = float(rng.choice([10.0, 20.0, 30.0])) if housing["h_services"] > 0 else np.nan
    housing["h_sep"] = float(housing["h_dwell"] == 3)
    housing["h_neigh_single"] = float(housing["h_neigh"] == 1)
    housing["h_age15p"] = float(housing["h_age"] == 3)
    housing["h_services_any"] = float(housing["h_services"] > 0)
    housing["h_walk10"] = float(housing["h_services"] > 0 and housing["h_walk"] == 10)
    mode = {"m_time": float(rng.uniform(0.5, 2.0)), "m_cost": float(rng.uniform(3, 18))}
    if l in (1, 2):
        mode["m_cong"] = float(rng.choice([0.10, 0.35, 0.65]))
    housing.update({k_: v for k_, v in over.items() if k_.startswith("h_")})
    mode.update({k_: v for k_, v in over.items() if k_.startswith("m_")})
    return Alternative(k=k, l=l, housing=housing, mode=mode)


def make_dataset(n_resp=3, n_tasks=2, seed=0, chosen="random"):
    """Small dense synthetic dataset with random attributes."""
    rng = np.random.default_rng(seed)
    respondents, tasks = [], []
    for i in range(n_resp):
        r = make_respondent(
            rid=f"r{i}", band=int(rng.integers(1, 13)), owner=bool(rng.integers(0, 2)),
            license=bool(rng.random() > 0.1), female=bool(rng.integers(0, 2)),
            age=str(rng.choice(["18-29", "30-49", "50+"])),
            children=bool(rng.integers(0, 2)), degree=bool(rng.integers(0, 2)),
            ridehail=bool(rng.integers(0, 2)))
        respondents.append(r)
        modes = (1, 2, 3) if r.has_license else (2, 3)
        for t in range(1, n_tasks + 1):
            alts = tuple(make_alternative(k, l, rng) for k in (1, 2) for l in modes)
            pos = int(rng.integers(0, len(alts))) if chosen == "random" else 0
            tasks.append(ChoiceTask(respondent_id=r.id, index=t, alternatives=alts, chosen=pos))
    return ChoiceDataset(respondents=respondents, tasks=tasks, provenance="test fixture")


@pytest.fixture(scope="session")
def mmnl2_spec():
    return bundled_spec("paper_mmnl2")


@pytest.fixture(scope="session")
def cmnl_spec():
    return bundled_spec("paper_cmnl")
