"""Declarative utility specifications for the mixed logit family.

A model spec lists coefficient declarations (attribute binding, fixed or
random kind, transform, interactions), mode-nest error components,
correlation blocks over random coefficients, and mode-specific intercept
shifters. Four model classes are supported:

    CMNL   conditional logit: fixed coefficients only
    ECMNL  adds heteroskedastic normal error components per mode nest
    MMNL1  adds random coefficients with diagonal covariance
    MMNL2  adds lower-triangular (Cholesky) correlation blocks

Spec file grammar (line-oriented, '#' comments)::

    model = MMNL2

    [coefficients]
    # name | attribute | applies_to | kind | transform [| option ...]
    travel_cost | m_cost | mode:*   | fixed  | negexp
    time_car    | m_time | mode:1   | random | identity | block=ttime
    congestion  | m_cong | mode:1,2 | random | exp      | interact=negate

    [error_components]
    # mode | name
    1 | ec_car

    [blocks]
    ttime = time_car, time_sdc, time_pt

    [intercepts]
    # mode | covariates (a baseline constant is always included)
    2 | female, age_18_29, age_50p, children, degree, ridehail

Transforms map the underlying normal parameter a to the coefficient:
identity -> a, exp -> exp(a), negexp -> -exp(a) (strictly negative).
Interaction tokens scale the bound attribute per respondent: `negate`
(multiply by -1), `income10` (multiply by 10/weekly income), `owner` /
`renter` (tenure gate), or any binary respondent covariate name.

Free parameters are ordered: fixed coefficients (declaration order),
intercept parameters (by mode; baseline then covariates), random means
(declaration order), scales (non-block sigmas in declaration order, then
block Cholesky entries row-major), error-component scales.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .data import MODE_ATTRIBUTES, MODE_LABELS, MODES, HOUSING_ATTRIBUTES
from .errors import (
    BlockMemberNotRandom,
    DimensionMismatch,
    DuplicateBinding,
    SpecSyntaxError,
    UnknownAttribute,
)

TRANSFORMS = ("identity", "exp", "negexp")
MODEL_CLASSES = ("CMNL", "ECMNL", "MMNL1", "MMNL2")
INTERACTION_TOKENS = (
    "negate", "income10", "owner", "renter", "female",
    "age_18_29", "age_50p", "children", "degree", "ridehail", "license",
)

# transform codes shared with the likelihood kernel
TF_CODES = {"identity": 0, "exp": 1, "negexp": 2}

_EXP_SATURATION = 709.0  # exp() overflows float64 just above this


@dataclass(frozen=True)
class CoefficientDecl:
    name: str
    attribute: str
    modes: tuple | None  # None = housing attribute; else modes covered
    kind: str            # "fixed" | "random"
    transform: str
    interactions: tuple = ()
    block: str | None = None

    @property
    def is_housing(self) -> bool:
        return self.modes is None


@dataclass(frozen=True)
class ErrorComponentDecl:
    mode: int
    name: str


@dataclass(frozen=True)
class CorrelationBlock:
    name: str
    members: tuple


@dataclass(frozen=True)
class InterceptDecl:
    mode: int
    covariates: tuple


@dataclass(frozen=True)
class ModelSpec:
    model_class: str
    coefficients: tuple
    error_components: tuple = ()
    blocks: tuple = ()
    intercepts: tuple = ()

    def coefficient(self, name: str) -> CoefficientDecl:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)


def transform_param(transform: str, alpha: float) -> float:
    """Apply a coefficient transform; exp overflow saturates with a warning."""
    if transform == "identity":
        return float(alpha)
    if transform not in ("exp", "negexp"):
        raise ValueError(f"unknown transform {transform!r}")
    if alpha > _EXP_SATURATION:
        warnings.warn(f"transform {transform}({alpha:g}) saturated to largest finite value",
                      RuntimeWarning, stacklevel=2)
        value = np.finfo(float).max
    else:
        value = float(np.exp(alpha))
    return -value if transform == "negexp" else value


def transform_deriv(transform: str, alpha: float) -> float:
    if transform == "identity":
        return 1.0
    return transform_param(transform, alpha)


def _parse_applies(text: str):
    text = text.strip()
    if text == "housing":
        return None
    if text.startswith("mode:"):
        spec = text[5:].strip()
        if spec == "*":
            return tuple(MODES)
        try:
            modes = tuple(sorted(int(m) for m in spec.split(",")))
        except ValueError:
            raise SpecSyntaxError(f"bad applies_to {text!r}")
        if not modes or any(m not in MODES for m in modes):
            raise SpecSyntaxError(f"bad applies_to {text!r}")
        return modes
    raise SpecSyntaxError(f"applies_to must be 'housing' or 'mode:...', got {text!r}")


def _parse_coefficient(line: str, lineno: int) -> CoefficientDecl:
    parts = [p.strip() for p in line.split("|")]
    if len(parts) < 5:
        raise SpecSyntaxError(f"line {lineno}: coefficient needs at least 5 fields")
    name, attribute, applies, kind, transform = parts[:5]
    interactions: tuple = ()
    block = None
    for opt in parts[5:]:
        if not opt:
            continue
        if "=" not in opt:
            raise SpecSyntaxError(f"line {lineno}: bad option {opt!r}")
        key, val = (s.strip() for s in opt.split("=", 1))
        if key == "interact":
            interactions = tuple(s.strip() for s in val.split(",") if s.strip())
        elif key == "block":
            block = val
        else:
            raise SpecSyntaxError(f"line {lineno}: unknown option key {key!r}")
    if kind not in ("fixed", "random"):
        raise SpecSyntaxError(f"line {lineno}: kind must be fixed or random, got {kind!r}")
    if transform not in TRANSFORMS:
        raise SpecSyntaxError(f"line {lineno}: unknown transform {transform!r}")
    for tok in interactions:
        if tok not in INTERACTION_TOKENS:
            raise SpecSyntaxError(f"line {lineno}: unknown interaction token {tok!r}")
    return CoefficientDecl(name=name, attribute=attribute, modes=_parse_applies(applies),
                           kind=kind, transform=transform, interactions=interactions,
                           block=block)


def parse_spec_text(text: str, origin: str = "<string>") -> ModelSpec:
    model_class = None
    coefficients: list = []
    components: list = []
    blocks: list = []
    intercepts: list = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("coefficients", "error_components", "blocks", "intercepts"):
                raise SpecSyntaxError(f"{origin}:{lineno}: unknown section [{section}]")
            continue
        if section is None:
            if "=" not in line:
                raise SpecSyntaxError(f"{origin}:{lineno}: expected 'model = <class>'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key != "model":
                raise SpecSyntaxError(f"{origin}:{lineno}: unknown key {key!r}")
            if val not in MODEL_CLASSES:
                raise SpecSyntaxError(f"{origin}:{lineno}: unknown model class {val!r}")
            model_class = val
        elif section == "coefficients":
            coefficients.append(_parse_coefficient(line, lineno))
        elif section == "error_components":
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 2:
                raise SpecSyntaxError(f"{origin}:{lineno}: error component needs 'mode | name'")
            components.append(ErrorComponentDecl(mode=int(parts[0]), name=parts[1]))
        elif section == "blocks":
            if "=" not in line:
                raise SpecSyntaxError(f"{origin}:{lineno}: block needs 'name = members'")
            name, members = (s.strip() for s in line.split("=", 1))
            blocks.append(CorrelationBlock(
                name=name, members=tuple(s.strip() for s in members.split(",") if s.strip())))
        elif section == "intercepts":
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 2:
                raise SpecSyntaxError(f"{origin}:{lineno}: intercept needs 'mode | covariates'")
            covs = tuple(s.strip() for s in parts[1].split(",") if s.strip())
            intercepts.append(InterceptDecl(mode=int(parts[0]), covariates=covs))

    if model_class is None:
        raise SpecSyntaxError(f"{origin}: missing 'model = <class>' header")
    spec = ModelSpec(model_class=model_class, coefficients=tuple(coefficients),
                     error_components=tuple(components), blocks=tuple(blocks),
                     intercepts=tuple(intercepts))
    validate_spec(spec, origin=origin)
    return spec


def parse_spec(path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec_text(fh.read(), origin=str(path))


def bundled_spec_text(name: str) -> str:
    ref = resources.files("mixlogit") / "specs" / f"{name}.spec"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled spec named {name!r}")
    return ref.read_text(encoding="utf-8")


def bundled_spec(name: str) -> ModelSpec:
    """Load one of the bundled reference specs (paper_cmnl .. paper_mmnl2)."""
    return parse_spec_text(bundled_spec_text(name), origin=f"bundled:{name}")


def validate_spec(spec: ModelSpec, origin: str = "<spec>") -> None:
    if not spec.coefficients:
        raise SpecSyntaxError(f"{origin}: at least one coefficient is required")
    names = [c.name for c in spec.coefficients]
    if len(set(names)) != len(names):
        raise SpecSyntaxError(f"{origin}: duplicate coefficient names")

    for c in spec.coefficients:
        known = HOUSING_ATTRIBUTES if c.is_housing else MODE_ATTRIBUTES
        if c.attribute not in known:
            raise UnknownAttribute(f"{origin}: {c.name}: unknown attribute {c.attribute!r} "
                                   f"for {'housing' if c.is_housing else 'mode'} binding")
        if c.is_housing != c.attribute.startswith("h_"):
            raise UnknownAttribute(f"{origin}: {c.name}: attribute prefix does not match binding")

    # one coefficient per (attribute, mode context); tenure-gated pairs excepted
    for i, a in enumerate(spec.coefficients):
        for b in spec.coefficients[i + 1:]:
            if a.attribute != b.attribute:
                continue
            if a.is_housing != b.is_housing:
                continue
            if not a.is_housing and not set(a.modes) & set(b.modes):
                continue
            tenures = {t for c in (a, b) for t in c.interactions if t in ("owner", "renter")}
            if tenures == {"owner", "renter"}:
                continue
            raise DuplicateBinding(f"{origin}: {a.name!r} and {b.name!r} both bind "
                                   f"{a.attribute!r} in the same context")

    random_names = {c.name for c in spec.coefficients if c.kind == "random"}
    block_names = [b.name for b in spec.blocks]
    if len(set(block_names)) != len(block_names):
        raise SpecSyntaxError(f"{origin}: duplicate block names")
    seen_members: set = set()
    for b in spec.blocks:
        if not b.members:
            raise SpecSyntaxError(f"{origin}: block {b.name!r} has no members")
        for m in b.members:
            if m not in names:
                raise SpecSyntaxError(f"{origin}: block {b.name!r} member {m!r} not declared")
            if m not in random_names:
                raise BlockMemberNotRandom(f"{origin}: block {b.name!r} member {m!r} is not random")
            if m in seen_members:
                raise SpecSyntaxError(f"{origin}: coefficient {m!r} appears in two blocks")
            seen_members.add(m)
    for c in spec.coefficients:
        if c.block is not None:
            if c.block not in block_names:
                raise SpecSyntaxError(f"{origin}: {c.name}: unknown block {c.block!r}")
            if c.name not in {m for b in spec.blocks for m in b.members}:
                raise SpecSyntaxError(f"{origin}: {c.name}: tagged block={c.block} but not listed "
                                      "among its members")

    modes_seen = set()
    for e in spec.error_components:
        if e.mode not in MODES:
            raise SpecSyntaxError(f"{origin}: error component mode {e.mode} invalid")
        if e.mode in modes_seen:
            raise SpecSyntaxError(f"{origin}: duplicate error component for mode {e.mode}")
        modes_seen.add(e.mode)

    icpt_modes = set()
    for icpt in spec.intercepts:
        if icpt.mode not in MODES:
            raise SpecSyntaxError(f"{origin}: intercept mode {icpt.mode} invalid")
        if icpt.mode == MODES[0]:
            raise SpecSyntaxError(f"{origin}: mode {MODES[0]} is the intercept reference")
        if icpt.mode in icpt_modes:
            raise SpecSyntaxError(f"{origin}: duplicate intercept declaration for mode {icpt.mode}")
        icpt_modes.add(icpt.mode)
        for cov in icpt.covariates:
            if cov not in INTERACTION_TOKENS or cov in ("negate", "income10"):
                raise SpecSyntaxError(f"{origin}: intercept covariate {cov!r} unknown")

    cls = spec.model_class
    has_random = bool(random_names)
    if cls == "CMNL" and (has_random or spec.error_components or spec.blocks):
        raise SpecSyntaxError(f"{origin}: CMNL admits fixed coefficients only")
    if cls == "ECMNL" and (has_random or spec.blocks or not spec.error_components):
        raise SpecSyntaxError(f"{origin}: ECMNL requires error components and no random coefficients")
    if cls == "MMNL1" and (not has_random or spec.blocks):
        raise SpecSyntaxError(f"{origin}: MMNL1 requires random coefficients and no blocks")
    if cls == "MMNL2" and not spec.blocks:
        raise SpecSyntaxError(f"{origin}: MMNL2 requires at least one correlation block")


class ParamLayout:
    """Mapping between the free parameter vector and model structure.

    Attributes of interest: `names` (stable parameter names), slices
    `sl_fix`, `sl_icpt`, `sl_mu`, `sl_scale`, `sl_tau`, and
    `scale_entries` as (random index, draw column) pairs matching the
    scale section order.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.fixed_decls = tuple(c for c in spec.coefficients if c.kind == "fixed")
        self.random_decls = tuple(c for c in spec.coefficients if c.kind == "random")
        self.n_rnd = len(self.random_decls)
        self.n_ec = len(spec.error_components)
        self.n_draw_dims = self.n_rnd + self.n_ec
        rnd_index = {c.name: i for i, c in enumerate(self.random_decls)}

        names = [c.name for c in self.fixed_decls]
        self.intercept_params: list = []  # (mode, covariate or None)
        for icpt in sorted(spec.intercepts, key=lambda d: d.mode):
            label = MODE_LABELS[icpt.mode]
            names.append(f"asc_{label}")
            self.intercept_params.append((icpt.mode, None))
            for cov in icpt.covariates:
                names.append(f"asc_{label}:{cov}")
                self.intercept_params.append((icpt.mode, cov))
        self.n_fix_attr = len(self.fixed_decls)
        self.n_icpt = len(self.intercept_params)
        self.n_fix = self.n_fix_attr + self.n_icpt

        names += [f"{c.name}:mu" for c in self.random_decls]

        blocked = {m for b in spec.blocks for m in b.members}
        self.scale_entries: list = []
        for i, c in enumerate(self.random_decls):
            if c.name not in blocked:
                self.scale_entries.append((i, i))
                names.append(f"{c.name}:sigma")
        self.block_slices: dict = {}
        for b in spec.blocks:
            start = len(self.scale_entries)
            idx = [rnd_index[m] for m in b.members]
            for r in range(len(idx)):
                for cc in range(r + 1):
                    self.scale_entries.append((idx[r], idx[cc]))
                    names.append(f"{b.name}:L{r + 1}{cc + 1}")
            self.block_slices[b.name] = slice(start, len(self.scale_entries))
        self.n_scale = len(self.scale_entries)

        names += [f"{e.name}:tau" for e in spec.error_components]
        self.names = tuple(names)
        self.n_params = len(names)

        o = 0
        self.sl_fix = slice(o, o + self.n_fix); o += self.n_fix
        self.sl_mu = slice(o, o + self.n_rnd); o += self.n_rnd
        self.sl_scale = slice(o, o + self.n_scale); o += self.n_scale
        self.sl_tau = slice(o, o + self.n_ec)

    def unpack(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatch(
                f"theta has shape {theta.shape}, expected ({self.n_params},)")
        return (theta[self.sl_fix], theta[self.sl_mu],
                theta[self.sl_scale], theta[self.sl_tau])

    def scale_matrix(self, scale_vals: np.ndarray) -> np.ndarray:
        """Lower-triangular map S with alpha = mu + S z (draw columns align
        with random-coefficient declaration order)."""
        S = np.zeros((self.n_rnd, self.n_rnd))
        for (r, c), v in zip(self.scale_entries, scale_vals):
            S[r, c] = v
        return S

    def block_cholesky(self, theta: np.ndarray, block: str) -> np.ndarray:
        """Dense lower-triangular factor of one correlation block."""
        vals = np.asarray(theta, dtype=float)[self.sl_scale][self.block_slices[block]]
        k = int((np.sqrt(8 * len(vals) + 1) - 1) / 2)
        L = np.zeros((k, k))
        L[np.tril_indices(k)] = vals
        return L

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def count_parameters(spec: ModelSpec) -> int:
    """Number of free real parameters of the specification."""
    return ParamLayout(spec).n_params


def parameter_names(spec: ModelSpec) -> tuple:
    return ParamLayout(spec).names


def theta_from_dict(spec: ModelSpec, values: dict) -> np.ndarray:
    layout = ParamLayout(spec)
    missing = [n for n in layout.names if n not in values]
    if missing:
        raise DimensionMismatch(f"missing parameter values for {missing}")
    extra = [n for n in values if n not in layout.names]
    if extra:
        raise DimensionMismatch(f"unknown parameter names {extra}")
    return np.array([float(values[n]) for n in layout.names])


def realize_coefficients(spec: ModelSpec, theta, z):
    """Realize one draw: coefficients in declaration order plus components.

    `z` holds standard-normal draws, one per random coefficient followed
    by one per error component. Returns (beta, eta) where beta[i] is the
    transformed coefficient of spec.coefficients[i] and eta[j] the error
    component of spec.error_components[j].
    """
    layout = ParamLayout(spec)
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.n_draw_dims,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({layout.n_draw_dims},)")
    gamma, mu, scale_vals, tau = layout.unpack(np.asarray(theta, dtype=float))
    S = layout.scale_matrix(scale_vals)
    alpha_rnd = mu + S @ z[:layout.n_rnd] if layout.n_rnd else np.empty(0)
    beta = np.empty(len(spec.coefficients))
    i_fix = i_rnd = 0
    for i, c in enumerate(spec.coefficients):
        if c.kind == "fixed":
            beta[i] = transform_param(c.transform, gamma[i_fix]); i_fix += 1
        else:
            beta[i] = transform_param(c.transform, alpha_rnd[i_rnd]); i_rnd += 1
    eta = tau * z[layout.n_rnd:]
    return beta, eta


def normalize_cholesky(L: np.ndarray) -> np.ndarray:
    """Flip column signs so diagonal entries are non-negative (L L^T invariant)."""
    L = np.array(L, dtype=float)
    for j in range(L.shape[1]):
        if L[j, j] < 0:
            L[:, j] = -L[:, j]
    return L


def derive_class(spec: ModelSpec, target: str) -> ModelSpec:
    """Project a spec onto a simpler model class of the ladder."""
    if target not in MODEL_CLASSES:
        raise ValueError(f"unknown model class {target!r}")
    coefficients = spec.coefficients
    components = spec.error_components
    blocks = spec.blocks
    if target in ("CMNL", "ECMNL"):
        coefficients = tuple(replace(c, kind="fixed", block=None) for c in coefficients)
        blocks = ()
        if target == "CMNL":
            components = ()
    elif target == "MMNL1":
        coefficients = tuple(replace(c, block=None) for c in coefficients)
        blocks = ()
    out = ModelSpec(model_class=target, coefficients=coefficients,
                    error_components=components, blocks=blocks, intercepts=spec.intercepts)
    validate_spec(out, origin=f"derived:{target}")
    return out
