"""Maximum simulated likelihood estimation.

The optimizer is BFGS with an Armijo backtracking line search
(c=1e-4, shrink 0.5) on the negative simulated log-likelihood; draws
stay fixed across iterations so the objective is smooth and
deterministic. Convergence is declared when the gradient infinity norm
drops to `tol_grad` or the relative objective improvement falls below
`tol_rel`, and the result records which criterion fired.

Standard errors come from the inverse negative Hessian. Two Hessian
routes exist: `hessian_from_gradient` (central differences of the
analytic gradient, the default, 2P evaluations) and `numerical_hessian`
(nested central differences of objective values only, useful as a
cross-check and for small problems). Derived quantities get
percentile confidence intervals via Krinsky-Robb simulation from
N(theta_hat, Cov).
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ChoiceDataset
from .draws import DrawTensor, allocate_draws
from .errors import (
    CovNotPSD,
    LineSearchFailure,
    MaxIterations,
    NonFiniteEntry,
    NonFiniteObjective,
    NotNegativeDefinite,
)
from .likelihood import Evaluator
from .modelspec import ModelSpec, ParamLayout, derive_class
from . import __version__


@dataclass
class EstimateOptions:
    max_iter: int = 500
    tol_grad: float = 1e-6
    tol_rel: float = 1e-10
    armijo_c: float = 1e-4
    shrink: float = 0.5
    start: str | np.ndarray = "auto"   # "auto" (warm-start ladder), "zeros", or a vector
    se_method: str = "grad-diff"       # "grad-diff" | "ll-diff" | "none"
    restarts: int = 0                  # extra jittered starts; best final LL wins
    restart_jitter: float = 0.5
    verbose: bool = False


@dataclass
class EstimationResult:
    spec: ModelSpec
    names: tuple
    theta: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    criterion: str                     # "gradient" | "objective" | error name
    covariance: np.ndarray | None
    n_draws: int
    seed: int | None
    underflows: int = 0
    n_respondents: int = 0
    n_tasks: int = 0
    data_hash: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def parameter(self, name: str) -> float:
        return float(self.theta[self.names.index(name)])

    def to_dict(self) -> dict:
        se = self.std_errors
        z = p = None
        if se is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                zv = self.theta / se
            from scipy.stats import norm
            z = zv.tolist()
            p = (2 * norm.sf(np.abs(zv))).tolist()
        return {
            "model_class": self.spec.model_class,
            "names": list(self.names),
            "estimates": self.theta.tolist(),
            "std_errors": None if se is None else se.tolist(),
            "z_values": z,
            "p_values": p,
            "loglik": self.loglik,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "convergence": {
                "converged": self.converged,
                "criterion": self.criterion,
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
                "underflows": self.underflows,
            },
            "simulation": {"n_draws": self.n_draws, "seed": self.seed},
            "data": {
                "n_respondents": self.n_respondents,
                "n_tasks": self.n_tasks,
                "hash": self.data_hash,
            },
            "version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, payload: dict, spec: ModelSpec) -> "EstimationResult":
        cov = payload.get("covariance")
        conv = payload["convergence"]
        return cls(
            spec=spec,
            names=tuple(payload["names"]),
            theta=np.array(payload["estimates"], dtype=float),
            loglik=float(payload["loglik"]),
            grad_norm=float(conv["grad_norm"]),
            iterations=int(conv["iterations"]),
            converged=bool(conv["converged"]),
            criterion=str(conv["criterion"]),
            covariance=None if cov is None else np.array(cov, dtype=float),
            n_draws=int(payload["simulation"]["n_draws"]),
            seed=payload["simulation"]["seed"],
            underflows=int(conv.get("underflows", 0)),
            n_respondents=int(payload["data"]["n_respondents"]),
            n_tasks=int(payload["data"]["n_tasks"]),
            data_hash=payload["data"]["hash"],
        )

    @classmethod
    def from_parameters(cls, spec: ModelSpec, theta, covariance=None,
                        loglik: float = float("nan")) -> "EstimationResult":
        """Wrap externally supplied parameter values (no optimization)."""
        layout = ParamLayout(spec)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (layout.n_params,):
            raise ValueError(f"theta must have {layout.n_params} entries")
        return cls(spec=spec, names=layout.names, theta=theta, loglik=loglik,
                   grad_norm=float("nan"), iterations=0, converged=True,
                   criterion="supplied", covariance=covariance, n_draws=0, seed=None)


def _bfgs_maximize(fun_grad, fun, x0, opts: EstimateOptions):
    """Maximize via BFGS + Armijo backtracking on the negated objective.

    fun_grad(x) -> (f, g) of the objective to MINIMIZE; fun(x) -> f.
    Returns (x, f, g, iterations, criterion).
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective("objective not finite at the starting point",
                                 last=(x, -f))
    n = x.size
    H = np.eye(n)
    first = True
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(g)) <= opts.tol_grad:
            return x, f, g, it - 1, "gradient"
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0.0:  # H lost positive definiteness; reset
            H = np.eye(n)
            d = -g
            slope = float(g @ d)
        step = 1.0
        f_new = g_new = None
        while True:
            x_new = x + step * d
            if step == 1.0:
                # optimistic: the unit step is usually accepted, so fetch
                # the gradient in the same kernel pass
                f_try, g_try = fun_grad(x_new)
            else:
                f_try, g_try = fun(x_new), None
            if np.isfinite(f_try) and f_try <= f + opts.armijo_c * step * slope:
                f_new, g_new = f_try, g_try
                break
            step *= opts.shrink
            if step < 1e-14:
                raise LineSearchFailure(
                    f"line search failed at iteration {it}", last=(x, -f))
        if g_new is None:
            f_new, g_new = fun_grad(x_new)
        s = x_new - x
        y = g_new - g
        improvement = f - f_new
        x, f_prev, f, g = x_new, f, f_new, g_new
        if improvement <= opts.tol_rel * max(1.0, abs(f_prev)):
            return x, f, g, it, "objective"
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H *= sy / float(y @ y)
                first = False
            rho = 1.0 / sy
            Hy = H @ y
            H -= rho * (np.outer(s, Hy) + np.outer(Hy, s))
            H += rho * rho * float(y @ Hy) * np.outer(s, s) + rho * np.outer(s, s)
    raise MaxIterations(f"no convergence in {opts.max_iter} iterations", last=(x, -f))


def starting_values(spec: ModelSpec, dataset: ChoiceDataset,
                    opts: EstimateOptions | None = None) -> np.ndarray:
    """Warm-start ladder: a conditional-logit fit seeds the fixed part and
    the means; scales and component spreads start at 0.1, Cholesky
    off-diagonals at zero."""
    opts = opts or EstimateOptions()
    layout = ParamLayout(spec)
    theta0 = np.zeros(layout.n_params)
    if spec.model_class == "CMNL":
        return theta0
    cmnl = derive_class(spec, "CMNL")
    sub = EstimateOptions(max_iter=opts.max_iter, tol_grad=max(opts.tol_grad, 1e-5),
                          tol_rel=opts.tol_rel, start="zeros", se_method="none",
                          verbose=opts.verbose)
    base = estimate(cmnl, dataset, draws=None, options=sub)
    cl = ParamLayout(cmnl)
    by_name = dict(zip(cl.names, base.theta))
    # exp-family coefficients flatten out for very negative arguments
    # (derivative ~ exp(gamma)); clamp seeds away from that dead zone
    transform_of = {c.name: c.transform for c in spec.coefficients}

    def seed_value(name, value):
        if transform_of.get(name, "identity") != "identity":
            return float(np.clip(value, -3.0, 3.0))
        return value

    for i, name in enumerate(layout.names):
        if name in by_name:
            theta0[i] = seed_value(name, by_name[name])
    for c in layout.random_decls:
        theta0[layout.index_of(f"{c.name}:mu")] = seed_value(c.name, by_name[c.name])
    scale0 = np.zeros(layout.n_scale)
    for q, (r, c) in enumerate(layout.scale_entries):
        if r == c:
            scale0[q] = 0.1
    theta0[layout.sl_scale] = scale0
    theta0[layout.sl_tau] = 0.1
    return theta0


def estimate(spec: ModelSpec, dataset: ChoiceDataset, draws: DrawTensor | None = None,
             options: EstimateOptions | None = None, seed: int | None = None) -> EstimationResult:
    """Fit a specification by maximum simulated likelihood.

    `draws` may be omitted for CMNL (no mixing) or to have a default
    tensor allocated from `seed`. Raises MaxIterations, LineSearchFailure
    or NonFiniteObjective on optimizer failure (the exception carries the
    last iterate).
    """
    opts = options or EstimateOptions()
    layout = ParamLayout(spec)
    if layout.n_draw_dims == 0:
        draws = None
    elif draws is None:
        draws = allocate_draws(spec, dataset.n_respondents, seed=seed or 0)
    evaluator = Evaluator(spec, dataset)
    n_eval = [0]
    underflows = [0]

    def fun_grad(x):
        n_eval[0] += 1
        rep = evaluator.evaluate(x, draws, want_grad=True)
        underflows[0] = rep.underflows
        return -rep.total, -rep.gradient

    def fun(x):
        n_eval[0] += 1
        rep = evaluator.evaluate(x, draws, want_grad=False)
        return -rep.total

    if isinstance(opts.start, str):
        if opts.start == "zeros":
            x0 = np.zeros(layout.n_params)
        elif opts.start == "auto":
            x0 = starting_values(spec, dataset, opts)
        else:
            raise ValueError(f"unknown start strategy {opts.start!r}")
    else:
        x0 = np.asarray(opts.start, dtype=float)

    starts = [x0]
    if opts.restarts:
        rng = np.random.default_rng(seed or 0)
        starts += [x0 + opts.restart_jitter * rng.standard_normal(x0.size)
                   for _ in range(opts.restarts)]

    best = None
    for x_start in starts:
        t0 = time.perf_counter()
        x, f, g, iters, criterion = _bfgs_maximize(fun_grad, fun, x_start, opts)
        elapsed = time.perf_counter() - t0
        if best is None or -f > best[1]:
            best = (x, -f, g, iters, criterion, elapsed)
    x, ll, g, iters, criterion, elapsed = best

    cov = None
    if opts.se_method != "none":
        if opts.se_method == "grad-diff":
            hess = hessian_from_gradient(evaluator, draws, x)
        elif opts.se_method == "ll-diff":
            hess = numerical_hessian(spec, dataset, draws, x)
        else:
            raise ValueError(f"unknown se_method {opts.se_method!r}")
        try:
            cov = covariance(hess)
        except NotNegativeDefinite as err:
            warnings.warn(f"covariance unavailable: {err}", RuntimeWarning)
            cov = None

    return EstimationResult(
        spec=spec, names=layout.names, theta=x, loglik=ll,
        grad_norm=float(np.max(np.abs(g))), iterations=iters,
        converged=True, criterion=criterion, covariance=cov,
        n_draws=draws.n_draws if draws is not None else 1,
        seed=draws.seed if draws is not None else seed,
        underflows=underflows[0],
        n_respondents=dataset.n_respondents, n_tasks=dataset.n_tasks,
        data_hash=dataset.content_hash(),
        extra={"evaluations": n_eval[0], "seconds": elapsed},
    )


def _fd_steps(theta: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.maximum(1.0, np.abs(theta))


def hessian_from_gradient(evaluator: Evaluator, draws: DrawTensor | None,
                          theta: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_steps(theta, step)
    n = theta.size
    H = np.zeros((n, n))
    for i in range(n):
        up, dn = theta.copy(), theta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        gu = evaluator.evaluate(up, draws, want_grad=True).gradient
        gd = evaluator.evaluate(dn, draws, want_grad=True).gradient
        H[:, i] = (gu - gd) / (2 * h[i])
    if not np.all(np.isfinite(H)):
        raise NonFiniteEntry("non-finite entry in the numerical Hessian")
    return (H + H.T) / 2.0


def numerical_hessian(spec: ModelSpec, dataset: ChoiceDataset, draws: DrawTensor | None,
                      theta: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian from objective values only.

    Cost grows quadratically in the parameter count; intended for small
    problems and as an independent cross-check of
    `hessian_from_gradient`.
    """
    evaluator = Evaluator(spec, dataset)

    def f(x):
        return evaluator.evaluate(x, draws, want_grad=False).total

    return hessian_fd_values(f, np.asarray(theta, dtype=float), step)


def hessian_fd_values(f, theta: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Value-only central-difference Hessian of a callable, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_steps(theta, step)
    n = theta.size
    H = np.zeros((n, n))
    f0 = f(theta)
    for i in range(n):
        up, dn = theta.copy(), theta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        H[i, i] = (f(up) - 2.0 * f0 + f(dn)) / (h[i] * h[i])
        for j in range(i + 1, n):
            pp, pm, mp, mm = theta.copy(), theta.copy(), theta.copy(), theta.copy()
            pp[[i, j]] += [h[i], h[j]]
            pm[i] += h[i]; pm[j] -= h[j]
            mp[i] -= h[i]; mp[j] += h[j]
            mm[[i, j]] -= [h[i], h[j]]
            H[i, j] = H[j, i] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        raise NonFiniteEntry("non-finite entry in the numerical Hessian")
    return (H + H.T) / 2.0


def covariance(hessian: np.ndarray) -> np.ndarray:
    """Parameter covariance as the inverse of the negative Hessian."""
    neg = -np.asarray(hessian, dtype=float)
    try:
        np.linalg.cholesky(neg)
    except np.linalg.LinAlgError:
        raise NotNegativeDefinite(
            "Hessian is not negative definite; a parameter may sit on a "
            "boundary or be unidentified") from None
    return np.linalg.inv(neg)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    eigval, eigvec = np.linalg.eigh((cov + cov.T) / 2.0)
    floor = -1e-10 * max(1.0, float(np.max(np.abs(eigval))))
    if np.any(eigval < floor):
        raise CovNotPSD(f"covariance has negative eigenvalue {eigval.min():.3e}")
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


@dataclass
class KrSample:
    n_draws: int
    parameter_draws: np.ndarray
    derived: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def krinsky_robb(result: EstimationResult, g, n_draws: int = 10000,
                 seed: int = 0, level: float = 0.95) -> KrSample:
    """Percentile intervals of g(theta) over draws from N(theta_hat, Cov).

    `g` maps a parameter vector to a scalar or vector; percentile bounds
    use linear (type-7) interpolation.
    """
    if result.covariance is None:
        raise CovNotPSD("result carries no covariance matrix")
    factor = _psd_factor(result.covariance)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, result.theta.size))
    thetas = result.theta + z @ factor.T
    first = np.atleast_1d(np.asarray(g(thetas[0]), dtype=float))
    derived = np.empty((n_draws, first.size))
    derived[0] = first
    for i in range(1, n_draws):
        derived[i] = np.atleast_1d(np.asarray(g(thetas[i]), dtype=float))
    tail = 100.0 * (1.0 - level) / 2.0
    lower = np.percentile(derived, tail, axis=0)
    upper = np.percentile(derived, 100.0 - tail, axis=0)
    return KrSample(n_draws=n_draws, parameter_draws=thetas, derived=derived,
                    lower=lower, upper=upper)
