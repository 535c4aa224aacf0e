"""Simulated panel log-likelihood for mixed logit specifications.

The per-respondent probability is the draw average of the panel product
of task-level logit probabilities, computed in log space throughout
(max-shifted log-sum-exp within tasks, log-mean-exp over draws). The
analytic gradient chains through the coefficient transforms, the
scale/Cholesky map, and the error-component scales, and is accumulated
in the same deterministic order as the objective.

The hot path is a numba kernel parallelized over respondents; every
respondent writes a disjoint output slot and the final reduction is a
fixed-order sum, so results are bitwise reproducible for any thread
count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .data import ChoiceDataset, Respondent, ChoiceTask
from .draws import DrawTensor
from .errors import DimensionMismatch
from .modelspec import (
    ModelSpec,
    ParamLayout,
    TF_CODES,
    transform_param,
)

UNDERFLOW_FLOOR = -700.0


def attribute_value(decl, respondent: Respondent, alternative) -> float:
    """Value the coefficient's bound attribute takes on one alternative,
    after applying mode gating and interaction tokens."""
    if decl.is_housing:
        x = alternative.housing[decl.attribute]
    else:
        if alternative.l not in decl.modes:
            return 0.0
        x = alternative.mode.get(decl.attribute, 0.0)
    x = float(x)
    for tok in decl.interactions:
        if tok == "negate":
            x = -x
        elif tok == "income10":
            x *= 10.0 / respondent.weekly_income
        else:
            x *= respondent.covariate(tok)
    return x


def assemble_utility(spec: ModelSpec, theta, respondent: Respondent, task: ChoiceTask,
                     beta, eta) -> np.ndarray:
    """Representative utilities over the task's available alternatives.

    `beta` holds realized coefficients in declaration order and `eta` the
    error components in declaration order (see realize_coefficients).
    Mode intercepts are resolved from `theta` and the respondent's
    covariates; the reference mode carries no intercept.
    """
    layout = ParamLayout(spec)
    gamma_fix = np.asarray(theta, dtype=float)[layout.sl_fix]
    icpt = gamma_fix[layout.n_fix_attr:]
    ec_mode = {e.mode: j for j, e in enumerate(spec.error_components)}
    V = np.zeros(len(task.alternatives))
    for pos, alt in enumerate(task.alternatives):
        v = 0.0
        for i, decl in enumerate(spec.coefficients):
            v += beta[i] * attribute_value(decl, respondent, alt)
        for p, (mode, cov) in enumerate(layout.intercept_params):
            if alt.l == mode:
                v += icpt[p] * (respondent.covariate(cov) if cov else 1.0)
        if alt.l in ec_mode:
            v += eta[ec_mode[alt.l]]
        V[pos] = v
    return V


def choice_probabilities(V) -> np.ndarray:
    """Logit probabilities over one choice set (max-shifted softmax)."""
    V = np.asarray(V, dtype=float)
    shifted = V - V.max()
    ev = np.exp(shifted)
    return ev / ev.sum()


def mnl_prob(V, chosen: int) -> float:
    """Probability that `chosen` is selected from utilities `V`."""
    V = np.asarray(V, dtype=float)
    m = V.max()
    return float(np.exp(V[chosen] - m - np.log(np.exp(V - m).sum())))


def panel_prob(task_probs) -> float:
    """Probability of a sequence of task choices (product in log space)."""
    task_probs = np.asarray(task_probs, dtype=float)
    return float(np.exp(np.log(task_probs).sum()))


@dataclass
class LikelihoodReport:
    total: float
    per_respondent: np.ndarray
    gradient: np.ndarray | None
    n_draws: int
    underflows: int

    def to_json(self) -> str:
        return json.dumps({
            "total": self.total,
            "per_respondent": self.per_respondent.tolist(),
            "gradient": None if self.gradient is None else self.gradient.tolist(),
            "n_draws": self.n_draws,
            "underflows": self.underflows,
        })


@njit(cache=True, parallel=True)
def _panel_kernel(resp_task_ptr, task_ptr, chosen_row,
                  x_fix, tf_fix, rnd_ptr, rnd_idx, rnd_val, tf_rnd, ec_of_row,
                  gamma, mu, S, tau, sc_row, sc_col, z,
                  want_grad, logp_out, grad_out, under_out):
    n_resp = resp_task_ptr.shape[0] - 1
    R = z.shape[1]
    nF = x_fix.shape[1]
    nR = mu.shape[0]
    nE = tau.shape[0]
    nSc = sc_row.shape[0]

    gfix = np.empty(nF)
    for p in range(nF):
        if tf_fix[p] == 0:
            gfix[p] = gamma[p]
        else:
            e = math.exp(min(gamma[p], 700.0))
            gfix[p] = e if tf_fix[p] == 1 else -e

    for n in prange(n_resp):
        t0, t1 = resp_task_ptr[n], resp_task_ptr[n + 1]
        r0, r1 = task_ptr[t0], task_ptr[t1]
        rowsn = r1 - r0

        vfix = np.empty(rowsn)
        for i in range(rowsn):
            acc = 0.0
            for p in range(nF):
                acc += x_fix[r0 + i, p] * gfix[p]
            vfix[i] = acc

        logw = np.empty(R)
        p_all = np.empty((R, rowsn))
        beta = np.empty((R, nR))
        psi1 = np.empty((R, nR))
        eta = np.empty((R, nE))

        for r in range(R):
            for c in range(nR):
                acc = mu[c]
                for b in range(nR):
                    acc += S[c, b] * z[n, r, b]
                if tf_rnd[c] == 0:
                    beta[r, c] = acc
                    psi1[r, c] = 1.0
                else:
                    e = math.exp(min(acc, 700.0))
                    if tf_rnd[c] == 1:
                        beta[r, c] = e
                        psi1[r, c] = e
                    else:
                        beta[r, c] = -e
                        psi1[r, c] = -e
            for j in range(nE):
                eta[r, j] = tau[j] * z[n, r, nR + j]

            lw = 0.0
            for t in range(t0, t1):
                a0, a1 = task_ptr[t], task_ptr[t + 1]
                vmax = -1.0e308
                for i in range(a0, a1):
                    v = vfix[i - r0]
                    for q in range(rnd_ptr[i], rnd_ptr[i + 1]):
                        v += rnd_val[q] * beta[r, rnd_idx[q]]
                    e_ = ec_of_row[i]
                    if e_ >= 0:
                        v += eta[r, e_]
                    p_all[r, i - r0] = v
                    if v > vmax:
                        vmax = v
                v_ch = p_all[r, chosen_row[t] - r0]
                sumexp = 0.0
                for i in range(a0, a1):
                    ev = math.exp(p_all[r, i - r0] - vmax)
                    p_all[r, i - r0] = ev
                    sumexp += ev
                lw += v_ch - vmax - math.log(sumexp)
                inv = 1.0 / sumexp
                for i in range(a0, a1):
                    p_all[r, i - r0] *= inv
            logw[r] = lw

        m = logw[0]
        for r in range(1, R):
            if logw[r] > m:
                m = logw[r]
        s = 0.0
        for r in range(R):
            s += math.exp(logw[r] - m)
        lp = m + math.log(s) - math.log(R)
        if lp < UNDERFLOW_FLOOR:
            logp_out[n] = UNDERFLOW_FLOOR
            under_out[n] = 1
        else:
            logp_out[n] = lp
            under_out[n] = 0

        if want_grad:
            wresid = np.zeros(rowsn)
            qc = np.empty(nR)
            qe = np.empty(nE)
            for r in range(R):
                w = math.exp(logw[r] - m) / s
                for c in range(nR):
                    qc[c] = 0.0
                for j in range(nE):
                    qe[j] = 0.0
                for t in range(t0, t1):
                    a0, a1 = task_ptr[t], task_ptr[t + 1]
                    for i in range(a0, a1):
                        resid = -p_all[r, i - r0]
                        if i == chosen_row[t]:
                            resid += 1.0
                        wresid[i - r0] += w * resid
                        for q in range(rnd_ptr[i], rnd_ptr[i + 1]):
                            qc[rnd_idx[q]] += rnd_val[q] * resid
                        e_ = ec_of_row[i]
                        if e_ >= 0:
                            qe[e_] += resid
                for c in range(nR):
                    grad_out[n, nF + c] += w * psi1[r, c] * qc[c]
                for q in range(nSc):
                    c = sc_row[q]
                    grad_out[n, nF + nR + q] += w * psi1[r, c] * z[n, r, sc_col[q]] * qc[c]
                for j in range(nE):
                    grad_out[n, nF + nR + nSc + j] += w * z[n, r, nR + j] * qe[j]
            for p in range(nF):
                acc = 0.0
                for i in range(rowsn):
                    acc += x_fix[r0 + i, p] * wresid[i]
                if tf_fix[p] != 0:
                    acc *= gfix[p]
                grad_out[n, p] = acc


class Evaluator:
    """Compiled likelihood evaluator for one (spec, dataset) pair.

    Row order is fixed: respondents in dataset order, tasks by index,
    alternatives k-major l-minor. Reuse one Evaluator across iterations;
    the compiled arrays and the draw tensor never change during a run.
    """

    def __init__(self, spec: ModelSpec, dataset: ChoiceDataset):
        self.spec = spec
        self.layout = ParamLayout(spec)
        layout = self.layout

        tasks_by_resp = {r.id: [] for r in dataset.respondents}
        for t in dataset.tasks:
            tasks_by_resp[t.respondent_id].append(t)
        ordered = []
        resp_task_counts = []
        for r in dataset.respondents:
            ts = sorted(tasks_by_resp[r.id], key=lambda t: t.index)
            ordered.extend((r, t) for t in ts)
            resp_task_counts.append(len(ts))

        n_tasks = len(ordered)
        rows = sum(len(t.alternatives) for _, t in ordered)
        nF = layout.n_fix
        self.x_fix = np.zeros((rows, nF))
        self.task_ptr = np.zeros(n_tasks + 1, dtype=np.int64)
        self.chosen_row = np.zeros(n_tasks, dtype=np.int64)
        self.resp_task_ptr = np.zeros(dataset.n_respondents + 1, dtype=np.int64)
        np.cumsum(resp_task_counts, out=self.resp_task_ptr[1:])

        fixed_decls = layout.fixed_decls
        random_decls = layout.random_decls
        # random-coefficient attribute values, sparse by row (mode-specific
        # bindings leave most entries zero); error components carry at most
        # one unit dummy per row
        ec_of_mode = {e.mode: j for j, e in enumerate(spec.error_components)}
        rnd_ptr = np.zeros(rows + 1, dtype=np.int64)
        rnd_idx: list = []
        rnd_val: list = []
        self.ec_of_row = np.full(rows, -1, dtype=np.int64)
        row = 0
        for ti, (resp, task) in enumerate(ordered):
            self.task_ptr[ti] = row
            if task.chosen is None:
                raise DimensionMismatch(
                    f"task {task.index} of respondent {task.respondent_id!r} has no choice")
            self.chosen_row[ti] = row + task.chosen
            for alt in task.alternatives:
                for ci, decl in enumerate(fixed_decls):
                    self.x_fix[row, ci] = attribute_value(decl, resp, alt)
                for pi, (mode, cov) in enumerate(layout.intercept_params):
                    if alt.l == mode:
                        self.x_fix[row, layout.n_fix_attr + pi] = (
                            resp.covariate(cov) if cov else 1.0)
                for ci, decl in enumerate(random_decls):
                    x = attribute_value(decl, resp, alt)
                    if x != 0.0:
                        rnd_idx.append(ci)
                        rnd_val.append(x)
                self.ec_of_row[row] = ec_of_mode.get(alt.l, -1)
                row += 1
                rnd_ptr[row] = len(rnd_idx)
        self.task_ptr[n_tasks] = row
        self.rnd_ptr = rnd_ptr
        self.rnd_idx = np.array(rnd_idx, dtype=np.int64)
        self.rnd_val = np.array(rnd_val, dtype=np.float64)

        self.tf_fix = np.array(
            [TF_CODES[c.transform] for c in fixed_decls]
            + [0] * layout.n_icpt, dtype=np.int64)
        self.tf_rnd = np.array([TF_CODES[c.transform] for c in random_decls], dtype=np.int64)
        self.sc_row = np.array([r for r, _ in layout.scale_entries], dtype=np.int64)
        self.sc_col = np.array([c for _, c in layout.scale_entries], dtype=np.int64)
        self.n_respondents = dataset.n_respondents

    def _z(self, draw_tensor: DrawTensor | None) -> np.ndarray:
        dims = self.layout.n_draw_dims
        if dims == 0:
            n_draws = 1 if draw_tensor is None else draw_tensor.n_draws
            return np.zeros((self.n_respondents, n_draws, 0))
        if draw_tensor is None:
            raise DimensionMismatch("this specification requires a draw tensor")
        if draw_tensor.n_respondents != self.n_respondents:
            raise DimensionMismatch(
                f"draw tensor covers {draw_tensor.n_respondents} respondents, "
                f"data has {self.n_respondents}")
        if draw_tensor.n_dims != dims:
            raise DimensionMismatch(
                f"draw tensor has {draw_tensor.n_dims} dimensions, spec needs {dims}")
        return draw_tensor.values

    def evaluate(self, theta, draw_tensor: DrawTensor | None = None,
                 want_grad: bool = False) -> LikelihoodReport:
        layout = self.layout
        gamma, mu_, scale_vals, tau = layout.unpack(np.asarray(theta, dtype=float))
        S = layout.scale_matrix(scale_vals)
        z = self._z(draw_tensor)
        logp = np.zeros(self.n_respondents)
        grad = np.zeros((self.n_respondents, layout.n_params))
        under = np.zeros(self.n_respondents, dtype=np.int64)
        _panel_kernel(self.resp_task_ptr, self.task_ptr, self.chosen_row,
                      self.x_fix, self.tf_fix, self.rnd_ptr, self.rnd_idx, self.rnd_val,
                      self.tf_rnd, self.ec_of_row,
                      gamma, mu_, S, tau, self.sc_row, self.sc_col,
                      np.ascontiguousarray(z), want_grad, logp, grad, under)
        return LikelihoodReport(
            total=float(np.sum(logp)),
            per_respondent=logp,
            gradient=np.sum(grad, axis=0) if want_grad else None,
            n_draws=z.shape[1],
            underflows=int(under.sum()),
        )


def simulated_loglik(spec: ModelSpec, theta, dataset: ChoiceDataset,
                     draw_tensor: DrawTensor | None = None) -> LikelihoodReport:
    """Simulated panel log-likelihood at `theta` (no gradient)."""
    return Evaluator(spec, dataset).evaluate(theta, draw_tensor, want_grad=False)


def loglik_gradient(spec: ModelSpec, theta, dataset: ChoiceDataset,
                    draw_tensor: DrawTensor | None = None) -> LikelihoodReport:
    """Simulated log-likelihood with its exact analytic gradient."""
    return Evaluator(spec, dataset).evaluate(theta, draw_tensor, want_grad=True)
