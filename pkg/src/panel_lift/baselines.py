"""Comparison estimators: two-way fixed-effects OLS, MC-NNM and robust synthetic control."""

from dataclasses import dataclass, field

import numpy as np

from panel_lift.errors import (
    Collinear,
    DimensionMismatch,
    EmptyControlCol,
    EmptyControlRow,
    InputError,
    NoControls,
    PatternUnsupported,
    TargetRankUnreachable,
)
from panel_lift.linalg import as_matrix, norm, soft_threshold_svd


@dataclass
class BaselineResult:
    method: str
    tau: float
    m_hat: np.ndarray = None
    fixed_a: np.ndarray = None
    fixed_b: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


def _inputs(o, z):
    o = as_matrix(o, "O")
    z = as_matrix(z, "Z")
    if o.shape != z.shape:
        raise DimensionMismatch(f"O shape {o.shape} != Z shape {z.shape}")
    if not np.all((z == 0.0) | (z == 1.0)) or not z.any():
        raise InputError("Z must be binary with at least one treated entry")
    return o, z


def _two_way_demean(x):
    return x - x.mean(axis=1, keepdims=True) - x.mean(axis=0, keepdims=True) + x.mean()


def ols_twfe(o, z):
    """Least squares fit of ``O ~ a 1^T + 1 b^T + tau Z``.

    On a balanced panel the two-way fixed-effect projection is two-way
    demeaning, so ``tau`` follows by partialling out (Frisch-Waugh-Lovell)
    and the effects from row/column means of ``O - tau Z``.
    """
    o, z = _inputs(o, z)
    z_res = _two_way_demean(z)
    z_sq = float(np.sum(z_res * z_res))
    if z_sq <= 1e-24 * float(np.sum(z)) or z_sq == 0.0:
        raise Collinear("Z is spanned by two-way fixed effects; tau is not identified")
    tau = float(np.sum(z_res * o)) / z_sq
    y = o - tau * z
    a = y.mean(axis=1)
    b = y.mean(axis=0) - y.mean()
    fit = a[:, None] + b[None, :]
    resid = y - fit
    return BaselineResult(
        "ols",
        tau,
        m_hat=fit,
        fixed_a=a,
        fixed_b=b,
        diagnostics={"iterations": 1, "objective": float(np.sum(resid * resid))},
    )


def _mcnnm_fit(o, mask, lam, m, a, b, max_iter, rel_tol):
    """Block coordinate descent on ``||P_mask(O - a1^T - 1b^T - M)||_F^2 + lam ||M||_*``."""
    cnt_row = mask.sum(axis=1)
    cnt_col = mask.sum(axis=0)

    def objective(m, a, b, nuc):
        r = (o - a[:, None] - b[None, :] - m) * mask
        return float(np.sum(r * r)) + lam * nuc

    nuc = norm(m, "nuclear") if m.any() else 0.0
    trace = [objective(m, a, b, nuc)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a = ((o - b[None, :] - m) * mask).sum(axis=1) / cnt_row
        b = ((o - a[:, None] - m) * mask).sum(axis=0) / cnt_col
        target = o - a[:, None] - b[None, :]
        filled = np.where(mask, target, m)
        # squared loss without the 1/2 factor: prox threshold is lam/2
        fac = soft_threshold_svd(filled, lam / 2.0)
        m_new = fac.dense()
        nuc = float(np.sum(fac.s))
        obj = objective(m_new, a, b, nuc)
        dm = float(np.linalg.norm(m_new - m))
        decrease = trace[-1] - obj
        trace.append(obj)
        m = m_new
        if decrease <= rel_tol * abs(obj) and dm <= rel_tol * max(float(np.linalg.norm(m)), 1e-300):
            converged = True
            break
        if dm == 0.0 and decrease <= rel_tol * abs(obj):
            converged = True
            break
    return m, a, b, fac.rank, it, trace, converged


def mc_nnm(
    o,
    z,
    target_rank=None,
    lam=None,
    shrink=0.9,
    warm_shrink=0.5,
    max_iter=5000,
    rel_tol=1e-8,
    path_rel_tol=1e-5,
    floor=1e-10,
):
    """Matrix completion with two-way fixed effects, treating ``Z`` entries as missing.

    Either ``lam`` is given, in which case the fit is warm-started along a
    path ``2 ||O||_op * warm_shrink**k`` down to ``lam``, or it is tuned by decreasing it geometrically
    from ``2 ||O||_op`` until the fitted ``M`` reaches ``target_rank``.
    ``tau`` is the mean gap between ``O`` and the imputed counterfactual over
    treated entries.
    """
    o, z = _inputs(o, z)
    mask = z == 0.0
    if not mask.any(axis=1).all():
        raise EmptyControlRow("some row has no untreated entry")
    if not mask.any(axis=0).all():
        raise EmptyControlCol("some column has no untreated entry")
    if lam is None and target_rank is None:
        raise InputError("give either lam or target_rank")
    n1, n2 = o.shape
    m = np.zeros_like(o)
    a = np.zeros(n1)
    b = np.zeros(n2)
    calls = 0
    if lam is not None:
        # warm-start along a geometric path: at small lam soft-impute barely moves the fill
        step = 2.0 * norm(o, "op")
        while step * warm_shrink > lam:
            step *= warm_shrink
            m, a, b, *_ = _mcnnm_fit(o, mask, step, m, a, b, max_iter, max(rel_tol, path_rel_tol))
            calls += 1
        m, a, b, rank, iters, trace, conv = _mcnnm_fit(o, mask, lam, m, a, b, max_iter, rel_tol)
        calls += 1
    else:
        if not 1 <= target_rank <= min(n1, n2):
            raise InputError(f"target_rank {target_rank} out of range")
        op = norm(o, "op")
        lam = 2.0 * op
        while True:
            if lam <= floor * op:
                raise TargetRankUnreachable(f"MC-NNM could not reach rank {target_rank}")
            m, a, b, rank, iters, trace, conv = _mcnnm_fit(
                o, mask, lam, m, a, b, max_iter, max(rel_tol, path_rel_tol)
            )
            calls += 1
            if rank >= target_rank:
                m, a, b, rank, iters, trace, conv = _mcnnm_fit(o, mask, lam, m, a, b, max_iter, rel_tol)
                calls += 1
                if rank >= target_rank:
                    break
            lam *= shrink
    fit = m + a[:, None] + b[None, :]
    tau = float(np.sum(z * (o - fit))) / float(np.sum(z * z))
    return BaselineResult(
        "mcnnm",
        tau,
        m_hat=fit,
        fixed_a=a,
        fixed_b=b,
        diagnostics={
            "lambda": float(lam),
            "rank": int(rank),
            "iterations": int(iters),
            "solver_calls": calls,
            "objective": trace[-1],
            "objective_trace": trace,
            "converged": bool(conv),
        },
    )


def _treated_starts(z):
    """First treated column per row (``-1`` for control rows); requires suffix structure."""
    n1, n2 = z.shape
    starts = np.full(n1, -1)
    for i in range(n1):
        row = z[i]
        if not row.any():
            continue
        t = int(np.argmax(row))
        if not np.all(row[t:] == 1.0):
            raise PatternUnsupported(f"row {i} is not a contiguous treated suffix")
        starts[i] = t
    return starts


def rsc(o, z, target_rank):
    """Robust synthetic control with hard singular value truncation and OLS weights.

    The control rows are de-noised by keeping their top ``target_rank``
    singular triplets. Each treated row's pre-treatment outcomes are then
    regressed (minimum-norm least squares) on the same columns of the
    de-noised controls, and the fitted combination imputes its treated
    entries.
    """
    o, z = _inputs(o, z)
    starts = _treated_starts(z)
    controls = np.flatnonzero(starts < 0)
    if controls.size == 0:
        raise NoControls("no fully untreated row")
    treated = np.flatnonzero(starts >= 0)
    if np.any(starts[treated] == 0):
        raise PatternUnsupported("a treated row has no pre-treatment column")
    c = o[controls]
    u, s, vt = np.linalg.svd(c, full_matrices=False)
    k = min(int(target_rank), int(np.count_nonzero(s > 1e-12 * s[0])) if s[0] > 0 else 0)
    c_hat = (u[:, :k] * s[:k]) @ vt[:k]
    m_hat = o.copy()
    m_hat[controls] = c_hat
    weights = {}
    for i in treated:
        t = starts[i]
        beta = np.linalg.lstsq(c_hat[:, :t].T, o[i, :t], rcond=None)[0]
        m_hat[i] = beta @ c_hat
        m_hat[i, :t] = o[i, :t]
        weights[int(i)] = beta
    tau = float(np.sum(z * (o - m_hat))) / float(np.sum(z * z))
    return BaselineResult(
        "rsc",
        tau,
        m_hat=m_hat,
        diagnostics={"rank": k, "controls": controls.tolist(), "weights": weights},
    )
