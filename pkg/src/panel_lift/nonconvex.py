"""Factored gradient descent on the balanced non-convex surrogate.

    f(X, Y; tau) = 0.5 ||O - X Y^T - tau Z||_F^2 + lam/2 (||X||_F^2 + ||Y||_F^2)

Gradient steps on ``(X, Y)`` alternate with the exact ``tau`` update. With
``lam`` matched to the convex program and ``r`` equal to the rank of its
solution, stationary points of ``f`` reproduce the convex minimizer.
"""

from dataclasses import dataclass, field

import numpy as np

from panel_lift.errors import DimensionMismatch, GdDivergence, InputError
from panel_lift.linalg import as_matrix, norm, svd_thin


@dataclass
class FactorPair:
    x: np.ndarray
    y: np.ndarray
    tau: float

    def product(self):
        return self.x @ self.y.T


@dataclass
class GdTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    steps: int = 0
    armijo_ok: list = field(default_factory=list)

    @property
    def min_grad_norm(self):
        return min(self.grad_norm) if self.grad_norm else float("nan")


def f_value(p, o, z, lam):
    r = o - p.x @ p.y.T - p.tau * z
    return 0.5 * float(np.sum(r * r)) + 0.5 * lam * (float(np.sum(p.x * p.x)) + float(np.sum(p.y * p.y)))


def grad_f(p, o, z, lam):
    """Gradients of ``f`` in ``X`` and ``Y`` at fixed ``tau``."""
    if p.x.shape[0] != o.shape[0] or p.y.shape[0] != o.shape[1] or z.shape != o.shape:
        raise DimensionMismatch("factor, outcome and treatment shapes disagree")
    r = p.x @ p.y.T + p.tau * z - o
    return r @ p.y + lam * p.x, r.T @ p.x + lam * p.y


def _tau(o, z, m, z_sq):
    return float(np.sum(z * (o - m))) / z_sq


def spectral_init(o, r, lam):
    """``X = U S^1/2``, ``Y = V S^1/2`` from the top-``r`` soft-thresholded triplets of ``O``.

    Shrunk values are floored at ``1e-2 * s_1`` so that no factor column
    starts at zero; a zero column is a saddle gradient steps never leave.
    """
    fac = svd_thin(o)
    k = min(r, fac.rank)
    if k == 0:
        raise InputError("O is the zero matrix")
    shrunk = np.maximum(fac.s[:r] - lam, 1e-2 * fac.s[0])
    root = np.sqrt(shrunk)
    x = np.zeros((o.shape[0], r))
    y = np.zeros((o.shape[1], r))
    x[:, :k] = fac.u[:, :k] * root[:k]
    y[:, :k] = fac.v[:, :k] * root[:k]
    return x, y


def gd_solve(
    o,
    z,
    r,
    lam,
    eta=None,
    max_steps=20000,
    init="spectral",
    m_star=None,
    backtracking=True,
    grad_tol=None,
):
    """Run gradient descent with exact ``tau`` updates.

    Parameters
    ----------
    o, z : array_like
        Outcomes and a single treatment matrix.
    r : int
        Factor width.
    lam : float
        Regularization weight, matched to the convex program.
    eta : float, optional
        Initial step; defaults to ``1 / (||O||_op^2 + lam)``.
    init : {"spectral", "oracle"}
        ``oracle`` starts from the balanced factors of ``m_star`` (tests only).
    backtracking : bool
        Halve the step until ``f`` drops by at least ``eta/2 ||grad||^2``; the
        step is doubled again after every accepted move. Iteration also stops
        when no step above ``1e-10`` times the initial one achieves the
        decrease, or after ten consecutive steps with relative decrease
        below ``1e-15``; both mean progress is lost in rounding.
    grad_tol : float, optional
        Stop once the gradient Frobenius norm falls below this; defaults to
        ``1e-8 * lam * ||F||_F``.

    Returns
    -------
    FactorPair, GdTrace
    """
    o = as_matrix(o, "O")
    z = as_matrix(z, "Z")
    if z.shape != o.shape:
        raise DimensionMismatch(f"O shape {o.shape} != Z shape {z.shape}")
    if r < 1:
        raise InputError("r must be >= 1")
    z_sq = float(np.sum(z * z))
    if z_sq == 0.0:
        raise InputError("Z is the zero matrix")
    if init == "spectral":
        x, y = spectral_init(o, r, lam)
    elif init == "oracle":
        if m_star is None:
            raise InputError("oracle init needs m_star")
        f = svd_thin(m_star)
        x = np.zeros((o.shape[0], r))
        y = np.zeros((o.shape[1], r))
        k = min(r, f.rank)
        x[:, :k] = f.u[:, :k] * np.sqrt(f.s[:k])
        y[:, :k] = f.v[:, :k] * np.sqrt(f.s[:k])
    else:
        raise InputError(f"unknown init {init!r}")
    p = FactorPair(x, y, _tau(o, z, x @ y.T, z_sq))
    if eta is None:
        eta = 1.0 / (norm(o, "op") ** 2 + lam)
    eta_min = 1e-10 * eta
    trace = GdTrace()
    f0 = f_value(p, o, z, lam)
    f_cur = f0
    trace.objective.append(f_cur)
    flat_steps = 0
    for step in range(max_steps):
        gx, gy = grad_f(p, o, z, lam)
        g2 = float(np.sum(gx * gx)) + float(np.sum(gy * gy))
        gnorm = float(np.sqrt(g2))
        trace.grad_norm.append(gnorm)
        scale = float(np.sqrt(np.sum(p.x * p.x) + np.sum(p.y * p.y)))
        tol = grad_tol if grad_tol is not None else 1e-8 * lam * max(scale, 1e-300)
        if gnorm <= tol:
            break
        stalled = False
        while True:
            x_new = p.x - eta * gx
            y_new = p.y - eta * gy
            cand = FactorPair(x_new, y_new, p.tau)
            f_fixed_tau = f_value(cand, o, z, lam)
            ok = f_fixed_tau <= f_cur - 0.5 * eta * g2
            if ok or not backtracking:
                break
            eta *= 0.5
            if eta < eta_min:
                stalled = True
                break
        if stalled:
            # sufficient decrease is below floating-point resolution of f
            break
        with_tau = FactorPair(x_new, y_new, _tau(o, z, x_new @ y_new.T, z_sq))
        f_new = f_value(with_tau, o, z, lam)
        if f_new <= f_fixed_tau:
            cand = with_tau
        else:
            f_new = f_fixed_tau
        if backtracking:
            trace.armijo_ok.append(bool(f_new <= f_cur - 0.5 * eta * g2))
        trace.eta.append(eta)
        p = cand
        flat_steps = flat_steps + 1 if f_cur - f_new <= 1e-15 * abs(f_cur) else 0
        f_cur = f_new
        trace.objective.append(f_cur)
        trace.steps = step + 1
        if not np.isfinite(f_cur) or f_cur > 10.0 * max(f0, 1e-300):
            raise GdDivergence(f"objective grew from {f0:.3g} to {f_cur:.3g}", trace)
        if flat_steps >= 10:
            break
        if backtracking:
            eta *= 2.0
    return p, trace
