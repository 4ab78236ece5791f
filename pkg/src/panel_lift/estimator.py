"""De-biased convex estimator of average treatment effects.

The first step solves

    min_{M, tau}  0.5 ||O - M - sum_m tau_m Z_m||_F^2 + lam ||M||_*

by exact block coordinate descent (a singular value soft-threshold for ``M``,
a k x k linear solve for ``tau``). The second step removes the shrinkage bias
of ``tau_hat`` that is computable from the solution itself.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from panel_lift.errors import (
    DimensionMismatch,
    GramSingular,
    InputError,
    MultiTreatmentUnsupported,
    TargetRankUnreachable,
    ZeroPerpProjection,
)
from panel_lift.linalg import (
    SvdFactor,
    as_matrix,
    norm,
    project_perp,
    soft_threshold_svd,
    svd_thin,
)

GRAM_COND_MAX = 1e12


@dataclass(frozen=True)
class TreatmentSet:
    """k binary treatment matrices sharing one shape, stacked as ``(k, n1, n2)``."""

    stack: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.stack, dtype=float)
        if z.ndim == 2:
            z = z[None]
        if z.ndim != 3 or z.shape[0] < 1:
            raise InputError(f"treatment stack must be (k, n1, n2), got {z.shape}")
        if not np.all((z == 0.0) | (z == 1.0)):
            raise InputError("treatment matrices must be binary (0/1)")
        empty = [m for m in range(z.shape[0]) if not z[m].any()]
        if empty:
            raise InputError(f"treatment matrices {empty} have no treated entry")
        z.setflags(write=False)
        object.__setattr__(self, "stack", z)

    @property
    def k(self):
        return self.stack.shape[0]

    @property
    def shape(self):
        return self.stack.shape[1:]

    def __getitem__(self, m):
        return self.stack[m]

    def __iter__(self):
        return iter(self.stack)

    def combine(self, tau):
        """``sum_m tau_m Z_m``."""
        return np.tensordot(np.asarray(tau, dtype=float), self.stack, axes=1)

    def inner(self, a):
        """Vector of ``<Z_m, a>``."""
        return self.stack.reshape(self.k, -1) @ np.asarray(a, dtype=float).ravel()

    def gram(self):
        flat = self.stack.reshape(self.k, -1)
        return flat @ flat.T


def treatment_set(z):
    """Accept a ``TreatmentSet``, a single matrix, a list of matrices or a 3-D stack."""
    if isinstance(z, TreatmentSet):
        return z
    if isinstance(z, (list, tuple)):
        z = np.stack([np.asarray(m, dtype=float) for m in z])
    return TreatmentSet(np.asarray(z, dtype=float))


def _check_shapes(o, z):
    if o.shape != z.shape:
        raise DimensionMismatch(f"outcome shape {o.shape} does not match treatment shape {z.shape}")


def _gram_condition(g, scale):
    eig = np.linalg.eigvalsh(g)
    lo, hi = float(eig[0]), float(eig[-1])
    if hi <= 0.0 or lo <= GRAM_COND_MAX ** -1 * scale:
        return math.inf
    return hi / lo


def _solve_gram(g, rhs, scale, what):
    cond = _gram_condition(g, scale)
    if cond > GRAM_COND_MAX:
        raise GramSingular(f"{what} Gram matrix is singular (condition number {cond:.3g})")
    return np.linalg.solve(g, rhs), cond


@dataclass
class ConvexSolution:
    """Minimizer ``(M_hat, tau_hat)`` with solver diagnostics."""

    m_hat: SvdFactor
    m_hat_dense: np.ndarray
    tau_hat: np.ndarray
    lam: float
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = True

    @property
    def rank(self):
        return self.m_hat.rank

    @classmethod
    def from_dense(cls, m, tau, lam):
        """Wrap an arbitrary ``(M, tau)`` pair, e.g. to audit a non-minimizer."""
        m = as_matrix(m, "M")
        return cls(svd_thin(m), m, np.atleast_1d(np.asarray(tau, dtype=float)), float(lam))


@dataclass(frozen=True)
class DualCertificate:
    w: np.ndarray
    tangent_residual: float
    op_norm: float

    def certifies(self, tol=1e-6):
        return self.op_norm <= 1.0 + tol and self.tangent_residual <= tol


@dataclass(frozen=True)
class DebiasResult:
    tau_d: np.ndarray
    gram: np.ndarray
    delta1: np.ndarray
    gram_condition: float


@dataclass(frozen=True)
class ErrorDecomposition:
    delta1: np.ndarray
    delta2: np.ndarray
    delta3: np.ndarray
    identity_residual: float


@dataclass
class TuneResult:
    lam: float
    sol: ConvexSolution
    solver_calls: int
    path: list


def objective_g(o, z, m, tau, lam):
    """``0.5 ||O - M - sum tau_m Z_m||_F^2 + lam ||M||_*``."""
    if lam <= 0:
        raise InputError(f"lambda must be positive, got {lam}")
    o = as_matrix(o, "O")
    z = treatment_set(z)
    m = as_matrix(m, "M")
    _check_shapes(o, z)
    _check_shapes(m, z)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != (z.k,):
        raise DimensionMismatch(f"tau has shape {tau.shape}, expected ({z.k},)")
    resid = o - m - z.combine(tau)
    return 0.5 * float(np.sum(resid * resid)) + lam * norm(m, "nuclear")


def solve_tau_step(o, z, m):
    """Exact minimizer over ``tau`` for fixed ``M``: solve ``G tau = <Z_l, O - M>``."""
    o = as_matrix(o, "O")
    z = treatment_set(z)
    _check_shapes(o, z)
    g = z.gram()
    tau, _ = _solve_gram(g, z.inner(o - m), float(np.trace(g)), "treatment")
    return tau


def solve_convex(o, z, lam, max_iter=20000, rel_tol=1e-10, init=None):
    """Block coordinate descent on the nuclear-norm program.

    Each sweep sets ``M <- SVT(O - sum tau Z, lam)`` then ``tau`` to its exact
    minimizer given ``M``; both blocks are globally optimal so the objective
    never increases. Stops once the relative objective decrease and the
    relative change in ``M`` both drop below ``rel_tol``.

    Parameters
    ----------
    o : array_like
        Observed outcomes, ``n1 x n2``.
    z : TreatmentSet or array_like
        Treatment pattern(s).
    lam : float
        Nuclear-norm weight, ``> 0``.
    max_iter : int
        Sweep budget; exceeding it returns the last iterate with
        ``converged=False``.
    rel_tol : float
        Convergence tolerance.
    init : ConvexSolution, optional
        Warm start (its ``M`` is reused, ``tau`` is recomputed).

    Returns
    -------
    ConvexSolution
    """
    if lam <= 0:
        raise InputError(f"lambda must be positive, got {lam}")
    o = as_matrix(o, "O")
    z = treatment_set(z)
    _check_shapes(o, z)
    flat = z.stack.reshape(z.k, -1)
    g = flat @ flat.T
    scale = float(np.trace(g))
    _solve_gram(g, np.zeros(z.k), scale, "treatment")
    g_inv = np.linalg.inv(g)

    def tau_for(m):
        return g_inv @ (flat @ (o - m).ravel())

    m = np.zeros_like(o) if init is None else np.array(init.m_hat_dense, dtype=float)
    tau = tau_for(m)
    resid = o - m - z.combine(tau)
    nuc = 0.0 if init is None else float(np.sum(init.m_hat.s))
    obj = 0.5 * float(np.sum(resid * resid)) + lam * nuc
    trace = [obj]
    fac = svd_thin(m) if init is None else init.m_hat
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fac = soft_threshold_svd(o - z.combine(tau), lam)
        m_new = fac.dense()
        tau = tau_for(m_new)
        resid = o - m_new - z.combine(tau)
        obj_new = 0.5 * float(np.sum(resid * resid)) + lam * float(np.sum(fac.s))
        dm = float(np.linalg.norm(m_new - m))
        m_norm = float(np.linalg.norm(m_new))
        decrease = trace[-1] - obj_new
        trace.append(obj_new)
        m = m_new
        if decrease <= rel_tol * abs(obj_new) and dm <= rel_tol * m_norm:
            converged = True
            break
    return ConvexSolution(fac, m, tau, float(lam), it, trace, converged)


def dual_certificate(o, z, sol):
    """``W = (O - M_hat - sum tau_hat Z)/lam - U V^T`` and its two optimality gauges."""
    o = as_matrix(o, "O")
    z = treatment_set(z)
    _check_shapes(o, z)
    resid = o - sol.m_hat_dense - z.combine(sol.tau_hat)
    w = resid / sol.lam - sol.m_hat.polar()
    on_tangent = w - project_perp(w, sol.m_hat.tangent)
    return DualCertificate(w, float(np.linalg.norm(on_tangent)), norm(w, "op"))


def _perp_gram(z, fac):
    perps = np.stack([project_perp(zm, fac.tangent) for zm in z])
    flat = perps.reshape(z.k, -1)
    return perps, flat @ flat.T


def debias_tau(sol, z):
    """``tau_d = tau_hat - D^{-1} Delta`` with ``D`` the Gram matrix of ``P_perp(Z_l)``."""
    z = treatment_set(z)
    _check_shapes(sol.m_hat_dense, z)
    _, d = _perp_gram(z, sol.m_hat)
    delta1 = sol.lam * z.inner(sol.m_hat.polar())
    shift, cond = _solve_gram(d, delta1, float(np.trace(z.gram())), "projected treatment")
    return DebiasResult(sol.tau_hat - shift, d, delta1, cond)


def decompose_error(sol, z, m_star, e_hat, tau_star):
    """Split ``D (tau_hat - tau_star)`` into shrinkage, noise and misspecification parts.

    ``e_hat`` is the total idiosyncratic term ``E + sum_m delta_m``. The
    returned ``identity_residual`` vanishes at an exact minimizer.
    """
    z = treatment_set(z)
    m_star = as_matrix(m_star, "M*")
    e_hat = as_matrix(e_hat, "E_hat")
    _check_shapes(m_star, z)
    _check_shapes(e_hat, z)
    tau_star = np.atleast_1d(np.asarray(tau_star, dtype=float))
    perps, d = _perp_gram(z, sol.m_hat)
    flat = perps.reshape(z.k, -1)
    delta1 = sol.lam * z.inner(sol.m_hat.polar())
    delta2 = flat @ e_hat.ravel()
    delta3 = z.inner(project_perp(m_star, sol.m_hat.tangent))
    lhs = d @ (sol.tau_hat - tau_star)
    residual = float(np.linalg.norm(lhs - (delta1 + delta2 + delta3)))
    return ErrorDecomposition(delta1, delta2, delta3, residual)


def debias_counterfactual(sol, z):
    """De-biased counterfactual ``M_d`` (single treatment only)."""
    z = treatment_set(z)
    if z.k != 1:
        raise MultiTreatmentUnsupported("counterfactual de-biasing is defined for k = 1 only")
    zm = z[0]
    _check_shapes(sol.m_hat_dense, z)
    fac = sol.m_hat
    if fac.rank == 0:
        return np.zeros_like(sol.m_hat_dense)
    perp = project_perp(zm, fac.tangent)
    perp_sq = float(np.sum(perp * perp))
    if perp_sq <= GRAM_COND_MAX ** -1 * float(np.sum(zm)):
        raise ZeroPerpProjection("treatment pattern lies in the tangent space of M_hat")
    polar = fac.polar()
    coef = sol.lam * float(np.sum(zm * polar)) / perp_sq
    return sol.m_hat_dense + sol.lam * polar + coef * (zm - perp)


def tune_lambda(
    o,
    z,
    target_rank,
    shrink=0.9,
    max_iter=20000,
    rel_tol=1e-10,
    path_rel_tol=1e-6,
    floor=1e-10,
):
    """Decrease ``lam`` geometrically from ``2 ||O||_op`` until ``rank(M_hat) >= target_rank``.

    Path solves are warm-started at the looser ``path_rel_tol``; the first
    qualifying ``lam`` is re-solved at ``rel_tol`` before being returned.
    """
    o = as_matrix(o, "O")
    z = treatment_set(z)
    _check_shapes(o, z)
    if not 1 <= target_rank <= min(o.shape):
        raise InputError(f"target_rank must lie in [1, {min(o.shape)}], got {target_rank}")
    op = norm(o, "op")
    if op == 0.0:
        raise TargetRankUnreachable("O is the zero matrix")
    lam = 2.0 * op
    sol = None
    calls = 0
    path = []
    while lam > floor * op:
        sol = solve_convex(o, z, lam, max_iter=max_iter, rel_tol=max(path_rel_tol, rel_tol), init=sol)
        calls += 1
        path.append((lam, sol.rank))
        if sol.rank >= target_rank:
            if path_rel_tol > rel_tol:
                sol = solve_convex(o, z, lam, max_iter=max_iter, rel_tol=rel_tol, init=sol)
                calls += 1
            if sol.rank >= target_rank:
                return TuneResult(lam, sol, calls, path)
        lam *= shrink
    raise TargetRankUnreachable(
        f"rank {target_rank} not reached before lambda fell below {floor:g} * ||O||_op"
    )


def default_lambda(o, c_lambda=2.0):
    """Theory-scale ``c * sigma_hat * sqrt(n) * log(n)^1.5``.

    ``sigma_hat`` is a MAD scale estimate of ``O`` after removing row and
    column means. It is crude (low-rank structure beyond two-way effects
    inflates it) and meant as a fallback when no target rank is known.
    """
    o = as_matrix(o, "O")
    resid = o - o.mean(axis=1, keepdims=True) - o.mean(axis=0, keepdims=True) + o.mean()
    mad = float(np.median(np.abs(resid - np.median(resid))))
    sigma_hat = 1.4826 * mad
    n = max(o.shape)
    lam = c_lambda * sigma_hat * math.sqrt(n) * math.log(n) ** 1.5
    if lam <= 0:
        lam = 1e-8 * max(norm(o, "op"), 1.0)
    return lam
