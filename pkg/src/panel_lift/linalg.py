"""Dense linear-algebra kernel.

Thin SVD, singular value soft-thresholding, tangent-space projections and the
handful of matrix norms the estimators need. Matrices are plain 2-D float
``numpy`` arrays; low-rank objects are carried as :class:`SvdFactor`.
"""

from dataclasses import dataclass

import numpy as np

from panel_lift.errors import DimensionMismatch, InputError, NonFiniteInput, SvdNonConvergence

#: Singular values below ``RANK_TOL * s_max`` are treated as exact zeros.
RANK_TOL = 1e-12


def as_matrix(a, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class TangentSpace:
    """Column basis ``u`` (n1 x r) and row basis ``v`` (n2 x r) of a rank-r matrix."""

    u: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])


@dataclass(frozen=True)
class SvdFactor:
    """Thin SVD ``u @ diag(s) @ v.T`` with ``s`` non-increasing and positive.

    An empty factor (``s.size == 0``) stands for the zero matrix; its
    tangent space is ``{0}`` so the orthogonal projection is the identity.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return int(self.s.size)

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])

    @property
    def tangent(self):
        return TangentSpace(self.u, self.v)

    def dense(self):
        return (self.u * self.s) @ self.v.T

    def polar(self):
        """``U V^T``; zero for the empty factor."""
        return self.u @ self.v.T

    @classmethod
    def empty(cls, n1, n2):
        return cls(np.zeros((n1, 0)), np.zeros(0), np.zeros((n2, 0)))


def _svd(a):
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdNonConvergence(f"SVD did not converge on a {a.shape} matrix: {exc}") from exc


def _truncate(u, s, vt, keep):
    k = int(np.count_nonzero(keep))
    return SvdFactor(np.ascontiguousarray(u[:, :k]), s[:k].copy(), np.ascontiguousarray(vt[:k].T))


def svd_thin(a, rank_tol=RANK_TOL):
    """Thin SVD keeping singular values above ``rank_tol`` times the largest.

    Parameters
    ----------
    a : array_like
        Finite 2-D matrix.
    rank_tol : float
        Relative cut-off for the numerical rank.

    Returns
    -------
    SvdFactor
        Empty if ``a`` is identically zero.
    """
    a = as_matrix(a)
    n1, n2 = a.shape
    if a.size == 0:
        return SvdFactor.empty(n1, n2)
    u, s, vt = _svd(a)
    if s[0] == 0.0:
        return SvdFactor.empty(n1, n2)
    return _truncate(u, s, vt, s > rank_tol * s[0])


def soft_threshold_svd(a, lam):
    """Proximal operator of ``lam * ||.||_*`` evaluated at ``a``.

    Every singular value is mapped to ``max(s - lam, 0)``; zeros (and values
    below the global rank cut-off) are dropped, so the returned factor is the
    unique minimizer of ``0.5 ||a - M||_F^2 + lam ||M||_*``.
    """
    if lam < 0:
        raise InputError(f"lambda must be non-negative, got {lam}")
    a = as_matrix(a)
    n1, n2 = a.shape
    if a.size == 0:
        return SvdFactor.empty(n1, n2)
    u, s, vt = _svd(a)
    if s[0] == 0.0:
        return SvdFactor.empty(n1, n2)
    shrunk = s - lam
    keep = shrunk > RANK_TOL * s[0]
    k = int(np.count_nonzero(keep))
    return SvdFactor(np.ascontiguousarray(u[:, :k]), shrunk[:k].copy(), np.ascontiguousarray(vt[:k].T))


def _check_tangent(a, t):
    if a.shape != t.shape:
        raise DimensionMismatch(f"matrix shape {a.shape} does not match tangent space {t.shape}")


def project_perp(a, t):
    """``(I - U U^T) a (I - V V^T)``."""
    a = np.asarray(a, dtype=float)
    _check_tangent(a, t)
    if t.rank == 0:
        return a.copy()
    left = a - t.u @ (t.u.T @ a)
    return left - (left @ t.v) @ t.v.T


def project_tangent(a, t, mode="perp"):
    """Project onto the tangent space (``mode="onto"``) or its complement."""
    perp = project_perp(a, t)
    if mode == "perp":
        return perp
    if mode == "onto":
        return np.asarray(a, dtype=float) - perp
    raise InputError(f"mode must be 'onto' or 'perp', got {mode!r}")


def norm(a, kind="fro"):
    """Matrix norm: ``fro``, ``op``, ``nuclear``, ``two_inf`` or ``max_abs``."""
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    if kind == "fro":
        # scale first so squares of tiny entries do not underflow
        peak = float(np.max(np.abs(a)))
        return peak * float(np.linalg.norm(a / peak)) if peak > 0 else 0.0
    if kind == "op":
        return float(_svd(a)[1][0])
    if kind == "nuclear":
        return float(np.sum(_svd(a)[1]))
    if kind == "two_inf":
        return float(np.max(np.sqrt(np.sum(a * a, axis=1))))
    if kind == "max_abs":
        return float(np.max(np.abs(a)))
    raise InputError(f"unknown norm kind {kind!r}")


def inner(a, b):
    """Trace inner product ``sum_ij a_ij b_ij``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.dot(a.ravel(), b.ravel()))


def incoherence(f, n1, n2):
    """``max(n1 ||U||_{2,inf}^2, n2 ||V||_{2,inf}^2) / r``."""
    r = f.u.shape[1]
    if r == 0:
        raise InputError("incoherence is undefined for a rank-0 factor")
    row_u = float(np.max(np.sum(f.u * f.u, axis=1)))
    row_v = float(np.max(np.sum(f.v * f.v, axis=1)))
    return max(row_u * n1 / r, row_v * n2 / r)
