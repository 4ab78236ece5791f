"""Identifiability diagnostics for a treatment pattern against a tangent space."""

import math
from dataclasses import dataclass

import numpy as np

from panel_lift.errors import DimensionMismatch, InputError
from panel_lift.linalg import TangentSpace, as_matrix, norm, project_perp, svd_thin


@dataclass(frozen=True)
class ConditionReport:
    """Raw ratios for the two identification conditions and their verdicts.

    ``c1_ratio`` is ``(||Z V||_F^2 + ||Z^T U||_F^2) / ||Z||_F^2`` and
    ``c2_ratio`` is ``|<Z, U V^T>| ||P_perp(Z)||_op / ||P_perp(Z)||_F^2``.
    Each passes when it is at most ``threshold = 1 - C / log n``.
    """

    c1_ratio: float
    c2_ratio: float
    threshold: float
    pass_a: bool
    pass_b: bool
    perp_mass: float
    margin_a: float
    margin_b: float
    top_r_energy: float
    max_row_ones: int
    max_col_ones: int

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class BlockTransform:
    """Frobenius masses of ``Z`` in the ``[U, U_perp] x [V, V_perp]`` basis."""

    za: np.ndarray
    zb_fro: float
    zc_fro: float
    zd_fro: float
    trace_za: float

    def to_dict(self):
        return {
            "za": self.za.tolist(),
            "za_fro": float(np.linalg.norm(self.za)),
            "zb_fro": self.zb_fro,
            "zc_fro": self.zc_fro,
            "zd_fro": self.zd_fro,
            "trace_za": self.trace_za,
        }


def _check(z, t):
    z = as_matrix(z, "Z")
    if z.shape != t.shape:
        raise DimensionMismatch(f"Z shape {z.shape} does not match tangent space {t.shape}")
    return z


def check_assumption3(z, t, c1=1.0, c2=1.0, n=None):
    """Evaluate both identification ratios of ``z`` against tangent space ``t``.

    ``n`` sets the ``log n`` scale of the threshold; it defaults to
    ``max(min(n1, n2), 3)`` because for ``n < 3`` the threshold is not
    positive for unit constants.
    """
    z = _check(z, t)
    if c1 <= 0 or c2 <= 0:
        raise InputError("constants c1, c2 must be positive")
    if n is None:
        n = max(min(z.shape), 3)
    if n < 3:
        raise InputError(f"n must be >= 3, got {n}")
    z_sq = float(np.sum(z * z))
    if z_sq == 0.0:
        raise InputError("Z is the zero matrix")
    zv = z @ t.v
    ztu = z.T @ t.u
    c1_ratio = (float(np.sum(zv * zv)) + float(np.sum(ztu * ztu))) / z_sq
    perp = project_perp(z, t)
    perp_sq = float(np.sum(perp * perp))
    trace_za = float(np.sum((t.u.T @ z) * t.v.T)) if t.rank else 0.0
    if perp_sq > 0.0:
        c2_ratio = abs(trace_za) * norm(perp, "op") / perp_sq
    else:
        c2_ratio = math.inf if trace_za != 0.0 else 0.0
    threshold = 1.0 - min(c1, c2) / math.log(n)
    sv = np.linalg.svd(z, compute_uv=False)
    top_r = float(np.sum(sv[: t.rank] ** 2))
    return ConditionReport(
        c1_ratio=c1_ratio,
        c2_ratio=c2_ratio,
        threshold=threshold,
        pass_a=bool(c1_ratio <= threshold),
        pass_b=bool(c2_ratio <= threshold),
        perp_mass=perp_sq / z_sq,
        margin_a=threshold - c1_ratio,
        margin_b=threshold - c2_ratio,
        top_r_energy=top_r,
        max_row_ones=int(np.max(np.sum(z != 0, axis=1))),
        max_col_ones=int(np.max(np.sum(z != 0, axis=0))),
    )


def block_transform(z, t):
    z = _check(z, t)
    u, v = t.u, t.v
    za = u.T @ z @ v
    z_v = z @ v
    zc = z_v - u @ (u.T @ z_v)
    utz = u.T @ z
    zb = utz - (utz @ v) @ v.T
    zd = project_perp(z, t)
    return BlockTransform(
        za=za,
        zb_fro=float(np.linalg.norm(zb)),
        zc_fro=float(np.linalg.norm(zc)),
        zd_fro=float(np.linalg.norm(zd)),
        trace_za=float(np.trace(za)) if t.rank else 0.0,
    )


def proposition2_instance(n):
    """Unidentifiable triple ``(Z, M1, M2)`` with ``M1 + Z = M2``.

    ``Z`` has all-ones diagonal blocks of size ``n/2``; ``M1`` is ``-1`` on
    the top-left block and ``M2`` is ``+1`` on the bottom-right block. Both
    are rank one with incoherence 2, yet they differ by exactly ``Z``.
    """
    if n < 2 or n % 2:
        raise InputError(f"n must be a positive even integer, got {n}")
    h = n // 2
    z = np.zeros((n, n))
    z[:h, :h] = 1.0
    z[h:, h:] = 1.0
    m1 = np.zeros((n, n))
    m1[:h, :h] = -1.0
    m2 = np.zeros((n, n))
    m2[h:, h:] = 1.0
    return z, m1, m2


def tangent_of(m, rank=None):
    """Tangent space of ``m``, optionally of its best rank-``rank`` approximation."""
    f = svd_thin(m)
    if rank is not None:
        if f.rank < rank:
            raise InputError(f"matrix has numerical rank {f.rank} < requested {rank}")
        return TangentSpace(f.u[:, :rank], f.v[:, :rank])
    return f.tangent
