"""Plug-in variance, normal confidence intervals and standardized statistics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _normal

from panel_lift.errors import InputError, ZeroPerpProjection
from panel_lift.linalg import as_matrix, project_perp


@dataclass(frozen=True)
class InferenceResult:
    tau_d: float
    variance: float
    std_err: float
    ci_lo: float
    ci_hi: float
    alpha: float

    def covers(self, value):
        return self.ci_lo <= value <= self.ci_hi


def normal_quantile(p):
    return float(_normal.ppf(p))


def plugin_variance(o, z, m_d, tau_d, t_hat):
    """Plug-in estimate of the asymptotic variance of ``tau_d``.

    With ``P = P_perp(Z)`` on ``t_hat`` and residual
    ``e = O - M_d - tau_d Z``, returns ``sum P^2 e^2 / (sum P^2)^2``.
    """
    o = as_matrix(o, "O")
    z = as_matrix(z, "Z")
    m_d = as_matrix(m_d, "M_d")
    p = project_perp(z, t_hat)
    p2 = p * p
    mass = float(np.sum(p2))
    if mass <= 1e-24 * max(float(np.sum(z * z)), 1.0):
        raise ZeroPerpProjection("P_perp(Z) vanishes; variance is undefined")
    resid = o - m_d - tau_d * z
    return float(np.sum(p2 * resid * resid)) / mass**2


def confidence_interval(tau_d, variance, alpha=0.05):
    """Two-sided ``1 - alpha`` normal interval around ``tau_d``."""
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if variance < 0:
        raise InputError(f"variance must be >= 0, got {variance}")
    se = math.sqrt(variance)
    half = normal_quantile(1.0 - alpha / 2.0) * se
    return InferenceResult(float(tau_d), float(variance), se, tau_d - half, tau_d + half, alpha)


def standardized_stat(tau_d, tau_star, variance):
    if variance <= 0:
        raise InputError("variance must be positive to standardize")
    return (tau_d - tau_star) / math.sqrt(variance)
