"""End-to-end estimation: solve, de-bias, infer, diagnose."""

from dataclasses import dataclass

import numpy as np

from panel_lift.conditions import check_assumption3
from panel_lift.estimator import (
    debias_counterfactual,
    debias_tau,
    default_lambda,
    dual_certificate,
    solve_convex,
    treatment_set,
    tune_lambda,
)
from panel_lift.inference import confidence_interval, plugin_variance
from panel_lift.linalg import as_matrix


@dataclass
class EstimateResult:
    sol: object
    debias: object
    certificate: object
    solver_calls: int
    m_d: np.ndarray = None
    inference: object = None
    conditions: list = None

    @property
    def tau_d(self):
        return self.debias.tau_d

    @property
    def tau_hat(self):
        return self.sol.tau_hat


def estimate_effects(o, z, lam=None, tune_rank=None, alpha=0.05, rel_tol=1e-10, max_iter=20000, diagnose=True):
    """Run the full de-biased convex estimator.

    ``lam`` fixes the nuclear-norm weight; otherwise ``tune_rank`` tunes it
    down to that rank, and with neither the theory-scale default is used.
    For a single treatment the counterfactual is de-biased and a plug-in
    confidence interval is attached.
    """
    o = as_matrix(o, "O")
    z = treatment_set(z)
    calls = 1
    if lam is not None:
        sol = solve_convex(o, z, lam, max_iter=max_iter, rel_tol=rel_tol)
    elif tune_rank is not None:
        tuned = tune_lambda(o, z, tune_rank, max_iter=max_iter, rel_tol=rel_tol)
        sol, calls = tuned.sol, tuned.solver_calls
    else:
        sol = solve_convex(o, z, default_lambda(o), max_iter=max_iter, rel_tol=rel_tol)
    deb = debias_tau(sol, z)
    cert = dual_certificate(o, z, sol)
    out = EstimateResult(sol, deb, cert, calls)
    if z.k == 1:
        out.m_d = debias_counterfactual(sol, z)
        var = plugin_variance(o, z[0], out.m_d, float(deb.tau_d[0]), sol.m_hat.tangent)
        out.inference = confidence_interval(float(deb.tau_d[0]), var, alpha)
    if diagnose:
        out.conditions = [check_assumption3(zm, sol.m_hat.tangent) for zm in z]
    return out
