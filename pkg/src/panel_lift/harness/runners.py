"""Experiment runners behind the CLI subcommands.

Every runner returns a JSON-ready document carrying the config hash and the
package version. Monte Carlo runners fan trials out over processes; each
trial derives its own seeds from the master seed, and records are sorted by
trial index before writing, so outputs do not depend on the job count.
"""

import csv
import functools
import hashlib
import io as _io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from scipy.stats import kstest
from threadpoolctl import threadpool_limits

from panel_lift import __version__
from panel_lift.baselines import mc_nnm, ols_twfe, rsc
from panel_lift.conditions import block_transform, check_assumption3, proposition2_instance, tangent_of
from panel_lift.datagen import derive_seed, gen_lowrank_gamma, rng_for
from panel_lift.errors import ConfigError, DimensionMismatch, InputError, PanelLiftError
from panel_lift.harness import io
from panel_lift.harness.config import simulate_instance
from panel_lift.inference import standardized_stat
from panel_lift.linalg import incoherence, svd_thin
from panel_lift.pipeline import estimate_effects

#: Patterns whose treated rows are contiguous suffixes, as RSC requires.
RSC_PATTERNS = ("block", "stagger", "single_row")

#: Intervals with standard error below this are treated as degenerate: they
#: cover only when ``|tau_d - tau*|`` is within the same tolerance.
DEGENERATE_TOL = 1e-9


@functools.lru_cache(maxsize=1)
def version_string():
    """``<version>`` or ``<version>+<git describe>`` when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    desc = out.stdout.strip()
    return f"v{__version__}+{desc}" if out.returncode == 0 and desc else f"v{__version__}"


def params_hash(params):
    blob = json.dumps(io._jsonable(params), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config_hash):
    return {"config_hash": config_hash, "version": version_string()}


def resolve_jobs(jobs=None, default=1):
    """``PANEL_LIFT_THREADS`` wins over the flag, which wins over the config."""
    env = os.environ.get("PANEL_LIFT_THREADS")
    if env is not None and env.strip():
        try:
            val = int(env)
        except ValueError:
            raise ConfigError(f"PANEL_LIFT_THREADS must be a positive integer, got {env!r}") from None
        if val < 1:
            raise ConfigError(f"PANEL_LIFT_THREADS must be a positive integer, got {env!r}")
        return val
    return int(jobs) if jobs is not None else int(default)


def _limit_blas():
    threadpool_limits(1)


def _fan_out(fn, tasks, jobs):
    """Map ``fn`` over ``tasks`` with single-threaded BLAS, in-process or in a pool."""
    if jobs <= 1 or len(tasks) <= 1:
        with threadpool_limits(1):
            return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn"), initializer=_limit_blas) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _error_fields(exc):
    return {"error_code": getattr(exc, "code", type(exc).__name__), "error": str(exc)}


# ---------------------------------------------------------------- estimate


def _load_inputs(o_path, z_paths, header=False):
    o = io.read_matrix(o_path, header=header)
    zs = [io.read_treatment(p, header=header) for p in z_paths]
    if not zs:
        raise InputError("at least one treatment file is required")
    for p, z in zip(z_paths, zs):
        if z.shape != o.shape:
            raise DimensionMismatch(f"{p}: treatment shape {z.shape} != outcome shape {o.shape}")
    return o, zs


def estimate_document(o, zs, lam=None, tune_rank=None, alpha=0.05, rel_tol=1e-10):
    res = estimate_effects(o, np.stack(zs), lam=lam, tune_rank=tune_rank, alpha=alpha, rel_tol=rel_tol)
    sol = res.sol
    policy = "fixed" if lam is not None else ("tune" if tune_rank is not None else "default")
    doc = {
        "k": len(zs),
        "shape": list(o.shape),
        "tau_hat": sol.tau_hat.tolist(),
        "tau_d": res.tau_d.tolist(),
        "lambda": sol.lam,
        "lambda_policy": policy,
        "rank": sol.rank,
        "solver": {
            "iterations": sol.iterations,
            "converged": sol.converged,
            "solver_calls": res.solver_calls,
            "objective": sol.objective_trace[-1] if sol.objective_trace else None,
            "rel_tol": rel_tol,
        },
        "debias": {
            "gram": res.debias.gram.tolist(),
            "delta1": res.debias.delta1.tolist(),
            "gram_condition": res.debias.gram_condition,
        },
        "certificate": {
            "op_norm": res.certificate.op_norm,
            "tangent_residual": res.certificate.tangent_residual,
        },
        "conditions": [c.to_dict() for c in res.conditions],
    }
    if res.inference is not None:
        inf = res.inference
        doc["inference"] = {
            "variance": inf.variance,
            "std_err": inf.std_err,
            "ci_lo": inf.ci_lo,
            "ci_hi": inf.ci_hi,
            "alpha": inf.alpha,
        }
        doc["m_d"] = res.m_d.tolist()
    return doc


def run_estimate(o_path, z_paths, lam=None, tune_rank=None, alpha=0.05, header=False):
    o, zs = _load_inputs(o_path, z_paths, header=header)
    doc = estimate_document(o, zs, lam=lam, tune_rank=tune_rank, alpha=alpha)
    params = {
        "o": Path(o_path).name,
        "z": [Path(p).name for p in z_paths],
        "lambda": lam,
        "tune_rank": tune_rank,
        "alpha": alpha,
    }
    doc.update(provenance(params_hash(params)))
    return doc


# ---------------------------------------------------------------- simulate


def run_simulate(cfg, out_dir, trial=0):
    """Write one synthetic instance as CSV matrices plus ``manifest.json``."""
    out = io.ensure_dir(out_dir)
    inst = simulate_instance(cfg, trial)
    io.write_matrix(out / "m_star.csv", inst.m_star)
    io.write_matrix(out / "e.csv", inst.e)
    io.write_matrix(out / "o.csv", inst.o)
    files = {"m_star": "m_star.csv", "e": "e.csv", "o": "o.csv", "z": [], "effects": []}
    for m, (zm, tm) in enumerate(zip(inst.z, inst.effects), start=1):
        io.write_matrix(out / f"z_{m}.csv", zm)
        io.write_matrix(out / f"effects_{m}.csv", tm)
        files["z"].append(f"z_{m}.csv")
        files["effects"].append(f"effects_{m}.csv")
    manifest = {
        "seed": cfg.seed,
        "trial": trial,
        "instance_seed": inst.seed,
        "tau_star": inst.tau_star.tolist(),
        "tau_star_nominal": cfg.tau_star,
        "shape": [cfg.n1, cfg.n2],
        "params": cfg.raw,
        "pattern": inst.params["pattern"],
        "files": files,
    }
    manifest.update(provenance(cfg.config_hash))
    io.write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- coverage

RECORD_FIELDS = (
    "trial", "seed", "tau_star", "tau_hat", "tau_d", "err_hat", "err_d", "variance", "std_err",
    "ci_lo", "ci_hi", "covered", "stat", "lambda", "rank", "c1_ratio", "c2_ratio", "error_code",
)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _records_csv(records, fields):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for rec in records:
        w.writerow([_fmt(rec.get(f)) for f in fields])
    return buf.getvalue()


def _lambda_args(cfg):
    if cfg.lambda_policy == "fixed":
        return {"lam": cfg.lambda_value}
    return {"tune_rank": cfg.effective_tune_rank}


def coverage_trial(cfg, trial):
    """One coverage trial; failures become records with an error code."""
    t0 = time.perf_counter()
    rec = {"trial": trial, "seed": derive_seed(cfg.seed, trial)}
    try:
        inst = simulate_instance(cfg, trial)
        tau_star = float(inst.tau_star[0])
        rec["tau_star"] = tau_star
        res = estimate_effects(inst.o, inst.z, alpha=cfg.alpha, **_lambda_args(cfg))
        tau_d = float(res.tau_d[0])
        tau_hat = float(res.tau_hat[0])
        inf = res.inference
        if inf.std_err <= DEGENERATE_TOL:
            covered = abs(tau_d - tau_star) <= DEGENERATE_TOL
            stat = None
        else:
            covered = inf.covers(tau_star)
            stat = standardized_stat(tau_d, tau_star, inf.variance)
        cond = res.conditions[0]
        rec.update(
            tau_hat=tau_hat,
            tau_d=tau_d,
            err_hat=abs(tau_hat - tau_star),
            err_d=abs(tau_d - tau_star),
            variance=inf.variance,
            std_err=inf.std_err,
            ci_lo=inf.ci_lo,
            ci_hi=inf.ci_hi,
            covered=bool(covered),
            stat=stat,
            rank=res.sol.rank,
            c1_ratio=cond.c1_ratio,
            c2_ratio=cond.c2_ratio,
        )
        rec["lambda"] = res.sol.lam
    except PanelLiftError as exc:
        rec["error_code"] = exc.code
    return rec, time.perf_counter() - t0


def _coverage_task(args):
    return coverage_trial(*args)


def summarize_coverage(records):
    ok = [r for r in records if not r.get("error_code")]
    stats = np.array([r["stat"] for r in ok if r.get("stat") is not None], dtype=float)
    failures = {}
    for r in records:
        if r.get("error_code"):
            failures[r["error_code"]] = failures.get(r["error_code"], 0) + 1
    out = {
        "trials": len(records),
        "completed": len(ok),
        "failures": len(records) - len(ok),
        "failure_codes": failures,
        "coverage": (sum(bool(r["covered"]) for r in ok) / len(ok)) if ok else None,
        "degenerate": sum(1 for r in ok if r.get("stat") is None),
        "stat_mean": float(np.mean(stats)) if stats.size else None,
        "stat_var": float(np.var(stats, ddof=1)) if stats.size > 1 else None,
        "ks_distance": float(kstest(stats, "norm").statistic) if stats.size else None,
        "mean_abs_err_d": float(np.mean([r["err_d"] for r in ok])) if ok else None,
        "mean_abs_err_hat": float(np.mean([r["err_hat"] for r in ok])) if ok else None,
    }
    return out


def run_coverage(cfg, out_dir=None, jobs=None):
    """Repeat simulate-estimate-infer over ``cfg.trials`` seeds.

    Writes ``trial_records.csv`` (deterministic), ``timings.csv`` and
    ``summary.json`` when ``out_dir`` is given.
    """
    jobs = resolve_jobs(jobs, cfg.jobs)
    results = _fan_out(_coverage_task, [(cfg, t) for t in range(cfg.trials)], jobs)
    results.sort(key=lambda rt: rt[0]["trial"])
    records = [r for r, _ in results]
    summary = summarize_coverage(records)
    summary["alpha"] = cfg.alpha
    summary["jobs"] = jobs
    summary.update(provenance(cfg.config_hash))
    if out_dir is not None:
        out = io.ensure_dir(out_dir)
        (out / "trial_records.csv").write_text(_records_csv(records, RECORD_FIELDS))
        timings = [{"trial": r["trial"], "seconds": dt} for r, dt in results]
        (out / "timings.csv").write_text(_records_csv(timings, ("trial", "seconds")))
        io.write_json(out / "summary.json", summary)
    return summary, records


# ---------------------------------------------------------------- benchmark


def benchmark_trial(cfg, name, spec, trial):
    """All configured estimators on one instance of pattern ``name``."""
    rows = []
    try:
        inst = simulate_instance(cfg, trial, pattern=spec, pattern_name=name)
    except PanelLiftError as exc:
        return [
            {"pattern": name, "trial": trial, "estimator": est, **_error_fields(exc)}
            for est in cfg.estimators
        ]
    tau_star = float(inst.tau_star[0])
    denom = abs(cfg.tau_star) if cfg.tau_star != 0.0 else 1.0
    o, z = inst.o, inst.z[0]
    convex = None
    for est in cfg.estimators:
        row = {"pattern": name, "trial": trial, "estimator": est, "tau_star": tau_star}
        if est == "rsc" and spec.kind not in RSC_PATTERNS:
            row["error_code"] = "n/a"
            rows.append(row)
            continue
        t0 = time.perf_counter()
        try:
            if est in ("debiased_convex", "plain_convex"):
                if convex is None:
                    convex = estimate_effects(o, z, alpha=cfg.alpha, diagnose=False, **_lambda_args(cfg))
                tau = float(convex.tau_d[0] if est == "debiased_convex" else convex.tau_hat[0])
            elif est == "mcnnm":
                if cfg.lambda_policy == "fixed":
                    tau = mc_nnm(o, z, lam=cfg.lambda_value).tau
                else:
                    tau = mc_nnm(o, z, target_rank=cfg.effective_tune_rank).tau
            elif est == "rsc":
                tau = rsc(o, z, cfg.effective_tune_rank if cfg.lambda_policy != "fixed" else cfg.rank).tau
            else:
                tau = ols_twfe(o, z).tau
        except PanelLiftError as exc:
            row.update(_error_fields(exc))
            rows.append(row)
            continue
        row.update(tau=tau, abs_err=abs(tau - tau_star), norm_err=abs(tau - tau_star) / denom)
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _benchmark_task(args):
    return benchmark_trial(*args)


BENCH_FIELDS = ("pattern", "trial", "estimator", "tau_star", "tau", "abs_err", "norm_err", "error_code")


def summarize_benchmark(cfg, rows):
    table = []
    for name, spec in cfg.named_patterns():
        for est in cfg.estimators:
            sel = [r for r in rows if r["pattern"] == name and r["estimator"] == est]
            cell = {"pattern": name, "estimator": est}
            if est == "rsc" and spec.kind not in RSC_PATTERNS:
                cell.update(mean="n/a", std="n/a", mean_abs="n/a", completed=0, failures=0)
            else:
                errs = np.array([r["norm_err"] for r in sel if "norm_err" in r])
                abs_errs = np.array([r["abs_err"] for r in sel if "abs_err" in r])
                cell.update(
                    mean=float(errs.mean()) if errs.size else None,
                    std=float(errs.std(ddof=1)) if errs.size > 1 else (0.0 if errs.size else None),
                    mean_abs=float(abs_errs.mean()) if abs_errs.size else None,
                    completed=int(errs.size),
                    failures=len(sel) - int(errs.size),
                )
            table.append(cell)
    return table


def run_benchmark(cfg, out_dir=None, jobs=None):
    """Normalized error ``|tau - tau*| / |tau*_nominal|`` per pattern and estimator."""
    jobs = resolve_jobs(jobs, cfg.jobs)
    tasks = [(cfg, name, spec, t) for name, spec in cfg.named_patterns() for t in range(cfg.trials)]
    rows = [row for chunk in _fan_out(_benchmark_task, tasks, jobs) for row in chunk]
    order = {name: i for i, (name, _) in enumerate(cfg.named_patterns())}
    est_order = {e: i for i, e in enumerate(cfg.estimators)}
    rows.sort(key=lambda r: (order[r["pattern"]], r["trial"], est_order[r["estimator"]]))
    table = summarize_benchmark(cfg, rows)
    doc = {"trials": cfg.trials, "estimators": list(cfg.estimators), "table": table, "jobs": jobs}
    doc.update(provenance(cfg.config_hash))
    if out_dir is not None:
        out = io.ensure_dir(out_dir)
        (out / "benchmark_records.csv").write_text(_records_csv(rows, BENCH_FIELDS))
        (out / "benchmark.csv").write_text(
            _records_csv(table, ("pattern", "estimator", "mean", "std", "mean_abs", "completed", "failures"))
        )
        io.write_json(out / "benchmark.json", doc)
    return doc, rows


# ---------------------------------------------------------------- check


def run_check(z_path, rank=None, o_path=None, m_star_path=None, header=False):
    """Identification diagnostics of ``Z`` against a tangent space.

    The tangent space comes from ``M*`` when given, else from the rank-``rank``
    truncation of ``O``.
    """
    if (o_path is None) == (m_star_path is None):
        raise InputError("give exactly one of an outcome matrix or M*")
    base = io.read_matrix(m_star_path or o_path, header=header)
    z = io.read_treatment(z_path, header=header)
    if z.shape != base.shape:
        raise DimensionMismatch(f"treatment shape {z.shape} != matrix shape {base.shape}")
    if rank is None and m_star_path is None:
        raise InputError("rank is required when the tangent space comes from O")
    if rank is not None and not 1 <= rank <= min(base.shape):
        raise InputError(f"rank {rank} out of range for shape {base.shape}")
    t = tangent_of(base, rank)
    fac = svd_thin(base)
    s = fac.s[: t.rank]
    report = check_assumption3(z, t)
    doc = {
        "shape": list(base.shape),
        "rank": t.rank,
        "source": "m_star" if m_star_path else "o",
        "report": report.to_dict(),
        "blocks": block_transform(z, t).to_dict(),
        "incoherence": incoherence(fac, *base.shape) if m_star_path else None,
        "condition_number": float(s[0] / s[-1]) if s.size else None,
    }
    params = {"z": Path(z_path).name, "base": Path(m_star_path or o_path).name, "rank": rank}
    doc.update(provenance(params_hash(params)))
    return doc


# ---------------------------------------------------------------- fixtures


def run_fixtures(out_dir, n=8, seed=0):
    """Emit small reference inputs for ``check`` and ``estimate``.

    ``prop2/``: the unidentifiable pair ``M1 + Z = M2``.
    ``orthogonal/``: ``Z`` supported away from the rows and columns of ``M*``.
    ``bernoulli/``: i.i.d. ``Z`` with ``p = 0.1`` against a planted rank-2 ``M*`` at ``n = 60``.
    """
    out = io.ensure_dir(out_dir)
    written = {}

    d = io.ensure_dir(out / "prop2")
    z, m1, m2 = proposition2_instance(n)
    io.write_matrix(d / "z.csv", z)
    io.write_matrix(d / "m1.csv", m1)
    io.write_matrix(d / "m2.csv", m2)
    written["prop2"] = ["z.csv", "m1.csv", "m2.csv"]

    d = io.ensure_dir(out / "orthogonal")
    h = n // 2
    m = np.zeros((n, n))
    m[:h, :h] = 1.0
    z = np.zeros((n, n))
    z[h:, h:] = 1.0
    io.write_matrix(d / "m_star.csv", m)
    io.write_matrix(d / "z.csv", z)
    written["orthogonal"] = ["m_star.csv", "z.csv"]

    d = io.ensure_dir(out / "bernoulli")
    m = gen_lowrank_gamma(60, 60, 2, 10.0, derive_seed(seed, "bernoulli", "factors"))
    z = (rng_for(derive_seed(seed, "bernoulli", "pattern")).random((60, 60)) < 0.1).astype(float)
    io.write_matrix(d / "m_star.csv", m)
    io.write_matrix(d / "z.csv", z)
    written["bernoulli"] = ["m_star.csv", "z.csv"]

    doc = {"n": n, "seed": seed, "fixtures": written}
    doc.update(provenance(params_hash({"n": n, "seed": seed})))
    io.write_json(out / "fixtures.json", doc)
    return doc


def rank_mu_kappa(m):
    """Numerical rank, incoherence and condition number of ``m``."""
    fac = svd_thin(m)
    if fac.rank == 0:
        return 0, math.nan, math.nan
    return fac.rank, incoherence(fac, *m.shape), float(fac.s[0] / fac.s[-1])
