"""Experiment configuration: parsing, validation and instance generation."""

import hashlib
import json
from dataclasses import dataclass, field

from panel_lift.datagen import (
    PATTERN_KINDS,
    PatternSpec,
    assemble_instance,
    derive_seed,
    gen_effects,
    gen_lowrank_gamma,
    gen_noise,
    gen_pattern,
)
from panel_lift.errors import ConfigError, InputError

ESTIMATORS = ("debiased_convex", "plain_convex", "mcnnm", "rsc", "ols")

#: Streams derived from one master seed; labels must stay distinct.
STREAMS = ("factors", "pattern", "noise", "effects")


@dataclass
class ExperimentConfig:
    n1: int
    n2: int
    rank: int
    sigma: float = 1.0
    mean: float = 10.0
    tau_star: float = 1.0
    sigma_delta: float = 1.0
    effect_mode: str = "entry"
    pattern: PatternSpec = None
    patterns: list = field(default_factory=list)
    estimators: tuple = ("debiased_convex",)
    lambda_policy: str = "tune"
    lambda_value: float = None
    tune_rank: int = None
    trials: int = 1
    seed: int = 0
    alpha: float = 0.05
    jobs: int = 1
    adaptive_reference: str = "observed"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def effective_tune_rank(self):
        return self.tune_rank if self.tune_rank is not None else self.rank

    def named_patterns(self):
        """``[(name, PatternSpec)]``: ``patterns`` if given, else the single ``pattern``."""
        if self.patterns:
            return list(self.patterns)
        return [(self.pattern.kind, self.pattern)]


def _int(d, key, problems, minimum=None, default=None, required=False):
    if key not in d:
        if required:
            problems.append(f"missing required field '{key}'")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, int):
        problems.append(f"'{key}' must be an integer, got {val!r}")
        return default
    if minimum is not None and val < minimum:
        problems.append(f"'{key}' must be >= {minimum}, got {val}")
    return val


def _float(d, key, problems, minimum=None, default=None, exclusive=False):
    if key not in d:
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        problems.append(f"'{key}' must be a number, got {val!r}")
        return default
    if minimum is not None and (val <= minimum if exclusive else val < minimum):
        problems.append(f"'{key}' must be {'>' if exclusive else '>='} {minimum}, got {val}")
    return float(val)


def _pattern(d, where, problems):
    if not isinstance(d, dict):
        problems.append(f"{where} must be an object")
        return None
    d = dict(d)
    name = d.pop("name", None)
    if d.get("kind") not in PATTERN_KINDS:
        problems.append(f"{where}.kind must be one of {list(PATTERN_KINDS)}, got {d.get('kind')!r}")
        return None
    try:
        spec = PatternSpec.from_dict(d)
    except (InputError, TypeError) as exc:
        problems.append(f"{where}: {exc}")
        return None
    return (name or spec.kind, spec)


KNOWN_KEYS = {
    "n1", "n2", "n", "rank", "sigma", "mean", "effect", "pattern", "patterns", "estimators",
    "lambda", "trials", "seed", "alpha", "jobs", "adaptive_reference",
}


def parse_config(d):
    """Validate a config mapping, collecting every problem before raising."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    problems = [f"unknown field '{k}'" for k in sorted(set(d) - KNOWN_KEYS)]
    n = _int(d, "n", problems, minimum=2)
    n1 = _int(d, "n1", problems, minimum=2, default=n, required=n is None)
    n2 = _int(d, "n2", problems, minimum=2, default=n, required=n is None)
    rank = _int(d, "rank", problems, minimum=1, required=True)
    if rank is not None and n1 and n2 and rank > min(n1, n2):
        problems.append(f"'rank' {rank} exceeds min(n1, n2) = {min(n1, n2)}")
    sigma = _float(d, "sigma", problems, minimum=0.0, default=1.0)
    mean = _float(d, "mean", problems, minimum=0.0, default=10.0, exclusive=True)
    effect = d.get("effect", {})
    if not isinstance(effect, dict):
        problems.append("'effect' must be an object")
        effect = {}
    tau_star = _float(effect, "tau_star", problems, default=1.0)
    sigma_delta = _float(effect, "sigma_delta", problems, minimum=0.0, default=1.0)
    mode = effect.get("mode", "entry")
    if mode not in ("unit", "entry"):
        problems.append(f"effect.mode must be 'unit' or 'entry', got {mode!r}")
    pattern = None
    patterns = []
    if "patterns" in d:
        if not isinstance(d["patterns"], list) or not d["patterns"]:
            problems.append("'patterns' must be a non-empty list")
        else:
            for i, p in enumerate(d["patterns"]):
                got = _pattern(p, f"patterns[{i}]", problems)
                if got:
                    patterns.append(got)
    if "pattern" in d:
        got = _pattern(d["pattern"], "pattern", problems)
        pattern = got[1] if got else None
    elif not patterns:
        problems.append("missing required field 'pattern'")
    if pattern is None and patterns:
        pattern = patterns[0][1]
    estimators = d.get("estimators", ["debiased_convex"])
    if not isinstance(estimators, list) or not estimators:
        problems.append("'estimators' must be a non-empty list")
        estimators = []
    for est in estimators:
        if est not in ESTIMATORS:
            problems.append(f"unknown estimator {est!r}; expected a subset of {list(ESTIMATORS)}")
    lam = d.get("lambda", {"policy": "tune"})
    lam_policy, lam_value, tune_rank = "tune", None, None
    if not isinstance(lam, dict) or lam.get("policy") not in ("tune", "fixed"):
        problems.append("'lambda' must be {'policy': 'tune'|'fixed', ...}")
    else:
        lam_policy = lam["policy"]
        if lam_policy == "fixed":
            lam_value = _float(lam, "value", problems, minimum=0.0, exclusive=True)
            if lam_value is None:
                problems.append("lambda.value is required for the fixed policy")
        else:
            tune_rank = _int(lam, "rank", problems, minimum=1)
    trials = _int(d, "trials", problems, minimum=1, default=1)
    seed = _int(d, "seed", problems, minimum=0, default=0)
    if seed is not None and seed >= 2**64:
        problems.append("'seed' must fit in 64 bits")
    alpha = _float(d, "alpha", problems, default=0.05)
    if alpha is not None and not 0.0 < alpha < 1.0:
        problems.append(f"'alpha' must lie in (0, 1), got {alpha}")
    jobs = _int(d, "jobs", problems, minimum=1, default=1)
    reference = d.get("adaptive_reference", "observed")
    if reference not in ("observed", "m_star"):
        problems.append("'adaptive_reference' must be 'observed' or 'm_star'")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        n1=n1, n2=n2, rank=rank, sigma=sigma, mean=mean, tau_star=tau_star,
        sigma_delta=sigma_delta, effect_mode=mode, pattern=pattern, patterns=patterns,
        estimators=tuple(estimators), lambda_policy=lam_policy, lambda_value=lam_value,
        tune_rank=tune_rank, trials=trials, seed=seed, alpha=alpha, jobs=jobs,
        adaptive_reference=reference, raw=d,
    )


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(d)


def trial_seed(cfg, trial, *labels):
    return derive_seed(cfg.seed, trial, *labels)


def simulate_instance(cfg, trial=0, pattern=None, pattern_name=None):
    """Draw the ground-truth bundle for one trial from independent streams."""
    pattern = pattern or cfg.pattern
    labels = (pattern_name,) if pattern_name else ()
    n1, n2 = cfg.n1, cfg.n2
    m_star = gen_lowrank_gamma(n1, n2, cfg.rank, cfg.mean, trial_seed(cfg, trial, *labels, "factors"))
    e = gen_noise(n1, n2, cfg.sigma, trial_seed(cfg, trial, *labels, "noise"))
    reference = m_star + e if cfg.adaptive_reference == "observed" else m_star
    z = gen_pattern(pattern, n1, n2, trial_seed(cfg, trial, *labels, "pattern"), reference=reference)
    effects = gen_effects(
        n1, n2, cfg.tau_star, cfg.sigma_delta, cfg.effect_mode, trial_seed(cfg, trial, *labels, "effects")
    )
    return assemble_instance(
        m_star, e, z, effects,
        seed=trial_seed(cfg, trial, *labels),
        params={"trial": trial, "pattern": pattern.to_dict()},
    )
