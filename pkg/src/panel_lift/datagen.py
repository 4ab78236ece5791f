"""Synthetic panels: low-rank ground truth, treatment patterns, noise, effects.

All randomness flows through :func:`rng_for`, which builds a Philox
(counter-based) generator from a 64-bit seed. Independent streams for one
experiment are obtained with :func:`derive_seed` from a master seed and a
tuple of labels, so trials can be generated in any order or in parallel.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from panel_lift.errors import DimensionMismatch, EmptyPattern, InputError
from panel_lift.estimator import TreatmentSet, treatment_set
from panel_lift.linalg import as_matrix

PATTERN_KINDS = ("block", "stagger", "adaptive", "iid", "single_row")


def derive_seed(master, *labels):
    """Hash ``(master, *labels)`` into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def _draw(value, rng):
    """An int, or a ``[lo, hi)`` pair drawn uniformly."""
    if value is None or isinstance(value, (int, np.integer)):
        return value
    lo, hi = value
    if hi <= lo:
        raise InputError(f"empty range [{lo}, {hi})")
    return int(rng.integers(lo, hi))


@dataclass(frozen=True)
class PatternSpec:
    """Treatment pattern family and its parameters.

    Integer parameters may also be given as ``(lo, hi)`` pairs, in which case
    each generated pattern draws them uniformly from ``[lo, hi)``.

    Attributes
    ----------
    kind : str
        One of ``block``, ``stagger``, ``adaptive``, ``iid``, ``single_row``.
    m1 : int or pair
        Number of treated rows (block, stagger).
    m2 : int or pair
        First treated column (block) or lower bound for adoption times (stagger).
    rows : sequence of int, optional
        Fixed treated rows, overriding the random choice of ``m1`` rows.
    a, b : int or pair
        Look-back window and promotion length (adaptive).
    p : float
        Treatment probability (iid).
    t0 : int
        First treated column of the single treated row.
    row : int
        Treated row for ``single_row``.
    strict : bool
        Stagger adoption times are drawn from ``{m2+1, ..., n2-1}`` when
        true, from ``{m2, ..., n2-1}`` otherwise.
    """

    kind: str
    m1: object = None
    m2: object = None
    rows: tuple = None
    a: object = None
    b: object = None
    p: float = None
    t0: int = 0
    row: int = 0
    strict: bool = True

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise InputError(f"unknown pattern kind {self.kind!r}; expected one of {PATTERN_KINDS}")
        if self.kind == "iid" and not (self.p is not None and 0.0 < self.p < 1.0):
            raise InputError("iid pattern needs p in (0, 1)")
        if self.kind in ("block", "stagger") and self.m2 is None:
            raise InputError(f"{self.kind} pattern needs m2")
        if self.kind in ("block", "stagger") and self.m1 is None and self.rows is None:
            raise InputError(f"{self.kind} pattern needs m1 or rows")
        if self.kind == "adaptive" and (self.a is None or self.b is None):
            raise InputError("adaptive pattern needs a and b")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("m1", "m2", "a", "b"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        if d.get("rows") is not None:
            d["rows"] = tuple(d["rows"])
        return cls(**d)

    def to_dict(self):
        out = {"kind": self.kind}
        for key in ("m1", "m2", "rows", "a", "b", "p"):
            val = getattr(self, key)
            if val is not None:
                out[key] = list(val) if isinstance(val, tuple) else val
        if self.kind == "single_row":
            out["t0"] = self.t0
            out["row"] = self.row
        if self.kind == "stagger":
            out["strict"] = self.strict
        return out


def _treated_rows(spec, n1, rng):
    if spec.rows is not None:
        rows = np.asarray(spec.rows, dtype=int)
        if rows.size == 0 or rows.min() < 0 or rows.max() >= n1:
            raise InputError(f"rows {spec.rows} out of range for {n1} rows")
        return np.unique(rows)
    m1 = _draw(spec.m1, rng)
    if not 1 <= m1 <= n1:
        raise InputError(f"m1 = {m1} outside [1, {n1}]")
    return np.sort(rng.choice(n1, size=m1, replace=False))


def adaptive_scan(row, a, b):
    """Promotion indicator for one reference row.

    Scanning from column ``a``, whenever the current value is the minimum of
    the trailing ``a`` values (ties count) the next ``b`` columns are marked.
    The scan then jumps to the last marked column, so a new window can start
    right after the current one but never overlaps it.
    """
    n = row.size
    out = np.zeros(n)
    j = a
    while j < n:
        if row[j] <= row[j - a + 1 : j + 1].min():
            out[j + 1 : j + 1 + b] = 1.0
            j += b
        else:
            j += 1
    return out


def gen_pattern(spec, n1, n2, seed, reference=None):
    """Generate one binary treatment matrix.

    Parameters
    ----------
    spec : PatternSpec
    n1, n2 : int
        Matrix dimensions.
    seed : int
        Seed for row selection and adoption times.
    reference : array_like, optional
        Matrix the adaptive rule scans (typically ``M*``); required for
        ``kind="adaptive"``.

    Raises
    ------
    EmptyPattern
        If no entry ends up treated.
    """
    rng = rng_for(seed)
    z = np.zeros((n1, n2))
    kind = spec.kind
    if kind in ("block", "stagger"):
        rows = _treated_rows(spec, n1, rng)
        m2 = _draw(spec.m2, rng)
        if not 0 <= m2 < n2:
            raise InputError(f"m2 = {m2} outside [0, {n2})")
        if kind == "block":
            z[rows, m2:] = 1.0
        else:
            lo = m2 + 1 if spec.strict else m2
            if lo > n2 - 1:
                raise InputError(f"no adoption time available after m2 = {m2} with {n2} columns")
            starts = rng.integers(lo, n2, size=rows.size)
            for i, t in zip(rows, starts):
                z[i, t:] = 1.0
    elif kind == "adaptive":
        if reference is None:
            raise InputError("adaptive pattern needs a reference matrix")
        ref = as_matrix(reference, "reference")
        if ref.shape != (n1, n2):
            raise DimensionMismatch(f"reference shape {ref.shape} != ({n1}, {n2})")
        a = _draw(spec.a, rng)
        b = _draw(spec.b, rng)
        if a < 1 or b < 1:
            raise InputError("adaptive a and b must be >= 1")
        for i in range(n1):
            z[i] = adaptive_scan(ref[i], a, b)
    elif kind == "iid":
        z = (rng.random((n1, n2)) < spec.p).astype(float)
    else:
        if not (0 <= spec.row < n1 and 0 <= spec.t0 < n2):
            raise InputError("single_row row/t0 out of range")
        z[spec.row, spec.t0 :] = 1.0
    if not z.any():
        raise EmptyPattern(f"{kind} pattern produced no treated entry")
    return z


def gen_lowrank_gamma(n1, n2, r, mean, seed):
    """``k U V^T`` with i.i.d. Gamma(2, 1) factors, scaled to grand mean ``mean``."""
    if not (1 <= r <= min(n1, n2)):
        raise InputError(f"rank {r} invalid for {n1}x{n2}")
    if mean <= 0:
        raise InputError("mean must be positive")
    rng = rng_for(seed)
    u = rng.standard_gamma(2.0, size=(n1, r))
    v = rng.standard_gamma(2.0, size=(n2, r))
    m = u @ v.T
    return m * (mean / m.mean())


def gen_noise(n1, n2, sigma, seed):
    """I.i.d. ``N(0, sigma^2)`` entries (``sigma`` is the standard deviation)."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros((n1, n2))
    return sigma * rng_for(seed).standard_normal((n1, n2))


def gen_effects(n1, n2, tau_star, sigma_delta, mode, seed):
    """Effect matrix ``tau_star + delta`` with unit-level (``mode="unit"``) or entry-level deviations."""
    if sigma_delta < 0:
        raise InputError("sigma_delta must be >= 0")
    if mode not in ("unit", "entry"):
        raise InputError(f"mode must be 'unit' or 'entry', got {mode!r}")
    if sigma_delta == 0:
        return np.full((n1, n2), float(tau_star))
    rng = rng_for(seed)
    if mode == "unit":
        delta = sigma_delta * rng.standard_normal(n1)
        return np.repeat((tau_star + delta)[:, None], n2, axis=1)
    return tau_star + sigma_delta * rng.standard_normal((n1, n2))


@dataclass
class SyntheticInstance:
    """Ground truth plus the observation ``O = M* + E + sum_m T_m o Z_m``."""

    m_star: np.ndarray
    e: np.ndarray
    z: TreatmentSet
    effects: list
    tau_star: np.ndarray
    o: np.ndarray
    seed: int = None
    params: dict = field(default_factory=dict)

    @property
    def deltas(self):
        return [t * zm - ts * zm for t, zm, ts in zip(self.effects, self.z, self.tau_star)]

    @property
    def e_hat(self):
        """``E + sum_m delta_m``, the idiosyncratic part seen by the estimator."""
        out = self.e.copy()
        for d in self.deltas:
            out = out + d
        return out


def assemble_instance(m_star, e, z, effects, seed=None, params=None):
    m_star = as_matrix(m_star, "M*")
    e = as_matrix(e, "E")
    z = treatment_set(z)
    if isinstance(effects, np.ndarray) and effects.ndim == 2:
        effects = [effects]
    effects = [as_matrix(t, "effects") for t in effects]
    if len(effects) != z.k:
        raise DimensionMismatch(f"{len(effects)} effect matrices for {z.k} treatments")
    for mat in [e, *effects]:
        if mat.shape != m_star.shape:
            raise DimensionMismatch(f"shape {mat.shape} != {m_star.shape}")
    if z.shape != m_star.shape:
        raise DimensionMismatch(f"treatment shape {z.shape} != {m_star.shape}")
    o = m_star + e
    for t, zm in zip(effects, z):
        o = o + t * zm
    tau_star = np.array([float(np.sum(t * zm)) / float(np.sum(zm)) for t, zm in zip(effects, z)])
    return SyntheticInstance(m_star, e, z, effects, tau_star, o, seed, dict(params or {}))
