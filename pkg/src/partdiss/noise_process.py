"""Trace-class Wiener noise on the sine basis.

Each channel carries independent scalar Brownian motions per sine mode,
scaled by per-mode intensities.  Increments are produced by a counter-based
generator (Philox) addressed by (seed, chunk of steps, channel, mode), so
any increment is a pure function of its address and paths can be shifted
in time by integer index arithmetic alone.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, HorizonError
from .reports import FAIL, INCONCLUSIVE, PASS, ConditionResult, ValidationReport
from .spectral_core import BasisSpec

CHUNK = 1024
_MASK64 = (1 << 64) - 1
INIT_CHANNEL_BASE = 100
KINDS = ("inverse_power", "explicit", "scaled_identity")


def mix_seed(master_seed: int, i: int) -> int:
    """Derive the seed of ensemble member ``i`` (SplitMix64 finalizer)."""
    z = (int(master_seed) + (int(i) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mode_id(k: tuple) -> int:
    """Resolution-independent integer label of a 1-based multi-index."""
    if len(k) == 1:
        return int(k[0])
    a, b = int(k[0]), int(k[1])
    return (a + b) * (a + b + 1) // 2 + b


def _mode_ids(basis: BasisSpec) -> np.ndarray:
    ks = np.arange(1, basis.N + 1)
    if basis.n == 1:
        return ks.copy()
    a, b = np.meshgrid(ks, ks, indexing="ij")
    return (a + b) * (a + b + 1) // 2 + b


_local = threading.local()


def _philox_key(seed: int) -> np.ndarray:
    keys = getattr(_local, "keys", None)
    if keys is None:
        keys = _local.keys = {}
    key = keys.get(seed)
    if key is None:
        if len(keys) >= 4096:
            keys.clear()
        key = keys[seed] = np.random.Philox(key=seed).state["state"]["key"]
    return key


def standard_normals(seed: int, words: tuple, size: int) -> np.ndarray:
    """``size`` standard normals from the Philox stream at counter ``words``.

    Equivalent to ``Generator(Philox(key=seed, counter=[0, *words]))``; a
    thread-local generator is re-pointed instead of rebuilt, which halves
    the cost for the short streams used here.
    """
    seed = int(seed)
    ctr = np.array([0] + [int(w) & _MASK64 for w in words], dtype=np.uint64)
    gen = getattr(_local, "gen", None)
    if gen is None:
        gen = _local.gen = np.random.Generator(np.random.Philox(0))
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": ctr, "key": _philox_key(seed)},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen.standard_normal(size)


# ---------------------------------------------------------------------------
# covariance

@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Diagonal covariance on the sine basis.

    ``inverse_power`` gives ``scale * lambda_k**-gamma``; ``explicit`` takes
    one intensity per retained mode (row-major over the multi-index);
    ``scaled_identity`` is ``c`` on every mode.
    """

    kind: str
    basis: BasisSpec
    target: int = 1
    gamma: float | None = None
    scale: float = 1.0
    values: tuple | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown covariance kind {self.kind!r}")
        if self.target not in (1, 2):
            raise ConfigError(f"covariance target must be channel 1 or 2, got {self.target}")
        if self.kind == "inverse_power":
            if self.gamma is None or not math.isfinite(self.gamma):
                raise ConfigError("inverse_power needs a finite gamma")
            if not self.scale >= 0:
                raise ConfigError("inverse_power scale must be non-negative")
            delta = self._inverse_power(self.basis.N)
        elif self.kind == "scaled_identity":
            if self.c is None or not self.c >= 0 or not math.isfinite(self.c):
                raise ConfigError("scaled_identity needs a finite c >= 0")
            delta = np.full(self.basis.coeff_shape, float(self.c))
        else:
            vals = np.asarray(self.values, dtype=float).reshape(-1)
            want = self.basis.N ** self.basis.n
            if vals.size != want:
                raise ConfigError(
                    f"explicit covariance has {vals.size} intensities, basis needs {want}")
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ConfigError("explicit intensities must be finite and non-negative")
            object.__setattr__(self, "values", tuple(float(v) for v in vals))
            delta = vals.reshape(self.basis.coeff_shape)
        delta.setflags(write=False)
        object.__setattr__(self, "intensities", delta)

    def _inverse_power(self, K: int) -> np.ndarray:
        lam = self.basis.d * self.basis.mode_numbers_sq(K)
        return self.scale * lam ** (-float(self.gamma))

    def intensities_upto(self, K: int) -> np.ndarray | None:
        """Intensities on K modes per axis, or None if the kind cannot extend."""
        if self.kind == "inverse_power":
            return self._inverse_power(K)
        if self.kind == "scaled_identity":
            return np.full((K,) * self.basis.n, float(self.c))
        return None

    @property
    def trace(self) -> float:
        return float(self.intensities.sum())

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "inverse_power":
            out["gamma"] = self.gamma
            if self.scale != 1.0:
                out["scale"] = self.scale
        elif self.kind == "scaled_identity":
            out["c"] = self.c
        else:
            out["values"] = list(self.values)
        return out

    @classmethod
    def from_dict(cls, d: dict, basis: BasisSpec, target: int) -> "CovarianceSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"inverse_power": {"gamma", "scale"}, "scaled_identity": {"c"},
                   "explicit": {"values"}}.get(kind)
        if allowed is None:
            raise ConfigError(f"unknown covariance kind {kind!r}")
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unexpected keys for {kind}: {sorted(extra)}")
        return cls(kind=kind, basis=basis, target=target, **d)


def inverse_power(basis: BasisSpec, gamma: float, target: int = 1, scale: float = 1.0) -> CovarianceSpec:
    return CovarianceSpec("inverse_power", basis, target, gamma=float(gamma), scale=float(scale))


def explicit(basis: BasisSpec, values, target: int = 1) -> CovarianceSpec:
    return CovarianceSpec("explicit", basis, target, values=tuple(np.asarray(values, float).reshape(-1)))


def scaled_identity(basis: BasisSpec, c: float, target: int = 1) -> CovarianceSpec:
    return CovarianceSpec("scaled_identity", basis, target, c=float(c))


# ---------------------------------------------------------------------------
# validation of the noise conditions

def _tail_fit(radius: np.ndarray, terms: np.ndarray):
    """Least-squares slope of log(term) against log|k| and its standard error."""
    keep = terms > 0
    x, y = np.log(radius[keep]), np.log(terms[keep])
    if x.size < 3 or np.ptp(x) == 0:
        return None, None
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = x.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return float(coef[0]), se


def _series_condition(name: str, basis: BasisSpec, terms_at, analytic_exponent, K: int) -> ConditionResult:
    """Summability verdict for a series over k in {1..}^n.

    ``terms_at(K)`` returns the term array on K modes per axis (None when
    the covariance cannot be extended beyond the retained modes), and
    ``analytic_exponent`` is the exact power of |k| governing the terms, if
    known.  Summability in n dimensions holds iff the exponent is < -n.
    """
    n = basis.n
    terms = terms_at(K)
    if terms is None:
        terms = terms_at(None)
    Kh = terms.shape[-1]
    partial = {}
    for frac in (4, 2, 1):
        kk = max(1, Kh // frac)
        sl = (slice(0, kk),) * n
        partial[kk] = float(terms[sl].sum())
    detail = {"partial_sums": partial, "threshold_exponent": -float(n)}

    if analytic_exponent is not None:
        if analytic_exponent == "zero":
            detail["analytic_exponent"] = None
            return ConditionResult(name, PASS, detail, note="all terms vanish")
        if analytic_exponent == "constant":
            detail["analytic_exponent"] = 0.0
            return ConditionResult(name, FAIL, detail, note="terms do not vanish")
        detail["analytic_exponent"] = analytic_exponent
        ok = analytic_exponent < -n
        note = f"p-series exponent {analytic_exponent:.6g} {'<' if ok else '>='} {-n}"
        return ConditionResult(name, PASS if ok else FAIL, detail, note=note)

    # explicit intensities: fit the tail
    radius = np.sqrt(basis.mode_numbers_sq(Kh))
    flat_r, flat_t = radius.reshape(-1), terms.reshape(-1)
    if not np.any(flat_t > 0):
        return ConditionResult(name, PASS, detail, note="all terms vanish")
    rmax = flat_r[flat_t > 0].max()
    if rmax < 0.5 * flat_r.max():
        return ConditionResult(name, PASS, detail, note="finitely supported intensities")
    tail = flat_r >= 0.5 * flat_r.max()
    beta, se = _tail_fit(flat_r[tail], flat_t[tail])
    detail.update(fitted_exponent=beta, stderr=se)
    if beta is None:
        return ConditionResult(name, INCONCLUSIVE, detail, note="too few tail terms to fit")
    if beta + 2 * se < -n:
        verdict = PASS
    elif beta - 2 * se > -n:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    return ConditionResult(name, verdict, detail,
                           note=f"fitted tail exponent {beta:.4g} +/- {2 * se:.2g} vs {-n}")


def validate_noise_assumptions(cov1: CovarianceSpec, cov2: CovarianceSpec, alpha: float,
                               tail_modes: int = 256) -> ValidationReport:
    """Check that Q2 is trace class and that sum delta_k lambda_k^(2 alpha + 1) converges.

    Inverse-power and scaled-identity covariances are decided by the exact
    p-series test on ``|k|``; explicit lists by a fitted tail exponent with a
    two-standard-error band (INCONCLUSIVE when the band straddles the
    threshold).  Partial sums up to ``tail_modes`` modes per axis are reported.
    """
    if not (0.0 < alpha < 0.5):
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if tail_modes < 64:
        raise ValueError(f"tail_modes must be >= 64, got {tail_modes}")
    basis = cov1.basis
    n = basis.n
    expo = 2.0 * alpha + 1.0

    def exponent(cov, extra):
        if cov.kind == "inverse_power":
            if cov.scale == 0:
                return "zero"
            return 2.0 * (extra - cov.gamma)
        if cov.kind == "scaled_identity":
            if cov.c == 0:
                return "zero"
            return "constant" if extra == 0 else 2.0 * extra
        return None

    def q2_terms(K):
        return cov2.intensities if K is None else cov2.intensities_upto(K)

    def reg_terms(K):
        d = cov1.intensities if K is None else cov1.intensities_upto(K)
        if d is None:
            return None
        lam = basis.d * basis.mode_numbers_sq(d.shape[-1])
        return d * lam ** expo

    q2 = _series_condition("trace_class_q2", basis, q2_terms, exponent(cov2, 0.0), tail_modes)
    reg = _series_condition("noise_regularity", basis, reg_terms, exponent(cov1, expo), tail_modes)
    report = ValidationReport("noise", [q2, reg],
                              scope={"alpha": alpha, "tail_modes": tail_modes, "n": n})

    if cov1.kind == "inverse_power" and cov1.scale > 0:
        g = cov1.gamma
        literal = g > expo + n / 2.0
        sufficient = (g > n / 2.0 - 1.0) and (2.0 * alpha < g - n / 2.0 + 1.0)
        reg.detail.update(gamma_threshold=expo + n / 2.0, sufficient_condition_holds=sufficient)
        if literal != sufficient:
            msg = (f"discrepancy: the stated sufficient condition (gamma > n/2 - 1 and "
                   f"2*alpha < gamma - n/2 + 1) {'holds' if sufficient else 'fails'} for "
                   f"gamma={g}, alpha={alpha}, but the series test needs gamma > {expo + n / 2.0:.6g}")
            reg.note += "; " + msg
            report.notes.append(msg)
    return report


# ---------------------------------------------------------------------------
# time grid and paths

@dataclass(frozen=True)
class NoiseGrid:
    """Two-sided master time grid; step j covers [j*h, (j+1)*h]."""

    h_noise: float
    t_min: float
    t_max: float
    seed: int

    def __post_init__(self):
        if not self.h_noise > 0:
            raise ConfigError("h_noise must be positive")
        if self.t_min > 0 or self.t_max < 0:
            raise ConfigError("noise horizon must contain t=0")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "i_min", self.steps(self.t_min, "t_min"))
        object.__setattr__(self, "i_max", self.steps(self.t_max, "t_max"))

    def steps(self, t: float, what: str = "time") -> int:
        """Number of noise steps in ``t``; rejects non-commensurate values."""
        q = t / self.h_noise
        r = round(q)
        if abs(q - r) > 1e-9 * max(1.0, abs(q)):
            raise ConfigError(f"{what}={t!r} is not a multiple of h_noise={self.h_noise!r}")
        return int(r)


class NoiseSource:
    """Increment generator and caches shared by a path and all its shifts."""

    cache_chunks = 32

    def __init__(self, grid: NoiseGrid, cov1: CovarianceSpec, cov2: CovarianceSpec):
        self.grid, self.cov1, self.cov2 = grid, cov1, cov2
        self.basis = cov1.basis
        h = grid.h_noise
        self.amplitude = {1: np.sqrt(cov1.intensities * h), 2: np.sqrt(cov2.intensities * h)}
        self.ids = _mode_ids(self.basis)
        self._chunks = OrderedDict()
        self._lock = threading.RLock()
        self.ou_cache = {}

    def _chunk(self, channel: int, c: int) -> np.ndarray:
        key = (channel, c)
        with self._lock:
            blk = self._chunks.get(key)
            if blk is not None:
                self._chunks.move_to_end(key)
                return blk
        amp = self.amplitude[channel]
        blk = np.zeros((CHUNK,) + self.basis.coeff_shape)
        for idx in zip(*np.nonzero(amp)):
            z = standard_normals(self.grid.seed, (c, channel, self.ids[idx]), CHUNK)
            blk[(slice(None),) + idx] = amp[idx] * z
        blk.setflags(write=False)
        with self._lock:
            self._chunks[key] = blk
            while len(self._chunks) > self.cache_chunks:
                self._chunks.popitem(last=False)
        return blk

    def check(self, j0: int, j1: int):
        g = self.grid
        if j0 < g.i_min or j1 > g.i_max:
            raise HorizonError(
                f"noise steps [{j0}, {j1}) fall outside the horizon [{g.i_min}, {g.i_max}) "
                f"(t in [{g.t_min}, {g.t_max}])")

    def increments(self, channel: int, j0: int, j1: int) -> np.ndarray:
        """Scaled increments for master steps j0 <= j < j1, shape (j1-j0, *coeff_shape)."""
        if channel not in (1, 2):
            raise ValueError(f"channel must be 1 or 2, got {channel}")
        self.check(j0, j1)
        out = np.empty((max(j1 - j0, 0),) + self.basis.coeff_shape)
        j = j0
        while j < j1:
            c = j // CHUNK
            lo = j - c * CHUNK
            hi = min(CHUNK, j1 - c * CHUNK)
            out[j - j0: j - j0 + hi - lo] = self._chunk(channel, c)[lo:hi]
            j += hi - lo
        return out

    def init_normals(self, channel: int, anchor: int) -> np.ndarray:
        """Standard normals per mode from the reserved initialization streams."""
        out = np.empty(self.basis.coeff_shape)
        for idx in np.ndindex(*self.basis.coeff_shape):
            out[idx] = standard_normals(self.grid.seed, (anchor, INIT_CHANNEL_BASE + channel, self.ids[idx]), 1)[0]
        return out


@dataclass(frozen=True, eq=False)
class WienerPath:
    """A two-sided Wiener path viewed through the shift ``theta_{shift_offset*h}``.

    Relative step j of this view is master step ``j + shift_offset``.
    """

    grid: NoiseGrid
    cov1: CovarianceSpec
    cov2: CovarianceSpec
    shift_offset: int = 0
    source: NoiseSource | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.cov1.basis is not self.cov2.basis:
            b1, b2 = self.cov1.basis, self.cov2.basis
            if (b1.n, b1.N, b1.M, b1.d) != (b2.n, b2.N, b2.M, b2.d):
                raise ConfigError("cov1 and cov2 refer to different bases")
        if self.source is None:
            object.__setattr__(self, "source", NoiseSource(self.grid, self.cov1, self.cov2))

    @property
    def basis(self) -> BasisSpec:
        return self.cov1.basis

    @property
    def h_noise(self) -> float:
        return self.grid.h_noise

    def master(self, j: int) -> int:
        return int(j) + self.shift_offset

    def steps(self, t: float, what: str = "time") -> int:
        return self.grid.steps(t, what)

    @property
    def window(self) -> tuple:
        """Relative time window covered by this view."""
        h = self.grid.h_noise
        return ((self.grid.i_min - self.shift_offset) * h, (self.grid.i_max - self.shift_offset) * h)

    def increment(self, channel: int, k, j: int) -> float:
        k = (k,) if np.isscalar(k) else tuple(k)
        if len(k) != self.basis.n or min(k) < 1 or max(k) > self.basis.N:
            raise IndexError(f"mode {k} outside the retained modes")
        m = self.master(j)
        blk = self.source.increments(channel, m, m + 1)
        return float(blk[(0,) + tuple(ki - 1 for ki in k)])

    def increments(self, channel: int, j0: int, j1: int) -> np.ndarray:
        return self.source.increments(channel, self.master(j0), self.master(j1))

    def omega(self, channel: int, r: float) -> np.ndarray:
        """Coefficients of omega(r) for this view; omega(0) = 0."""
        s = self.steps(r, "r")
        if s >= 0:
            return self.increments(channel, 0, s).sum(axis=0)
        return -self.increments(channel, s, 0).sum(axis=0)


def make_path(grid: NoiseGrid, cov1: CovarianceSpec, cov2: CovarianceSpec) -> WienerPath:
    return WienerPath(grid, cov1, cov2)


def wiener_shift(path: WienerPath, s: float) -> WienerPath:
    """theta_s applied to ``path`` by index arithmetic; s must be commensurate."""
    k = path.steps(s, "shift")
    new = path.shift_offset + k
    g = path.grid
    if not g.i_min <= new <= g.i_max:
        raise HorizonError(f"shift by {s} moves time 0 outside the horizon [{g.t_min}, {g.t_max}]")
    if k == 0:
        return path
    return replace(path, shift_offset=new)
