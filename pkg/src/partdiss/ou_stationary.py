"""Stationary Ornstein-Uhlenbeck convolutions driven by a ``WienerPath``.

z1 solves dz = A z dt + dW1 mode by mode in the sine basis and is advanced
with the exact one-step law.  z2 solves dz = -sigma(x) z dt + dW2 pointwise
on the collocation grid with exponential weighting of the increment.

Both processes are defined on the master noise grid: the value at master
index m depends only on (seed, m, initialization mode).  Shifted views of a
path therefore see bit-identical values, which is what makes the cocycle
and shift checks exact.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, HorizonError
from .noise_process import CHUNK, WienerPath
from .spectral_core import BasisSpec, GridField, SpectralField

SIGMA_CONST_TOL = 1e-12


def ou_recursion(z0: np.ndarray, decay: np.ndarray, weight: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Run z <- decay*z + weight*dw[j] over the leading axis of ``dw``.

    Returns the states after each step.  Every OU path in the package goes
    through this loop so that chunked and one-shot evaluations agree to the
    last bit.
    """
    forced = weight * dw
    out = np.empty_like(forced)
    z = z0
    for j in range(forced.shape[0]):
        z = decay * z + forced[j]
        out[j] = z
    return out


def z1_coefficients(basis: BasisSpec, h: float):
    """Per-step decay and increment weight of the exact z1 update."""
    lam = basis.eigenvalues
    decay = np.exp(-lam * h)
    weight = np.sqrt(-np.expm1(-2.0 * lam * h) / (2.0 * lam * h))
    return decay, weight


def z2_coefficients(sigma: np.ndarray, h: float):
    return np.exp(-sigma * h), np.exp(-0.5 * sigma * h)


def _sigma_values(path: WienerPath, sigma) -> np.ndarray:
    basis = path.basis
    s = sigma.values if isinstance(sigma, GridField) else np.asarray(sigma, dtype=float)
    s = np.broadcast_to(s, basis.grid_shape).astype(float)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ConfigError("sigma must be positive everywhere (lower bound delta > 0)")
    return s


@dataclass(frozen=True)
class InitMode:
    """``exact_diagonal`` or ``burn_in`` with a burn time for z2."""

    kind: str = "exact_diagonal"
    t_burn: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exact_diagonal", "burn_in"):
            raise ConfigError(f"unknown OU initialization {self.kind!r}")
        if self.kind == "burn_in" and not self.t_burn > 0:
            raise ConfigError("burn_in needs T_burn > 0")

    @classmethod
    def parse(cls, mode) -> "InitMode":
        if isinstance(mode, InitMode):
            return mode
        if isinstance(mode, str):
            return cls(mode)
        if isinstance(mode, dict):
            return cls(mode.get("kind", "exact_diagonal"), float(mode.get("t_burn", 0.0)))
        kind, t = mode
        return cls(kind, float(t))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_burn": self.t_burn} if self.kind == "burn_in" else {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class OUState:
    z1: SpectralField
    z2: GridField
    t: float
    index: int  # master noise index of t


class OUProcess:
    """Lazily evaluated (z1, z2) on the master grid with chunk checkpoints.

    Chunk c holds the values at master indices start + c*CHUNK + [0, CHUNK).
    Checkpoints at chunk starts are kept forever (one state per chunk);
    full chunks live in a small LRU cache.
    """

    cache_chunks = 8

    def __init__(self, path: WienerPath, sigma, mode="exact_diagonal"):
        self.source = path.source
        self.basis = path.basis
        g = path.grid
        h = g.h_noise
        self.mode = InitMode.parse(mode)
        self.sigma = _sigma_values(path, sigma)
        self.start = g.i_min
        self.stop = g.i_max
        if self.mode.kind == "exact_diagonal":
            if np.ptp(self.sigma) >= SIGMA_CONST_TOL:
                raise ConfigError("exact_diagonal initialization needs constant sigma; use burn_in")
            self.valid_z2 = self.start
        else:
            burn = g.steps(self.mode.t_burn, "T_burn")
            if self.start + burn > self.stop:
                raise HorizonError(f"T_burn={self.mode.t_burn} exceeds the noise horizon")
            self.valid_z2 = self.start + burn
        self.dec1, self.w1 = z1_coefficients(self.basis, h)
        self.dec2, self.w2 = z2_coefficients(self.sigma, h)
        self._checkpoints = {0: self._initial()}
        self._chunks = OrderedDict()
        self._lock = threading.RLock()

    @classmethod
    def shared(cls, path: WienerPath, sigma, mode="exact_diagonal") -> "OUProcess":
        """One process per (path family, sigma, mode); shifted views share it."""
        mode = InitMode.parse(mode)
        s = _sigma_values(path, sigma)
        key = (s.tobytes(), mode)
        src = path.source
        with src._lock:
            proc = src.ou_cache.get(key)
            if proc is None:
                proc = cls(path, s, mode)
                src.ou_cache[key] = proc
        return proc

    def _initial(self):
        basis, src = self.basis, self.source
        lam = basis.eigenvalues
        xi1 = src.init_normals(1, self.start)
        z1 = np.sqrt(src.cov1.intensities / (2.0 * lam)) * xi1
        if self.mode.kind == "exact_diagonal":
            s0 = float(self.sigma.flat[0])
            xi2 = src.init_normals(2, self.start)
            z2 = basis.synthesize(np.sqrt(src.cov2.intensities / (2.0 * s0)) * xi2)
        else:
            z2 = np.zeros(basis.grid_shape)
        return z1, z2

    def _compute(self, c: int):
        m0 = self.start + c * CHUNK
        steps = min(CHUNK, self.stop - m0 + 1) - 1  # values m0 .. m0+steps
        nxt = m0 + CHUNK <= self.stop
        n_inc = steps + 1 if nxt else steps
        z1_0, z2_0 = self._checkpoints[c]
        dw1 = self.source.increments(1, m0, m0 + n_inc)
        dw2 = self.basis.synthesize(self.source.increments(2, m0, m0 + n_inc))
        r1 = ou_recursion(z1_0, self.dec1, self.w1, dw1)
        r2 = ou_recursion(z2_0, self.dec2, self.w2, dw2)
        z1 = np.concatenate([z1_0[None], r1[:steps]])
        z2 = np.concatenate([z2_0[None], r2[:steps]])
        if nxt:
            self._checkpoints[c + 1] = (r1[-1], r2[-1])
        z1.setflags(write=False)
        z2.setflags(write=False)
        return z1, z2

    def _chunk(self, c: int):
        with self._lock:
            blk = self._chunks.get(c)
            if blk is not None:
                self._chunks.move_to_end(c)
                return blk
            top = max(k for k in self._checkpoints if k <= c)
            for cc in range(top, c + 1):
                blk = self._compute(cc)
                self._chunks[cc] = blk
                while len(self._chunks) > self.cache_chunks:
                    self._chunks.popitem(last=False)
            return self._chunks[c]

    def check(self, m0: int, m1: int, need_z2: bool = True):
        lo = self.valid_z2 if need_z2 else self.start
        if m0 < lo or m1 > self.stop:
            raise HorizonError(f"OU values requested on master steps [{m0}, {m1}] outside [{lo}, {self.stop}]")

    def series(self, m0: int, m1: int, stride: int = 1, need_z2: bool = True):
        """z1 coefficients and z2 grid values at master indices m0, m0+stride, ..., <= m1."""
        self.check(m0, m1, need_z2)
        idx = np.arange(m0, m1 + 1, stride)
        z1 = np.empty((idx.size,) + self.basis.coeff_shape)
        z2 = np.empty((idx.size,) + self.basis.grid_shape)
        rel = idx - self.start
        chunks = rel // CHUNK
        for c in np.unique(chunks):
            sel = chunks == c
            b1, b2 = self._chunk(int(c))
            off = rel[sel] - c * CHUNK
            z1[sel] = b1[off]
            z2[sel] = b2[off]
        return z1, z2

    def at(self, m: int, need_z2: bool = True):
        z1, z2 = self.series(m, m, 1, need_z2)
        return z1[0], z2[0]


def init_stationary(path: WienerPath, sigma, mode="exact_diagonal") -> OUState:
    """Stationary OU state at the start of the path's horizon.

    With ``burn_in`` the returned state sits at t_min + T_burn; z2 before
    that time has not forgotten its zero start and is never exposed.
    """
    proc = OUProcess.shared(path, sigma, mode)
    m = proc.valid_z2
    z1, z2 = proc.at(m)
    h = path.h_noise
    return OUState(SpectralField(path.basis, z1), GridField(path.basis, z2), (m - path.shift_offset) * h, m)


def _advance(state: OUState, path: WienerPath, h: float) -> tuple:
    k = path.steps(h, "h")
    if k < 0:
        raise ValueError("OU step must be non-negative")
    m0 = state.index
    path.source.check(m0, m0 + k)
    return m0, k


def step_z1(state: OUState, path: WienerPath, h: float) -> OUState:
    """Exact-in-law z1 update over ``h`` (a multiple of h_noise); z2 is carried along."""
    m0, k = _advance(state, path, h)
    dec, w = z1_coefficients(path.basis, path.h_noise)
    z = state.z1.coeffs
    if k:
        z = ou_recursion(z, dec, w, path.source.increments(1, m0, m0 + k))[-1]
    return OUState(SpectralField(path.basis, z), state.z2, (m0 + k - path.shift_offset) * path.h_noise, m0 + k)


def step_z2(state: OUState, path: WienerPath, sigma, h: float) -> OUState:
    """Pointwise exponential update of z2 over ``h``; z1 is carried along."""
    s = _sigma_values(path, sigma)
    m0, k = _advance(state, path, h)
    dec, w = z2_coefficients(s, path.h_noise)
    z = state.z2.values
    if k:
        dw = path.basis.synthesize(path.source.increments(2, m0, m0 + k))
        z = ou_recursion(z, dec, w, dw)[-1]
    return OUState(state.z1, GridField(path.basis, z), (m0 + k - path.shift_offset) * path.h_noise, m0 + k)


def step(state: OUState, path: WienerPath, sigma, h: float) -> OUState:
    """Advance z1 and z2 together over ``h``."""
    a = step_z1(state, path, h)
    b = step_z2(state, path, sigma, h)
    return OUState(a.z1, b.z2, a.t, a.index)


# ---------------------------------------------------------------------------
# temperedness

@dataclass
class TemperednessReport:
    ladder: list  # (T', g(T'))
    expected_sup_unit: float
    threshold: float
    decreasing: bool
    verdict: str

    @property
    def consistent(self) -> bool:
        return self.verdict == "TEMPERED-CONSISTENT"


def temperedness_diagnostic(times, values, horizon: float, threshold: float = 0.05,
                            rungs: int = 4) -> TemperednessReport:
    """Finite-horizon temperedness trend of a positive series X(t).

    For T' on the dyadic ladder T/2^(rungs-1), ..., T/2, T computes
    g(T') = max over t in [T'/2, T'] of |log X(t)| / t.  The series is
    judged consistent with temperedness when g is non-increasing along the
    ladder and g(T) < threshold.  Also reports the mean over unit windows
    of sup X, a Monte Carlo estimate of E sup_[0,1] X.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.shape != x.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("temperedness series must be strictly positive")
    if t[0] > 0 or t[-1] < horizon * (1 - 1e-12):
        raise ValueError("series does not cover [0, T]")
    ladder = []
    for r in range(rungs - 1, -1, -1):
        Tp = horizon / 2 ** r
        sel = (t >= Tp / 2) & (t <= Tp * (1 + 1e-12))
        g = float(np.max(np.abs(np.log(x[sel])) / t[sel]))
        ladder.append((Tp, g))
    gs = [g for _, g in ladder]
    decreasing = all(b <= a for a, b in zip(gs, gs[1:]))
    n_win = int(math.floor(horizon))
    sups = [x[(t >= w) & (t <= w + 1)].max() for w in range(n_win) if np.any((t >= w) & (t <= w + 1))]
    esup = float(np.mean(sups)) if sups else float(x.max())
    ok = decreasing and gs[-1] < threshold
    return TemperednessReport(ladder, esup, threshold, decreasing,
                              "TEMPERED-CONSISTENT" if ok else "NOT-CONSISTENT")
