"""Pathwise integration of the transformed random PDE/ODE system.

With v = u - z, where z = (z1, z2) are the stationary OU convolutions, the
stochastic system becomes a random ODE in v:

    dv1/dt = A v1 - h(x, v1 + z1) - f(x, v1 + z1, v2 + z2)
    dv2/dt = -sigma(x) v2 - g(x, v1 + z1)

which is stepped with an exponential, semi-implicit or split-implicit
scheme.  ``em_reference`` integrates the original SDE directly with an
exponential Euler-Maruyama step and serves as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConfigError
from .models import ReactionModel
from .noise_process import WienerPath, wiener_shift
from .ou_stationary import OUProcess, OUState, ou_recursion, z1_coefficients, z2_coefficients
from .spectral_core import GridField, SpectralField, grid_l2_array, h1_array, l2_array, lp_norm_array

SCHEMES = ("etd1", "semi_implicit_euler", "lie_implicit")
FIELDS = ("u1", "u2", "v1", "v2", "z1", "z2")
NORMS = ("l2", "h1", "lp")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping options.

    ``norms`` selects the per-component norm columns recorded every
    ``record_every`` steps; ``lp_power`` is the exponent used for "lp".
    """

    h_step: float
    scheme: str = "etd1"
    record_every: int = 1
    norms: tuple = ("l2", "h1")
    lp_power: float = 4.0
    snapshots: bool = False
    newton_tol: float = 1e-12
    newton_maxit: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.h_step > 0:
            raise ConfigError("h_step must be positive")
        if int(self.record_every) < 1:
            raise ConfigError("record_every must be >= 1")
        bad = set(self.norms) - set(NORMS)
        if bad:
            raise ConfigError(f"unknown norms {sorted(bad)}")
        if not self.lp_power >= 1:
            raise ConfigError("lp_power must be >= 1")
        object.__setattr__(self, "norms", tuple(self.norms))
        object.__setattr__(self, "record_every", int(self.record_every))

    def to_dict(self) -> dict:
        return {"h_step": self.h_step, "scheme": self.scheme, "record_every": self.record_every,
                "norms": list(self.norms), "lp_power": self.lp_power, "snapshots": self.snapshots}


@dataclass(frozen=True, eq=False)
class SystemState:
    v1: SpectralField
    v2: GridField
    t: float


@dataclass
class TrajectoryRecord:
    """Norm time series, optional snapshots and the final state of a run.

    Column arrays have shape (len(times),) for single runs and
    (len(times), batch) for batched runs.
    """

    times: np.ndarray
    columns: dict
    final: dict
    snapshots: dict | None = None
    split: dict | None = None
    basis: object = None

    def column_names(self) -> list:
        return list(self.columns)

    def final_u(self):
        return self.final["u1"], self.final["u2"]


# ---------------------------------------------------------------------------
# stepping kernels

class Stepper:
    """One-step maps of the transformed system on (batched) arrays."""

    def __init__(self, basis, model: ReactionModel, h: float, scheme: str = "etd1",
                 newton_tol: float = 1e-12, newton_maxit: int = 50):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        self.basis, self.model, self.h, self.scheme = basis, model, h, scheme
        self.newton_tol, self.newton_maxit = newton_tol, newton_maxit
        self.M, self.P, self.N = basis.M, basis.padded_size, basis.N
        self.xM = basis.coords(self.M)
        self.xP = basis.coords(self.P)
        lam = basis.eigenvalues
        self.E1 = np.exp(-lam * h)
        self.phi1 = -np.expm1(-lam * h) / lam
        self.implicit1 = 1.0 / (1.0 + lam * h)
        sig = model.sigma_values(basis)
        if np.any(sig <= 0):
            raise ConfigError("sigma must be positive on the grid")
        self.sigma = sig
        self.E2 = np.exp(-sig * h)
        self.phi2 = -np.expm1(-sig * h) / sig
        self.implicit2 = 1.0 / (1.0 + sig * h)

    def _u1(self, v1, z1):
        b = self.basis
        c = v1 + z1
        uM = b.synthesize(c, self.M)
        uP = uM if self.P == self.M else b.synthesize(c, self.P)
        return c, uM, uP

    def forcing(self, v1, z1, v2, z2):
        """Spectral -h - f and grid -g at the current state."""
        b, m = self.basis, self.model
        _, uM, uP = self._u1(v1, z1)
        u2 = v2 + z2
        r = b.analyze(m.h(self.xP, uP), self.N) + b.analyze(m.f(self.xM, uM, u2), self.N)
        return -r, -m.g(self.xM, uM)

    def g_term(self, v1, z1):
        _, uM, _ = self._u1(v1, z1)
        return -self.model.g(self.xM, uM)

    def _reaction_implicit(self, v1, z1, v2, z2, t):
        """Backward-Euler substep for h on the padded grid, f explicit."""
        b, m, tau = self.basis, self.model, self.h
        _, uM, _ = self._u1(v1, z1)
        fhat = b.analyze(m.f(self.xM, uM, v2 + z2), self.N)
        vP = b.synthesize(v1, self.P)
        zP = b.synthesize(z1, self.P)
        w = vP.copy()
        for _ in range(self.newton_maxit):
            u = w + zP
            res = w + tau * m.h(self.xP, u) - vP
            jac = 1.0 + tau * m.dh_du(self.xP, u)
            dw = res / jac
            w = w - dw
            if not np.all(np.isfinite(w)):
                raise BlowUpError(t, "implicit reaction solve")
            if np.max(np.abs(dw)) <= self.newton_tol * (1.0 + np.max(np.abs(w))):
                break
        else:
            raise BlowUpError(t, f"implicit reaction solve (no convergence in {self.newton_maxit} Newton steps)")
        return v1 + b.analyze(w - vP, self.N) - tau * fhat, -m.g(self.xM, uM)

    def step(self, v1, z1, v2, z2, t=0.0):
        if self.scheme == "etd1":
            n1, n2 = self.forcing(v1, z1, v2, z2)
            return self.E1 * v1 + self.phi1 * n1, self.E2 * v2 + self.phi2 * n2
        if self.scheme == "semi_implicit_euler":
            n1, n2 = self.forcing(v1, z1, v2, z2)
            return (v1 + self.h * n1) * self.implicit1, (v2 + self.h * n2) * self.implicit2
        w1, n2 = self._reaction_implicit(v1, z1, v2, z2, t)
        return self.E1 * w1, self.E2 * v2 + self.phi2 * n2


def step_v(state: SystemState, ou: OUState, m: ReactionModel, cfg: SolverConfig) -> SystemState:
    """Advance (v1, v2) by one step of ``cfg.h_step`` using the OU state at ``state.t``."""
    if abs(ou.t - state.t) > 1e-9 * max(1.0, abs(state.t)):
        raise ValueError(f"OU state at t={ou.t} is not synchronized with v at t={state.t}")
    basis = state.v1.basis
    st = Stepper(basis, m, cfg.h_step, cfg.scheme, cfg.newton_tol, cfg.newton_maxit)
    v1, v2 = st.step(state.v1.coeffs, ou.z1.coeffs, state.v2.values, ou.z2.values, state.t)
    _check_finite(v1, v2, state.t + cfg.h_step)
    return SystemState(SpectralField(basis, v1), GridField(basis, v2), state.t + cfg.h_step)


def _check_finite(v1, v2, t):
    if not (np.isfinite(v1).all() and np.isfinite(v2).all()):
        raise BlowUpError(t)


# ---------------------------------------------------------------------------
# recording

def _grid_h1(basis, values):
    return h1_array(basis, basis.analyze(values, values.shape[-1]))


class _Recorder:
    def __init__(self, basis, cfg: SolverConfig, split: bool):
        self.basis, self.cfg, self.split = basis, cfg, split
        self.times = []
        self.cols = {}
        self.snaps = {k: [] for k in FIELDS} if cfg.snapshots else None
        self.split_cols = {k: [] for k in ("v2_1_h1", "v2_1_l2", "v2_2_l2", "v2_2_bound", "split_residual")} if split else None
        self.v2_1_snaps = [] if (split and cfg.snapshots) else None

    def _add(self, name, val):
        self.cols.setdefault(name, []).append(val)

    def record(self, t, v1, v2, z1, z2, split_state=None):
        b, cfg = self.basis, self.cfg
        u1, u2 = v1 + z1, v2 + z2
        self.times.append(t)
        fields = {"u1": (u1, True), "u2": (u2, False), "v1": (v1, True),
                  "v2": (v2, False), "z1": (z1, True), "z2": (z2, False)}
        grids = {}
        for name, (arr, spectral) in fields.items():
            if "l2" in cfg.norms:
                self._add(f"{name}_l2", l2_array(b, arr) if spectral else grid_l2_array(b, arr))
            if "h1" in cfg.norms:
                self._add(f"{name}_h1", h1_array(b, arr) if spectral else _grid_h1(b, arr))
            if "lp" in cfg.norms:
                g = grids.get(name)
                if g is None:
                    g = b.synthesize(arr) if spectral else arr
                self._add(f"{name}_lp", lp_norm_array(b, g, cfg.lp_power))
        if "l2" in cfg.norms:
            self._add("u_H", np.sqrt(self.cols["u1_l2"][-1] ** 2 + self.cols["u2_l2"][-1] ** 2))
        if self.snaps is not None:
            for name, (arr, _) in fields.items():
                self.snaps[name].append(np.array(arr))
        if split_state is not None:
            v21, v22, bound = split_state
            sc = self.split_cols
            sc["v2_1_h1"].append(_grid_h1(b, v21))
            sc["v2_1_l2"].append(_grid_l2(b, v21))
            sc["v2_2_l2"].append(_grid_l2(b, v22))
            sc["v2_2_bound"].append(bound)
            scale = np.maximum(np.max(np.abs(v2), axis=tuple(range(-b.n, 0))), 1e-300)
            sc["split_residual"].append(np.max(np.abs(v21 + v22 - v2), axis=tuple(range(-b.n, 0))) / scale)
            if self.v2_1_snaps is not None:
                self.v2_1_snaps.append(np.array(v21))

    def finish(self, final):
        cols = {k: np.array(v) for k, v in self.cols.items()}
        snaps = {k: np.array(v) for k, v in self.snaps.items()} if self.snaps is not None else None
        split = None
        if self.split_cols is not None:
            split = {k: np.array(v) for k, v in self.split_cols.items()}
            if self.v2_1_snaps is not None:
                split["v2_1"] = np.array(self.v2_1_snaps)
        return TrajectoryRecord(np.array(self.times), cols, final, snaps, split, self.basis)


def _grid_l2(basis, values):
    """L2 norm of grid values; equals the l2 norm of their full sine series."""
    return grid_l2_array(basis, values)


# ---------------------------------------------------------------------------
# pathwise integration

def _as_coeffs(basis, u1):
    if isinstance(u1, SpectralField):
        return u1.coeffs
    if isinstance(u1, GridField):
        return basis.analyze(u1.values)
    return np.asarray(u1, dtype=float)


def _as_grid(u2):
    return u2.values if isinstance(u2, GridField) else np.asarray(u2, dtype=float)


def _steps(path: WienerPath, t0: float, t1: float, h: float):
    k = path.steps(h, "h_step")
    if k < 1:
        raise ConfigError("h_step must be a positive multiple of h_noise")
    n0 = path.steps(t0, "t0")
    n1 = path.steps(t1, "t1")
    if n1 < n0:
        raise ConfigError("t1 must not precede t0")
    if (n1 - n0) % k:
        raise ConfigError(f"[{t0}, {t1}] is not a whole number of solver steps h={h}")
    return k, path.master(n0), (n1 - n0) // k


def integrate_batch(u1_0, u2_0, path: WienerPath, t0: float, t1: float, m: ReactionModel,
                    cfg: SolverConfig, ou_mode="exact_diagonal", split: bool = False) -> TrajectoryRecord:
    """Integrate one or many initial states (leading batch axes) under one path.

    ``u1_0`` holds sine coefficients, ``u2_0`` grid values.  Records are
    taken at t0, every ``record_every`` steps, and at t1.
    """
    basis = path.basis
    k, m0, nsteps = _steps(path, t0, t1, cfg.h_step)
    sigma = m.sigma_values(basis)
    proc = OUProcess.shared(path, sigma, ou_mode)
    z1s, z2s = proc.series(m0, m0 + nsteps * k, k)
    st = Stepper(basis, m, cfg.h_step, cfg.scheme, cfg.newton_tol, cfg.newton_maxit)
    v1 = np.asarray(u1_0, dtype=float) - z1s[0]
    v2 = np.asarray(u2_0, dtype=float) - z2s[0]
    rec = _Recorder(basis, cfg, split)
    h = cfg.h_step
    v21 = np.zeros_like(v2) if split else None
    v20 = v2.copy() if split else None
    delta = float(np.min(sigma))
    norm_v20 = _grid_l2(basis, v20) if split else None

    def split_state(i, t):
        if not split:
            return None
        decay = np.exp(-sigma * (i * h))
        return v21, v20 * decay, np.exp(-delta * (i * h)) * norm_v20

    rec.record(t0, v1, v2, z1s[0], z2s[0], split_state(0, t0))
    for i in range(nsteps):
        t = t0 + i * h
        if split:
            v21 = st.E2 * v21 + st.phi2 * st.g_term(v1, z1s[i])
        v1, v2 = st.step(v1, z1s[i], v2, z2s[i], t)
        _check_finite(v1, v2, t + h)
        if (i + 1) % cfg.record_every == 0 or i + 1 == nsteps:
            rec.record(t0 + (i + 1) * h, v1, v2, z1s[i + 1], z2s[i + 1], split_state(i + 1, t0 + (i + 1) * h))
    if nsteps == 0:
        final = {"u1": np.asarray(u1_0, dtype=float), "u2": np.asarray(u2_0, dtype=float), "v1": v1, "v2": v2}
    else:
        final = {"u1": v1 + z1s[-1], "u2": v2 + z2s[-1], "v1": v1, "v2": v2}
    if split:
        final["v2_1"] = v21
    return rec.finish(final)


def integrate_pathwise(u0, path: WienerPath, t0: float, t1: float, m: ReactionModel, cfg: SolverConfig,
                       ou_mode="exact_diagonal", split: bool = False) -> TrajectoryRecord:
    """phi(t1 - t0, theta_{t0} omega, u0) with norm records along the way.

    ``u0`` is a pair (u1, u2); u1 may be a GridField (projected onto the
    retained modes) or a SpectralField, u2 is a GridField.  The final state
    is returned in the same representation as the input; for t1 == t0 it
    is the input itself.
    """
    u1_in, u2_in = u0
    basis = path.basis
    rec = integrate_batch(_as_coeffs(basis, u1_in), _as_grid(u2_in), path, t0, t1, m, cfg, ou_mode, split)
    if path.steps(t1, "t1") == path.steps(t0, "t0"):
        rec.final["u1_field"], rec.final["u2_field"] = u1_in, u2_in
    else:
        c, g = rec.final["u1"], rec.final["u2"]
        rec.final["u1_field"] = (GridField(basis, basis.synthesize(c)) if isinstance(u1_in, GridField)
                                 else SpectralField(basis, c))
        rec.final["u2_field"] = GridField(basis, g)
    return rec


def em_reference(u0, path: WienerPath, t0: float, t1: float, m: ReactionModel, h: float,
                 ou_mode="exact_diagonal", record_every: int = 1) -> TrajectoryRecord:
    """Exponential Euler-Maruyama for the untransformed system.

    u1 <- e^{Ah}(u1 + h*F1(u)) + dZ1,  u2 <- e^{-sigma h}(u2 + h*F2(u)) + dZ2,
    where dZ is the stochastic convolution over one step rebuilt from the
    path's increments starting from zero.  Records u1_l2, u2_l2 and u_H.
    """
    basis = path.basis
    k, m0, nsteps = _steps(path, t0, t1, h)
    u1 = _as_coeffs(basis, u0[0]).astype(float)
    u2 = _as_grid(u0[1]).astype(float)
    hn = path.h_noise
    dec1, w1 = z1_coefficients(basis, hn)
    sigma = m.sigma_values(basis)
    dec2, w2 = z2_coefficients(sigma, hn)
    A1 = np.exp(-basis.eigenvalues * h)
    A2 = np.exp(-sigma * h)
    xM, xP, P, N = basis.coords(), basis.coords(basis.padded_size), basis.padded_size, basis.N
    zero1, zero2 = np.zeros(basis.coeff_shape), np.zeros(basis.grid_shape)
    times, c1, c2 = [t0], [l2_array(basis, u1)], [_grid_l2(basis, u2)]
    for i in range(nsteps):
        j = m0 + i * k
        d1 = path.source.increments(1, j, j + k)
        d2 = basis.synthesize(path.source.increments(2, j, j + k))
        dz1 = ou_recursion(zero1, dec1, w1, d1)[-1]
        dz2 = ou_recursion(zero2, dec2, w2, d2)[-1]
        uM = basis.synthesize(u1)
        uP = basis.synthesize(u1, P)
        F1 = -(basis.analyze(m.h(xP, uP), N) + basis.analyze(m.f(xM, uM, u2), N))
        F2 = -m.g(xM, uM)
        u1 = A1 * (u1 + h * F1) + dz1
        u2 = A2 * (u2 + h * F2) + dz2
        _check_finite(u1, u2, t0 + (i + 1) * h)
        if (i + 1) % record_every == 0 or i + 1 == nsteps:
            times.append(t0 + (i + 1) * h)
            c1.append(l2_array(basis, u1))
            c2.append(_grid_l2(basis, u2))
    c1, c2 = np.array(c1), np.array(c2)
    cols = {"u1_l2": c1, "u2_l2": c2, "u_H": np.sqrt(c1 ** 2 + c2 ** 2)}
    return TrajectoryRecord(np.array(times), cols, {"u1": u1, "u2": u2}, basis=basis)


def h_distance(a: tuple, b: tuple, basis) -> float:
    """H-norm distance between (u1 coeffs, u2 grid) pairs."""
    d1 = l2_array(basis, a[0] - b[0])
    d2 = _grid_l2(basis, a[1] - b[1])
    return float(np.sqrt(d1 ** 2 + d2 ** 2))


def h_norm(u: tuple, basis) -> float:
    return float(np.sqrt(l2_array(basis, u[0]) ** 2 + _grid_l2(basis, u[1]) ** 2))


def cocycle_check(u0, path: WienerPath, s: float, t: float, m: ReactionModel, cfg: SolverConfig,
                  ou_mode="exact_diagonal", relative: bool = True) -> float:
    """|| phi(t+s, w, u0) - phi(t, theta_s w, phi(s, w, u0)) ||_H (relative by default)."""
    basis = path.basis
    u1 = _as_coeffs(basis, u0[0])
    u2 = _as_grid(u0[1])
    lean = SolverConfig(cfg.h_step, cfg.scheme, max(1, 10 ** 9), (), cfg.lp_power, False,
                        cfg.newton_tol, cfg.newton_maxit)
    whole = integrate_batch(u1, u2, path, 0.0, s + t, m, lean, ou_mode).final
    first = integrate_batch(u1, u2, path, 0.0, s, m, lean, ou_mode).final if s != 0 else {"u1": u1, "u2": u2}
    shifted = wiener_shift(path, s)
    if t != 0:
        second = integrate_batch(first["u1"], first["u2"], shifted, 0.0, t, m, lean, ou_mode).final
    else:
        second = first
    a, b = (whole["u1"], whole["u2"]), (second["u1"], second["u2"])
    if s + t == 0:
        a = (u1, u2)
    d = h_distance(a, b, basis)
    if relative:
        d /= max(h_norm(a, basis), 1e-300)
    return d
