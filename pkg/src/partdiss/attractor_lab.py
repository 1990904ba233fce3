"""Pullback attraction, absorption and splitting experiments.

All experiments integrate under one fixed noise path: pulling back from
time -t to 0 is index arithmetic on the master noise grid, so every pullback
time sees the same realization.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, HorizonError
from .integrator import SolverConfig, TrajectoryRecord, integrate_batch, integrate_pathwise
from .models import ReactionModel
from .noise_process import WienerPath
from .spectral_core import BasisSpec, grid_l2_array, h1_array, l2_array, lp_norm_array

MONOTONE_BAND = 0.05
ROUNDOFF_FLOOR = 1e-13
ABSORB_SPREAD = 0.10
SATURATION = 0.05
H1_STABILITY = 0.05


def ball_samples(basis: BasisSpec, R: float, m: int, seed: int = 0):
    """``m`` states on the sphere of radius R in H, deterministic in ``seed``.

    Both components get random sine coefficients decaying like 1/k; u2 is
    returned as grid values.  Returns arrays (u1 coeffs (m, ...), u2 grid (m, ...)).
    """
    if m < 1:
        raise ConfigError("need at least one initial state")
    rng = np.random.default_rng(seed)
    k = np.sqrt(basis.mode_numbers_sq(basis.N))
    c1 = rng.standard_normal((m,) + basis.coeff_shape) / k
    c2 = rng.standard_normal((m,) + basis.coeff_shape) / k
    axes = tuple(range(1, basis.n + 1))
    scale = R / np.sqrt(np.sum(c1 ** 2, axis=axes) + np.sum(c2 ** 2, axis=axes))
    scale = scale.reshape((m,) + (1,) * basis.n)
    return c1 * scale, basis.synthesize(c2 * scale)


def _pairwise(basis, u1, u2):
    """H distances between batched states and their norms."""
    m = u1.shape[0]
    d = np.zeros((m, m))
    for i in range(m):
        d[i] = np.sqrt(l2_array(basis, u1 - u1[i]) ** 2 + grid_l2_array(basis, u2 - u2[i]) ** 2)
    norms = np.sqrt(l2_array(basis, u1) ** 2 + grid_l2_array(basis, u2) ** 2)
    return d, norms


@dataclass
class PullbackConfig:
    """One noise realization, a model, a solver and an initial set.

    The initial set is either a ball (``radius``, ``count``, ``sample_seed``)
    or explicit ``states`` given as (u1 coeffs, u2 grid) batch arrays.
    """

    path: WienerPath
    model: ReactionModel
    solver: SolverConfig
    pullback_times: list
    radius: float = 10.0
    count: int = 8
    sample_seed: int = 0
    states: tuple | None = None
    ou_mode: object = "exact_diagonal"

    def __post_init__(self):
        ts = [float(t) for t in self.pullback_times]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("pullback times must be increasing")
        if ts and ts[0] < 0:
            raise ConfigError("pullback times must be non-negative")
        lo = self.path.window[0]
        if ts and -ts[-1] < lo:
            raise HorizonError(f"pullback time {ts[-1]} exceeds the noise horizon (t_min={lo})")
        if self.states is None and self.count < 2:
            raise ConfigError("an initial set needs m >= 2 states")
        self.pullback_times = ts

    @property
    def seed(self) -> int:
        return self.path.grid.seed

    @property
    def basis(self) -> BasisSpec:
        return self.path.basis

    def initial_states(self, radius: float | None = None):
        if self.states is not None and radius is None:
            return np.asarray(self.states[0], float), np.asarray(self.states[1], float)
        return ball_samples(self.basis, self.radius if radius is None else radius, self.count, self.sample_seed)


def parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _pullback_endpoints(cfg: PullbackConfig, t: float, u1, u2, split: bool = False):
    lean = SolverConfig(cfg.solver.h_step, cfg.solver.scheme, 10 ** 9, (), cfg.solver.lp_power, False,
                        cfg.solver.newton_tol, cfg.solver.newton_maxit)
    rec = integrate_batch(u1, u2, cfg.path, -t, 0.0, cfg.model, lean, cfg.ou_mode, split=split)
    return rec.final


@dataclass
class PullbackResult:
    times: list
    diam: list
    distances: list   # per time, (m, m) arrays
    norms: list       # per time, (m,) arrays
    endpoints: list   # per time, (u1, u2) batch arrays
    monotone: bool
    threshold: float
    final_diam: float

    def rows(self) -> list:
        """(t_pullback, i, j, distance_H, norm_i_H) rows in job order."""
        out = []
        for t, d, nm in zip(self.times, self.distances, self.norms):
            m = d.shape[0]
            for i in range(m):
                for j in range(m):
                    out.append((t, i, j, float(d[i, j]), float(nm[i])))
        return out

    @property
    def converged(self) -> bool:
        return self.final_diam < self.threshold


def diam_monotone(diam, scale: float, band: float = MONOTONE_BAND) -> bool:
    """Non-increasing up to a relative band and an absolute roundoff floor."""
    floor = ROUNDOFF_FLOOR * max(scale, 1.0)
    return all(b <= (1.0 + band) * a + floor for a, b in zip(diam, diam[1:]))


def pullback_run(cfg: PullbackConfig, threads: int = 1, threshold: float = 1e-6) -> PullbackResult:
    """Endpoints at time 0 of the initial set pulled back from each -t."""
    u1, u2 = cfg.initial_states()

    def job(t):
        if t == 0:
            return {"u1": u1, "u2": u2}
        return _pullback_endpoints(cfg, t, u1, u2)

    finals = parallel_map(job, cfg.pullback_times, threads)
    diam, dists, norms, ends = [], [], [], []
    for f in finals:
        d, nm = _pairwise(cfg.basis, f["u1"], f["u2"])
        dists.append(d)
        norms.append(nm)
        diam.append(float(d.max()))
        ends.append((f["u1"], f["u2"]))
    scale = max(float(np.max(nm)) for nm in norms) if norms else 1.0
    return PullbackResult(list(cfg.pullback_times), diam, dists, norms, ends,
                          diam_monotone(diam, scale), threshold, diam[-1] if diam else float("nan"))


@dataclass
class AbsorptionResult:
    t_max: float
    profile: list          # (R, t_max, max_norm_sq)
    rho_hat: float
    spread: float
    saturation: float | None
    verdict: str

    def rows(self) -> list:
        return list(self.profile)


def absorbing_radius(cfg: PullbackConfig, scale_ladder, t_max: float | None = None,
                     saturation: bool = True, threads: int = 1) -> AbsorptionResult:
    """Empirical absorbing radius rho_hat(omega) = max_R max_i ||phi(t_max, theta_{-t_max} w, x_i)||_H^2.

    The verdict is ABSORBING-CONSISTENT when the per-R maxima agree within
    10% (relative to their largest value) and, if requested, doubling t_max
    moves rho_hat by less than 5%.
    """
    ladder = [float(R) for R in scale_ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("scale ladder must be increasing")
    T = float(t_max if t_max is not None else cfg.pullback_times[-1])
    jobs = [(R, T) for R in ladder]
    if saturation:
        if -2 * T < cfg.path.window[0]:
            raise HorizonError(f"saturation check needs the horizon to reach -{2 * T}")
        jobs += [(R, 2 * T) for R in ladder]

    def job(item):
        R, t = item
        u1, u2 = cfg.initial_states(R)
        f = _pullback_endpoints(cfg, t, u1, u2)
        _, nm = _pairwise(cfg.basis, f["u1"], f["u2"])
        return float(np.max(nm ** 2))

    vals = parallel_map(job, jobs, threads)
    prof = [(R, T, v) for R, v in zip(ladder, vals[: len(ladder)])]
    first = np.array(vals[: len(ladder)])
    rho = float(first.max())
    spread = float((first.max() - first.min()) / max(first.max(), 1e-300))
    sat = None
    if saturation:
        rho2 = float(np.max(vals[len(ladder):]))
        prof += [(R, 2 * T, v) for R, v in zip(ladder, vals[len(ladder):])]
        sat = abs(rho2 - rho) / max(rho, 1e-300)
    ok = spread < ABSORB_SPREAD and (sat is None or sat < SATURATION)
    if rho < 1e-300:
        ok, spread = True, 0.0
    return AbsorptionResult(T, prof, rho, spread, sat, "ABSORBING-CONSISTENT" if ok else "NOT-CONSISTENT")


@dataclass
class SplitResult:
    times: np.ndarray
    norm_v2_2: np.ndarray
    bound: np.ndarray
    norm_v2_1_h1: np.ndarray
    residual: np.ndarray
    record: TrajectoryRecord
    tol: float = 1e-10

    @property
    def identity_ok(self) -> bool:
        return bool(np.all(self.residual <= self.tol))

    @property
    def decay_ok(self) -> bool:
        return bool(np.all(self.norm_v2_2 <= self.bound * (1 + 1e-12) + 1e-300))

    def rows(self) -> list:
        """(t, norm_v2_2, bound, norm_v2_1_h1) rows."""
        return [(float(t), float(a), float(b), float(c))
                for t, a, b, c in zip(self.times, self.norm_v2_2, self.bound, self.norm_v2_1_h1)]


def splitting_run(u0, path: WienerPath, t0: float, t1: float, m: ReactionModel, cfg: SolverConfig,
                  ou_mode="exact_diagonal") -> SplitResult:
    """Track v2 = v2^1 + v2^2 along a pathwise run.

    v2^1 starts from zero and is driven by -g(x, u1) with the same
    exponential step as v2; v2^2 = v2(t0) exp(-sigma (t - t0)) in closed form.
    The reported bound uses delta = min sigma over the grid.
    """
    if cfg.scheme == "semi_implicit_euler":
        raise ConfigError("splitting needs an exponential v2 update (etd1 or lie_implicit)")
    rec = integrate_pathwise(u0, path, t0, t1, m, cfg, ou_mode, split=True)
    s = rec.split
    return SplitResult(rec.times, s["v2_2_l2"], s["v2_2_bound"], s["v2_1_h1"], s["split_residual"], rec)


@dataclass
class H1Report:
    times: np.ndarray
    grad_v1_sq: np.ndarray
    grad_v2_1_sq: np.ndarray
    window_lp: np.ndarray        # (1/r) int_t^{t+r} ||u1||_p^p
    window_grad_v1: np.ndarray   # (1/r) int_t^{t+r} ||grad v1||^2
    window_starts: np.ndarray
    rho1: float
    rho2: float
    rho1_half: float
    rho2_half: float
    verdict: str

    @property
    def change(self) -> tuple:
        return (abs(self.rho1 - self.rho1_half) / max(self.rho1, 1e-300),
                abs(self.rho2 - self.rho2_half) / max(self.rho2, 1e-300))


def _window_average(t, y, r):
    starts = t[(t + r) <= t[-1] + 1e-12]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])
    ends = np.interp(starts + r, t, cum)
    return starts, (ends - np.interp(starts, t, cum)) / r


def h1_diagnostics(record: TrajectoryRecord, transient: float, r: float = 1.0, p: float = 4.0) -> H1Report:
    """Forward-time gradient diagnostics from a split run with snapshots.

    Maxima of ||grad v1||^2 and ||grad v2^1||^2 over [T0, T] are compared
    with those over [T0, T/2]; BOUNDED when both change by less than 5%.
    """
    if record.snapshots is None or record.split is None or "v2_1" not in record.split:
        raise ValueError("h1_diagnostics needs a split run with snapshots")
    snaps = record.snapshots
    t = record.times
    if not transient < t[-1]:
        raise ValueError("transient must be shorter than the run")
    b = record.basis
    if b is None:
        raise ValueError("record does not carry its basis")
    g1 = h1_array(b, snaps["v1"]) ** 2
    v21 = record.split["v2_1"]
    g2 = h1_array(b, b.analyze(v21, v21.shape[-1])) ** 2
    up = lp_norm_array(b, b.synthesize(snaps["u1"]), p) ** p
    ws, wl = _window_average(t, up, r)
    _, wg = _window_average(t, g1, r)
    post = t >= transient
    half = post & (t <= transient + 0.5 * (t[-1] - transient) + 1e-12)
    rho1, rho2 = float(g1[post].max()), float(g2[post].max())
    r1h, r2h = float(g1[half].max()), float(g2[half].max())
    ch1 = abs(rho1 - r1h) / max(rho1, 1e-300)
    ch2 = abs(rho2 - r2h) / max(rho2, 1e-300)
    verdict = "BOUNDED" if ch1 < H1_STABILITY and ch2 < H1_STABILITY else "NOT-STABLE"
    return H1Report(t, g1, g2, wl, wg, ws, rho1, rho2, r1h, r2h, verdict)


@dataclass
class H1PullbackReport:
    times: list
    grad_v1_sq: list
    grad_v2_1_sq: list
    rho1: float
    rho2: float
    rho1_half: float
    rho2_half: float
    verdict: str

    @property
    def change(self) -> tuple:
        return (abs(self.rho1 - self.rho1_half) / max(self.rho1, 1e-300),
                abs(self.rho2 - self.rho2_half) / max(self.rho2, 1e-300))


def h1_pullback(cfg: PullbackConfig, transient: float, threads: int = 1) -> H1PullbackReport:
    """Gradient norms at time 0 along the pullback ladder.

    For each pullback time t, ||grad v1(0)||^2 and ||grad v2^1(0)||^2 (with
    v2^1(-t) = 0) are maximized over the initial set.  Maxima over the
    ladder restricted to [T0, T/2] and [T0, T] must agree within 5% for the
    BOUNDED verdict.
    """
    times = [t for t in cfg.pullback_times if t >= transient]
    if len(times) < 2:
        raise ConfigError("need at least two pullback times beyond the transient")
    u1, u2 = cfg.initial_states()
    b = cfg.basis

    def job(t):
        f = _pullback_endpoints(cfg, t, u1, u2, split=True)
        g1 = float(np.max(h1_array(b, f["v1"]) ** 2))
        v21 = f["v2_1"]
        g2 = float(np.max(h1_array(b, b.analyze(v21, v21.shape[-1])) ** 2))
        return g1, g2

    vals = parallel_map(job, times, threads)
    g1 = [v[0] for v in vals]
    g2 = [v[1] for v in vals]
    T = times[-1]
    half = [i for i, t in enumerate(times) if t <= T / 2 + 1e-12] or [0]
    rho1, rho2 = max(g1), max(g2)
    r1h, r2h = max(g1[i] for i in half), max(g2[i] for i in half)
    ch1 = abs(rho1 - r1h) / max(rho1, 1e-300)
    ch2 = abs(rho2 - r2h) / max(rho2, 1e-300)
    verdict = "BOUNDED" if ch1 < H1_STABILITY and ch2 < H1_STABILITY else "NOT-STABLE"
    return H1PullbackReport(times, g1, g2, rho1, rho2, r1h, r2h, verdict)
