"""Reaction terms for partly dissipative systems and their growth checks.

A model supplies the Nemytskii functions h(x, u1), f(x, u1, u2), g(x, u1)
and the damping sigma(x) of the system

    du1 = (d Lap u1 - h(x, u1) - f(x, u1, u2)) dt + dW1
    du2 = (-sigma(x) u2 - g(x, u1)) dt + dW2

together with the growth constants that bound them.  ``x`` is always a
tuple of coordinate arrays broadcastable against the state arrays.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, InfeasibleConstants
from .reports import FAIL, PASS, ConditionResult, ValidationReport
from .spectral_core import BasisSpec, GridField

MARGIN = 1.1
FLOOR = 1e-12
GROWTH_SLOPE_TOL = 0.5


@dataclass(frozen=True)
class GrowthConstants:
    """Exponents and bounds of the reaction growth conditions.

    There is deliberately no ``delta6``; ``delta_lo``/``delta_hi`` bound sigma.
    Unset bounds are None until fitted.
    """

    p: float
    p1: float
    delta1: float | None = None
    delta2: float | None = None
    delta3: float | None = None
    delta4: float | None = None
    delta5: float | None = None
    delta7: float | None = None
    delta8: float | None = None
    delta_lo: float | None = None
    delta_hi: float | None = None

    BOUNDS = ("delta1", "delta2", "delta3", "delta4", "delta5", "delta7", "delta8", "delta_lo", "delta_hi")

    @property
    def complete(self) -> bool:
        return all(getattr(self, k) is not None for k in self.BOUNDS)

    def problems(self) -> list:
        out = []
        if not self.p > 2:
            out.append(f"p={self.p} must exceed 2")
        if not 0 < self.p1 < self.p - 1:
            out.append(f"p1={self.p1} must lie in (0, p-1)")
        for k in self.BOUNDS:
            v = getattr(self, k)
            if v is None:
                out.append(f"{k} not set")
            elif not v > 0:
                out.append(f"{k}={v} must be positive")
        if self.delta1 is not None and self.delta2 is not None and self.delta1 > self.delta2:
            out.append("delta1 > delta2")
        if self.delta_lo is not None and self.delta_hi is not None and self.delta_lo > self.delta_hi:
            out.append("delta_lo > delta_hi")
        return out

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _as_function(field_like) -> Callable:
    """Turn a float, callable or GridField into a function of coordinates."""
    if callable(field_like):
        return field_like
    if isinstance(field_like, GridField):
        v = field_like.values
        if np.ptp(v) < 1e-12:
            c = float(v.flat[0])
            return lambda *x: c
        # full sine interpolant: reproduces the samples on the collocation grid
        basis = field_like.basis
        coeffs = basis.analyze(v, v.shape[-1])
        ks = np.arange(1, coeffs.shape[-1] + 1)
        amp = math.sqrt(2 / math.pi)

        def interp(*x):
            S = [amp * np.sin(np.multiply.outer(np.asarray(xi, dtype=float), ks)) for xi in x]
            if len(S) == 1:
                return S[0] @ coeffs
            return ((S[0] @ coeffs) * S[1]).sum(axis=-1)
        return interp
    c = float(field_like)
    return lambda *x: c


@dataclass(frozen=True, eq=False)
class ReactionModel:
    """Reaction data (h, f, sigma, g) with growth constants.

    Parameters
    ----------
    h, f, g : callables ``h(x, u1)``, ``f(x, u1, u2)``, ``g(x, u1)``.
    sigma : callable of the coordinates (``sigma(*x)``).
    constants : GrowthConstants
    dh : optional analytic derivative of h in u1; finite differences otherwise.
    """

    name: str
    h: Callable
    f: Callable
    g: Callable
    sigma: Callable
    constants: GrowthConstants
    dh: Callable | None = None
    params: dict = field(default_factory=dict)

    def sigma_values(self, basis: BasisSpec, G: int | None = None) -> np.ndarray:
        x = basis.coords(G)
        G = basis.M if G is None else G
        return np.broadcast_to(np.asarray(self.sigma(*x), dtype=float), (G,) * basis.n).copy()

    def sigma_field(self, basis: BasisSpec) -> GridField:
        return GridField(basis, self.sigma_values(basis))

    def dh_du(self, x, u):
        if self.dh is not None:
            return self.dh(x, u)
        eps = 1e-6 * np.maximum(1.0, np.abs(u))
        return (self.h(x, u + eps) - self.h(x, u - eps)) / (2 * eps)

    def with_constants(self, constants: GrowthConstants) -> "ReactionModel":
        return replace(self, constants=constants)


def fhn(p_field, alpha1: float, alpha2: float, alpha3: float) -> ReactionModel:
    """FitzHugh-Nagumo reaction: h = p(x)u + u(u-1)(u-alpha1), f = u2,
    sigma = alpha3, g = -alpha2*u1.

    ``p_field`` may be a float, a callable of the coordinates or a GridField.
    alpha3 must be positive so that the ODE component is damped.
    """
    if not alpha3 > 0:
        raise ConfigError(f"FitzHugh-Nagumo needs alpha3 > 0 so that sigma is bounded below, got {alpha3}")
    a1, a2, a3 = float(alpha1), float(alpha2), float(alpha3)
    pf = _as_function(p_field)

    def h(x, u):
        return pf(*x) * u + u * (u - 1.0) * (u - a1)

    def dh(x, u):
        return pf(*x) + 3.0 * u * u - 2.0 * (1.0 + a1) * u + a1

    params = {"alpha1": a1, "alpha2": a2, "alpha3": a3}
    params["p_field"] = p_field if isinstance(p_field, (int, float)) else "field"
    return ReactionModel(
        "fhn", h, lambda x, u1, u2: u2 + 0.0 * u1, lambda x, u1: -a2 * u1, lambda *x: a3,
        GrowthConstants(p=4.0, p1=1.0), dh=dh, params=params)


def allen_cahn_cq(p1: float, p2: float, q2: float, eps: float) -> ReactionModel:
    """Cubic-quintic Allen-Cahn with linear ODE coupling.

    h = -p1*u - u^3 + u^5, f = u2, sigma = -eps*p2, g = eps*q2*u1.
    """
    if not eps > 0:
        raise ConfigError(f"allen_cahn_cq needs eps > 0, got {eps}")
    if not p2 < 0:
        raise ConfigError(f"allen_cahn_cq needs p2 < 0 so that sigma = -eps*p2 is bounded below by a positive constant, got p2={p2}")
    p1, p2, q2, eps = float(p1), float(p2), float(q2), float(eps)
    sig = -eps * p2

    def h(x, u):
        u2 = u * u
        return -p1 * u - u * u2 + u * u2 * u2

    def dh(x, u):
        u2 = u * u
        return -p1 - 3.0 * u2 + 5.0 * u2 * u2

    return ReactionModel(
        "allen_cahn_cq", h, lambda x, u1, u2: u2 + 0.0 * u1, lambda x, u1: eps * q2 * u1,
        lambda *x: sig, GrowthConstants(p=6.0, p1=1.0), dh=dh,
        params={"p1": p1, "p2": p2, "q2": q2, "eps": eps})


def custom_model(name: str, h, f, g, sigma, p: float, p1: float, dh=None, **bounds) -> ReactionModel:
    """Build a model from per-point closures; ``bounds`` preset delta constants."""
    return ReactionModel(name, h, f, g, _as_function(sigma), GrowthConstants(p=p, p1=p1, **bounds), dh=dh)


_REGISTRY: dict = {"fhn": fhn, "allen_cahn_cq": allen_cahn_cq}


def register_model(name: str, factory: Callable):
    """Make ``factory(**parameters)`` available to run configurations under ``name``."""
    _REGISTRY[name] = factory


def build_model(name: str, parameters: dict) -> ReactionModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; registered: {sorted(_REGISTRY)}") from None
    try:
        return factory(**parameters)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# sampling and validation

@dataclass
class SampleSet:
    x: tuple        # coordinate arrays, one entry per sampled point set
    u: np.ndarray
    v: np.ndarray   # second-component samples for f
    U: float


def _sample_points(basis: BasisSpec | None, n: int, U: float, samples: int) -> SampleSet:
    if basis is None:
        xs = [np.linspace(0, math.pi, 17)[1:-1]] * n
    else:
        pts = basis.points(basis.M)
        step = max(1, basis.M // (64 if n == 1 else 16))
        xs = [pts[::step]] * n
    S = max(int(samples), 1000)
    u = np.linspace(-U, U, S + (S % 2 == 0))  # odd count so u=0 is included
    m = max(int(math.isqrt(S)) + 1, 32)
    v = np.linspace(-U, U, m)
    if n == 1:
        x = (xs[0],)
    else:
        a, b = np.meshgrid(xs[0], xs[1], indexing="ij")
        x = (a.ravel(), b.ravel())
    return SampleSet(x, u, v, float(U))


def _eval(fn, *args):
    out = np.asarray(fn(*args), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite model values inside the sampled box")
    return out


class _Samples:
    """Broadcast layout: points along axis 0, u1 along axis 1, u2 along axis 2."""

    def __init__(self, model: ReactionModel, s: SampleSet):
        self.s = s
        n = len(s.x)
        self.x2 = tuple(xi[:, None] for xi in s.x)
        self.u2d = s.u[None, :]
        shape = (s.x[0].size, s.u.size)
        self.H = np.broadcast_to(_eval(model.h, self.x2, self.u2d), shape)
        self.hu = self.H * self.u2d
        self.absu = np.broadcast_to(np.abs(self.u2d), shape)
        x3 = tuple(xi[:, None, None] for xi in s.x)
        us = s.u[:: max(1, s.u.size // 64)]
        self.f_u1 = us[None, :, None]
        self.f_u2 = s.v[None, None, :]
        self.F = np.broadcast_to(_eval(model.f, x3, self.f_u1, self.f_u2),
                                 (s.x[0].size, us.size, s.v.size))
        self.G = np.broadcast_to(_eval(model.g, self.x2, self.u2d), shape)
        du = 1e-5 * s.U
        self.Gu = (_eval(model.g, self.x2, self.u2d + du) - _eval(model.g, self.x2, self.u2d - du)) / (2 * du)
        self.Gu = np.broadcast_to(self.Gu, shape)
        gx = np.zeros(shape)
        dx = 1e-5 * math.pi
        for i in range(n):
            xp = tuple(xj + (dx if j == i else 0.0) for j, xj in enumerate(self.x2))
            xm = tuple(xj - (dx if j == i else 0.0) for j, xj in enumerate(self.x2))
            gx = np.maximum(gx, np.abs(_eval(model.g, xp, self.u2d) - _eval(model.g, xm, self.u2d)) / (2 * dx))
        self.Gx = gx
        self.sig = np.broadcast_to(_eval(model.sigma, *s.x), s.x[0].shape)

    def point(self, idx, with_u2=False) -> dict:
        i = idx[0]
        out = {"x": [float(xi[i]) for xi in self.s.x]}
        if with_u2:
            out["u1"] = float(self.f_u1[0, idx[1], 0])
            out["u2"] = float(self.f_u2[0, 0, idx[2]])
        elif len(idx) > 1:
            out["u1"] = float(self.s.u[idx[1]])
        return out


def _worst(excess: np.ndarray, smp: _Samples, with_u2=False):
    idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
    w = smp.point(idx, with_u2)
    w["excess"] = float(excess[idx])
    return w


def _check(name, excess, scale, smp, with_u2=False, note="") -> ConditionResult:
    tol = 1e-9 * (1.0 + scale)
    worst = _worst(excess, smp, with_u2)
    verdict = PASS if worst["excess"] <= tol else FAIL
    return ConditionResult(name, verdict, {"max_excess": worst["excess"]}, worst, note)


def validate_reaction_assumptions(m: ReactionModel, U: float, samples: int = 2000,
                                  basis: BasisSpec | None = None) -> ValidationReport:
    """Check the reaction growth conditions on the box |u1|, |u2| <= U.

    Conditions: ``constants`` (exponent ranges and positivity),
    ``h_dissipation`` (two-sided bound on h(x,u)u plus a log-log growth
    exponent check on U/2 <= |u| <= U), ``f_growth``, ``sigma_bounds``,
    ``g_derivative`` (central differences with step 1e-5*U), ``g_growth``
    and ``h_growth``.  Each failing condition reports its worst sample.
    """
    if not U > 0:
        raise ValueError("U must be positive")
    n = 1 if basis is None else basis.n
    c = m.constants
    s = _sample_points(basis, n, U, samples)
    smp = _Samples(m, s)
    report = ValidationReport(m.name, scope={"U": U, "samples": int(s.u.size), "x_points": int(s.x[0].size)})

    probs = c.problems()
    report.conditions.append(ConditionResult("constants", FAIL if probs else PASS, {"constants": c.to_dict()},
                                             note="; ".join(probs)))

    def val(k, default=0.0):
        v = getattr(c, k)
        return default if v is None else v

    p = c.p
    powp = smp.absu ** p
    d1, d2, d3 = val("delta1"), val("delta2"), val("delta3")
    excess = np.maximum(d1 * powp - d3 - smp.hu, smp.hu - d2 * powp - d3)
    res = _check("h_dissipation", excess, float(np.max(np.abs(smp.hu))), smp)
    # growth exponent in the outer region, both signs
    slopes = []
    for sign in (1.0, -1.0):
        uu = np.array([sign * U / 2, sign * U])
        hu = _eval(m.h, tuple(xi[:, None] for xi in s.x), uu[None, :]) * uu[None, :]
        hu = np.broadcast_to(hu, (s.x[0].size, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            sl = np.where(np.all(hu > 0, axis=1), np.log(hu[:, 1] / hu[:, 0]) / math.log(2.0), -np.inf)
        slopes.append(sl)
    slopes = np.concatenate(slopes)
    bad = np.abs(slopes - p) > GROWTH_SLOPE_TOL
    res.detail["growth_slopes"] = [float(np.min(slopes)), float(np.max(slopes))]
    if np.any(bad):
        res.verdict = FAIL
        i = int(np.argmax(np.abs(slopes - p)))
        res.note = (f"h(x,u)u grows like |u|^{slopes[i]:.3g} on U/2 <= |u| <= U, "
                    f"claimed p={p}")
        res.worst = res.worst if res.worst["excess"] > 0 else {"x": [float(xi[i % s.x[0].size]) for xi in s.x],
                                                                "growth_slope": float(slopes[i])}
    report.conditions.append(res)

    bound = val("delta4") * (1.0 + np.abs(smp.f_u1) ** c.p1 + np.abs(smp.f_u2))
    report.conditions.append(_check("f_growth", np.abs(smp.F) - bound, float(np.max(np.abs(smp.F))), smp, True))

    lo, hi = c.delta_lo, c.delta_hi
    sig_ex = np.maximum((lo if lo is not None else 0.0) - smp.sig,
                        smp.sig - (hi if hi is not None else np.inf))
    res = _check("sigma_bounds", sig_ex, float(np.max(np.abs(smp.sig))), smp)
    if lo is None or not lo > 0 or np.min(smp.sig) <= 0:
        res.verdict = FAIL
        res.note = f"sigma must be bounded below by a positive constant; min sigma = {float(np.min(smp.sig))}"
        i = int(np.argmin(smp.sig))
        res.worst = {"x": [float(xi[i]) for xi in s.x], "sigma": float(smp.sig[i])}
    report.conditions.append(res)

    d5 = val("delta5")
    ex = np.maximum(np.abs(smp.Gu) - d5, smp.Gx - d5 * (1.0 + smp.absu))
    report.conditions.append(_check("g_derivative", ex, float(np.max(np.abs(smp.Gu))), smp))
    ex = np.abs(smp.G) - val("delta7") * (1.0 + smp.absu)
    report.conditions.append(_check("g_growth", ex, float(np.max(np.abs(smp.G))), smp))
    ex = np.abs(smp.H) - val("delta8") * (1.0 + smp.absu ** (p - 1))
    report.conditions.append(_check("h_growth", ex, float(np.max(np.abs(smp.H))), smp))
    return report


def suggest_constants(m: ReactionModel, U: float, samples: int = 2000,
                      basis: BasisSpec | None = None) -> GrowthConstants:
    """Tightest sampled constants, padded by a 10% margin.

    delta1 is the smallest ratio h(x,u)u/|u|^p on U/2 <= |u| <= U divided by
    the margin, delta2 the largest ratio times the margin; delta3 absorbs the
    remaining violations on the whole box.  Raises InfeasibleConstants when
    no positive delta1 (or positive sigma bound) exists on the samples.
    """
    n = 1 if basis is None else basis.n
    c = m.constants
    s = _sample_points(basis, n, U, samples)
    smp = _Samples(m, s)
    p = c.p
    outer = smp.absu >= U / 2
    ratio = smp.hu[outer] / smp.absu[outer] ** p
    rmin = float(ratio.min())
    if not rmin > 0:
        idx = np.unravel_index(int(np.argmin(np.where(outer, smp.hu / np.maximum(smp.absu, FLOOR) ** p, np.inf))), smp.hu.shape)
        raise InfeasibleConstants(
            f"no delta1 > 0 exists for {m.name}: min h(x,u)u/|u|^{p:g} = {rmin:.6g} on U/2<=|u|<=U "
            f"(at {smp.point(idx)})", "h_dissipation")
    d1 = rmin / MARGIN
    d2 = float(ratio.max()) * MARGIN
    powp = smp.absu ** p
    viol = float(np.max(np.maximum(d1 * powp - smp.hu, smp.hu - d2 * powp)))
    d3 = max(MARGIN * viol, FLOOR)
    d4 = MARGIN * float(np.max(np.abs(smp.F) / (1.0 + np.abs(smp.f_u1) ** c.p1 + np.abs(smp.f_u2))))
    d5 = MARGIN * float(max(np.max(np.abs(smp.Gu)), np.max(smp.Gx / (1.0 + smp.absu))))
    d7 = MARGIN * float(np.max(np.abs(smp.G) / (1.0 + smp.absu)))
    d8 = MARGIN * float(np.max(np.abs(smp.H) / (1.0 + smp.absu ** (p - 1))))
    smin, smax = float(np.min(smp.sig)), float(np.max(smp.sig))
    if not smin > 0:
        raise InfeasibleConstants(f"sigma is not bounded below by a positive constant (min {smin})",
                                  "sigma_bounds")
    return replace(c, delta1=d1, delta2=d2, delta3=d3, delta4=max(d4, FLOOR), delta5=max(d5, FLOOR),
                   delta7=max(d7, FLOOR), delta8=max(d8, FLOOR), delta_lo=smin / MARGIN, delta_hi=smax * MARGIN)


def fit_model(m: ReactionModel, U: float, samples: int = 2000, basis: BasisSpec | None = None) -> ReactionModel:
    return m.with_constants(suggest_constants(m, U, samples, basis))
