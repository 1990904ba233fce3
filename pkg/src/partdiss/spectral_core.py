"""Dirichlet sine eigenbasis on boxes [0, pi]^n.

Fields live either as sine coefficients (``SpectralField``) or as values on
the interior collocation grid x_j = j*pi/(M+1) (``GridField``).  Transforms
are the DST-I quadrature written as small dense matrix products; at desk
sizes (M ~ 200, where 2(M+1) is often not FFT friendly) this beats an FFT
and keeps the arithmetic identical for every batch layout of the same shape.

All array helpers accept arbitrary leading batch axes; the trailing ``n``
axes are spatial.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

EXTENT = math.pi
DEFAULT_PADDING = 3.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Eigen-data of A = d*Laplacian with Dirichlet conditions on [0, pi]^n.

    Parameters
    ----------
    n : int
        Spatial dimension (1 or 2).
    N : int
        Retained sine modes per axis.
    M : int
        Collocation points per axis.
    d : float
        Diffusion coefficient.
    padding : float
        Dealiasing factor; nonlinear terms are evaluated on a grid with
        ``max(M, ceil(padding*N))`` points per axis.
    """

    n: int
    N: int
    M: int
    d: float
    padding: float = DEFAULT_PADDING
    _matrices: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"only n in {{1, 2}} is supported, got n={self.n}")
        if self.N < 1:
            raise ValueError(f"need N >= 1, got {self.N}")
        if self.M < self.N:
            raise ValueError(f"collocation grid M={self.M} cannot represent N={self.N} modes")
        if not self.d > 0:
            raise ValueError(f"diffusion d must be positive, got {self.d}")
        if not self.padding >= 1:
            raise ValueError(f"padding must be >= 1, got {self.padding}")
        if self.padding < DEFAULT_PADDING:
            logger.warning("padding %.3g < 3: quintic nonlinearities will alias", self.padding)

        mu = self.mode_numbers_sq(self.N)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eigenvalues", _readonly(self.d * mu))
        object.__setattr__(self, "padded_size", max(self.M, math.ceil(self.padding * self.N)))

    # -- geometry ---------------------------------------------------------
    @property
    def kappa(self) -> float:
        """Uniform bound on |e_k(x)|^2."""
        return (2.0 / math.pi) ** self.n

    @property
    def coeff_shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def grid_shape(self) -> tuple:
        return (self.M,) * self.n

    @property
    def lambda1(self) -> float:
        return float(self.d * self.n)

    @staticmethod
    def points(G: int) -> np.ndarray:
        return np.arange(1, G + 1) * (EXTENT / (G + 1))

    def coords(self, G: int | None = None) -> tuple:
        """Coordinate arrays broadcastable against a grid of size G per axis."""
        G = self.M if G is None else G
        x = self.points(G)
        if self.n == 1:
            return (x,)
        return (x[:, None], x[None, :])

    def cell_volume(self, G: int | None = None) -> float:
        G = self.M if G is None else G
        return (EXTENT / (G + 1)) ** self.n

    def mode_numbers_sq(self, K: int) -> np.ndarray:
        """|k|^2 for k in {1..K}^n, i.e. Laplacian eigenvalues without d."""
        k2 = np.arange(1, K + 1, dtype=float) ** 2
        if self.n == 1:
            return _readonly(k2)
        return _readonly(k2[:, None] + k2[None, :])

    def eigenfunction(self, k, G: int | None = None) -> np.ndarray:
        """Grid values of e_k for a 1-based multi-index ``k``."""
        k = (k,) if np.isscalar(k) else tuple(k)
        if len(k) != self.n:
            raise ValueError(f"multi-index {k} does not match n={self.n}")
        out = 1.0
        for ki, xi in zip(k, self.coords(G)):
            out = out * (math.sqrt(2.0 / math.pi) * np.sin(ki * xi))
        return np.broadcast_to(out, ((self.M if G is None else G),) * self.n).copy()

    # -- transforms on raw arrays ----------------------------------------
    def sine_matrix(self, G: int, K: int) -> np.ndarray:
        """S[j, k] = e_{k+1}(x_{j+1}) in one dimension, shape (G, K)."""
        key = (G, K)
        S = self._matrices.get(key)
        if S is None:
            j = np.arange(1, G + 1)[:, None]
            k = np.arange(1, K + 1)[None, :]
            S = _readonly(math.sqrt(2.0 / math.pi) * np.sin(j * k * (math.pi / (G + 1))))
            self._matrices[key] = S
        return S

    def synthesize(self, coeffs: np.ndarray, G: int | None = None) -> np.ndarray:
        """Evaluate a sine series with K modes per axis on a grid of size G."""
        G = self.M if G is None else G
        K = coeffs.shape[-1]
        if K > G:
            raise ValueError(f"{K} modes cannot be evaluated on a {G}-point grid")
        S = self.sine_matrix(G, K)
        out = coeffs @ S.T
        if self.n == 2:
            out = S @ out
        return out

    def analyze(self, values: np.ndarray, K: int | None = None) -> np.ndarray:
        """Sine coefficients (first K per axis) of grid values; exact if bandlimited."""
        G = values.shape[-1]
        K = self.N if K is None else K
        if K > G:
            raise ValueError(f"cannot resolve {K} modes from a {G}-point grid")
        S = self.sine_matrix(G, K)
        w = EXTENT / (G + 1)
        out = (values @ S) * w
        if self.n == 2:
            out = (S.T @ out) * w
        return out

    def regrid(self, values: np.ndarray, G: int) -> np.ndarray:
        """Re-sample grid values onto another grid through their full sine series."""
        if values.shape[-1] == G:
            return values
        return self.synthesize(self.analyze(values, values.shape[-1]), G)

    def semigroup_factor(self, t: float) -> np.ndarray:
        return np.exp(-self.eigenvalues * t)

    def __repr__(self):
        return (f"BasisSpec(n={self.n}, N={self.N}, M={self.M}, d={self.d}, "
                f"padding={self.padding}, padded_size={self.padded_size})")


def make_basis(n: int, N: int, M: int, d: float = 1.0, padding: float = DEFAULT_PADDING) -> BasisSpec:
    return BasisSpec(n=int(n), N=int(N), M=int(M), d=float(d), padding=float(padding))


@dataclass(frozen=True, eq=False)
class SpectralField:
    basis: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != self.basis.coeff_shape:
            raise ValueError(f"coefficient shape {c.shape} != {self.basis.coeff_shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite spectral coefficients")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: BasisSpec) -> "SpectralField":
        return cls(basis, np.zeros(basis.coeff_shape))

    @classmethod
    def unit(cls, basis: BasisSpec, k) -> "SpectralField":
        c = np.zeros(basis.coeff_shape)
        k = (k,) if np.isscalar(k) else tuple(k)
        c[tuple(ki - 1 for ki in k)] = 1.0
        return cls(basis, c)


@dataclass(frozen=True, eq=False)
class GridField:
    basis: BasisSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape == ():
            v = np.full(self.basis.grid_shape, float(v))
        if v.shape != self.basis.grid_shape:
            raise ValueError(f"grid shape {v.shape} != {self.basis.grid_shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite grid values")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, basis: BasisSpec, value: float) -> "GridField":
        return cls(basis, np.full(basis.grid_shape, float(value)))

    @classmethod
    def from_function(cls, basis: BasisSpec, fn) -> "GridField":
        return cls(basis, np.broadcast_to(fn(*basis.coords()), basis.grid_shape))


def _check_same(a: BasisSpec, b: BasisSpec):
    if a is not b and (a.n, a.N, a.M, a.d, a.padding) != (b.n, b.N, b.M, b.d, b.padding):
        raise ValueError("basis mismatch")


def sine_transform(f: GridField, basis: BasisSpec | None = None) -> SpectralField:
    if basis is not None:
        _check_same(basis, f.basis)
    return SpectralField(f.basis, f.basis.analyze(f.values))


def inverse_transform(c: SpectralField, basis: BasisSpec | None = None) -> GridField:
    if basis is not None:
        _check_same(basis, c.basis)
    return GridField(c.basis, c.basis.synthesize(c.coeffs))


def _space_axes(n: int) -> tuple:
    return tuple(range(-n, 0))


def l2_norm(c: SpectralField) -> float:
    return float(np.sqrt(np.sum(c.coeffs ** 2)))


def lp_norm(f: GridField, p: float) -> float:
    """Box-rule L^p norm on the interior grid; error O(M^-2) for smooth f."""
    return float(lp_norm_array(f.basis, f.values, p))


def h1_seminorm(c: SpectralField) -> float:
    return float(np.sqrt(np.sum(c.basis.mu * c.coeffs ** 2)))


def apply_semigroup(c: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    return SpectralField(c.basis, c.coeffs * c.basis.semigroup_factor(t))


# -- batched norm helpers used by the integrators and diagnostics ---------

def l2_array(basis: BasisSpec, coeffs: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(coeffs ** 2, axis=_space_axes(basis.n)))


def h1_array(basis: BasisSpec, coeffs: np.ndarray) -> np.ndarray:
    """H^1 seminorm of coefficient arrays with any number K of modes per axis."""
    mu = basis.mu if coeffs.shape[-1] == basis.N else basis.mode_numbers_sq(coeffs.shape[-1])
    return np.sqrt(np.sum(mu * coeffs ** 2, axis=_space_axes(basis.n)))


def lp_norm_array(basis: BasisSpec, values: np.ndarray, p: float) -> np.ndarray:
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    w = basis.cell_volume(values.shape[-1])
    return (w * np.sum(np.abs(values) ** p, axis=_space_axes(basis.n))) ** (1.0 / p)


def grid_l2_array(basis: BasisSpec, values: np.ndarray) -> np.ndarray:
    w = basis.cell_volume(values.shape[-1])
    return np.sqrt(w * np.sum(values ** 2, axis=_space_axes(basis.n)))
