"""Covariance kernels of the driving noise and sampling of discretised noise fields.

A separable noise has covariance f(z1 - z2) gamma(t1 - t2).  On a grid it is
represented only through cell increments: the covariance of the increments
over cells I_i x J_j and I_k x J_l is C_f[i, k] C_gamma[j, l] with

    C_f[i, k] = int_{I_i} int_{I_k} f(x - y) dx dy,

which stays finite for the Riesz kernel |x|^-h even on the diagonal.
White noise (f = delta) gives C_f = dz * identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericError

__all__ = [
    "CovKernel",
    "NoiseModel",
    "FieldGrid",
    "ConditionReport",
    "f_eps",
    "gamma_t",
    "cell_covariance",
    "sample_field",
    "check_conditions",
    "path_generators",
]

WHITE = "dirac-white"
RIESZ = "riesz"
EXPONENTIAL = "exponential"
TABULATED = "tabulated"
_KINDS = (WHITE, RIESZ, EXPONENTIAL, TABULATED)


@dataclass(frozen=True)
class CovKernel:
    """A one-dimensional covariance kernel.

    ``param`` is the exponent h of a Riesz kernel or the scale of an
    exponential one.  Tabulated kernels carry sample points ``xs`` (any real
    values, sorted) and values ``fs`` and are linear in between; if every
    sample is >= 0 the table is extended to negative x by symmetry.
    """

    kind: str
    param: float | None = None
    xs: tuple[float, ...] = field(default_factory=tuple)
    fs: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown kernel kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == RIESZ and not (self.param is not None and 0.0 < self.param < 1.0):
            raise DomainError(f"riesz exponent h must lie in (0, 1), got {self.param}")
        if self.kind == EXPONENTIAL and not (self.param is not None and self.param > 0.0):
            raise DomainError(f"exponential scale must be positive, got {self.param}")
        if self.kind == TABULATED:
            xs = tuple(float(x) for x in self.xs)
            fs = tuple(float(v) for v in self.fs)
            if len(xs) < 2 or len(xs) != len(fs):
                raise DomainError("tabulated kernel needs at least two matching samples")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise DomainError("tabulated sample points must be strictly increasing")
            if not all(math.isfinite(v) for v in fs):
                raise DomainError("tabulated kernel values must be finite")
            object.__setattr__(self, "xs", xs)
            object.__setattr__(self, "fs", fs)

    @classmethod
    def white(cls) -> "CovKernel":
        return cls(WHITE)

    @classmethod
    def riesz(cls, h: float) -> "CovKernel":
        return cls(RIESZ, float(h))

    @classmethod
    def exponential(cls, scale: float) -> "CovKernel":
        return cls(EXPONENTIAL, float(scale))

    @classmethod
    def tabulated(cls, xs, fs) -> "CovKernel":
        return cls(TABULATED, None, tuple(xs), tuple(fs))

    @property
    def is_white(self) -> bool:
        return self.kind == WHITE

    @property
    def _one_sided(self) -> bool:
        return self.kind == TABULATED and self.xs[0] >= 0.0

    def __call__(self, x):
        if self.is_white:
            raise DomainError("white noise has no pointwise covariance function")
        x = np.asarray(x, dtype=float)
        if self.kind == RIESZ:
            with np.errstate(divide="ignore"):
                return np.abs(x) ** -self.param
        if self.kind == EXPONENTIAL:
            return np.exp(-np.abs(x) / self.param)
        arg = np.abs(x) if self._one_sided else x
        return np.interp(arg, self.xs, self.fs, left=self.fs[0], right=self.fs[-1])

    def half_integral(self, r):
        """int_0^r f for r >= 0 (odd extension for r < 0 on symmetric kernels)."""
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        if self.kind == RIESZ:
            h = self.param
            out = a ** (1.0 - h) / (1.0 - h)
        elif self.kind == EXPONENTIAL:
            out = self.param * -np.expm1(-a / self.param)
        elif self.kind == TABULATED:
            out = self._tab_moment(a, 0)
        else:
            raise DomainError("white noise has no local integral; use cell variances")
        return np.sign(r) * out

    def second_antiderivative(self, u):
        """G(u) = int_0^|u| (|u| - v) f(v) dv, even with G'' = f."""
        a = np.abs(np.asarray(u, dtype=float))
        if self.kind == RIESZ:
            h = self.param
            return a ** (2.0 - h) / ((1.0 - h) * (2.0 - h))
        if self.kind == EXPONENTIAL:
            ell = self.param
            return ell * a - ell * ell * -np.expm1(-a / ell)
        if self.kind == TABULATED:
            return a * self._tab_moment(a, 0) - self._tab_moment(a, 1)
        raise DomainError("white noise has no covariance function")

    def _tab_moment(self, a: np.ndarray, power: int) -> np.ndarray:
        """int_0^a v^power f(v) dv for the piecewise-linear table (power 0 or 1)."""
        if not self._one_sided:
            raise DomainError("local integrals of two-sided tables are not supported")
        xs = np.asarray(self.xs)
        fs = np.asarray(self.fs)
        if xs[0] > 0.0:
            xs = np.concatenate(([0.0], xs))
            fs = np.concatenate(([fs[0]], fs))
        grid = np.union1d(xs, np.atleast_1d(a))
        vals = np.interp(grid, xs, fs, right=fs[-1])
        # exact for linear pieces: Simpson on each interval
        mid = 0.5 * (grid[1:] + grid[:-1])
        fm = np.interp(mid, xs, fs, right=fs[-1])
        g0, g1 = grid[:-1] ** power, grid[1:] ** power
        gm = mid ** power
        piece = np.diff(grid) / 6.0 * (g0 * vals[:-1] + 4.0 * gm * fm + g1 * vals[1:])
        cum = np.concatenate(([0.0], np.cumsum(piece)))
        return np.interp(a, grid, cum)


@dataclass(frozen=True)
class NoiseModel:
    spatial: CovKernel = field(default_factory=CovKernel.white)
    temporal: CovKernel = field(default_factory=CovKernel.white)
    beta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise DomainError(f"beta must be >= 0, got {self.beta}")

    @property
    def is_white(self) -> bool:
        return self.spatial.is_white and self.temporal.is_white

    def degeneracy(self, z):
        """(z ^ 1)^beta."""
        return np.minimum(np.asarray(z, dtype=float), 1.0) ** self.beta


@dataclass(frozen=True)
class FieldGrid:
    """Uniform nodes z_i = i dz (i >= 1) and t_j = j dt (j >= 1).

    Space cells are centred on their node; time cells end at their node.
    """

    z_nodes: tuple[float, ...]
    t_nodes: tuple[float, ...]

    def __post_init__(self):
        z = tuple(float(v) for v in self.z_nodes)
        t = tuple(float(v) for v in self.t_nodes)
        for name, nodes in (("z_nodes", z), ("t_nodes", t)):
            if len(nodes) == 0:
                raise DomainError(f"{name} is empty")
            if nodes[0] <= 0 or any(b <= a for a, b in zip(nodes, nodes[1:])):
                raise DomainError(f"{name} must be positive and strictly increasing")
            if len(nodes) > 1:
                steps = np.diff(nodes)
                if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
                    raise DomainError(f"{name} must be uniformly spaced")
        object.__setattr__(self, "z_nodes", z)
        object.__setattr__(self, "t_nodes", t)

    @classmethod
    def uniform(cls, z_max: float, nz: int, t_max: float, nt: int) -> "FieldGrid":
        return cls(tuple(z_max * np.arange(1, nz + 1) / nz), tuple(t_max * np.arange(1, nt + 1) / nt))

    @property
    def dz(self) -> float:
        return self.z_nodes[1] - self.z_nodes[0] if len(self.z_nodes) > 1 else self.z_nodes[0]

    @property
    def dt(self) -> float:
        return self.t_nodes[1] - self.t_nodes[0] if len(self.t_nodes) > 1 else self.t_nodes[0]

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.z_nodes)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.t_nodes)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.z_nodes), len(self.t_nodes)


class ConditionReport(NamedTuple):
    applicable: bool
    symmetric: bool | None
    nonneg: bool | None
    non_increasing: bool | None
    f_eps_vanishes: bool | None


def f_eps(kernel: CovKernel, eps: float) -> float:
    """F_eps = int_{-eps}^{eps} f."""
    if not (math.isfinite(eps) and eps > 0):
        raise DomainError(f"eps must be positive, got {eps}")
    if kernel.is_white:
        raise DomainError("F_eps is undefined for white noise")
    if kernel.kind == TABULATED and not kernel._one_sided:
        x = np.linspace(-eps, eps, 4097)
        return float(np.trapezoid(kernel(x), x))
    value = 2.0 * float(kernel.half_integral(eps))
    if not math.isfinite(value):
        raise DomainError(f"local integral of {kernel.kind} kernel diverges")
    return value


def gamma_t(kernel: CovKernel, t: float) -> float:
    """Gamma_t = int_{-t}^{t} gamma; the same computation as :func:`f_eps`."""
    return f_eps(kernel, t)


def cell_covariance(kernel: CovKernel, edges) -> np.ndarray:
    """Matrix of int_{I_i} int_{I_k} f(x - y) dx dy for cells I_i = [edges[i], edges[i+1]]."""
    e = np.asarray(edges, dtype=float)
    a, b = e[:-1, None], e[1:, None]
    c, d = e[None, :-1], e[None, 1:]
    if kernel.is_white:
        return np.diag(np.diff(e))
    G = kernel.second_antiderivative
    return G(b - c) + G(a - d) - G(b - d) - G(a - c)


def _space_edges(grid: FieldGrid) -> np.ndarray:
    z = grid.z
    return np.concatenate((z - 0.5 * grid.dz, [z[-1] + 0.5 * grid.dz]))


def _time_edges(grid: FieldGrid) -> np.ndarray:
    return np.concatenate(([grid.t[0] - grid.dt], grid.t))


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    scale = float(np.mean(np.diag(matrix)))
    for jitter in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            return np.linalg.cholesky(matrix + jitter * scale * np.eye(len(matrix)))
        except np.linalg.LinAlgError:
            continue
    raise NumericError(f"{what} covariance is not positive definite even with jitter 1e-8")


def noise_factors(model: NoiseModel, grid: FieldGrid) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Cholesky factors of C_f and C_gamma; ``None`` marks a white axis."""
    lf = None if model.spatial.is_white else _cholesky(cell_covariance(model.spatial, _space_edges(grid)), "spatial")
    lg = None if model.temporal.is_white else _cholesky(cell_covariance(model.temporal, _time_edges(grid)), "temporal")
    return lf, lg


def path_generators(seed: int, n_paths: int, start: int = 0) -> list[np.random.Generator]:
    """One independent generator per path, derived from ``seed`` by path index."""
    # the same streams as SeedSequence(seed).spawn(...)[i], without building the prefix
    return [np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(i,)))
            for i in range(start, start + n_paths)]


def draw_field(rng: np.random.Generator, grid: FieldGrid, factors) -> np.ndarray:
    """One noise field of cell increments, shape (N_z, N_t)."""
    lf, lg = factors
    nz, nt = grid.shape
    xi = rng.standard_normal((nz, nt))
    xi = xi * math.sqrt(grid.dz) if lf is None else lf @ xi
    xi = xi * math.sqrt(grid.dt) if lg is None else xi @ lg.T
    return xi


def sample_field(model: NoiseModel, grid: FieldGrid, seed: int, n_paths: int) -> np.ndarray:
    """Noise increments dW[path, i, j] with covariance C_f (x) C_gamma."""
    if int(n_paths) != n_paths or n_paths < 1:
        raise DomainError(f"n_paths must be a positive integer, got {n_paths}")
    factors = noise_factors(model, grid)
    out = np.empty((int(n_paths),) + grid.shape)
    for p, rng in enumerate(path_generators(seed, int(n_paths))):
        out[p] = draw_field(rng, grid, factors)
    return out


def check_conditions(kernel: CovKernel, x_max: float = 10.0, n: int = 4001) -> ConditionReport:
    """Numerically check symmetry, non-negativity, monotonicity on (0, inf) and F_eps -> 0."""
    if kernel.is_white:
        return ConditionReport(False, None, None, None, None)
    x = np.geomspace(1e-6, x_max, n)
    fx = kernel(x)
    symmetric = bool(np.allclose(fx, kernel(-x), rtol=1e-12, atol=0.0))
    xx = np.concatenate((-x[::-1], x))
    nonneg = bool(np.all(kernel(xx) >= 0.0))
    non_increasing = bool(np.all(np.diff(fx) <= 1e-14 * np.abs(fx[:-1])))
    try:
        radii = [1e-8, 1e-6, 1e-4, 1e-2, 1.0]
        feps = [f_eps(kernel, r) for r in radii]
        vanishes = all(b >= a for a, b in zip(feps, feps[1:])) and feps[0] <= 1e-2 * feps[-1]
    except DomainError:
        vanishes = False
    return ConditionReport(True, symmetric, nonneg, non_increasing, bool(vanishes))
