"""Fundamental solution of the Kimura operator z d^2/dz^2 + nu d/dz on (0, inf).

The kernel

    q_nu(z, w, t) = z^((1-nu)/2) w^((nu-1)/2) t^-1 exp(-(z+w)/t) I_{1-nu}(2 sqrt(zw)/t)

is evaluated as ``(z/w)^((1-nu)/2) / t * exp(-(sqrt z - sqrt w)^2 / t) * ive(1-nu, x)``
which is the same number without the overflowing pair exp(-(z+w)/t), I(x).

Integrals in ``w`` are done in ``r = sqrt(w)``: in that variable the kernel is
a Gaussian bump of width ~sqrt(t) around sqrt(z), whatever z is.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfc

from . import _backend, _quad
from .errors import AccuracyError, DomainError, TruncationWarning
from .specfun import (
    bessel_i_scaled,
    hypergeometric,
    pfq_scaled,
)

__all__ = [
    "KernelParams",
    "PotentialSpec",
    "QuadratureSpec",
    "Propagation",
    "DuhamelResult",
    "q_nu",
    "q0_dz",
    "kernel_difference",
    "gaussian_bound",
    "gaussian_bound_refined",
    "mass_q0",
    "mass_q0_quadrature",
    "absorbed_mass",
    "mass_q1",
    "mass_q1_quadrature",
    "energy_density_q0",
    "energy_density_q0_pfq",
    "energy_density_q0_quadrature",
    "weighted_energy_density",
    "energy_U",
    "energy_U_quadrature",
    "z_energy_q_nu",
    "z_energy_quadrature",
    "propagate",
    "semigroup_compose",
    "duhamel_qV",
]


@dataclass(frozen=True)
class KernelParams:
    nu: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.nu) and self.nu < 1.0):
            raise DomainError(f"drift order nu must be < 1, got {self.nu}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for every integral in ``w`` (and in time) done by quadrature.

    ``spread`` is the half width of the integration window in units of the
    kernel's Gaussian width, so the neglected mass is about exp(-spread^2).
    """

    z_max: float = math.inf
    base_points: int = 16
    singularity_grading: float = 2.0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    spread: float = 8.0
    panels: int = 8
    time_levels: int = 14

    def __post_init__(self):
        if not self.z_max > 0:
            raise DomainError(f"z_max must be positive, got {self.z_max}")
        if not (1.0 <= self.singularity_grading <= 4.0):
            raise DomainError(f"grading exponent must lie in [1, 4], got {self.singularity_grading}")
        for name in ("abs_tol", "rel_tol"):
            v = getattr(self, name)
            if not (0.0 < v <= 1e-2):
                raise DomainError(f"{name} must lie in (0, 1e-2], got {v}")
        if self.base_points < 2 or self.panels < 1 or self.time_levels < 1:
            raise DomainError("base_points >= 2, panels >= 1, time_levels >= 1 required")
        if not self.spread > 0:
            raise DomainError("spread must be positive")

    @property
    def r_cap(self) -> float:
        return math.sqrt(self.z_max)


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class PotentialSpec:
    """Bounded potential tabulated at nodes, linear in between, constant outside."""

    nodes: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        nodes = tuple(float(z) for z in self.nodes)
        values = tuple(float(v) for v in self.values)
        if len(nodes) == 0 or len(nodes) != len(values):
            raise DomainError("potential needs matching, non-empty nodes and values")
        if any(z <= 0 for z in nodes) or any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise DomainError("potential nodes must be positive and strictly increasing")
        if not all(math.isfinite(v) for v in values):
            raise DomainError("potential values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, c: float) -> "PotentialSpec":
        return cls((1.0,), (c,))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], nodes) -> "PotentialSpec":
        nodes = np.asarray(nodes, dtype=float)
        return cls(tuple(nodes), tuple(np.asarray(fn(nodes), dtype=float)))

    @property
    def sup_norm(self) -> float:
        return max(abs(v) for v in self.values)

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def __call__(self, z):
        return np.interp(z, self.nodes, self.values)


class Propagation(NamedTuple):
    value: float
    tail_bound: float


class DuhamelResult(NamedTuple):
    value: float
    per_term: list


def _as_params(params) -> KernelParams:
    if isinstance(params, KernelParams):
        return params
    return KernelParams(float(params))


def _positive(**named) -> None:
    for name, v in named.items():
        a = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(a)):
            raise DomainError(f"{name} must be finite")
        if np.any(a <= 0):
            raise DomainError(f"{name} must be > 0")


def _scalar_or_array(value: np.ndarray, *inputs):
    if all(np.ndim(a) == 0 for a in inputs):
        return float(value)
    return value


def q_nu(params, z, w, t):
    """Kimura kernel with drift ``nu``; scalars in give a float, arrays broadcast."""
    p = _as_params(params)
    _positive(z=z, w=w, t=t)
    return _scalar_or_array(_backend.q_nu(p.nu, z, w, t), z, w, t)


def _q_raw(nu: float, z, w, t) -> np.ndarray:
    # no validation: used on quadrature nodes where w may be exactly 0
    return _backend.q_nu(nu, z, w, t)


def q0_dz(z, w, t):
    """Derivative of q_0 in its first argument: (q_1 - q_0) / t."""
    _positive(z=z, w=w, t=t)
    out = (_backend.q_nu(1.0, z, w, t) - _backend.q_nu(0.0, z, w, t)) / np.asarray(t, dtype=float)
    return _scalar_or_array(out, z, w, t)


def kernel_difference(z1, z2, w, t):
    """q_0(z1, w, t) - q_0(z2, w, t)."""
    _positive(z1=z1, z2=z2, w=w, t=t)
    out = _backend.q_nu(0.0, z1, w, t) - _backend.q_nu(0.0, z2, w, t)
    return _scalar_or_array(out, z1, z2, w, t)


def gaussian_bound(z, w, t):
    """(z / t^2) exp(-(sqrt z - sqrt w)^2 / t), a pointwise majorant of q_0."""
    _positive(z=z, w=w, t=t)
    z, w, t = (np.asarray(a, dtype=float) for a in (z, w, t))
    gap = np.sqrt(z) - np.sqrt(w)
    return _scalar_or_array(z / t ** 2 * np.exp(-gap * gap / t), z, w, t)


def gaussian_bound_refined(z, w, t, constant: float | None = None):
    """C z^(1/4) w^(-3/4) t^(-1/2) exp(-(sqrt z - sqrt w)^2 / t), valid where zw >= t^2."""
    from .constants import GAUSSIAN_REFINED_C

    c = GAUSSIAN_REFINED_C if constant is None else constant
    _positive(z=z, w=w, t=t)
    z, w, t = (np.asarray(a, dtype=float) for a in (z, w, t))
    gap = np.sqrt(z) - np.sqrt(w)
    out = c * z ** 0.25 * w ** -0.75 / np.sqrt(t) * np.exp(-gap * gap / t)
    return _scalar_or_array(out, z, w, t)


def fit_gaussian_constant(x_grid=None) -> float:
    """Smallest C making the refined Gaussian bound hold on a grid of x = 2 sqrt(zw)/t >= 2.

    On that region the ratio q_0 / (z^(1/4) w^(-3/4) t^(-1/2) e^{...}) reduces
    to sqrt(x/2) e^{-x} I_1(x), a function of x alone.
    """
    if x_grid is None:
        x_grid = np.geomspace(2.0, 1e12, 4001)
    x = np.asarray(x_grid, dtype=float)
    return float(np.max(np.sqrt(0.5 * x) * _backend.ive(1.0, x)))


# -- windows in r = sqrt(w) -------------------------------------------------

def _window(center, width, quad: QuadratureSpec):
    lo = np.maximum(0.0, center - quad.spread * width)
    hi = np.minimum(center + quad.spread * width, quad.r_cap)
    hi = np.maximum(hi, lo)
    return lo, hi


def _w_nodes(center, width, quad: QuadratureSpec):
    """Nodes w and weights (including dw = 2r dr) covering the kernel bump."""
    lo, hi = _window(center, width, quad)
    r, wr = _quad.mapped(_quad.composite_unit(quad.panels, quad.base_points), lo, hi)
    return r * r, 2.0 * r * wr, lo, hi


def _gaussian_tail(z: float, t: float, nu: float, lo: float, hi: float) -> float:
    """Bound on the kernel mass outside r in [lo, hi] from the Gaussian majorant."""
    pref = z ** (1.0 - nu) * t ** (nu - 2.0) / math.gamma(2.0 - nu)
    sz = math.sqrt(z)
    st = math.sqrt(t)
    a = max(hi - sz, 0.0)
    upper = t * math.exp(-a * a / t) + sz * math.sqrt(math.pi * t) * erfc(a / st)
    lower = 0.0
    if lo > 0.0:
        b = max(sz - lo, 0.0)
        lower = sz * math.sqrt(math.pi * t) * erfc(b / st)
    if math.isinf(hi):
        upper = 0.0
    return pref * (upper + lower)


# -- mass -------------------------------------------------------------------

def mass_q0(z, t):
    """Total mass of q_0(z, ., t): 1 - exp(-z/t)."""
    _positive(z=z, t=t)
    out = -np.expm1(-np.asarray(z, dtype=float) / np.asarray(t, dtype=float))
    return _scalar_or_array(out, z, t)


def absorbed_mass(z, t):
    """Mass lost at the boundary by time t: exp(-z/t)."""
    _positive(z=z, t=t)
    out = np.exp(-np.asarray(z, dtype=float) / np.asarray(t, dtype=float))
    return _scalar_or_array(out, z, t)


def mass_q1(z, t) -> float:
    """q_1 conserves mass, so this is identically one."""
    _positive(z=z, t=t)
    return 1.0


def mass_q0_quadrature(z: float, t: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    return propagate(KernelParams(0.0), None, z, t, quad).value


def mass_q1_quadrature(z: float, t: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    # nu = 1 sits outside KernelParams (its mass identity is the point here)
    _positive(z=z, t=t)
    return _propagate(1.0, None, z, t, quad, None).value


def propagate(params, u0: Callable[[np.ndarray], np.ndarray] | None, z: float, t: float,
              quad: QuadratureSpec = DEFAULT_QUAD, u0_sup: float | None = None) -> Propagation:
    """Integrate q_nu(z, w, t) u0(w) over w.

    ``u0=None`` means u0 = 1.  The tail bound covers the part of (0, inf)
    outside the integration window; ``u0_sup`` is the bound on |u0| used
    there (default: the largest |u0| seen on the nodes).
    """
    p = _as_params(params)
    _positive(z=z, t=t)
    return _propagate(p.nu, u0, z, t, quad, u0_sup)


def _propagate(nu, u0, z, t, quad, u0_sup) -> Propagation:
    w, wt, lo, hi = _w_nodes(math.sqrt(z), math.sqrt(t), quad)
    k = _q_raw(nu, np.full_like(w, z), w, np.full_like(w, t))
    f = np.ones_like(w) if u0 is None else np.asarray(u0(w), dtype=float)
    if f.shape != w.shape or not np.all(np.isfinite(f)):
        raise DomainError("initial data must return finite values for every node")
    value = float(np.sum(wt * k * f))
    sup = u0_sup if u0_sup is not None else (1.0 if u0 is None else float(np.max(np.abs(f))))
    tail = sup * _gaussian_tail(z, t, nu, float(lo), float(hi))
    if tail > quad.rel_tol * abs(value) and tail > quad.abs_tol:
        warnings.warn(f"propagate(z={z}, t={t}): tail {tail:.3e} vs value {value:.3e}", TruncationWarning,
                      stacklevel=3)
    return Propagation(value, tail)


def semigroup_compose(params, z: float, w: float, s: float, t: float,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Integral over x of q(z, x, s) q(x, w, t), which should equal q(z, w, s + t)."""
    p = _as_params(params)
    _positive(z=z, w=w, s=s, t=t)
    center = (math.sqrt(z) * t + math.sqrt(w) * s) / (s + t)
    width = math.sqrt(s * t / (s + t))
    x, xt, _, _ = _w_nodes(center, width, quad)
    a = _q_raw(p.nu, np.full_like(x, z), x, np.full_like(x, s))
    b = _q_raw(p.nu, x, np.full_like(x, w), np.full_like(x, t))
    return float(np.sum(xt * a * b))


# -- energies ---------------------------------------------------------------

_ENERGY_SPEC = hypergeometric([1.5, 1.0], [2.0, 3.0])
_Z_ENERGY_SPECS = {
    0: (hypergeometric([1.5, 3.0], [2.0, 3.0]), 4.0),
    1: (hypergeometric([0.5, 1.0], [1.0, 1.0]), 2.0),
}


def energy_density_q0(z: float, s: float) -> float:
    """Integral over w of q_0(z, w, s)^2.

    (z/s^2) [e^{-x}(I_0 - I_1)(x) - e^{-2x}], x = z/s.  Below x = 1/2 the
    bracket cancels to ~x/2, so the series form is used there instead.
    """
    _positive(z=z, s=s)
    x = z / s
    if x < 0.5:
        return energy_density_q0_pfq(z, s)
    bracket = bessel_i_scaled(0.0, x) - bessel_i_scaled(1.0, x) - math.exp(-2.0 * x)
    return z / (s * s) * bracket


def energy_density_q0_pfq(z: float, s: float) -> float:
    """Same integral as :func:`energy_density_q0` through (z^2 / 2s^3) e^{-2z/s} 2F2[3/2,1;2,3](2z/s)."""
    _positive(z=z, s=s)
    x = 2.0 * z / s
    # x^2 e^{-x} 2F2 / (8 s), which is z^2/(2 s^3) e^{-x} 2F2
    return pfq_scaled(_ENERGY_SPEC, x, 2.0) / (8.0 * s)


def weighted_energy_density(z: float, s: float, xi: float) -> float:
    """Integral over w of q_0(z, w, s)^2 w^xi for 0 <= xi <= 1/2."""
    _positive(z=z, s=s)
    if not (0.0 <= xi <= 0.5):
        raise DomainError(f"xi must lie in [0, 1/2], got {xi}")
    x = 2.0 * z / s
    spec = hypergeometric([1.5, xi + 1.0], [2.0, 3.0])
    return math.gamma(1.0 + xi) / 2.0 ** (3.0 + xi) * s ** (xi - 1.0) * pfq_scaled(spec, x, 2.0)


def energy_density_q0_quadrature(z: float, s: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    _positive(z=z, s=s)
    w, wt, _, _ = _w_nodes(math.sqrt(z), math.sqrt(s), quad)
    k = _q_raw(0.0, np.full_like(w, z), w, np.full_like(w, s))
    return float(np.sum(wt * k * k))


def energy_U(x):
    """e^{-x} I_0(x) - e^{-2x} / 2, the time-integrated energy at x = z/t."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or not np.all(np.isfinite(xa)):
        raise DomainError("energy_U needs finite x >= 0")
    out = _backend.ive(0.0, xa) - 0.5 * np.exp(-2.0 * xa)
    return _scalar_or_array(out, x)


def _time_rule(t: float, quad: QuadratureSpec):
    s, ws = _quad.graded_power(quad.time_levels, quad.base_points, quad.singularity_grading)
    return t * s, t * ws


def energy_U_quadrature(z: float, t: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Double quadrature of q_0^2 over w in (0, inf) and s in (0, t)."""
    _positive(z=z, t=t)
    s, ws = _time_rule(t, quad)
    w, wt, _, _ = _w_nodes(math.sqrt(z), np.sqrt(s), quad)
    k = _q_raw(0.0, np.full_like(w, z), w, np.broadcast_to(s[:, None], w.shape))
    return float(np.sum(ws * np.sum(wt * k * k, axis=1)))


def z_energy_q_nu(nu: int, w: float, s: float) -> float:
    """Integral over z of q_nu(z, w, s)^2 for nu in {0, 1}."""
    if nu not in _Z_ENERGY_SPECS:
        raise DomainError(f"closed form known for nu in {{0, 1}}, got {nu}")
    _positive(w=w, s=s)
    spec, denom = _Z_ENERGY_SPECS[nu]
    return pfq_scaled(spec, 2.0 * w / s, 0.0) / (denom * s)


def z_energy_quadrature(nu: float, w: float, s: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    _positive(w=w, s=s)
    z, zt, _, _ = _w_nodes(math.sqrt(w), math.sqrt(s), quad)
    k = _q_raw(float(nu), z, np.full_like(z, w), np.full_like(z, s))
    return float(np.sum(zt * k * k))


# -- Duhamel series ---------------------------------------------------------

_CHUNK = 1 << 21


def _duhamel_term(n: int, nu: float, V: PotentialSpec, z, w, t, quad: QuadratureSpec) -> np.ndarray:
    """n-th Duhamel term on flat arrays z, w, t.

    Uses q_n = int int q_a(z, x, t-s) V(x) q_b(x, w, s) dx ds with a + b = n - 1
    split as evenly as possible, which the Chapman-Kolmogorov property allows.
    """
    if n == 0:
        return _q_raw(nu, z, w, t)
    a = (n - 1) // 2
    b = n - 1 - a
    s_unit, ws_unit = _quad.graded_both_ends(1, quad.base_points, quad.singularity_grading)
    x_unit, wx_unit = _quad.composite_unit(4, quad.base_points)
    m_s, m_x = len(s_unit), len(x_unit)
    per_point = m_s * m_x
    out = np.empty(z.shape[0])
    step = max(1, _CHUNK // per_point)
    for start in range(0, z.shape[0], step):
        sl = slice(start, start + step)
        zc, wc, tc = z[sl, None, None], w[sl, None, None], t[sl, None, None]
        s = tc * s_unit[None, :, None]
        ws = tc * ws_unit[None, :, None]
        center = (np.sqrt(zc) * s + np.sqrt(wc) * (tc - s)) / tc
        width = np.sqrt(s * (tc - s) / tc)
        lo, hi = _window(center, width, quad)
        r = lo + (hi - lo) * x_unit[None, None, :]
        x = r * r
        wx = (hi - lo) * wx_unit[None, None, :] * 2.0 * r
        shape = x.shape
        left = _duhamel_term(a, nu, V, np.broadcast_to(zc, shape).ravel(), x.ravel(),
                             np.broadcast_to(tc - s, shape).ravel(), quad).reshape(shape)
        right = _duhamel_term(b, nu, V, x.ravel(), np.broadcast_to(wc, shape).ravel(),
                              np.broadcast_to(s, shape).ravel(), quad).reshape(shape)
        out[sl] = np.sum(ws * wx * left * V(x) * right, axis=(1, 2))
    return out


def duhamel_qV(params, V: PotentialSpec, z: float, w: float, t: float, n_terms: int,
               quad: QuadratureSpec = DEFAULT_QUAD) -> DuhamelResult:
    """Partial sum of the Duhamel series for the kernel perturbed by potential V.

    ``per_term[k]`` holds q_{nu,k}(z, w, t) for k = 0..n_terms.  Each extra
    term multiplies the work by the size of one space-time quadrature rule,
    so keep ``n_terms`` at 3 or below unless you can wait.
    """
    p = _as_params(params)
    _positive(z=z, w=w, t=t)
    if int(n_terms) != n_terms or not (1 <= n_terms <= 5):
        raise DomainError(f"n_terms must be an integer in [1, 5], got {n_terms}")
    args = (np.array([float(z)]), np.array([float(w)]), np.array([float(t)]))
    terms = []
    for k in range(int(n_terms) + 1):
        if V.sup_norm == 0.0 and k > 0:
            terms.append(0.0)
            continue
        val = float(_duhamel_term(k, p.nu, V, *args, quad)[0])
        if not math.isfinite(val):
            raise AccuracyError(f"Duhamel term {k} at (z={z}, w={w}, t={t}) is not finite", partial=sum(terms))
        terms.append(val)
    return DuhamelResult(sum(terms), terms)
