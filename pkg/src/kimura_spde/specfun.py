"""Special functions in overflow-safe scaled form.

Everything that grows like ``e^x`` is exposed multiplied by ``e^{-x}``:
the Kimura kernel combines ``e^{-(z+w)/t}`` with ``I_1(2 sqrt(zw)/t)``, and
each factor overflows on its own long before the product does.

Scalar routines here honour a :class:`SeriesControl` and raise on failure.
Array evaluation for hot loops goes through :func:`bessel_i_scaled_array`,
which dispatches to the compiled core when it is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special as _sp

from . import _backend
from .errors import AccuracyError, DomainError

__all__ = [
    "SeriesControl",
    "HypergeometricSpec",
    "BESSEL_CONTROL",
    "PFQ_CONTROL",
    "bessel_i_scaled",
    "bessel_i_scaled_array",
    "bessel_i_prime_identity_check",
    "pfq",
    "pfq_scaled",
    "gamma_fn",
    "incomplete_gamma_upper",
    "pochhammer",
    "erf",
]


@dataclass(frozen=True)
class SeriesControl:
    """Stopping rules for series and the series/asymptotic crossover."""

    rel_tol: float = 1e-15
    max_terms: int = 2000
    asymptotic_switch: float = 30.0

    def __post_init__(self):
        if not (0.0 < self.rel_tol <= 1e-3):
            raise DomainError(f"rel_tol must lie in (0, 1e-3], got {self.rel_tol}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 32:
            raise DomainError(f"max_terms must be an integer >= 32, got {self.max_terms}")
        if not self.asymptotic_switch > 0.0:
            raise DomainError(f"asymptotic_switch must be positive, got {self.asymptotic_switch}")


BESSEL_CONTROL = SeriesControl(asymptotic_switch=30.0)
PFQ_CONTROL = SeriesControl(asymptotic_switch=60.0)


@dataclass(frozen=True)
class HypergeometricSpec:
    """Parameter lists of pFq: ``upper`` = a_1..a_p, ``lower`` = b_1..b_q."""

    upper: tuple[float, ...] = field(default_factory=tuple)
    lower: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "upper", tuple(float(a) for a in self.upper))
        object.__setattr__(self, "lower", tuple(float(b) for b in self.lower))
        for b in self.lower:
            if b <= 0 and b == math.floor(b):
                raise DomainError(f"lower parameter {b} is a non-positive integer")

    @property
    def exponent(self) -> float:
        """sum(upper) - sum(lower), the power of x in the large-x behaviour."""
        return sum(self.upper) - sum(self.lower)


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise DomainError(f"non-finite argument {v}")


# -- modified Bessel I ------------------------------------------------------

def _ive_series(order: float, x: float, ctl: SeriesControl) -> float:
    if x == 0.0:
        return 1.0 if order == 0.0 else 0.0
    half = 0.5 * x
    q = half * half
    # log(x) - log 2 rather than log(x/2), which underflows for the smallest denormals
    term = 1.0 if order == 0.0 else math.exp(order * (math.log(x) - math.log(2.0)) - math.lgamma(order + 1.0))
    total = term
    for m in range(1, ctl.max_terms):
        term *= q / (m * (m + order))
        total += term
        # <= so that a term underflowing to zero ends the sum at denormal x
        if term <= ctl.rel_tol * total:
            return total * math.exp(-x)
    raise AccuracyError(
        f"Bessel series for order={order}, x={x} did not converge in {ctl.max_terms} terms",
        partial=total * math.exp(-x),
    )


def _ive_asymptotic(order: float, x: float, ctl: SeriesControl) -> float:
    mu = 4.0 * order * order
    term = 1.0
    total = 1.0
    for k in range(1, ctl.max_terms):
        nxt = -term * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        if abs(nxt) > abs(term):
            break
        term = nxt
        total += term
        if abs(term) < ctl.rel_tol * abs(total):
            return total / math.sqrt(2.0 * math.pi * x)
    if abs(term) > 10 * ctl.rel_tol * abs(total):
        raise AccuracyError(
            f"Bessel asymptotic expansion for order={order}, x={x} stalled",
            partial=total / math.sqrt(2.0 * math.pi * x),
        )
    return total / math.sqrt(2.0 * math.pi * x)


def bessel_i_scaled(order: float, x: float, ctl: SeriesControl = BESSEL_CONTROL) -> float:
    """Return ``e^{-x} I_order(x)`` for real ``order >= 0`` and ``x >= 0``.

    Power series below ``ctl.asymptotic_switch``, Hankel's large-argument
    expansion above it.  Never overflows.
    """
    _check_finite(order, x)
    if order < 0:
        raise DomainError(f"order must be >= 0, got {order}")
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 1.0 if order == 0.0 else 0.0
    if x < ctl.asymptotic_switch:
        return _ive_series(order, x, ctl)
    return _ive_asymptotic(order, x, ctl)


def bessel_i_scaled_array(order: float, x, switch: float = BESSEL_CONTROL.asymptotic_switch) -> np.ndarray:
    """Vectorised ``e^{-x} I_order(x)`` using the compiled core when built."""
    return _backend.ive(order, x, switch)


def bessel_i_prime_identity_check(x: float, h: float = 1e-5) -> float:
    """Residual of the identity I_0' = I_1 via a central difference.

    The difference is taken on the scaled function ``g = e^{-x} I_0`` and
    corrected with ``e^{-x} I_0' = g' + g``, so the check stays finite for
    large ``x``.  Returns ``|I_0'(x) - I_1(x)| / (1 + I_1(x))``.
    """
    _check_finite(x, h)
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if not (0.0 < h <= 1e-4):
        raise DomainError(f"step must lie in (0, 1e-4], got {h}")

    def g(v: float) -> float:
        # I_0 is even, so the scaled function at negative v is e^{-v} I_0(|v|)
        return math.exp(-v + abs(v)) * bessel_i_scaled(0.0, abs(v))

    scaled_prime = (g(x + h) - g(x - h)) / (2.0 * h) + g(x)
    scaled_i1 = bessel_i_scaled(1.0, x)
    # (e^{-x}) * |I0' - I1| / (1 + I1) rewritten without forming e^{x}
    return abs(scaled_prime - scaled_i1) / (math.exp(-x) + scaled_i1)


# -- generalized hypergeometric --------------------------------------------

def _term_ratio(spec: HypergeometricSpec, n: int, x: float) -> float:
    num = 1.0
    for a in spec.upper:
        num *= a + n
    den = float(n + 1)
    for b in spec.lower:
        den *= b + n
    return num / den * x


def pfq(spec: HypergeometricSpec, x: float, ctl: SeriesControl = PFQ_CONTROL) -> float:
    """Sum the pFq series by term-ratio recurrence until the relative term is below tolerance."""
    _check_finite(x)
    term = 1.0
    total = 1.0
    for n in range(ctl.max_terms):
        term *= _term_ratio(spec, n, x)
        total += term
        if term == 0.0:
            return total
        # keep going while terms are still growing (large positive x)
        if abs(term) < ctl.rel_tol * abs(total) and abs(_term_ratio(spec, n + 1, x)) < 1.0:
            return total
    raise AccuracyError(
        f"pFq{spec.upper};{spec.lower} at x={x} did not converge in {ctl.max_terms} terms",
        partial=total,
    )


def _residual_coefficients(spec: HypergeometricSpec, m: float) -> list[float]:
    """Coefficients r_j of x^{m+j} when the pFq operator (conjugated by e^x) hits x^m."""

    def shift_apply(poly: dict[int, float], c: float) -> dict[int, float]:
        # (theta + x + c) acting on sum_j v_j x^{m+j}
        out: dict[int, float] = {}
        for j, v in poly.items():
            out[j] = out.get(j, 0.0) + v * (m + j + c)
            out[j + 1] = out.get(j + 1, 0.0) + v
        return out

    left = shift_apply({0: 1.0}, 0.0)
    for b in spec.lower:
        left = shift_apply(left, b - 1.0)
    right: dict[int, float] = {0: 1.0}
    for a in spec.upper:
        right = shift_apply(right, a)
    right = {j + 1: v for j, v in right.items()}
    top = len(spec.lower) + 1
    return [left.get(j, 0.0) - right.get(j, 0.0) for j in range(top + 1)]


@lru_cache(maxsize=64)
def _asymptotic_coefficients(upper: tuple, lower: tuple, count: int) -> tuple[float, ...]:
    spec = HypergeometricSpec(upper, lower)
    q = len(lower)
    nu = spec.exponent
    lead = 0.0
    for b in lower:
        lead += math.lgamma(b)
    for a in upper:
        lead -= math.lgamma(a)
    sign = 1.0
    for v in list(upper) + list(lower):
        if v < 0 and math.gamma(v) < 0:
            sign = -sign
    coeffs = [sign * math.exp(lead)]
    for n in range(1, count):
        acc = 0.0
        for j in range(q):
            idx = n - q + j
            if idx < 0:
                continue
            acc += _residual_coefficients(spec, nu - n + q - j)[j] * coeffs[idx]
        coeffs.append(-acc / _residual_coefficients(spec, nu - n)[q])
    return tuple(coeffs)


def _pfq_asymptotic_scaled(spec: HypergeometricSpec, x: float, k: float,
                           ctl: SeriesControl) -> float | None:
    """Large-x expansion of e^{-x} x^k pFq(x) for p = q; None if it cannot reach tolerance."""
    coeffs = _asymptotic_coefficients(spec.upper, spec.lower, min(ctl.max_terms, 400))
    total = 0.0
    prev = math.inf
    power = 1.0
    for c in coeffs:
        term = c * power
        if abs(term) > abs(prev):
            break
        total += term
        if abs(term) <= ctl.rel_tol * abs(total):
            return total * x ** (spec.exponent + k)
        prev = term
        power /= x
    return None


def _pfq_scaled_series(spec: HypergeometricSpec, x: float, k: float, ctl: SeriesControl) -> float:
    """Series in log space so that neither e^x nor e^{-x} is ever formed."""
    log_term = 0.0
    logs = [0.0]
    n = 0
    limit = max(ctl.max_terms, int(4 * x) + 200)
    while n < limit:
        r = _term_ratio(spec, n, x)
        if r == 0.0:
            break
        log_term += math.log(r)
        logs.append(log_term)
        n += 1
        if r < 1.0 and log_term - max(logs) < math.log(ctl.rel_tol) - 5.0:
            break
    else:
        raise AccuracyError(f"scaled pFq series at x={x} did not converge", partial=None)
    arr = np.asarray(logs)
    peak = arr.max()
    s = float(np.sum(np.exp(arr - peak)))
    log_prefactor = -x + (k * math.log(x) if k else 0.0)
    return math.exp(peak + log_prefactor) * s


def pfq_scaled(spec: HypergeometricSpec, x: float, k: float = 0.0,
               ctl: SeriesControl = PFQ_CONTROL) -> float:
    """Return ``e^{-x} x^k pFq(x)`` for ``x >= 0``.

    Requires p = q and ``0 <= k <= -(sum(upper) - sum(lower))`` so that the
    result is bounded uniformly in ``x``.
    """
    _check_finite(x, k)
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if len(spec.upper) != len(spec.lower):
        raise DomainError("scaled evaluation is implemented for p = q only")
    nu = spec.exponent
    if k < 0 or k > -nu + 1e-12:
        raise DomainError(f"k={k} outside [0, {-nu}] where the scaled function stays bounded")
    if x == 0.0:
        return 1.0 if k == 0 else 0.0
    if x >= ctl.asymptotic_switch:
        value = _pfq_asymptotic_scaled(spec, x, k, ctl)
        if value is not None:
            return value
    if x < 600.0:
        return pfq(spec, x, ctl) * math.exp(-x) * x ** k
    return _pfq_scaled_series(spec, x, k, ctl)


# -- Gamma family -----------------------------------------------------------

def gamma_fn(a: float) -> float:
    """Euler Gamma; poles at non-positive integers are domain errors."""
    _check_finite(a)
    if a <= 0 and a == math.floor(a):
        raise DomainError(f"Gamma has a pole at {a}")
    return math.gamma(a)


def incomplete_gamma_upper(a: float, z: float) -> float:
    """Upper incomplete Gamma ``Gamma(a, z)`` for ``a > 0``, ``z >= 0``."""
    _check_finite(a, z)
    if a <= 0:
        raise DomainError(f"a must be positive, got {a}")
    if z < 0:
        raise DomainError(f"z must be >= 0, got {z}")
    return float(_sp.gammaincc(a, z) * math.gamma(a))


def pochhammer(a: float, n: int) -> float:
    """Rising factorial ``(a)_n = a (a+1) ... (a+n-1)``."""
    _check_finite(a)
    if n < 0 or int(n) != n:
        raise DomainError(f"n must be a non-negative integer, got {n}")
    out = 1.0
    for j in range(int(n)):
        out *= a + j
    return out


def erf(x: float) -> float:
    _check_finite(x)
    return math.erf(x)


def hypergeometric(upper: Sequence[float], lower: Sequence[float]) -> HypergeometricSpec:
    """Shorthand constructor: ``hypergeometric([1.5, 1], [2, 3])``."""
    return HypergeometricSpec(tuple(upper), tuple(lower))
