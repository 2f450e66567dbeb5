"""Pure numpy versions of the compiled kernels in ``_core.pyx``."""
from math import gamma, pi

import numpy as np

SERIES_TOL = 1e-17
SERIES_MAX = 600
SMALL_ARG = 1e-6


def _ive_series(order: float, x: np.ndarray) -> np.ndarray:
    half = 0.5 * x
    q = half * half
    if order == 0.0:
        term = np.ones_like(x)
    else:
        with np.errstate(divide="ignore"):
            term = np.exp(order * (np.log(x) - np.log(2.0)) - np.log(gamma(order + 1.0)))
    total = term.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, SERIES_MAX):
        term = np.where(active, term * q / (m * (m + order)), 0.0)
        total += term
        active &= term >= SERIES_TOL * total
        if not active.any():
            break
    return total * np.exp(-x)


def _ive_asymptotic(order: float, x: np.ndarray) -> np.ndarray:
    mu = 4.0 * order * order
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 200):
        nxt = -term * (mu - (2.0 * k - 1.0) ** 2) / (8.0 * k * x)
        active &= np.abs(nxt) <= np.abs(term)
        term = np.where(active, nxt, term)
        total += np.where(active, term, 0.0)
        active &= np.abs(term) >= 1e-17 * np.abs(total)
        if not active.any():
            break
    return total / np.sqrt(2.0 * pi * x)


def ive_array(order: float, x: np.ndarray, switch: float = 30.0) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    zero = x == 0.0
    low = (~zero) & (x < switch)
    high = x >= switch
    out[zero] = 1.0 if order == 0.0 else 0.0
    if low.any():
        out[low] = _ive_series(order, x[low])
    if high.any():
        out[high] = _ive_asymptotic(order, x[high])
    return out


def q_nu_array(nu: float, z: np.ndarray, w: np.ndarray, t: np.ndarray,
               switch: float = 30.0) -> np.ndarray:
    alpha = 1.0 - nu
    sz = np.sqrt(z)
    sw = np.sqrt(w)
    x = 2.0 * sz * sw / t
    out = np.empty_like(x)
    small = x < SMALL_ARG
    if small.any():
        zs, ws, ts = z[small], w[small], t[small]
        out[small] = zs ** alpha * ts ** (-1.0 - alpha) * np.exp(-(zs + ws) / ts) / gamma(1.0 + alpha)
    big = ~small
    if big.any():
        zb, wb, tb = z[big], w[big], t[big]
        gap = sz[big] - sw[big]
        out[big] = (zb / wb) ** (0.5 * alpha) / tb * np.exp(-gap * gap / tb) * ive_array(alpha, x[big], switch)
    return out


def q0_squared_weighted(z, w, t, weight, switch: float = 30.0) -> float:
    q = q_nu_array(0.0, z, w, t, switch)
    return float(np.sum(weight * q * q))
