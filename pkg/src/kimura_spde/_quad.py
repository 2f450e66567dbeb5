"""Composite Gauss-Legendre rules shared by the kernel and chaos modules.

All rules are built on [0, 1] once and then mapped affinely, so a whole
batch of integration windows is a single broadcast.
"""
from functools import lru_cache

import numpy as np
from scipy.special import betainc, beta as beta_fn


@lru_cache(maxsize=None)
def gauss_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def composite_unit(panels: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``panels`` equal panels of ``n`` Gauss points covering [0, 1]."""
    x, w = gauss_unit(n)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    return nodes, weights


@lru_cache(maxsize=None)
def geometric_unit(levels: int, n: int, ratio: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Panels [0, r^L], [r^L, r^(L-1)], ..., [r, 1]: refined toward 0."""
    x, w = gauss_unit(n)
    edges = np.concatenate(([0.0], ratio ** np.arange(levels, -1, -1, dtype=float)))
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    return nodes, weights


@lru_cache(maxsize=None)
def graded_power(levels: int, n: int, grading: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule on [0, 1] for integrands like s^(-1/2) at 0: s = sigma^grading."""
    sig, ws = geometric_unit(levels, n)
    return sig ** grading, ws * grading * sig ** (grading - 1.0)


@lru_cache(maxsize=None)
def graded_both_ends(panels: int, n: int, grading: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule on [0, 1] graded at both endpoints via the regularised Beta map."""
    sig, ws = composite_unit(panels, n)
    if grading == 1.0:
        return sig, ws
    s = betainc(grading, grading, sig)
    ds = (sig * (1.0 - sig)) ** (grading - 1.0) / beta_fn(grading, grading)
    return s, ws * ds


def mapped(unit: tuple[np.ndarray, np.ndarray], lo, hi):
    """Map a unit rule onto [lo, hi]; lo and hi broadcast, nodes go last."""
    x, w = unit
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    h = hi - lo
    return lo + h * x, h * w


def linear_hat_weights(nodes: np.ndarray, x: np.ndarray):
    """Indices and weights distributing point values at ``x`` onto hat functions.

    ``nodes`` is increasing with ``nodes[0] == 0``; points beyond the last
    node are assigned wholly to it (constant extension).
    """
    x = np.clip(x, nodes[0], nodes[-1])
    idx = np.searchsorted(nodes, x, side="right") - 1
    idx = np.clip(idx, 0, len(nodes) - 2)
    left = nodes[idx]
    frac = (x - left) / (nodes[idx + 1] - left)
    return idx, 1.0 - frac, frac
