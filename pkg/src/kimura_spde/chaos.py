"""Wiener chaos second moments of the stochastic Kimura equation.

Under white noise the n-th chaos of u(z, t) has second moment

    M_n(z, t) = int_0^t int_0^inf w_hat^(2 beta) q_0(z, w, t - tau)^2 M_{n-1}(w, tau) dw dtau

with M_0 = u_0^2 = (1 - e^{-z/t})^2 and w_hat = min(w, 1).  Level 1 is
integrated directly against the closed form of M_0.  From level 2 on,
M_{n-1} is replaced by its piecewise-linear interpolant in w (support nodes
uniform in sqrt w, plus the report nodes) and in tau (a uniform grid), so the
integral collapses to a sum of matrix products

    M_n[:, j] = sum_m W[m] @ M_{n-1}[:, j - m]

where W[m] holds the kernel integrated against the hat functions.  The
weights depend on the time lag only, so they are built once.

Coloured noise couples two space-time points; that recursion lives on a
coarse node set and is documented at :func:`chaos_colored`.

The module also evaluates the theoretical majorants of these moments
(geometric, refined, tree-structured and ratio bounds) and collects
computed-versus-bound rows in a :class:`BoundLedger`.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from . import _backend, _quad, specfun
from .constants import ENERGY_REFINED_C, HOLDER_M
from .errors import AccuracyError, DomainError
from .kernel import QuadratureSpec, energy_U
from .noise import (
    FieldGrid,
    NoiseModel,
    cell_covariance,
    f_eps,
    gamma_t,
)

__all__ = [
    "ChaosConfig",
    "ChaosTable",
    "BoundLedger",
    "LedgerRow",
    "ColoredParams",
    "HolderModulus",
    "IncrementMoment",
    "SlopeFit",
    "chaos_white",
    "chaos_colored",
    "refinement_study",
    "second_moment",
    "ratio_moment",
    "lp_bound",
    "K_function",
    "K_tilde",
    "holder_modulus",
    "increment_moment",
    "boundary_ratio_level_one",
    "boundary_ratio_level_one_quadrature",
    "geometric_bound",
    "refined_level_bound",
    "refined_series_value",
    "refined_total_bound",
    "lp_level_bound",
    "colored_parameters",
    "colored_level_one_bound",
    "tree_bound",
    "ratio_sup_bound",
    "ratio_threshold",
    "white_ledger",
    "colored_ledger",
    "ratio_ledger",
    "table_text",
    "fit_loglog_slope",
]

WHITE_MAX_LEVELS = 12
COLORED_MAX_LEVELS = 8
COLORED_MAX_NODES = 8

CHAOS_QUAD = QuadratureSpec(base_points=16, panels=6, spread=7.0, time_levels=4)


@dataclass(frozen=True)
class ChaosConfig:
    """Truncation depth, report grid and discretisation of the chaos recursion.

    ``space_points`` sets the sqrt-uniform support nodes for the interpolated
    levels and ``time_refine`` the number of recursion steps per report time
    step.  ``support_span`` is the largest w carried; by default it reaches
    six diffusion lengths past the grid.  ``pad_cells`` extends the coloured
    node set beyond the report nodes and ``cell_refine`` splits every
    coloured report cell into that many cells per axis.
    """

    n_levels: int = 5
    grid: FieldGrid = field(default_factory=lambda: FieldGrid.uniform(2.0, 32, 1.0, 32))
    quad: QuadratureSpec = CHAOS_QUAD
    beta: float = 0.0
    eps: float = 0.25
    space_points: int = 160
    time_refine: int = 4
    support_span: float | None = None
    pad_cells: int = 8
    cell_refine: int = 3

    def __post_init__(self):
        if int(self.n_levels) != self.n_levels or not 1 <= self.n_levels <= WHITE_MAX_LEVELS:
            raise DomainError(f"n_levels must be an integer in [1, {WHITE_MAX_LEVELS}], got {self.n_levels}")
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if not (math.isfinite(self.eps) and self.eps > 0.0):
            raise DomainError(f"eps must be positive, got {self.eps}")
        if int(self.space_points) != self.space_points or self.space_points < 16:
            raise DomainError(f"space_points must be an integer >= 16, got {self.space_points}")
        if int(self.time_refine) != self.time_refine or self.time_refine < 1:
            raise DomainError(f"time_refine must be a positive integer, got {self.time_refine}")
        if int(self.cell_refine) != self.cell_refine or self.cell_refine < 1:
            raise DomainError(f"cell_refine must be a positive integer, got {self.cell_refine}")
        if int(self.pad_cells) != self.pad_cells or self.pad_cells < 0:
            raise DomainError(f"pad_cells must be a non-negative integer, got {self.pad_cells}")
        if self.support_span is not None and not self.support_span > self.grid.z[-1]:
            raise DomainError("support_span must exceed the largest report node")
        t = self.grid.t
        if abs(t[0] - self.grid.dt) > 1e-9 * t[0]:
            raise DomainError("report times must be the multiples k dt of their spacing")


@dataclass(frozen=True)
class ChaosTable:
    """Per-level moments on the report grid, immutable once built.

    ``levels[n, i, j]`` is M_n(z_i, t_j).  For coloured noise ``covariance[n]``
    holds E[u_n(p) u_n(p')] over the coarse node set ``points`` (pairs (z, t)).
    ``support`` keeps the fine white recursion state for follow-up integrals.
    """

    levels: np.ndarray
    grid: FieldGrid
    beta: float
    kind: str
    model: NoiseModel | None = None
    eps: float = 0.25
    tolerance: float = 0.0
    covariance: np.ndarray | None = None
    points: np.ndarray | None = None
    support: "_Support | None" = None

    @property
    def n_levels(self) -> int:
        return self.levels.shape[0] - 1

    def index(self, z: float, t: float) -> tuple[int, int]:
        """Grid indices of (z, t); off-grid points are a domain error."""
        zi = _node_index(self.grid.z, z, "z")
        tj = _node_index(self.grid.t, t, "t")
        return zi, tj

    def at(self, z: float, t: float) -> np.ndarray:
        zi, tj = self.index(z, t)
        return self.levels[:, zi, tj]


def _node_index(nodes: np.ndarray, value: float, name: str) -> int:
    k = int(np.argmin(np.abs(nodes - value)))
    if abs(nodes[k] - value) > 1e-9 * max(1.0, abs(value)):
        raise DomainError(f"{name}={value} is not a grid node (interpolation beyond the grid is not offered)")
    return k


class _Support(NamedTuple):
    w: np.ndarray          # support nodes, w[0] = 0
    dt: float              # recursion time step
    levels: np.ndarray     # M_n(w_l, k dt), shape (N + 1, len(w), J + 1)
    report_rows: np.ndarray
    report_cols: np.ndarray


def _u0(w, tau):
    """u_0(w, tau) = 1 - e^{-w/tau} for tau > 0 (tau = 0 gives 1 off the boundary)."""
    w = np.asarray(w, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = -np.expm1(-w / tau)
    return np.where(tau > 0, out, np.where(w > 0, 1.0, 0.0))


def _hat_beta(w, beta: float):
    return np.minimum(w, 1.0) ** (2.0 * beta) if beta else np.ones_like(w)


# -- white recursion --------------------------------------------------------

def _support_nodes(report_z: np.ndarray, span: float, points: int) -> np.ndarray:
    r = np.linspace(0.0, math.sqrt(span), points + 1)
    w = r * r
    h = w[1:] - w[:-1]
    # drop sqrt-uniform nodes that nearly coincide with a report node
    keep = np.ones(len(w), dtype=bool)
    pos = np.searchsorted(w, report_z)
    for z, p in zip(report_z, pos):
        for q in (p - 1, p):
            if 0 < q < len(w) and abs(w[q] - z) < 0.25 * h[min(q, len(h) - 1)]:
                keep[q] = False
    return np.union1d(w[keep], report_z)


@lru_cache(maxsize=256)
def _two_sided_time_rule_cached(levels_lo: int, levels_hi: int, n: int):
    """Rule on [0, 1]: s = sigma^2 grading on [0, 1/2] (for the s^(-1/2) energy
    singularity), geometric panels toward 1 on [1/2, 1]."""
    lo_s, lo_w = _quad.graded_power(levels_lo, n, 2.0)
    hi_s, hi_w = _quad.geometric_unit(levels_hi, n)
    su = np.concatenate([0.5 * lo_s, 1.0 - 0.5 * hi_s[::-1]])
    sw = np.concatenate([0.5 * lo_w, 0.5 * hi_w[::-1]])
    return su, sw


def _lower_levels(scale_ratio, quad: QuadratureSpec) -> np.ndarray:
    """Panels toward s = 0: enough to reach the kernel's own time scale z / t."""
    ratio = np.maximum(np.asarray(scale_ratio, dtype=float), 1.0)
    return np.clip(np.ceil(0.5 * np.log2(ratio)) + 2, 2, 40).astype(int)


def _level_one(z: np.ndarray, times: np.ndarray, beta: float, quad: QuadratureSpec,
               z2: np.ndarray | None = None) -> np.ndarray:
    """M_1(z_i, t_j) by direct quadrature against u_0(w, tau)^2; shape (len(z), len(times)).

    With ``z2`` the squared kernel is replaced by the squared difference
    q_0(z_i) - q_0(z2_i), giving the first chaos of the increment.
    """
    out = np.empty((len(z), len(times)))
    z_small = z if z2 is None else np.minimum(z, z2)
    for j, t in enumerate(times):
        levels = _lower_levels(t / z_small, quad)
        for lv in np.unique(levels):
            sel = levels == lv
            su, sw = _two_sided_time_rule_cached(int(lv), quad.time_levels, quad.base_points // 2)
            zs = z[sel]
            zs2 = None if z2 is None else z2[sel]
            c1, c2 = _pair_centers(zs, zs2)
            s = t * su
            ws = t * sw
            r, wr = _pair_r_rule(c1, c2, np.sqrt(s)[None, :], quad)
            w = r * r
            k = _pair_kernel(zs, zs2, w, s[None, :, None])
            u0 = _u0(w, (t - s)[None, :, None])
            vals = 2.0 * r * wr * k * k * u0 * u0 * _hat_beta(w, beta)
            out[sel, j] = np.einsum("isw,s->i", vals, ws)
    return out


def _time_panel(p: int, dt: float, quad: QuadratureSpec):
    """Nodes s, weights and position inside panel p = [p dt, (p + 1) dt]."""
    if p == 0:
        sig, ws = _quad.graded_power(quad.time_levels, quad.base_points // 2, quad.singularity_grading)
    else:
        sig, ws = _quad.gauss_unit(quad.base_points // 2)
    return (p + sig) * dt, ws * dt, sig


def _pair_centers(z1: np.ndarray, z2: np.ndarray | None):
    if z2 is None:
        return np.sqrt(z1)[:, None], None
    return np.sqrt(np.minimum(z1, z2))[:, None], np.sqrt(np.maximum(z1, z2))[:, None]


def _pair_r_rule(c1, c2, width, quad: QuadratureSpec):
    """Nodes r = sqrt w and weights dr covering the bump(s) of q_0 at centres c1 (and c2).

    Two kernels that have separated get a window each, so narrow bumps far
    apart are not undersampled by one long window.
    """
    unit = _quad.composite_unit(quad.panels, quad.base_points)
    lo1 = np.maximum(0.0, c1 - quad.spread * width)
    hi1 = c1 + quad.spread * width
    r1, w1 = _quad.mapped(unit, lo1, hi1)
    if c2 is None:
        return r1, w1
    lo2 = np.maximum(c2 - quad.spread * width, hi1)
    hi2 = np.maximum(c2 + quad.spread * width, lo2)
    r2, w2 = _quad.mapped(unit, lo2, hi2)
    return np.concatenate([r1, r2], axis=-1), np.concatenate([w1, w2], axis=-1)


def _pair_kernel(z1: np.ndarray, z2: np.ndarray | None, w, s):
    k = _backend.q_nu(0.0, z1[:, None, None], w, s)
    if z2 is not None:
        k = k - _backend.q_nu(0.0, z2[:, None, None], w, s)
    return k


def _lag_weights(support: np.ndarray, z1: np.ndarray, z2: np.ndarray | None, dt: float,
                 lags: int, beta: float, quad: QuadratureSpec) -> tuple[np.ndarray, np.ndarray]:
    """W[m, i, l] = int int w_hat^(2 beta) k_i(w, s)^2 phi_l(w) psi_m(s) dw ds.

    k_i is q_0(z1_i, ., s), or the difference q_0(z1_i) - q_0(z2_i) when z2 is
    given.  phi_l are the hat functions on ``support`` (constant past the last
    node) and psi_m the hat at lag m dt (a half hat for m = 0).

    The second array D[m] corrects the weight of the first recursion node
    tau = dt when the previous level rises like sqrt(tau) on [0, dt] instead
    of linearly: D[m] = int (sqrt(tau/dt) - tau/dt) ... over that interval.
    """
    n_sup = len(support)
    n_tgt = len(z1)
    W = np.zeros((lags + 1, n_tgt, n_sup))
    D = np.zeros((lags, n_tgt, n_sup))
    c1, c2 = _pair_centers(z1, z2)
    rows = (np.arange(n_tgt) * n_sup)[:, None, None]
    for p in range(lags):
        s, ws, frac = _time_panel(p, dt, quad)
        r, wr = _pair_r_rule(c1, c2, np.sqrt(s)[None, :], quad)
        w = r * r
        k = _pair_kernel(z1, z2, w, s[None, :, None])
        val = (2.0 * r * wr) * k * k * _hat_beta(w, beta) * ws[None, :, None]
        idx, a, b = _quad.linear_hat_weights(support, w)
        flat = (rows + idx).ravel()
        rise = np.sqrt(1.0 - frac) - (1.0 - frac)
        for target, m, tw in ((W, p, 1.0 - frac), (W, p + 1, frac), (D, p, rise)):
            if m >= len(target):
                continue
            v = (val * tw[None, :, None]).ravel()
            acc = np.bincount(flat, v * a.ravel(), minlength=n_tgt * n_sup)
            acc += np.bincount(flat + 1, v * b.ravel(), minlength=n_tgt * n_sup)
            target[m] += acc[: n_tgt * n_sup].reshape(n_tgt, n_sup)
    return W, D


def _apply_lags(W: np.ndarray, prev: np.ndarray, D: np.ndarray | None = None) -> np.ndarray:
    """out[:, j] = sum_{m < j} W[m] @ prev[:, j - m]; column 0 stays zero.

    With ``D`` the first node is treated as sqrt-like on [0, dt].
    """
    J = prev.shape[1] - 1
    out = np.zeros((W.shape[1], J + 1))
    for m in range(J):
        out[:, m + 1:] += W[m] @ prev[:, 1: J + 1 - m]
    if D is not None:
        out[:, 1:] += np.einsum("mil,l->im", D[:J], prev[:, 1])
    return out


def _default_span(grid: FieldGrid) -> float:
    return (math.sqrt(grid.z[-1]) + 6.0 * math.sqrt(grid.t[-1])) ** 2


def _check_level(values: np.ndarray, n: int, where_z: np.ndarray, where_t: np.ndarray) -> None:
    bad = ~np.isfinite(values) | (values < -1e-12)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise AccuracyError(
            f"level {n} quadrature produced {values[i, j]!r} at z={where_z[i]}, t={where_t[j]}",
            partial=float(values[i, j]),
        )


def chaos_white(config: ChaosConfig) -> ChaosTable:
    """Per-level second moments M_n on the report grid for space-time white noise."""
    grid = config.grid
    quad = config.quad
    span = config.support_span or _default_span(grid)
    w = _support_nodes(grid.z, span, config.space_points)
    dt = grid.dt / config.time_refine
    J = grid.shape[1] * config.time_refine
    times = dt * np.arange(J + 1)
    n_sup = len(w)

    full = np.zeros((config.n_levels + 1, n_sup, J + 1))
    full[0] = _u0(w[:, None], times[None, :]) ** 2
    full[0][:, 0] = np.where(w > 0, 1.0, 0.0)

    targets = w[1:]
    full[1][1:, 1:] = _level_one(targets, times[1:], config.beta, quad)
    _check_level(full[1][1:, 1:], 1, targets, times[1:])
    if config.n_levels >= 2:
        W, D = _lag_weights(w, targets, None, dt, J, config.beta, quad)
        for n in range(2, config.n_levels + 1):
            # M_1 rises like sqrt(tau) from tau = 0; deeper levels like tau^((n-1)/2)
            full[n][1:] = _apply_lags(W, full[n - 1], D if n == 2 else None)
            _check_level(full[n][1:, 1:], n, targets, times[1:])

    rows = np.searchsorted(w, grid.z)
    cols = config.time_refine * np.arange(1, grid.shape[1] + 1)
    levels = full[:, rows][:, :, cols]
    support = _Support(w, dt, full, rows, cols)
    return ChaosTable(levels, grid, config.beta, "white", NoiseModel(beta=config.beta),
                      config.eps, 0.0, support=support)


class RefinementReport(NamedTuple):
    coarse: ChaosTable
    fine: ChaosTable
    max_abs_change: np.ndarray   # per level
    max_rel_change: np.ndarray   # per level, relative to max |M_n|


def refinement_study(config: ChaosConfig) -> RefinementReport:
    """Rerun with twice the support nodes and time steps and report the changes.

    The fine table carries the observed change as its ``tolerance``.
    """
    from dataclasses import replace

    coarse = chaos_white(config)
    fine_cfg = replace(config, space_points=2 * config.space_points, time_refine=2 * config.time_refine)
    fine = chaos_white(fine_cfg)
    diff = np.abs(fine.levels - coarse.levels).reshape(fine.levels.shape[0], -1).max(axis=1)
    scale = np.abs(fine.levels).reshape(fine.levels.shape[0], -1).max(axis=1)
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    tol = float(diff[1:].max()) if len(diff) > 1 else 0.0
    fine = ChaosTable(fine.levels, fine.grid, fine.beta, fine.kind, fine.model, fine.eps, tol,
                      support=fine.support)
    coarse = ChaosTable(coarse.levels, coarse.grid, coarse.beta, coarse.kind, coarse.model,
                        coarse.eps, tol, support=coarse.support)
    return RefinementReport(coarse, fine, diff, rel)


# -- theoretical majorants ----------------------------------------------------

def geometric_bound(n: int) -> float:
    """2^{-n}: the white, beta = 0 level bound."""
    return 0.5 ** n


def _log_refined_term(n: int, x: float) -> float:
    return n * math.log(x) - float(gammaln(0.5 * n + 1.0)) if x > 0 else (0.0 if n == 0 else -math.inf)


def refined_level_bound(n: int, z: float, t: float, constant: float = ENERGY_REFINED_C) -> float:
    """C^n pi^(n/2) / Gamma(n/2 + 1) * z^(-1/2) t^(n/2), valid for beta >= 1/4."""
    x = constant * math.sqrt(math.pi * t)
    return math.exp(_log_refined_term(n, x)) / math.sqrt(z)


def refined_series_value(x: float) -> float:
    """phi(x) = sum_{n >= 0} x^n / Gamma(n/2 + 1) = e^{x^2} (1 + erf x)."""
    return math.exp(x * x) * (1.0 + specfun.erf(x))


def _series_tail(log_term, first: int, max_terms: int = 20000) -> float:
    """sum_{n >= first} exp(log_term(n)), summed until the terms stop mattering.

    Terms of the series handled here rise, peak and then fall faster than any
    geometric sequence, so stopping after the peak once a term drops below
    1e-17 of the running total is safe.
    """
    total = 0.0
    prev = -math.inf
    for n in range(first, first + max_terms):
        lt = log_term(n)
        if lt == -math.inf:
            return total
        term = math.exp(lt)
        total += term
        if lt < prev and term <= 1e-17 * total:
            return total
        prev = lt
    return math.inf


def refined_tail(n_levels: int, z: float, t: float, constant: float = ENERGY_REFINED_C) -> float:
    """sum_{n > N} of :func:`refined_level_bound`."""
    x = constant * math.sqrt(math.pi * t)
    return _series_tail(lambda n: _log_refined_term(n, x), n_levels + 1) / math.sqrt(z)


def refined_total_bound(z: float, t: float, constant: float = ENERGY_REFINED_C) -> float:
    """u_0^2 + z^(-1/2) phi(C sqrt(pi t)); the n = 0 term of phi is kept as stated."""
    return float(_u0(z, t)) ** 2 + refined_series_value(constant * math.sqrt(math.pi * t)) / math.sqrt(z)


def lp_level_bound(n: int, z: float, t: float, p: float, constant: float = ENERGY_REFINED_C) -> float:
    """((p - 1) C sqrt(pi t))^(n/2) / sqrt(Gamma(n/2 + 1)) * z^(-1/4)."""
    y = (p - 1.0) * constant * math.sqrt(math.pi * t)
    return math.exp(0.5 * _log_refined_term(n, y)) * z ** -0.25


def lp_tail(n_levels: int, z: float, t: float, p: float, constant: float = ENERGY_REFINED_C) -> float:
    """sum_{n > N} of :func:`lp_level_bound`, by direct summation."""
    y = (p - 1.0) * constant * math.sqrt(math.pi * t)
    return _series_tail(lambda n: 0.5 * _log_refined_term(n, y), n_levels + 1) * z ** -0.25


def lp_tail_majorant(n_levels: int, z: float, t: float, p: float, constant: float = ENERGY_REFINED_C) -> float:
    """Closed-form cover of :func:`lp_tail`: 2^{-N/2} sqrt(phi(2y)) z^(-1/4), y = (p-1) C sqrt(pi t).

    Cauchy-Schwarz with the weights 2^{-n} turns the square-root series
    into phi.
    """
    y = (p - 1.0) * constant * math.sqrt(math.pi * t)
    return 2.0 ** (-0.5 * n_levels) * math.sqrt(refined_series_value(2.0 * y)) * z ** -0.25


class ColoredParams(NamedTuple):
    gamma_t: float   # int_{-t}^{t} gamma
    F: float         # int_{-eps}^{eps} f
    f: float         # f(eps)


def colored_parameters(model: NoiseModel, t: float, eps: float) -> ColoredParams:
    """Gamma_t, F_eps and f(eps) for a separable model; a white factor counts as mass one."""
    temporal = 1.0 if model.temporal.is_white else gamma_t(model.temporal, t)
    if model.spatial.is_white:
        return ColoredParams(temporal, 1.0, 0.0)
    return ColoredParams(temporal, f_eps(model.spatial, eps), float(model.spatial(eps)))


def colored_level_one_bound(t: float, cp: ColoredParams) -> float:
    """Gamma_t (F_eps / 2 + f(eps) t)."""
    return cp.gamma_t * (0.5 * cp.F + cp.f * t)


def _tree_sum(n: int, b: float) -> float:
    # sum_{m=1}^n sum_{k<m} C(m-1, k) b^(k+1)/(k+1)!  =  sum_{j=1}^n C(n, j) b^j / j!
    total = 0.0
    for j in range(1, n + 1):
        total += math.exp(math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1)
                          + j * math.log(b) - math.lgamma(j + 1)) if b > 0 else 0.0
    return total


def tree_bound(n: int, z: float, t: float, cp: ColoredParams) -> float:
    """(Gamma_t F_eps / 2)^n [2 U(z/t) + sum_{m,k} C(m-1,k) (2 f t / F)^(k+1) / (k+1)!]."""
    bracket = 2.0 * float(energy_U(z / t)) + _tree_sum(n, 2.0 * cp.f * t / cp.F)
    return (0.5 * cp.gamma_t * cp.F) ** n * bracket


def colored_geometric_bound(n: int, t: float, cp: ColoredParams) -> float:
    """(Gamma_t (F_eps / 2 + f(eps) t))^n; summable only when the base is below one."""
    return colored_level_one_bound(t, cp) ** n


def tree_tail(n_levels: int, z: float, t: float, cp: ColoredParams) -> float:
    """sum_{n > N} of :func:`tree_bound`; infinite unless Gamma_t F_eps < 2."""
    if cp.gamma_t * cp.F >= 2.0:
        return math.inf

    def log_term(n):
        v = tree_bound(n, z, t, cp)
        return math.log(v) if v > 0 else -math.inf

    return _series_tail(log_term, n_levels + 1, max_terms=4000)


def colored_total_stated(z: float, t: float, cp: ColoredParams) -> float:
    """u_0^2 + U 2GF/(2 - GF) + sqrt2 G f t/(sqrt2 - sqrt GF) exp{2 f t sqrt GF/(F (sqrt2 - sqrt GF))}.

    G = Gamma_t, F = F_eps; finite for G F < 2.
    """
    gf = cp.gamma_t * cp.F
    if gf >= 2.0:
        return math.inf
    root = math.sqrt(2.0) - math.sqrt(gf)
    third = math.sqrt(2.0) * cp.gamma_t * cp.f * t / root * math.exp(2.0 * cp.f * t * math.sqrt(gf) / (cp.F * root))
    return float(_u0(z, t)) ** 2 + float(energy_U(z / t)) * 2.0 * gf / (2.0 - gf) + third


def colored_total_closing(z: float, t: float, cp: ColoredParams) -> float:
    """Variant whose last term is G f t e^{2 f t / F} / (G F - 1)^2, requiring G F < 1."""
    gf = cp.gamma_t * cp.F
    if gf >= 1.0:
        return math.inf
    third = cp.gamma_t * cp.f * t * math.exp(2.0 * cp.f * t / cp.F) / (gf - 1.0) ** 2
    return float(_u0(z, t)) ** 2 + float(energy_U(z / t)) * 2.0 * gf / (2.0 - gf) + third


def colored_total_tree(z: float, t: float, cp: ColoredParams) -> float:
    """u_0^2 plus the tree bound summed over every level."""
    return float(_u0(z, t)) ** 2 + tree_tail(0, z, t, cp)


def _lp_colored_log_term(n: int, z_hat: float, t: float, p: float, cp: ColoredParams, constant: float) -> float:
    if n == 0:
        return 0.0
    base = (p - 1.0) * cp.gamma_t * cp.F * constant * math.sqrt(math.pi * t)
    a = cp.f * math.sqrt(t) / (cp.F * constant * math.sqrt(math.pi))
    g_n = math.lgamma(0.5 * n + 1.0)
    bracket = 1.0
    if a > 0:
        for k in range(n):
            bracket += math.exp(math.lgamma(n + 1) - math.lgamma(k + 2) - math.lgamma(n - k)
                                + (k + 1) * math.log(a) + g_n - math.lgamma(0.5 * (n + k + 1) + 1.0))
    return -0.25 * math.log(z_hat) + 0.5 * (n * math.log(base) - g_n + math.log(bracket))


def colored_lp_level_bound(n: int, z: float, t: float, p: float, cp: ColoredParams,
                           constant: float = ENERGY_REFINED_C) -> float:
    """z_hat^(-1/4) ((p-1) G F C sqrt(pi t))^(n/2) / sqrt(Gamma(n/2+1)) * sqrt(bracket_n)."""
    return math.exp(_lp_colored_log_term(n, min(z, 1.0), t, p, cp, constant))


def colored_lp_tail(n_levels: int, z: float, t: float, p: float, cp: ColoredParams,
                    constant: float = ENERGY_REFINED_C) -> float:
    zh = min(z, 1.0)
    return _series_tail(lambda n: _lp_colored_log_term(n, zh, t, p, cp, constant), n_levels + 1,
                        max_terms=2000)


# -- ratio bounds ---------------------------------------------------------------

def ratio_alpha(beta: float) -> float:
    return min(2.0 * beta, 0.5)


def ratio_coefficient(beta: float, colored: bool = False) -> float:
    """C_{alpha,beta} = 4 C_K / alpha; coloured noise also needs it to cover 4 C_tilde."""
    c_k, c_tilde = ratio_constants(beta)
    value = 4.0 * c_k / ratio_alpha(beta)
    return max(value, 4.0 * c_tilde) if colored else value


def ratio_rate(t: float, beta: float, cp: ColoredParams | None = None) -> float:
    """q = C_{alpha,beta} t^alpha (white) or Gamma_t (F_eps + f(eps)) C_{alpha,beta} t^alpha."""
    q = ratio_coefficient(beta, cp is not None) * t ** ratio_alpha(beta)
    if cp is not None:
        q *= cp.gamma_t * (cp.F + cp.f)
    return q


def ratio_level_bound(n: int, z: float, t: float, beta: float, q: float) -> float:
    """M_n / u_0^2 <= (z_hat v t)^(2 beta - alpha) q^n for n >= 1."""
    return max(min(z, 1.0), t) ** (2.0 * beta - ratio_alpha(beta)) * q ** n


def ratio_tail(n_levels: int, z: float, t: float, beta: float, q: float) -> float:
    if q >= 1.0:
        return math.inf
    return max(min(z, 1.0), t) ** (2.0 * beta - ratio_alpha(beta)) * q ** (n_levels + 1) / (1.0 - q)


def ratio_sup_bound(t: float, beta: float, q: float) -> float:
    """C_{t,beta} = (1 v t)^(2 beta - alpha) / (1 - q); infinite once q >= 1."""
    if q >= 1.0:
        return math.inf
    return max(1.0, t) ** (2.0 * beta - ratio_alpha(beta)) / (1.0 - q)


def ratio_threshold(times: Sequence[float], beta: float, model: NoiseModel | None = None,
                    eps: float = 0.25) -> float:
    """Largest t in ``times`` such that the ratio rate stays below one at it and every smaller t.

    Returns 0 when even the smallest time fails.  This is a grid statement,
    not the largest admissible T.
    """
    best = 0.0
    for t in sorted(times):
        cp = None if model is None or model.is_white else colored_parameters(model, t, eps)
        if ratio_rate(t, beta, cp) >= 1.0:
            break
        best = t
    return best


# -- moments from a table -------------------------------------------------------

def _colored_cp(table: ChaosTable, t: float) -> ColoredParams:
    return colored_parameters(table.model, t, table.eps)


def second_moment(table: ChaosTable, z: float, t: float) -> tuple[float, float]:
    """(sum_{n <= N} M_n(z, t), bound on the remaining levels).

    White noise uses the tighter of the geometric and (for beta >= 1/4) the
    refined tail; coloured noise the tree tail, which is infinite when
    Gamma_t F_eps >= 2.
    """
    m = table.at(z, t)
    value = float(m.sum())
    N = table.n_levels
    if table.kind == "white":
        tail = 2.0 ** -N
        if table.beta >= 0.25:
            tail = min(tail, refined_tail(N, z, t))
    else:
        tail = tree_tail(N, z, t, _colored_cp(table, t))
    return value, tail


def ratio_moment(table: ChaosTable, z: float, t: float) -> tuple[float, float]:
    """(E[(u/u_0)^2] over the computed levels, tail bound); beta must be positive."""
    if table.beta <= 0.0:
        raise DomainError("the ratio moment is unbounded at the boundary for beta = 0")
    m = table.at(z, t)
    u0sq = float(_u0(z, t)) ** 2
    value = float(m.sum()) / u0sq
    cp = None if table.kind == "white" else _colored_cp(table, t)
    return value, ratio_tail(table.n_levels, z, t, table.beta, ratio_rate(t, table.beta, cp))


def lp_bound(table: ChaosTable, z: float, t: float, p: float) -> float:
    """Upper bound on E[|u|^p]^(1/p) from the per-level hypercontractive estimate.

    p = 2 uses orthogonality of the chaoses and returns sqrt(value + tail).
    For beta < 1/4 the unrefined tail sum_{n>N} ((p-1)/2)^(n/2) diverges
    at p >= 3 and a :class:`DomainError` says so.
    """
    if not (math.isfinite(p) and p >= 2.0):
        raise DomainError(f"p must be >= 2, got {p}")
    if p == 2.0:
        value, tail = second_moment(table, z, t)
        return math.sqrt(value + tail)
    m = table.at(z, t)
    N = table.n_levels
    partial = float(np.sum((p - 1.0) ** (0.5 * np.arange(N + 1)) * np.sqrt(np.maximum(m, 0.0))))
    if table.kind == "white":
        naive = math.inf
        if p < 3.0:
            r = math.sqrt(0.5 * (p - 1.0))
            naive = r ** (N + 1) / (1.0 - r)
        if table.beta < 0.25:
            if p >= 3.0:
                raise DomainError(
                    f"beta={table.beta} < 1/4: the tail sum of ((p-1)/2)^(n/2) diverges for p={p} >= 3")
            return partial + naive
        return partial + min(naive, lp_tail(N, z, t, p))
    if table.beta < 0.25:
        raise DomainError("the coloured L^p series needs beta >= 1/4")
    return partial + colored_lp_tail(N, z, t, p, _colored_cp(table, t))


# -- ratio kernels and their constants ------------------------------------------

def _ratio_integrand_rule(z, s, quad: QuadratureSpec):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    r, wr = _pair_r_rule(np.sqrt(z)[:, None], None, np.atleast_1d(np.sqrt(s))[None, :], quad)
    return z, r * r, 2.0 * r * wr


def _ratio_kernel(z, tau: float, t: float, exponent: float, power: int, quad: QuadratureSpec):
    if not (0.0 <= tau < t):
        raise DomainError(f"need 0 <= tau < t, got tau={tau}, t={t}")
    if exponent <= 0.0:
        raise DomainError(f"exponent must be positive, got {exponent}")
    z, w, dw = _ratio_integrand_rule(z, t - tau, quad)
    k = _backend.q_nu(0.0, z[:, None, None], w, t - tau)
    ratio = _u0(w, tau) / _u0(z, t)[:, None, None]
    vals = (np.minimum(w, 1.0) ** exponent * (k * ratio) ** power * dw).sum(axis=(1, 2))
    if not np.all(np.isfinite(vals)):
        raise AccuracyError(f"ratio kernel quadrature failed at tau={tau}, t={t}")
    return vals


def K_function(z, tau: float, t: float, exponent: float, quad: QuadratureSpec = CHAOS_QUAD):
    """int w_hat^exponent q_0(z, w, t - tau)^2 u_0(w, tau)^2 / u_0(z, t)^2 dw (exponent = 2 beta)."""
    out = _ratio_kernel(z, tau, t, exponent, 2, quad)
    return float(out[0]) if np.ndim(z) == 0 else out


def K_tilde(z, tau: float, t: float, exponent: float, quad: QuadratureSpec = CHAOS_QUAD):
    """int w_hat^exponent q_0(z, w, t - tau) u_0(w, tau) / u_0(z, t) dw (exponent = beta)."""
    out = _ratio_kernel(z, tau, t, exponent, 1, quad)
    return float(out[0]) if np.ndim(z) == 0 else out


def K_bound(z: float, tau: float, t: float, beta: float, constant: float) -> float:
    """4 C (t - tau)^(alpha - 1) (z_hat v t)^(2 beta - alpha)."""
    a = ratio_alpha(beta)
    return 4.0 * constant * (t - tau) ** (a - 1.0) * max(min(z, 1.0), t) ** (2.0 * beta - a)


def K_tilde_bound(z: float, tau: float, t: float, beta: float, constant: float) -> float:
    """4 C (z_hat v (t - tau))^beta."""
    return 4.0 * constant * max(min(z, 1.0), t - tau) ** beta


RATIO_FIT_Z = np.geomspace(1e-7, 10.0, 36)
RATIO_FIT_T = np.geomspace(1e-4, 1.0, 13)
RATIO_FIT_TAU = np.concatenate(([0.0, 1e-3, 1e-2], np.arange(0.05, 0.5, 0.025), np.arange(0.5, 1.0, 0.1),
                                [0.95, 0.99, 0.999, 0.9999, 0.99999]))


class RatioConstantFit(NamedTuple):
    c_k: float
    c_tilde: float
    argmax_k: tuple[float, float, float]       # (z, tau, t) attaining c_k
    argmax_tilde: tuple[float, float, float]


def fit_ratio_constants(beta: float, z_grid=RATIO_FIT_Z, t_grid=RATIO_FIT_T,
                        tau_fractions=RATIO_FIT_TAU, quad: QuadratureSpec = CHAOS_QUAD) -> RatioConstantFit:
    """Smallest C_K and C_tilde making the K and K_tilde bounds hold on a reference grid."""
    if beta <= 0.0:
        raise DomainError("the ratio constants are defined for beta > 0")
    z_grid = np.asarray(z_grid, dtype=float)
    a = ratio_alpha(beta)
    best_k, best_t = (0.0, None), (0.0, None)
    for t in t_grid:
        for frac in tau_fractions:
            tau = frac * t
            zh = np.minimum(z_grid, 1.0)
            k = _ratio_kernel(z_grid, tau, t, 2.0 * beta, 2, quad)
            k_scale = 4.0 * (t - tau) ** (a - 1.0) * np.maximum(zh, t) ** (2.0 * beta - a)
            kt = _ratio_kernel(z_grid, tau, t, beta, 1, quad)
            kt_scale = 4.0 * np.maximum(zh, t - tau) ** beta
            for (vals, scale, slot) in ((k, k_scale, 0), (kt, kt_scale, 1)):
                c = vals / scale
                i = int(np.argmax(c))
                cur = best_k if slot == 0 else best_t
                if c[i] > cur[0]:
                    cur = (float(c[i]), (float(z_grid[i]), float(tau), float(t)))
                if slot == 0:
                    best_k = cur
                else:
                    best_t = cur
    return RatioConstantFit(best_k[0], best_t[0], best_k[1], best_t[1])


def ratio_constants(beta: float) -> tuple[float, float]:
    """(C_K, C_tilde): frozen values where available, else fitted (and cached)."""
    frozen = RATIO_CONSTANTS.get(float(beta))
    if frozen is not None:
        return frozen
    if float(beta) not in _RATIO_CACHE:
        fit = fit_ratio_constants(beta)
        _RATIO_CACHE[float(beta)] = (fit.c_k, fit.c_tilde)
    return _RATIO_CACHE[float(beta)]


_RATIO_CACHE: dict[float, tuple[float, float]] = {}


# -- energy and kernel Holder constants -----------------------------------------

def fit_energy_constant(x_grid=None) -> float:
    """sup over x of x^(3/2) [e^{-x}(I_0 - I_1)(x) - e^{-2x}] on a grid (golden-section polish)."""
    if x_grid is None:
        x_grid = np.geomspace(1e-3, 1e4, 4001)

    def g(x):
        x = np.asarray(x, dtype=float)
        return x ** 1.5 * (_backend.ive(0.0, x) - _backend.ive(1.0, x) - np.exp(-2.0 * x))

    vals = g(x_grid)
    i = int(np.argmax(vals))
    lo, hi = x_grid[max(i - 1, 0)], x_grid[min(i + 1, len(x_grid) - 1)]
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(80):
        a = hi - ratio * (hi - lo)
        b = lo + ratio * (hi - lo)
        if g(a) > g(b):
            hi = b
        else:
            lo = a
    return float(max(vals[i], g(0.5 * (lo + hi))))


def fit_holder_constant(a_grid=None, b_grid=None) -> float:
    """sup |Q(a, b) - Q(a', b)| / |a - a'|^(1/2) with Q(a, b) = q_0(a, b, 1).

    By scaling, q_0(z, w, s) = Q(z/s, w/s) / s, so this is the smallest M in
    |d_0| <= M |z_1 - z_2|^(1/2) s^(-3/2).  Includes the limit b -> 0 where
    Q(a, 0) = a e^{-a}.
    """
    if a_grid is None:
        a_grid = np.concatenate(([0.0], np.geomspace(1e-4, 40.0, 160)))
    if b_grid is None:
        b_grid = np.concatenate((np.geomspace(1e-8, 40.0, 120),))
    a = np.asarray(a_grid, dtype=float)
    b = np.asarray(b_grid, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where(a[:, None] > 0, _backend.q_nu(0.0, np.maximum(a[:, None], 1e-300), b[None, :], 1.0), 0.0)
    Q0 = a * np.exp(-a)
    best = 0.0
    da = np.sqrt(np.abs(a[:, None] - a[None, :]))
    np.fill_diagonal(da, np.inf)
    for table in (Q.T, Q0[None, :]):
        for row in table:
            best = max(best, float(np.max(np.abs(row[:, None] - row[None, :]) / da)))
    return best


def kernel_holder_bound(z1, z2, s):
    """M |z_1 - z_2|^(1/2) s^(-3/2) with the frozen M."""
    return HOLDER_M * np.sqrt(np.abs(np.asarray(z1) - np.asarray(z2))) * np.asarray(s, dtype=float) ** -1.5


# -- Holder modulus of the first-chaos kernel -----------------------------------

def holder_eta(beta: float, lam: float) -> float:
    """eta = ((2 beta - 1/2) ^ 1/4) - lam / 2."""
    return min(2.0 * beta - 0.5, 0.25) - 0.5 * lam


def _check_holder_domain(beta: float, lam: float) -> None:
    if beta <= 0.25:
        raise DomainError(f"the Q_t bound needs beta > 1/4, got {beta}")
    upper = min(4.0 * beta - 1.0, 0.5)
    if not (0.0 <= lam < upper):
        raise DomainError(f"lambda must lie in [0, {upper:g}) for beta={beta}, got {lam}")


class HolderModulus(NamedTuple):
    Q: float
    Q_tilde: float
    bound: float          # M_{beta,lambda} t^eta |dz|^(lambda/2)
    tilde_bound: float    # (16/3) t^(3/4) |dz|^(1/4)
    eta: float


HOLDER_TIME_LEVELS = 30
# the Q_tilde constant is explicit: 4 / (1 - p) at p = 1/4
Q_TILDE_CONSTANT = 16.0 / 3.0


def _holder_integrals(z1: float, z2: float, t: float, beta: float, quad: QuadratureSpec) -> tuple[float, float]:
    if z1 == z2:
        return 0.0, 0.0
    su, sw = _quad.graded_power(HOLDER_TIME_LEVELS, quad.base_points // 2, 2.0)
    s, ws = t * su, t * sw
    za, zb = np.array([min(z1, z2)]), np.array([max(z1, z2)])
    width = np.sqrt(s)[None, :]
    c1, c2 = _pair_centers(za, zb)
    r, wr = _pair_r_rule(c1, c2, width, quad)
    w = r * r
    d = _pair_kernel(za, zb, w, s[None, :, None])
    q = np.einsum("isw,s->", 2.0 * r * wr * _hat_beta(w, beta) * w ** -0.5 * d * d, ws)
    # first-power integral of each kernel separately over its own window
    inner = []
    for zc in (za, zb):
        rr, wrr = _pair_r_rule(np.sqrt(zc)[:, None], None, width, quad)
        ww = rr * rr
        k = _backend.q_nu(0.0, zc[:, None, None], ww, s[None, :, None])
        inner.append((2.0 * rr * wrr * np.minimum(ww, 1.0) ** (beta - 0.25) * k).sum(axis=-1)[0])
    qt = float(np.sum(ws * (inner[0] - inner[1]) ** 2))
    return float(q), qt


def holder_modulus(z1: float, z2: float, t: float, beta: float, lam: float = 0.4,
                   quad: QuadratureSpec = CHAOS_QUAD, constant: float | None = None) -> HolderModulus:
    """Q_t and Q_tilde_t of the kernel difference d_0 = q_0(z_1, .) - q_0(z_2, .), with their bounds.

    Q_t = int_0^t int w_hat^(2 beta) w^(-1/2) d_0^2 dw ds and
    Q_tilde_t = int_0^t (int w_hat^(beta - 1/4) d_0 dw)^2 ds.
    """
    _check_holder_domain(beta, lam)
    if min(z1, z2) <= 0.0 or t <= 0.0:
        raise DomainError("need z1, z2, t > 0")
    q, qt = _holder_integrals(z1, z2, t, beta, quad)
    eta = holder_eta(beta, lam)
    if constant is None:
        constant = increment_constant(beta, lam)
    dz = abs(z1 - z2)
    return HolderModulus(q, qt, constant * t ** eta * dz ** (0.5 * lam),
                         Q_TILDE_CONSTANT * t ** 0.75 * dz ** 0.25, eta)


HOLDER_FIT_Z = np.geomspace(1e-5, 20.0, 19)
HOLDER_FIT_GAPS = 2.0 ** -np.arange(-4.0, 13.0)
HOLDER_FIT_T = np.array([0.01, 0.05, 0.2, 0.5, 1.0])


def fit_increment_constant(beta: float, lam: float, z_grid=HOLDER_FIT_Z, gaps=HOLDER_FIT_GAPS,
                           t_grid=HOLDER_FIT_T, quad: QuadratureSpec = CHAOS_QUAD) -> float:
    """Smallest M_{beta,lambda} with Q_t <= M t^eta |dz|^(lambda/2) over pairs (z, z + gap * z) and t."""
    _check_holder_domain(beta, lam)
    eta = holder_eta(beta, lam)
    best = 0.0
    for t in t_grid:
        for z in z_grid:
            for g in gaps:
                z2 = z * (1.0 + g)
                q, _ = _holder_integrals(z, z2, t, beta, quad)
                best = max(best, q / (t ** eta * (z2 - z) ** (0.5 * lam)))
    return float(best)


def increment_constant(beta: float, lam: float) -> float:
    key = (float(beta), float(lam))
    if key in INCREMENT_CONSTANTS:
        return INCREMENT_CONSTANTS[key]
    if key not in _INCREMENT_CACHE:
        _INCREMENT_CACHE[key] = fit_increment_constant(beta, lam)
    return _INCREMENT_CACHE[key]


_INCREMENT_CACHE: dict[tuple[float, float], float] = {}


class IncrementMoment(NamedTuple):
    value: float      # sum over levels 0..N+1 of E|u_n(z_1) - u_n(z_2)|^2
    tail: float       # bound on the levels not computed
    levels: np.ndarray


def increment_moment(table: ChaosTable, z1: float, z2: float, t: float,
                     quad: QuadratureSpec | None = None) -> IncrementMoment:
    """E|u(z_1, t) - u(z_2, t)|^2 from the white chaos table.

    Level n >= 1 integrates the squared kernel difference against M_{n-1}
    held by the table's support state, so levels up to N + 1 are available.
    ``t`` must be a report time; z_1, z_2 may be anywhere in (0, support].
    """
    if table.kind != "white" or table.support is None:
        raise DomainError("increment_moment needs a white chaos table with its support state")
    sup = table.support
    if min(z1, z2) <= 0.0 or max(z1, z2) > sup.w[-1]:
        raise DomainError("z1, z2 must lie in (0, support span]")
    quad = quad or CHAOS_QUAD
    tj = table.index(table.grid.z[0], t)[1]
    j = int(sup.report_cols[tj])
    levels = np.zeros(table.n_levels + 2)
    levels[0] = float(_u0(z1, t) - _u0(z2, t)) ** 2
    za, zb = np.array([float(z1)]), np.array([float(z2)])
    levels[1] = _level_one(za, np.array([t]), table.beta, quad, z2=zb)[0, 0]
    if table.n_levels >= 1 and z1 != z2:
        W, D = _lag_weights(sup.w, za, zb, sup.dt, j, table.beta, quad)
        for n in range(2, table.n_levels + 2):
            prev = sup.levels[n - 1]
            acc = sum(float(W[m, 0] @ prev[:, j - m]) for m in range(j))
            if n == 2:
                acc += float(D[j - 1, 0] @ prev[:, 1])
            levels[n] = acc
    N1 = table.n_levels + 1
    tail = 4.0 * 2.0 ** -N1
    if table.beta >= 0.25:
        tail = min(tail, 2.0 * (refined_tail(N1, z1, t) + refined_tail(N1, z2, t)))
    return IncrementMoment(float(levels.sum()), tail, levels)


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    lower: float      # confidence interval for the slope
    upper: float
    stderr: float


def fit_loglog_slope(x, y, confidence: float = 0.95) -> SlopeFit:
    """Least-squares slope of log y against log x with a Student-t interval."""
    from scipy import stats

    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if len(lx) < 3:
        raise DomainError("need at least three points for a slope with an interval")
    res = stats.linregress(lx, ly)
    half = float(stats.t.ppf(0.5 + 0.5 * confidence, len(lx) - 2)) * res.stderr
    return SlopeFit(float(res.slope), float(res.intercept), res.slope - half, res.slope + half, float(res.stderr))


# -- boundary behaviour at beta = 0 ---------------------------------------------

def _exp_integral(x: float) -> float:
    """E_1(x) = int_x^inf e^{-s}/s ds by Gauss-Legendre in log s."""
    # s = x e^v, ds/s = dv; the integrand e^{-x e^v} is negligible once x e^v > 750
    v_max = math.log(750.0 / x) if x < 750.0 else 0.0
    if v_max <= 0.0:
        return 0.0
    edges = np.unique(np.concatenate(([0.0], np.clip(math.log(1.0 / x) + np.arange(-4.0, 8.0), 0.0, v_max),
                                      np.linspace(0.0, v_max, 40))))
    v, wv = _quad.mapped(_quad.gauss_unit(20), edges[:-1], edges[1:])
    return float(np.sum(wv * np.exp(-x * np.exp(v))))


def boundary_ratio_level_one(z: float, t: float) -> float:
    """(z^2 / 4t^2) E_1(2z/t) / u_0(z, t)^2, the beta = 0 lower estimate of M_1 / u_0^2."""
    if z <= 0.0 or t <= 0.0:
        raise DomainError("need z, t > 0")
    return z * z / (4.0 * t * t) * _exp_integral(2.0 * z / t) / float(_u0(z, t)) ** 2


def boundary_ratio_level_one_quadrature(z: float, t: float, quad: QuadratureSpec = CHAOS_QUAD) -> float:
    """M_1(z, t) / u_0(z, t)^2 at beta = 0 by direct space-time quadrature."""
    if z <= 0.0 or t <= 0.0:
        raise DomainError("need z, t > 0")
    m1 = _level_one(np.array([float(z)]), np.array([float(t)]), 0.0, quad)[0, 0]
    return m1 / float(_u0(z, t)) ** 2

# (C_K, C_tilde) from fit_ratio_constants on its default grid; both suprema are
# approached as z -> 0 (tau/t near 0.02 for C_K, tau -> t for C_tilde)
RATIO_CONSTANTS: dict[float, tuple[float, float]] = {
    0.5: (0.07152081348235574, 0.4092625077043265),
    0.25: (0.08626282430062794, 0.3147974312923108),
}
# M_{beta,lambda} from fit_increment_constant on its default grid (t <= 1); the
# supremum sits at well separated pairs, z_2 about 9 z_1 with z_1 near 0.06
INCREMENT_CONSTANTS: dict[tuple[float, float], float] = {
    (0.5, 0.4): 0.37537999907763636,
}


# -- coloured recursion -----------------------------------------------------------

def _colored_edges(grid: FieldGrid, pad_cells: int, span: float, refine: int) -> np.ndarray:
    """Cell edges in w: uniform through the report nodes and ``pad_cells`` more,
    then cells doubling in width until ``span`` is covered."""
    dz = grid.dz / refine
    n_uniform = (grid.shape[0] + pad_cells) * refine
    edges = list(dz * np.arange(n_uniform + 1))
    width = dz
    while edges[-1] < span:
        width *= 2.0
        edges.append(edges[-1] + width)
    return np.asarray(edges)


def _cell_kernel(nodes: np.ndarray, edges: np.ndarray, dt: float, lags: int, quad: QuadratureSpec) -> np.ndarray:
    """K[i, l, d] = int_{d dt}^{(d+1) dt} int_{cell l} q_0(nodes_i, w, s) dw ds."""
    K = np.zeros((len(nodes), len(edges) - 1, lags))
    unit = _quad.composite_unit(2, quad.base_points // 2)
    ra, rb = np.sqrt(edges[:-1]), np.sqrt(edges[1:])
    c = np.sqrt(nodes)[:, None, None, None]
    for d in range(lags):
        s, ws, _ = _time_panel(d, dt, quad)
        width = np.sqrt(s)[None, None, :, None]
        lo = np.maximum(ra[None, :, None, None], c - quad.spread * width)
        hi = np.minimum(rb[None, :, None, None], c + quad.spread * width)
        hi = np.maximum(hi, lo)
        r, wr = _quad.mapped(unit, lo[..., 0], hi[..., 0])
        k = _backend.q_nu(0.0, nodes[:, None, None, None], r * r, s[None, None, :, None])
        K[:, :, d] = np.einsum("ilsw,s->il", 2.0 * r * wr * k, ws)
    return K


def _cell_mean_u0(edges: np.ndarray, t_edges: np.ndarray) -> np.ndarray:
    """Average of u_0 over each cell [edges_l, edges_l+1] x [t_k, t_k+1]."""
    x, wx = _quad.gauss_unit(12)
    w = edges[:-1, None] + np.diff(edges)[:, None] * x[None, :]
    tau = t_edges[:-1, None] + np.diff(t_edges)[:, None] * x[None, :]
    vals = _u0(w[:, None, :, None], tau[None, :, None, :])
    return np.einsum("lkab,a,b->lk", vals, wx, wx)


def _cell_mean_hat(edges: np.ndarray, beta: float) -> np.ndarray:
    """Average of min(w, 1)^beta over each cell, exactly."""
    def prim(w):
        w = np.asarray(w)
        return np.where(w <= 1.0, w ** (beta + 1.0) / (beta + 1.0), 1.0 / (beta + 1.0) + (w - 1.0))
    return (prim(edges[1:]) - prim(edges[:-1])) / np.diff(edges)


def _corner_average(n_cells: int, nt: int):
    """A[(l,k), (i,j)]: each cell averages its four corner nodes; nodes at w = 0 or t = 0 carry zero."""
    from scipy import sparse

    l, k = np.divmod(np.arange(n_cells * nt), nt)
    rows, cols = [], []
    for di in (-1, 0):
        for dj in (-1, 0):
            ok = (l + di >= 0) & (k + dj >= 0)
            rows.append((l * nt + k)[ok])
            cols.append(((l + di) * nt + k + dj)[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sparse.csr_matrix((np.full(len(rows), 0.25), (rows, cols)), shape=(n_cells * nt, n_cells * nt))


def chaos_colored(config: ChaosConfig, model: NoiseModel) -> ChaosTable:
    """Covariances G_n of the chaos kernels for separable coloured noise.

    Nodes are the report points (z_i, t_j) plus padded spatial nodes; cells
    are the space-time rectangles between neighbouring nodes.  With
    K[p, c] the kernel integrated over cell c for node p and
    Cbar[c, c'] the cell-averaged covariance times the degeneracy,

        G_n = K (Cbar * Gbar_{n-1}) K^T,   Gbar_{n-1} = A G_{n-1} A^T,

    where A averages a cell's corner values.  Level 0 uses exact cell means
    of u_0.  The diagonal of G_n is M_n.
    """
    grid = config.grid
    nz, nt = grid.shape
    if nz > COLORED_MAX_NODES or nt > COLORED_MAX_NODES:
        raise DomainError(f"coloured recursion takes at most {COLORED_MAX_NODES} report nodes per axis")
    if config.n_levels > COLORED_MAX_LEVELS:
        raise DomainError(f"coloured recursion takes at most {COLORED_MAX_LEVELS} levels")
    if abs(grid.z[0] - grid.dz) > 1e-9 * grid.dz:
        raise DomainError("coloured report nodes must be the multiples k dz of their spacing")
    quad = config.quad
    span = config.support_span or (math.sqrt(grid.z[-1]) + quad.spread * math.sqrt(grid.t[-1])) ** 2
    ref = config.cell_refine
    edges = _colored_edges(grid, config.pad_cells, span, ref)
    nodes = edges[1:]
    L = len(nodes)
    nt_c = nt * ref
    dt = grid.dt / ref
    t_edges = dt * np.arange(nt_c + 1)

    Kc = _cell_kernel(nodes, edges, dt, nt_c, quad)
    K = np.zeros((L * nt_c, L * nt_c))
    for j in range(nt_c):
        for k in range(j + 1):
            K[j::nt_c, k::nt_c] = Kc[:, :, j - k]
    widths = np.diff(edges)
    hat = _cell_mean_hat(edges, model.beta)
    space = cell_covariance(model.spatial, edges) / np.outer(widths, widths)
    time = cell_covariance(model.temporal, t_edges) / (dt * dt)
    cbar = np.kron(np.outer(hat, hat) * space, time)
    if not np.all(np.isfinite(cbar)):
        raise AccuracyError("cell-averaged covariance is not finite", partial=float("nan"))
    A = _corner_average(L, nt_c)

    tt = np.tile(t_edges[1:], L)
    zz = np.repeat(nodes, nt_c)
    u0 = _u0(zz, tt)
    G = np.outer(u0, u0)
    bar0 = _cell_mean_u0(edges, t_edges).ravel()
    rows = ref * np.arange(1, nz + 1) - 1
    cols = ref * np.arange(1, nt + 1) - 1
    report = (rows[:, None] * nt_c + cols[None, :]).ravel()
    covs = [G[np.ix_(report, report)]]
    levels = [np.diag(G)[report].reshape(nz, nt)]
    gbar = np.outer(bar0, bar0)
    for n in range(1, config.n_levels + 1):
        G = K @ (cbar * gbar) @ K.T
        diag = np.diag(G)[report].reshape(nz, nt)
        _check_level(diag, n, grid.z, grid.t)
        covs.append(G[np.ix_(report, report)])
        levels.append(diag)
        AG = A @ G
        gbar = (A @ AG.T).T
    points = np.column_stack([zz[report], tt[report]])
    return ChaosTable(np.array(levels), grid, model.beta, "colored", model, config.eps,
                      covariance=np.array(covs), points=points)


# -- bound ledger -----------------------------------------------------------------

LEDGER_COLUMNS = ("n", "z", "t", "value", "bound_name", "bound_value", "margin")


class LedgerRow(NamedTuple):
    n: int
    z: float
    t: float
    value: float
    bound_name: str
    bound_value: float

    @property
    def margin(self) -> float:
        return self.bound_value - self.value


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _rows_text(rows, extra: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in extra:
        out.write(f"# {line}\n")
    out.write(",".join(LEDGER_COLUMNS) + "\n")
    for r in rows:
        out.write(",".join([str(r.n), _fmt(r.z), _fmt(r.t), _fmt(r.value), r.bound_name,
                            _fmt(r.bound_value), _fmt(r.margin)]) + "\n")
    return out.getvalue()


@dataclass
class BoundLedger:
    """Computed values next to the bounds that should dominate them.

    ``constants`` maps a fitted constant's name to (value, provenance).
    Margins are kept even when negative; :meth:`violations` picks out the
    ones beyond a relative slack.
    """

    rows: list[LedgerRow] = field(default_factory=list)
    constants: dict[str, tuple[float, str]] = field(default_factory=dict)

    def add(self, n: int, z: float, t: float, value: float, bound_name: str, bound_value: float) -> None:
        self.rows.append(LedgerRow(int(n), float(z), float(t), float(value), bound_name, float(bound_value)))

    def named(self, bound_name: str) -> list[LedgerRow]:
        return [r for r in self.rows if r.bound_name == bound_name]

    def violations(self, rel_slack: float = 0.0, abs_slack: float = 0.0) -> list[LedgerRow]:
        return [r for r in self.rows if r.margin < -(abs_slack + rel_slack * abs(r.bound_value))]

    def min_margin(self, bound_name: str | None = None) -> float:
        rows = self.rows if bound_name is None else self.named(bound_name)
        return min((r.margin for r in rows), default=math.inf)

    def to_text(self) -> str:
        extra = [f"constant {k} = {_fmt(v)} ({src})" for k, (v, src) in sorted(self.constants.items())]
        return _rows_text(self.rows, extra)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "BoundLedger":
        ledger = cls()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        for ln in lines:
            if ln.startswith("# constant "):
                body = ln[len("# constant "):]
                name, rest = body.split(" = ", 1)
                value, src = rest.split(" (", 1)
                ledger.constants[name] = (float(value), src.rstrip(")"))
        data = [ln for ln in lines if not ln.startswith("#")]
        if not data or tuple(data[0].split(",")) != LEDGER_COLUMNS:
            raise DomainError("ledger text lacks the expected header row")
        for ln in data[1:]:
            n, z, t, value, name, bound, _ = ln.split(",")
            ledger.add(int(n), float(z), float(t), float(value), name, float(bound))
        return ledger


def table_text(table: ChaosTable) -> str:
    """The table's M_n in ledger columns; bound columns are empty (nan)."""
    rows = [LedgerRow(n, float(z), float(t), float(table.levels[n, i, j]), "none", math.nan)
            for n in range(table.levels.shape[0])
            for i, z in enumerate(table.grid.z)
            for j, t in enumerate(table.grid.t)]
    return _rows_text(rows)


def white_ledger(table: ChaosTable, constant: float = ENERGY_REFINED_C) -> BoundLedger:
    """Rows for the geometric bound (every level), U at level 1 (beta = 0), the
    refined bound (beta >= 1/4) and the total second moment against 2."""
    if table.kind != "white":
        raise DomainError("white_ledger needs a white chaos table")
    ledger = BoundLedger(constants={"C_refined": (constant, "sup x^(3/2)[e^-x (I0 - I1) - e^-2x], 30-digit search")})
    for i, z in enumerate(table.grid.z):
        for j, t in enumerate(table.grid.t):
            m = table.levels[:, i, j]
            for n in range(1, table.n_levels + 1):
                ledger.add(n, z, t, m[n], "geometric", geometric_bound(n))
                if table.beta >= 0.25:
                    ledger.add(n, z, t, m[n], "refined", refined_level_bound(n, z, t, constant))
            if table.beta == 0.0:
                ledger.add(1, z, t, m[1], "energy_U", float(energy_U(z / t)))
            value, tail = second_moment(table, z, t)
            ledger.add(-1, z, t, value + tail, "total_two", 2.0)
    return ledger


def colored_ledger(table: ChaosTable, eps: float | None = None) -> BoundLedger:
    """Rows for the level-one, tree and geometric coloured bounds and the stated total."""
    if table.kind != "colored":
        raise DomainError("colored_ledger needs a coloured chaos table")
    eps = table.eps if eps is None else eps
    ledger = BoundLedger()
    for j, t in enumerate(table.grid.t):
        cp = colored_parameters(table.model, t, eps)
        for i, z in enumerate(table.grid.z):
            m = table.levels[:, i, j]
            ledger.add(1, z, t, m[1], "colored_level_one", colored_level_one_bound(t, cp))
            for n in range(1, table.n_levels + 1):
                ledger.add(n, z, t, m[n], "tree", tree_bound(n, z, t, cp))
                ledger.add(n, z, t, m[n], "colored_geometric", colored_geometric_bound(n, t, cp))
            total = float(m.sum())
            for name, fn in (("total_stated", colored_total_stated), ("total_closing", colored_total_closing),
                             ("total_tree", colored_total_tree)):
                bound = fn(z, t, cp)
                if math.isfinite(bound):
                    ledger.add(-1, z, t, total, name, bound)
    return ledger


def ratio_ledger(table: ChaosTable) -> BoundLedger:
    """sup over grid z of E[(u/u_0)^2] against C_{t,beta} (or C_{t,beta,eps}) at each grid t below T."""
    if table.beta <= 0.0:
        raise DomainError("ratio bounds need beta > 0")
    colored = table.kind != "white"
    c_k, c_t = ratio_constants(table.beta)
    ledger = BoundLedger(constants={
        "C_prop35": (c_k, "sup of K / (4 (t-tau)^(alpha-1) (z_hat v t)^(2beta-alpha)) on the reference grid"),
        "C_tilde": (c_t, "sup of K_tilde / (4 (z_hat v (t-tau))^beta) on the reference grid"),
        "C_alpha_beta": (ratio_coefficient(table.beta, colored), "4 C / alpha" + (" v 4 C_tilde" if colored else "")),
    })
    for j, t in enumerate(table.grid.t):
        cp = _colored_cp(table, t) if colored else None
        q = ratio_rate(t, table.beta, cp)
        if q >= 1.0:
            continue
        sup = max(sum(ratio_moment(table, z, t)) for z in table.grid.z)
        ledger.add(-1, math.nan, t, sup, "ratio_sup", ratio_sup_bound(t, table.beta, q))
    return ledger
