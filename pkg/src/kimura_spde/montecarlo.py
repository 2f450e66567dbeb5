"""Path simulation of the stochastic Kimura equation and moment estimators.

Space is discretised by the three-point finite-difference form of
z d^2/dz^2 on a node set that contains the report grid, and time by the
linearly implicit Euler step

    (I - dt A) u(., t + dt) = u(., t) + w_hat^beta u(., t) dW / |cell|

The noise increment multiplies the value at the start of the step
(Ito-type), the discrete counterpart of the adapted stochastic integral.
I - dt A is an M-matrix, so the step keeps positive data positive; its
row sums exceed one only through the Dirichlet condition at z = 0, which
is the physical absorption.

Inside each report cell the nodes are spaced roughly evenly in sqrt(z),
which is the natural scale of the operator near the boundary.  Past the
report grid the node set continues with geometrically growing spacing out
to several diffusion lengths, so the solution near the last report node
does not see an artificial edge.
"""
from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .chaos import ChaosTable, SlopeFit, fit_loglog_slope, second_moment
from .errors import DomainError, NumericError
from .noise import FieldGrid, NoiseModel, _cholesky, cell_covariance, path_generators

__all__ = [
    "SimScheme",
    "Ensemble",
    "MomentReport",
    "HolderFit",
    "ReconciliationRow",
    "simulate",
    "simulate_moments",
    "estimate_moments",
    "estimate_holder",
    "compare_chaos_mc",
    "scheme_second_moment",
    "write_ensemble",
    "read_ensemble",
]

MIN_PATHS = 100
KSPD_MAGIC = b"KSPD"
KSPD_VERSION = 1


@dataclass(frozen=True)
class SimScheme:
    """Report grid, ensemble size and seed of a simulation run.

    Each report step is split into ``time_substeps`` simulation steps
    (at least 4, so dt_sim <= t_1 / 4).  ``space_refine`` sets the node
    density: the first report cell is cut into 4 * space_refine pieces and
    the others keep the same spacing in sqrt(z), with at least
    ceil(space_refine / 2) pieces each.  ``pad_growth`` is the ratio of
    consecutive node spacings beyond the report grid and ``span`` the
    farthest node (default: six diffusion lengths past the grid).
    """

    grid: FieldGrid
    n_paths: int = 1000
    seed: int = 0
    beta: float = 0.0
    time_substeps: int = 8
    space_refine: int = 4
    pad_growth: float = 1.15
    span: float | None = None
    batch_size: int = 64

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < MIN_PATHS:
            raise DomainError(f"n_paths must be an integer >= {MIN_PATHS}, got {self.n_paths}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if int(self.time_substeps) != self.time_substeps or self.time_substeps < 4:
            raise DomainError("time_substeps must be an integer >= 4 (dt <= t_1 / 4)")
        if int(self.space_refine) != self.space_refine or self.space_refine < 1:
            raise DomainError(f"space_refine must be a positive integer, got {self.space_refine}")
        if not self.pad_growth >= 1.0:
            raise DomainError(f"pad_growth must be >= 1, got {self.pad_growth}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise DomainError(f"batch_size must be a positive integer, got {self.batch_size}")
        if abs(self.grid.t[0] - self.grid.dt) > 1e-9 * self.grid.dt:
            raise DomainError("report times must be the multiples k dt of their spacing")
        if abs(self.grid.z[0] - self.grid.dz) > 1e-9 * self.grid.dz:
            raise DomainError("report nodes must be the multiples k dz of their spacing")

    @property
    def dt(self) -> float:
        return self.grid.dt / self.time_substeps

    @property
    def n_steps(self) -> int:
        return self.grid.shape[1] * self.time_substeps


class _Discretisation(NamedTuple):
    nodes: np.ndarray     # all simulation nodes, nodes[0] = 0
    cells: np.ndarray     # noise cell width of each node in nodes[1:]
    banded: np.ndarray    # I - dt A in LAPACK (1, 1) banded storage, on nodes[1:]
    hat: np.ndarray       # w_hat^beta at nodes[1:]
    report: np.ndarray    # positions of the report nodes within nodes[1:]

    def step(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.banded, rhs, check_finite=False)


def _nodes(scheme: SimScheme) -> tuple[np.ndarray, np.ndarray]:
    """Simulation nodes and the positions of the report nodes among nodes[1:]."""
    grid = scheme.grid
    edges = np.concatenate(([0.0], grid.z))
    root = np.sqrt(edges)
    spacing = root[1] / (4 * scheme.space_refine)
    floor = math.ceil(scheme.space_refine / 2)
    pieces = np.maximum(floor, np.ceil(np.diff(root) / spacing - 1e-9).astype(int))
    parts = [np.zeros(1)]
    for a, b, m in zip(edges[:-1], edges[1:], pieces):
        parts.append(a + (b - a) * np.arange(1, m + 1) / m)
    nodes = list(np.concatenate(parts))
    report = np.cumsum(pieces) - 1
    span = scheme.span or (math.sqrt(grid.z[-1]) + 6.0 * math.sqrt(grid.t[-1])) ** 2
    h = nodes[-1] - nodes[-2]
    while nodes[-1] < span:
        h *= scheme.pad_growth
        nodes.append(nodes[-1] + h)
    return np.asarray(nodes), report


def _generator_bands(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sub-, main and super-diagonal of z d^2/dz^2 on nodes[1:].

    u = 0 at nodes[0]; the last node reflects (its missing neighbour
    mirrors the one before it).
    """
    x = nodes
    h = np.diff(x)
    left = h
    right = np.concatenate((h[1:], h[-1:]))
    z = x[1:]
    lower = 2.0 * z / (left * (left + right))
    upper = 2.0 * z / (right * (left + right))
    main = -(lower + upper)
    main[-1] += upper[-1]
    return lower, main, upper


def _discretise(scheme: SimScheme) -> _Discretisation:
    nodes, report = _nodes(scheme)
    inner = nodes[1:]
    lower, main, upper = _generator_bands(nodes)
    dt = scheme.dt
    banded = np.zeros((3, len(inner)))
    banded[0, 1:] = -dt * upper[:-1]
    banded[1] = 1.0 - dt * main
    banded[2, :-1] = -dt * lower[1:]
    mids = inner[:-1] + 0.5 * np.diff(inner)
    edges = np.concatenate(([0.5 * inner[0]], mids, [inner[-1] + 0.5 * (inner[-1] - inner[-2])]))
    hat = np.minimum(inner, 1.0) ** scheme.beta
    return _Discretisation(nodes, np.diff(edges), banded, hat, report)


def _noise_factors(model: NoiseModel, disc: _Discretisation, scheme: SimScheme):
    """Factors of the spatial and temporal increment covariances on the simulation cells."""
    inner = disc.nodes[1:]
    edges = np.concatenate(([0.5 * inner[0]], inner[:-1] + 0.5 * np.diff(inner), [inner[-1] + 0.5 * disc.cells[-1]]))
    if model.spatial.is_white:
        lf = np.sqrt(disc.cells)
    else:
        lf = _cholesky(cell_covariance(model.spatial, edges), "spatial")
    if model.temporal.is_white:
        lg = math.sqrt(scheme.dt)
    else:
        lg = _cholesky(cell_covariance(model.temporal, scheme.dt * np.arange(scheme.n_steps + 1)), "temporal")
    return lf, lg


def _path_noise(rng: np.random.Generator, factors, n_nodes: int, n_steps: int) -> np.ndarray:
    lf, lg = factors
    xi = rng.standard_normal((n_nodes, n_steps))
    xi = lf[:, None] * xi if lf.ndim == 1 else lf @ xi
    xi = xi * lg if np.ndim(lg) == 0 else xi @ lg.T
    return xi


def _initial(u0: Callable[[np.ndarray], np.ndarray] | None, nodes: np.ndarray) -> np.ndarray:
    if u0 is None:
        return np.ones(len(nodes) - 1)
    vals = np.asarray(u0(nodes[1:]), dtype=float)
    if vals.shape != (len(nodes) - 1,) or not np.all(np.isfinite(vals)):
        raise DomainError("u0 must return finite values for every node")
    return vals


def _run_batch(scheme: SimScheme, model: NoiseModel | None, disc: _Discretisation, factors,
               start: int, count: int, init: np.ndarray) -> np.ndarray:
    """Values at the report nodes, shape (count, nz, nt), for paths start..start+count-1."""
    n_in = len(disc.nodes) - 1
    sub = scheme.time_substeps
    nz, nt = scheme.grid.shape
    u = np.repeat(init[:, None], count, axis=1)
    if model is not None:
        noise = np.stack([_path_noise(rng, factors, n_in, scheme.n_steps)
                          for rng in path_generators(scheme.seed, count, start)], axis=-1)
        noise *= (disc.hat / disc.cells)[:, None, None]
    out = np.empty((count, nz, nt))
    for step in range(scheme.n_steps):
        rhs = u + u * noise[:, step, :] if model is not None else u
        u = disc.step(rhs)
        if (step + 1) % sub == 0:
            out[:, :, (step + 1) // sub - 1] = u[disc.report].T
    if not np.all(np.isfinite(out)):
        p, i, j = np.argwhere(~np.isfinite(out))[0]
        raise NumericError(f"non-finite value on path {start + p} at z={scheme.grid.z[i]}, t={scheme.grid.t[j]}")
    return out


def _batches(n_paths: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(size, n_paths - s)) for s in range(0, n_paths, size)]


def _check_model(scheme: SimScheme, model: NoiseModel | None) -> None:
    if model is not None and model.beta != scheme.beta:
        raise DomainError(f"noise model beta={model.beta} differs from scheme beta={scheme.beta}")


@dataclass(frozen=True)
class Ensemble:
    """u[path, i, j] on the nodes z_i = i dz (i >= 0) and t_j = j dt (j >= 0).

    Row i = 0 is the boundary (identically 0 for t > 0) and column j = 0 the
    initial data.
    """

    values: np.ndarray
    grid: FieldGrid
    beta: float = 0.0

    @property
    def z(self) -> np.ndarray:
        return np.concatenate(([0.0], self.grid.z))

    @property
    def t(self) -> np.ndarray:
        return np.concatenate(([0.0], self.grid.t))

    @property
    def interior(self) -> np.ndarray:
        """Values on the report grid only, shape (n_paths, nz, nt)."""
        return self.values[:, 1:, 1:]


def simulate(scheme: SimScheme, model: NoiseModel | None, u0: Callable | None = None,
             threads: int = 1) -> Ensemble:
    """Run every path of ``scheme``; ``model=None`` switches the noise off.

    Paths draw from generators derived from (seed, path index), so the
    ensemble does not depend on batch size or thread count.
    """
    _check_model(scheme, model)
    disc = _discretise(scheme)
    factors = None if model is None else _noise_factors(model, disc, scheme)
    init = _initial(u0, disc.nodes)
    nz, nt = scheme.grid.shape
    values = np.zeros((scheme.n_paths, nz + 1, nt + 1))
    values[:, 1:, 0] = init[disc.report]

    def work(batch):
        start, count = batch
        values[start:start + count, 1:, 1:] = _run_batch(scheme, model, disc, factors, start, count, init)

    _map(work, _batches(scheme.n_paths, scheme.batch_size), threads)
    return Ensemble(values, scheme.grid, scheme.beta)


def _map(fn, items, threads: int) -> None:
    if threads <= 1:
        for item in items:
            fn(item)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, items))


# -- estimators -----------------------------------------------------------------

DEFAULT_P = (2, 4, 6)
JACKKNIFE_BLOCKS = 50


class _Accumulator:
    """Per-block sums of u^p, reduced in block order for reproducibility."""

    def __init__(self, n_paths: int, shape: tuple[int, int], p_list: Sequence[int], blocks: int):
        self.p_list = tuple(int(p) for p in p_list)
        self.blocks = max(2, min(blocks, n_paths))
        self.n_paths = n_paths
        # slot 0 holds the signed sum for the mean, slot k >= 1 the sum of |u|^p_k
        self.sums = np.zeros((self.blocks, 1 + len(self.p_list)) + shape)
        self.counts = np.zeros(self.blocks)

    def block_of(self, path: np.ndarray) -> np.ndarray:
        return path * self.blocks // self.n_paths

    def add(self, start: int, values: np.ndarray) -> None:
        blk = self.block_of(start + np.arange(len(values)))
        for b in np.unique(blk):
            sel = values[blk == b]
            self.counts[b] += len(sel)
            self.sums[b, 0] += np.sum(sel, axis=0)
            for k, p in enumerate(self.p_list, start=1):
                self.sums[b, k] += np.sum(np.abs(sel) ** p if p % 2 else sel ** p, axis=0)


class MomentReport(NamedTuple):
    z: np.ndarray
    t: np.ndarray
    n_paths: int
    mean: np.ndarray
    mean_se: np.ndarray
    moments: dict        # p -> E|u|^p on the grid
    moment_se: dict      # p -> jackknife standard error
    ratio: np.ndarray    # E[(u/u_0)^2]
    ratio_se: np.ndarray

    def to_text(self) -> str:
        out = io.StringIO()
        cols = ["z", "t", "mean", "mean_se"]
        for p in sorted(self.moments):
            cols += [f"moment_{p}", f"moment_{p}_se"]
        cols += ["ratio", "ratio_se"]
        out.write(",".join(cols) + "\n")
        for i, z in enumerate(self.z):
            for j, t in enumerate(self.t):
                vals = [z, t, self.mean[i, j], self.mean_se[i, j]]
                for p in sorted(self.moments):
                    vals += [self.moments[p][i, j], self.moment_se[p][i, j]]
                vals += [self.ratio[i, j], self.ratio_se[i, j]]
                out.write(",".join(f"{v:.12g}" for v in vals) + "\n")
        return out.getvalue()


def _jackknife(block_sums: np.ndarray, counts: np.ndarray, transform=None) -> tuple[np.ndarray, np.ndarray]:
    total = block_sums.sum(axis=0)
    n = counts.sum()
    est = total / n
    loo = (total[None] - block_sums) / (n - counts)[(...,) + (None,) * (block_sums.ndim - 1)]
    if transform is not None:
        est, loo = transform(est), transform(loo)
    g = len(counts)
    se = np.sqrt((g - 1) / g * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return est, se


def _report(acc: _Accumulator, grid: FieldGrid) -> MomentReport:
    mean, mean_se = _jackknife(acc.sums[:, 0], acc.counts)
    moments, ses = {}, {}
    for k, p in enumerate(acc.p_list, start=1):
        moments[p], ses[p] = _jackknife(acc.sums[:, k], acc.counts)
    if 2 not in moments:
        ratio = ratio_se = np.full(grid.shape, np.nan)
    else:
        u0sq = (-np.expm1(-grid.z[:, None] / grid.t[None, :])) ** 2
        ratio, ratio_se = moments[2] / u0sq, ses[2] / u0sq
    return MomentReport(grid.z, grid.t, acc.n_paths, mean, mean_se, moments, ses, ratio, ratio_se)


def estimate_moments(ensemble: Ensemble, p_list: Sequence[int] = DEFAULT_P,
                     blocks: int = JACKKNIFE_BLOCKS) -> MomentReport:
    """Sample moments E|u|^p with block-jackknife standard errors.

    Paths are split into ``blocks`` contiguous groups; for these linear
    statistics the jackknife reproduces the usual standard error of a mean
    when every block holds one path.
    """
    vals = ensemble.interior
    if not np.all(np.isfinite(vals)):
        raise NumericError("ensemble holds non-finite values")
    acc = _Accumulator(len(vals), ensemble.grid.shape, p_list, blocks)
    acc.add(0, vals)
    return _report(acc, ensemble.grid)


def simulate_moments(scheme: SimScheme, model: NoiseModel | None, u0: Callable | None = None,
                     p_list: Sequence[int] = DEFAULT_P, blocks: int = JACKKNIFE_BLOCKS,
                     threads: int = 1) -> MomentReport:
    """:func:`simulate` followed by :func:`estimate_moments` without holding the ensemble.

    Gives the same numbers as the two-step route up to summation order.
    """
    _check_model(scheme, model)
    disc = _discretise(scheme)
    factors = None if model is None else _noise_factors(model, disc, scheme)
    init = _initial(u0, disc.nodes)
    acc = _Accumulator(scheme.n_paths, scheme.grid.shape, p_list, blocks)
    batches = _batches(scheme.n_paths, scheme.batch_size)
    results: dict[int, np.ndarray] = {}

    def work(batch):
        start, count = batch
        results[start] = _run_batch(scheme, model, disc, factors, start, count, init)

    # fixed-size waves keep memory bounded; reduction runs in path order
    wave = max(1, threads)
    for k in range(0, len(batches), wave):
        chunk = batches[k:k + wave]
        _map(work, chunk, threads)
        for start, _ in chunk:
            acc.add(start, results.pop(start))
    return _report(acc, scheme.grid)


def scheme_second_moment(scheme: SimScheme, model: NoiseModel | None = None,
                         u0: Callable | None = None) -> np.ndarray:
    """Exact E[u^2] of the discrete scheme on the report grid (temporally white noise).

    S_{k+1} = R (S + dt * (hat hat^T * C / (c c^T)) * S) R^T with R = (I - dt A)^-1
    and C the spatial cell covariance divided by dt; for white noise C is diagonal.
    """
    model = model or NoiseModel(beta=scheme.beta)
    _check_model(scheme, model)
    if not model.temporal.is_white:
        raise DomainError("the scheme moment recursion needs temporally white noise")
    disc = _discretise(scheme)
    lf, _ = _noise_factors(model, disc, scheme)
    spatial = np.diag(lf ** 2) if lf.ndim == 1 else lf @ lf.T
    weight = np.outer(disc.hat, disc.hat) * spatial / np.outer(disc.cells, disc.cells) * scheme.dt
    R = disc.step(np.eye(len(disc.cells)))
    init = _initial(u0, disc.nodes)
    S = np.outer(init, init)
    nz, nt = scheme.grid.shape
    out = np.empty((nz, nt))
    for step in range(scheme.n_steps):
        S = R @ (S + weight * S) @ R.T
        if (step + 1) % scheme.time_substeps == 0:
            out[:, (step + 1) // scheme.time_substeps - 1] = np.diag(S)[disc.report]
    return out


# -- Holder exponent --------------------------------------------------------------

class HolderFit(NamedTuple):
    fit: SlopeFit
    dz: np.ndarray
    values: np.ndarray   # E|u(z_1) - u(z_2)|^2 per pair
    se: np.ndarray


def estimate_holder(ensemble: Ensemble, t: float, pairs: Sequence[tuple[float, float]]) -> HolderFit:
    """Slope of log E|u(z_1, t) - u(z_2, t)|^2 against log |z_1 - z_2| over node pairs."""
    tj = _index(ensemble.t, t, "t")
    dz, vals, ses = [], [], []
    for z1, z2 in pairs:
        i1, i2 = _index(ensemble.z, z1, "z"), _index(ensemble.z, z2, "z")
        if i1 == i2:
            continue
        d = ensemble.values[:, i1, tj] - ensemble.values[:, i2, tj]
        m = float(np.mean(d * d))
        if not (math.isfinite(m) and m > 0.0):
            continue
        dz.append(abs(ensemble.z[i1] - ensemble.z[i2]))
        vals.append(m)
        ses.append(float(np.std(d * d, ddof=1) / math.sqrt(len(d))))
    if len(vals) < 4:
        raise DomainError(f"need at least 4 usable pairs, got {len(vals)}")
    return HolderFit(fit_loglog_slope(dz, vals), np.array(dz), np.array(vals), np.array(ses))


def _index(nodes: np.ndarray, value: float, name: str) -> int:
    k = int(np.argmin(np.abs(nodes - value)))
    if abs(nodes[k] - value) > 1e-9 * max(1.0, abs(value)):
        raise DomainError(f"{name}={value} is not an ensemble node")
    return k


# -- reconciliation ---------------------------------------------------------------

class ReconciliationRow(NamedTuple):
    z: float
    t: float
    mc: float
    mc_se: float
    chaos: float
    tail: float
    discrepancy_se: float     # |mc - chaos| / se
    flagged: bool             # beyond gate * se + tail


def compare_chaos_mc(report: MomentReport, table: ChaosTable, gate: float = 3.0) -> list[ReconciliationRow]:
    """Second moments of the simulation against the chaos partial sums at shared nodes."""
    rows = []
    for i, z in enumerate(report.z):
        for j, t in enumerate(report.t):
            try:
                value, tail = second_moment(table, float(z), float(t))
            except DomainError:
                continue
            mc = float(report.moments[2][i, j])
            se = float(report.moment_se[2][i, j])
            gap = abs(mc - value)
            disc = gap / se if se > 0 else (0.0 if gap == 0 else math.inf)
            rows.append(ReconciliationRow(float(z), float(t), mc, se, value, tail, disc,
                                          bool(gap > gate * se + tail)))
    if not rows:
        raise DomainError("the report and the chaos table share no grid nodes")
    return rows


def reconciliation_text(rows: Sequence[ReconciliationRow]) -> str:
    out = io.StringIO()
    out.write(",".join(ReconciliationRow._fields) + "\n")
    for r in rows:
        out.write(",".join(f"{v:.12g}" if isinstance(v, float) else str(int(v)) for v in r) + "\n")
    return out.getvalue()


# -- binary dump -------------------------------------------------------------------

def write_ensemble(ensemble: Ensemble, path) -> None:
    """"KSPD", u16 version, three u64 dimensions, the z and t axes, then the values (all little-endian)."""
    n, nz, nt = ensemble.values.shape
    with open(path, "wb") as fh:
        fh.write(KSPD_MAGIC)
        fh.write(struct.pack("<H3Q", KSPD_VERSION, n, nz, nt))
        fh.write(np.ascontiguousarray(ensemble.z, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.t, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.values, dtype="<f8").tobytes())


def read_ensemble(path, beta: float = 0.0) -> Ensemble:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != KSPD_MAGIC:
        raise DomainError("not a KSPD ensemble file")
    version, n, nz, nt = struct.unpack_from("<H3Q", data, 4)
    if version != KSPD_VERSION:
        raise DomainError(f"unsupported KSPD version {version}")
    off = 4 + struct.calcsize("<H3Q")
    z = np.frombuffer(data, "<f8", nz, off)
    off += 8 * nz
    t = np.frombuffer(data, "<f8", nt, off)
    off += 8 * nt
    values = np.frombuffer(data, "<f8", n * nz * nt, off).reshape(n, nz, nt).copy()
    grid = FieldGrid(tuple(z[1:]), tuple(t[1:]))
    return Ensemble(values, grid, beta)
