"""Backward reachable sets of the terminal constraint on a spatial grid.

With impulses allowed only at partition times ``t_0 < ... < t_N = T`` the
set of states that can be steered into the closed target is built backward:
``Y_N = cl(D) - K`` and ``Y_k = Phi_k^{-1}(Y_{k+1}) - K`` where ``Phi_k`` is
the free flow from ``t_k`` to ``t_{k+1}``.  Sets are represented by a level
function ``phi`` (reachable iff ``phi <= eps``) sampled at grid nodes, so
pullbacks interpolate a continuous function rather than a 0/1 mask.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import rk4_step
from .grids import SpatialGrid, interpolate, stencil
from .model import ProblemSpec

log = logging.getLogger("impulse_qvi")

UNKNOWN = None


def _lattice_direction(g: np.ndarray, h: np.ndarray, max_int: int = 8) -> np.ndarray | None:
    """Smallest integer node step parallel to ``g`` (in index units), if one is short."""
    d = g / h
    d = d / np.max(np.abs(d))
    for m in range(1, max_int + 1):
        p = np.round(d * m)
        if np.any(p != 0) and np.allclose(p, d * m, atol=1e-9):
            return p.astype(int)
    return None


def _shift_min(phi: np.ndarray, step: np.ndarray, count: int) -> np.ndarray:
    """``min_{0 <= j <= count} phi[i + j * step]`` with out-of-box terms ignored."""
    if count <= 0:
        return phi
    out = phi.copy()
    span = 1
    while span <= count:
        w = min(span, count + 1 - span)
        out = np.minimum(out, _shifted(out, step * w))
        span += w
    return out


def _shifted(a: np.ndarray, step: np.ndarray) -> np.ndarray:
    """``b[i] = a[i + step]``, ``+inf`` where ``i + step`` leaves the array."""
    b = np.full_like(a, np.inf)
    src, dst = [], []
    for s, size in zip(step, a.shape):
        s = int(s)
        if abs(s) >= size:
            return b
        src.append(slice(max(s, 0), size + min(s, 0)))
        dst.append(slice(max(-s, 0), size - max(s, 0)))
    b[tuple(dst)] = a[tuple(src)]
    return b


def dilate_by_cone(spec: ProblemSpec, grid: SpatialGrid, phi: np.ndarray, r_max: float | None = None) -> np.ndarray:
    """Level function of ``{phi <= eps} - K`` by successive ray sweeps along the generators of K.

    ``S - K`` equals ``S - R+ g_1 - ... - R+ g_m`` for a finitely generated
    cone, so each generator needs only a one-dimensional running minimum.
    Rays parallel to a short lattice step are swept exactly on the nodes;
    other rays are sampled at the finest grid spacing with interpolation.
    """
    r_max = grid.diameter if r_max is None else float(r_max)
    h = grid.spacing
    out = np.asarray(phi, dtype=float).reshape(grid.shape)
    for g in spec.cone.matrix:
        p = _lattice_direction(g, h)
        if p is not None:
            count = int(math.floor(r_max / np.linalg.norm(p * h) + 1e-9))
            out = _shift_min(out, p, count)
            continue
        nodes = grid.nodes()
        ds = float(np.min(h))
        best = out.ravel().copy()
        for j in range(1, int(math.floor(r_max / ds)) + 1):
            best = np.minimum(best, interpolate(grid, out, nodes + j * ds * g, "inf"))
        out = best.reshape(grid.shape)
    return out


@dataclass
class ReachableMask:
    """Reachability level functions at the partition times.

    Attributes
    ----------
    grid : SpatialGrid
    times : ndarray
        Partition ``t_0 < ... < t_N = T``.
    level : ndarray (N + 1, *grid.shape)
        A node is reachable at ``t_k`` iff ``level[k] <= eps``.
    eps : float
    """

    grid: SpatialGrid
    times: np.ndarray
    level: np.ndarray
    eps: float

    @property
    def slices(self) -> np.ndarray:
        return self.level <= self.eps

    def slice_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a partition time")
        return k

    def mask_at(self, t: float) -> np.ndarray:
        return self.slices[self.slice_index(t)]

    def contains(self, other: "ReachableMask") -> bool:
        """True when every slice of ``other`` is a subset of the matching slice of ``self``."""
        idx = [self.slice_index(t) for t in other.times]
        return bool(np.all(self.slices[idx] | ~other.slices))

    def added_volume(self, coarse: "ReachableMask") -> np.ndarray:
        """Per common time, cell volume gained relative to a coarser partition."""
        cell = float(np.prod(self.grid.spacing))
        idx = [self.slice_index(t) for t in coarse.times]
        return (self.slices[idx].sum(axis=tuple(range(1, self.grid.ndim + 1)))
                - coarse.slices.sum(axis=tuple(range(1, self.grid.ndim + 1)))) * cell

    def to_csv(self, path, header: str | None = None) -> None:
        nodes = self.grid.nodes()
        n = nodes.shape[1]
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(",".join(["t"] + [f"x{i+1}" for i in range(n)] + ["reachable"]) + "\n")
            for t, m in zip(self.times, self.slices):
                flags = m.ravel().astype(int)
                for i in range(len(nodes)):
                    fh.write(",".join([repr(float(t))] + [repr(float(c)) for c in nodes[i]] + [str(flags[i])]) + "\n")


def make_partition(spec: ProblemSpec, partition, t0: float = 0.0) -> np.ndarray:
    """Partition times from an int (uniform step count on ``[t0, T]``) or a sequence."""
    if np.isscalar(partition):
        return np.linspace(t0, spec.horizon, int(partition) + 1)
    times = np.asarray(partition, dtype=float)
    if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("partition must be strictly increasing")
    if abs(times[-1] - spec.horizon) > 1e-12:
        times = np.append(times[times < spec.horizon], spec.horizon)
    return times


def _flow(spec: ProblemSpec, a: float, b: float, x: np.ndarray) -> np.ndarray:
    k = max(1, int(math.ceil((b - a) / (spec.horizon / 1000.0) - 1e-9)))
    h = (b - a) / k
    for q in range(k):
        x = rk4_step(spec.f, a + q * h, x, h)
    return x


def _padded(spec: ProblemSpec, grid: SpatialGrid, pad: float):
    """Grid extended by about ``pad`` (at most one box width) on every side, and the embedding slice."""
    lo_cells, hi_cells = [], []
    for i, h in enumerate(grid.spacing):
        width = grid.upper[i] - grid.lower[i]
        cells = int(math.ceil(min(pad, width) / h - 1e-9))
        lo_cells.append(cells)
        hi_cells.append(cells)
    big = SpatialGrid(tuple(a - c * h for a, c, h in zip(grid.lower, lo_cells, grid.spacing)),
                      tuple(b + c * h for b, c, h in zip(grid.upper, hi_cells, grid.spacing)),
                      tuple(n + a + b for n, a, b in zip(grid.cells, lo_cells, hi_cells)))
    inner = tuple(slice(a, a + n + 1) for a, n in zip(lo_cells, grid.cells))
    return big, inner


def compute_reachable(spec: ProblemSpec, grid: SpatialGrid, partition, t0: float = 0.0,
                      r_max: float | None = None, pad: float | None = None, base=None) -> ReachableMask:
    """Backward reachable sets ``Y(t_k; Pi)`` on ``grid``.

    Impulses may land outside the requested box and the flow may carry
    states out and back, so the work grid is padded by ``pad`` (default: the
    a priori impulse radius, at most one box width per axis) on every side.
    Feet of the pullback that leave the work grid take the value at the
    nearest boundary point.

    Pullbacks run over the time lattice ``base`` (default: the partition
    itself) merged with the partition; the cone dilation happens only at
    partition times.  Every step is monotone, so two partitions computed on
    a common ``base`` satisfy ``Y(t; Pi_1) <= Y(t; Pi_2)`` exactly whenever
    ``Pi_2`` refines ``Pi_1``.
    """
    from .geometry import impulse_radius

    times = make_partition(spec, partition, t0)
    lattice = times if base is None else np.union1d(make_partition(spec, base, t0), times)
    lattice = lattice[lattice >= times[0] - 1e-12]
    keep = np.concatenate([[True], np.diff(lattice) > 1e-12])
    lattice = lattice[keep]
    eps = spec.target.eps_bd
    if pad is None:
        radius = float(np.max(np.linalg.norm(grid.nodes(), axis=1)))
        pad = r_max if r_max is not None else impulse_radius(spec, radius)
    work, inner = _padded(spec, grid, float(pad))
    nodes = work.nodes()
    dt = np.diff(lattice)
    if len(dt):
        speed = float(np.max(np.linalg.norm(spec.f(times[-1], grid.nodes()), axis=1)))
        if speed * float(np.max(dt)) > 2.0 * float(np.min(grid.spacing)):
            log.warning("partition step moves states more than two cells (|f| dt = %.3g); "
                        "reachable sets may be under-resolved", speed * float(np.max(dt)))
    is_node = np.isclose(lattice[:, None], times[None, :], rtol=0, atol=1e-12).any(axis=1)
    cur = dilate_by_cone(spec, work, spec.target.level(nodes).reshape(work.shape), r_max)
    level = np.empty((len(times),) + grid.shape)
    level[-1] = cur[inner]
    out = len(times) - 2
    feet: dict = {}
    for k in range(len(lattice) - 2, -1, -1):
        key = round(lattice[k + 1] - lattice[k], 12) if spec.dynamics.autonomous else k
        if key not in feet:
            feet = {key: stencil(work, _flow(spec, lattice[k], lattice[k + 1], nodes), "clamp")}
        cur = feet[key].apply(cur).reshape(work.shape)
        if is_node[k]:
            cur = dilate_by_cone(spec, work, cur, r_max)
            level[out] = cur[inner]
            out -= 1
    return ReachableMask(grid, times, level, eps)


def reachable_at(spec: ProblemSpec, t: float, x, mask: ReachableMask):
    """Tri-state membership of ``x`` in the reachable set at time ``t``.

    Returns ``None`` (unknown) outside the grid box or the partition span;
    otherwise True when some corner of the cell containing the state is
    marked.  Off-partition times first flow the state to the next partition
    time without impulses.
    """
    grid = mask.grid
    x = np.asarray(x, dtype=float).reshape(1, grid.ndim)
    if t < mask.times[0] - 1e-12 or t > mask.times[-1] + 1e-12:
        return UNKNOWN
    k = int(np.searchsorted(mask.times, t - 1e-12))
    if mask.times[k] - t > 1e-12:
        x = _flow(spec, t, float(mask.times[k]), x)
    if not grid.contains(x)[0]:
        return UNKNOWN
    frac = (x[0] - np.array(grid.lower)) / grid.spacing
    lo = np.clip(np.floor(frac + 1e-9).astype(int), 0, np.array(grid.cells) - 1)
    sl = mask.slices[k]
    for corner in np.ndindex(*(2,) * grid.ndim):
        idx = tuple(lo + np.array(corner))
        if sl[idx]:
            return True
    return False


__all__ = ["ReachableMask", "UNKNOWN", "compute_reachable", "dilate_by_cone", "make_partition", "reachable_at"]
