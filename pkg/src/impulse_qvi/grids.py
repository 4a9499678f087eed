"""Rectilinear spatial grids and multilinear interpolation.

Interpolation propagates ``+inf`` strictly: if any stencil corner that
carries positive weight is infinite, the interpolant is infinite.  Query
points within ``SNAP`` cells of a node are snapped onto it, so values at
nodes never pick up an infinite neighbour through round-off.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SNAP = 1e-9


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform tensor grid on a box, ``cells[i] + 1`` nodes per axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.cells)):
            raise ValueError("grid bounds and cell counts differ in dimension")
        for lo, hi, c in zip(self.lower, self.upper, self.cells):
            if not hi > lo:
                raise ValueError(f"empty grid axis [{lo}, {hi}]")
            if int(c) < 1:
                raise ValueError("each grid axis needs at least one cell")

    @classmethod
    def box(cls, bounds, cells) -> "SpatialGrid":
        bounds = [tuple(map(float, b)) for b in bounds]
        if np.isscalar(cells):
            cells = [int(cells)] * len(bounds)
        return cls(
            tuple(b[0] for b in bounds),
            tuple(b[1] for b in bounds),
            tuple(int(c) for c in cells),
        )

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.array(self.upper) - np.array(self.lower)))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c + 1) for lo, hi, c in zip(self.lower, self.upper, self.cells)]

    def nodes(self) -> np.ndarray:
        """All nodes as a ``(size, ndim)`` array in C (row-major) order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points, tol: float = SNAP) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        frac = (pts - np.array(self.lower)) / self.spacing
        return np.all((frac >= -tol) & (frac <= np.array(self.cells) + tol), axis=-1)

    def refine(self, factor: int = 2) -> "SpatialGrid":
        return SpatialGrid(self.lower, self.upper, tuple(c * factor for c in self.cells))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}

    @classmethod
    def from_dict(cls, d) -> "SpatialGrid":
        return cls(tuple(map(float, d["lower"])), tuple(map(float, d["upper"])), tuple(map(int, d["cells"])))


def _fractional_index(grid: SpatialGrid, flat: np.ndarray, outside: str):
    cells = np.array(grid.cells)
    frac = (flat - np.array(grid.lower)) / grid.spacing
    inside = np.all((frac >= -SNAP) & (frac <= cells + SNAP), axis=-1)
    if outside == "clamp":
        frac = np.clip(frac, 0.0, cells)
    near = np.rint(frac)
    frac = np.where(np.abs(frac - near) < SNAP, near, frac)
    i0 = np.clip(np.floor(frac), 0, cells - 1).astype(np.int64)
    w = np.clip(frac - i0, 0.0, 1.0)
    return i0, w, inside


@dataclass(frozen=True)
class Stencil:
    """Precomputed multilinear weights for a fixed set of points, reusable across value arrays."""

    shape: tuple
    lead: tuple
    index: np.ndarray
    weight: np.ndarray
    outside: np.ndarray | None

    def apply(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values, dtype=float).reshape(-1)
        if flat.size != int(np.prod(self.shape)):
            raise ValueError("value array does not match the stencil grid")
        result = np.zeros(self.index.shape[0])
        hit_inf = np.zeros(self.index.shape[0], dtype=bool)
        for c in range(self.index.shape[1]):
            weight = self.weight[:, c]
            v = flat[self.index[:, c]]
            finite = np.isfinite(v)
            active = weight > 0.0
            result += np.where(active & finite, weight * np.where(finite, v, 0.0), 0.0)
            hit_inf |= active & ~finite
        result[hit_inf] = np.inf
        if self.outside is not None:
            result[self.outside] = np.inf
        return result.reshape(self.lead)


def stencil(grid: SpatialGrid, points, outside: str = "inf") -> Stencil:
    """Interpolation stencil of ``points``; see :func:`interpolate` for the ``outside`` rules."""
    if outside not in ("inf", "clamp"):
        raise ValueError(f"unknown outside rule {outside!r}")
    pts = np.asarray(points, dtype=float)
    lead = pts.shape[:-1]
    flat = pts.reshape(-1, grid.ndim)
    i0, w, inside = _fractional_index(grid, flat, outside)
    idx, wts = [], []
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        c = np.array(corner)
        wts.append(np.prod(np.where(c == 1, w, 1.0 - w), axis=-1))
        idx.append(np.ravel_multi_index(tuple((i0 + c).T), grid.shape))
    out = ~inside if outside == "inf" else None
    return Stencil(grid.shape, lead, np.stack(idx, axis=1), np.stack(wts, axis=1), out)


def interpolate(grid: SpatialGrid, values: np.ndarray, points, outside: str = "inf") -> np.ndarray:
    """Multilinear interpolation of node ``values`` at ``points``.

    Parameters
    ----------
    grid : SpatialGrid
    values : ndarray of shape ``grid.shape``
    points : array_like of shape ``(..., ndim)``
    outside : {"inf", "clamp"}
        ``"inf"`` returns ``+inf`` for points outside the box; ``"clamp"``
        extrapolates by the nearest boundary value.

    Any corner with nonzero weight holding ``+inf`` makes the result ``+inf``.
    """
    return stencil(grid, points, outside).apply(values)


def node_index(grid: SpatialGrid, points) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-node multi-indices and a flag telling whether the point sits on that node."""
    flat = np.asarray(points, dtype=float).reshape(-1, grid.ndim)
    frac = (flat - np.array(grid.lower)) / grid.spacing
    near = np.rint(frac)
    on_node = np.all(np.abs(frac - near) < SNAP, axis=-1)
    near = np.clip(near, 0, np.array(grid.cells)).astype(np.int64)
    return near, on_node


def cell_corners(grid: SpatialGrid, point) -> np.ndarray:
    """Multi-indices of the 2^n corners of the cell containing ``point``."""
    flat = np.asarray(point, dtype=float).reshape(1, grid.ndim)
    i0, _, _ = _fractional_index(grid, flat, "clamp")
    corners = [i0[0] + np.array(c) for c in itertools.product((0, 1), repeat=grid.ndim)]
    return np.array(corners)
