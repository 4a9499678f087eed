"""Impulse candidates, minimal impulses to the target and the terminal obstacle.

Continuous minimizations over the cone are replaced by searches over a
finite :class:`ImpulseCandidateSet`.  Candidates are sorted by norm and
then lexicographically, and every argmin takes the first minimizer, which
gives the deterministic tie-break "smallest |xi|, then lexicographic".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import qmc

from .dynamics import flow_no_impulse
from .grids import SpatialGrid
from .model import ConeSpec, ProblemSpec

CHUNK = 2_000_000


def _sort_vectors(v: np.ndarray) -> np.ndarray:
    v = np.where(np.abs(v) < 1e-15, 0.0, v)
    v = np.unique(np.round(v, 13), axis=0)
    keys = [v[:, k] for k in range(v.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys + [np.round(np.linalg.norm(v, axis=1), 12)])
    return v[order]


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / count)
    theta = math.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def cone_directions(cone: ConeSpec, count: int | None = None, seed: int = 0) -> np.ndarray:
    """Unit directions sampling K: generators plus interior rays."""
    n = cone.n
    if n == 1:
        signs = np.array([[1.0], [-1.0]])
        return signs[cone.contains(signs)]
    count = count or (72 if n == 2 else 400)
    if n == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        pool = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    elif n == 3:
        pool = _fibonacci_sphere(count)
    else:
        pool = np.random.default_rng(seed).normal(size=(count, n))
        pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    dirs = [pool[cone.contains(pool)]]
    if not cone.full_space:
        G = cone.matrix
        dirs.append(G)
        if len(G) > 1:
            w = qmc.Halton(d=len(G), seed=seed).random(count)
            comb = w @ G
            nrm = np.linalg.norm(comb, axis=1)
            comb = comb[nrm > 1e-9] / nrm[nrm > 1e-9, None]
            dirs.append(comb[cone.contains(comb)])
    else:
        dirs.append(np.vstack([np.eye(n), -np.eye(n)]))
    d = np.vstack(dirs)
    return np.unique(np.round(d, 14), axis=0)


@dataclass
class ImpulseCandidateSet:
    """Finite sample of the truncated cone ``{xi in K : |xi| <= r_max}``.

    Attributes
    ----------
    directions : ndarray (d, n)
        Unit vectors in K.
    magnitudes : ndarray (m,)
        Sorted magnitudes in ``[0, r_max]``: 0, a geometric ladder and a
        uniform ladder of spacing ``step``.
    r_max : float
    step : float
        Uniform magnitude spacing, the resolution of the candidate search.
    """

    directions: np.ndarray
    magnitudes: np.ndarray
    r_max: float
    step: float

    @classmethod
    def build(cls, cone: ConeSpec, r_max: float, step: float | None = None, levels: int = 64,
              n_dirs: int | None = None, seed: int = 0) -> "ImpulseCandidateSet":
        if r_max <= 0:
            raise ValueError("r_max must be positive")
        step = step or r_max / (1000 if cone.n == 1 else 100)
        geo = r_max * np.geomspace(1e-4, 1.0, levels) if levels > 0 else np.zeros(0)
        uni = np.arange(0.0, r_max + 0.5 * step, step)
        uni = uni[uni <= r_max * (1 + 1e-12)]
        mags = np.unique(np.concatenate([[0.0], geo, uni, [r_max]]))
        return cls(cone_directions(cone, n_dirs, seed), mags, float(r_max), float(step))

    @classmethod
    def for_spec(cls, spec: ProblemSpec, radius: float, step: float | None = None, levels: int = 64,
                 n_dirs: int | None = None, cap: float | None = None, seed: int = 0) -> "ImpulseCandidateSet":
        """Candidates covering the a priori impulse bound for all ``|x| <= radius``."""
        r_max = impulse_radius(spec, radius, seed=seed)
        if cap is not None:
            r_max = min(r_max, cap)
        return cls.build(spec.cone, r_max, step, levels, n_dirs, seed)

    @cached_property
    def vectors(self) -> np.ndarray:
        v = (self.directions[:, None, :] * self.magnitudes[None, :, None]).reshape(-1, self.directions.shape[1])
        return _sort_vectors(np.vstack([np.zeros((1, v.shape[1])), v]))

    @cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    def __len__(self) -> int:
        return len(self.vectors)


def lattice_offsets(grid: SpatialGrid, cone: ConeSpec, r_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer node offsets whose displacement lies in K with norm ``<= r_max``.

    Returns
    -------
    steps : ndarray (m, n) of int
    vectors : ndarray (m, n)
        Sorted by norm then lexicographically; the zero offset comes first.
    """
    h = grid.spacing
    reach = np.minimum(np.floor(r_max / h + 1e-9).astype(int), np.array(grid.cells))
    ranges = [np.arange(-r, r + 1) for r in reach]
    mesh = np.meshgrid(*ranges, indexing="ij")
    steps = np.stack([m.ravel() for m in mesh], axis=1)
    vec = steps * h
    keep = (np.linalg.norm(vec, axis=1) <= r_max * (1 + 1e-12)) & cone.contains(vec)
    steps, vec = steps[keep], vec[keep]
    keys = [vec[:, k] for k in range(vec.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys + [np.round(np.linalg.norm(vec, axis=1), 12)])
    return steps[order], vec[order]


def _chunks(rows: int, width: int):
    size = max(1, CHUNK // max(width, 1))
    for a in range(0, rows, size):
        yield slice(a, min(rows, a + size))


def _as_points(spec: ProblemSpec, x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, spec.dimension)


@dataclass
class MinImpulse:
    xi: np.ndarray
    norm: float


INFEASIBLE = None


def _default_candidates(spec: ProblemSpec, x: np.ndarray, r_max: float | None) -> ImpulseCandidateSet:
    from .model import _param_scale

    r = r_max or 4.0 * (1.0 + float(np.max(np.linalg.norm(x, axis=-1)))) + 2.0 * _param_scale(spec.target.params)
    return ImpulseCandidateSet.build(spec.cone, r)


def first_feasible(spec: ProblemSpec, xs: np.ndarray, cands: ImpulseCandidateSet) -> np.ndarray:
    """Index of the smallest candidate moving each point into the closed target (-1 if none)."""
    V = cands.vectors
    out = np.full(len(xs), -1, dtype=np.int64)
    for sl in _chunks(len(xs), len(V)):
        y = xs[sl, None, :] + V[None, :, :]
        ok = spec.target.in_closure(y)
        hit = ok.any(axis=1)
        out[sl] = np.where(hit, np.argmax(ok, axis=1), -1)
    return out


def min_impulse_to_target(spec: ProblemSpec, x, candidates: ImpulseCandidateSet | None = None,
                          r_max: float | None = None):
    """Smallest candidate ``xi`` in K with ``x + xi`` in the closed target.

    Returns :class:`MinImpulse`, or ``INFEASIBLE`` (``None``) when no
    candidate reaches the target.
    """
    x = _as_points(spec, x)
    if spec.target.in_closure(x)[0]:
        return MinImpulse(np.zeros(spec.dimension), 0.0)
    cands = candidates or _default_candidates(spec, x, r_max)
    k = int(first_feasible(spec, x, cands)[0])
    if k < 0:
        return INFEASIBLE
    return MinImpulse(cands.vectors[k].copy(), float(cands.norms[k]))


@dataclass
class NuTable:
    radii: np.ndarray
    nu: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def condition_holds(self) -> bool:
        return not self.violations

    def to_csv(self, path, header: str | None = None) -> None:
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("r,nu\n")
            for r, v in zip(self.radii, self.nu):
                fh.write(f"{r!r},{v!r}\n")


def sphere_points(n: int, r: float, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[r], [-r]])
    if n == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        return r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts = _fibonacci_sphere(count) if n == 3 else np.random.default_rng(0).normal(size=(count, n))
    return r * pts / np.linalg.norm(pts, axis=1, keepdims=True)


def estimate_nu(spec: ProblemSpec, radii, samples: int = 64, candidates: ImpulseCandidateSet | None = None,
                r_max: float | None = None) -> NuTable:
    """Sampled ``nu(r)``: worst minimal impulse norm over ``|x| = r``, made nondecreasing."""
    radii = np.asarray(radii, dtype=float)
    pts_all = [sphere_points(spec.dimension, r, samples) for r in radii]
    if candidates is None:
        candidates = _default_candidates(spec, np.vstack(pts_all), r_max)
    nu = np.zeros(len(radii))
    violations = []
    for k, pts in enumerate(pts_all):
        inside = spec.target.in_closure(pts)
        idx = first_feasible(spec, pts, candidates)
        idx[inside] = 0
        for p in pts[idx < 0]:
            violations.append(p.copy())
        good = idx >= 0
        nu[k] = float(np.max(np.where(inside[good], 0.0, candidates.norms[idx[good]]))) if good.any() else np.inf
    return NuTable(radii, np.maximum.accumulate(nu), violations)


def value_bound(spec: ProblemSpec, radius: float, samples: int = 32, seed: int = 0) -> float:
    """Sampled ``nu_bar``: cost of flowing freely then making one terminal impulse, max over ``|x| <= radius``.

    States that cannot reach the target this way are skipped.
    """
    n, T = spec.dimension, spec.horizon
    rng = np.random.default_rng(seed)
    pts = [np.zeros((1, n))]
    for r in np.linspace(radius / 4, radius, 4):
        pts.append(sphere_points(n, r, samples))
    pts.append(rng.uniform(-radius, radius, size=(samples, n)) / max(1.0, math.sqrt(n)))
    xs = np.vstack(pts)
    steps = 50
    dt = T / steps
    run = np.zeros(len(xs))
    for k in range(steps):
        s = k * dt
        g0 = spec.g(s, xs)
        xs = flow_no_impulse(spec, s, xs, s + dt, dt)
        run += 0.5 * dt * (g0 + spec.g(s + dt, xs))
    cands = _default_candidates(spec, xs, None)
    vals, _ = intervention_terminal_many(spec, xs, cands)
    h = spec.terminal_cost(xs)
    vals = np.where(spec.target.in_closure(xs), np.minimum(vals, h), vals) + run
    finite = vals[np.isfinite(vals)]
    return float(np.max(finite)) if len(finite) else 0.0


def impulse_radius(spec: ProblemSpec, radius: float, samples: int = 32, seed: int = 0) -> float:
    """Conservative impulse radius ``((nu_bar + 1) / alpha0(T))^(1/beta)`` for ``|x| <= radius``."""
    nu_bar = value_bound(spec, radius, samples, seed)
    a0 = float(spec.ell.alpha0(np.array(spec.horizon)))
    return float(((nu_bar + 1.0) / a0) ** (1.0 / spec.ell.beta))


def intervention_terminal_many(spec: ProblemSpec, xs, cands: ImpulseCandidateSet, open_target: bool = False):
    """Vectorized ``N^D[h]``: values and argmin candidate indices (-1 when infeasible)."""
    xs = _as_points(spec, xs)
    V = cands.vectors
    T = spec.horizon
    val = np.full(len(xs), np.inf)
    arg = np.full(len(xs), -1, dtype=np.int64)
    member = spec.target.in_open if open_target else spec.target.in_closure
    for sl in _chunks(len(xs), len(V)):
        x = xs[sl, None, :]
        y = x + V[None, :, :]
        cost = np.where(member(y), spec.terminal_cost(y) + spec.ell(T, x, V[None, :, :]), np.inf)
        k = np.argmin(cost, axis=1)
        best = cost[np.arange(len(k)), k]
        val[sl] = best
        arg[sl] = np.where(np.isfinite(best), k, -1)
    return val, arg


@dataclass
class InterventionResult:
    value: float
    xi: np.ndarray | None
    landing: np.ndarray | None


def intervention_terminal(spec: ProblemSpec, x, candidates: ImpulseCandidateSet | None = None) -> InterventionResult:
    """``N^D[h](x)``: cheapest single impulse landing in the closed target, ``+inf`` if none."""
    x = _as_points(spec, x)
    cands = candidates or ImpulseCandidateSet.for_spec(spec, float(np.linalg.norm(x)) + 1.0)
    val, arg = intervention_terminal_many(spec, x, cands)
    if arg[0] < 0:
        return InterventionResult(math.inf, None, None)
    xi = cands.vectors[arg[0]].copy()
    return InterventionResult(float(val[0]), xi, x[0] + xi)


@dataclass
class ObstacleValue:
    value: float
    branch: str
    xi: np.ndarray | None


def terminal_obstacle_many(spec: ProblemSpec, xs, cands: ImpulseCandidateSet):
    """Vectorized ``h^D``: values, branch codes (0 no impulse, 1 impulse, -1 infeasible), argmins."""
    xs = _as_points(spec, xs)
    nd, arg = intervention_terminal_many(spec, xs, cands)
    h = spec.terminal_cost(xs)
    inside = spec.target.in_closure(xs)
    stay = inside & (h <= nd)
    val = np.where(stay, h, nd)
    branch = np.where(stay, 0, np.where(np.isfinite(nd), 1, -1))
    return val, branch, np.where(stay, -1, arg)


def terminal_obstacle(spec: ProblemSpec, x, candidates: ImpulseCandidateSet | None = None) -> ObstacleValue:
    """``h^D(x)`` with the winning branch: ``"no_impulse"``, ``"impulse"`` or ``"infeasible"``."""
    x = _as_points(spec, x)
    cands = candidates or ImpulseCandidateSet.for_spec(spec, float(np.linalg.norm(x)) + 1.0)
    val, branch, arg = terminal_obstacle_many(spec, x, cands)
    name = {0: "no_impulse", 1: "impulse", -1: "infeasible"}[int(branch[0])]
    xi = cands.vectors[arg[0]].copy() if arg[0] >= 0 else None
    return ObstacleValue(float(val[0]), name, xi)


def export_obstacle_csv(spec: ProblemSpec, xs, cands: ImpulseCandidateSet, path, header: str | None = None) -> None:
    xs = _as_points(spec, xs)
    val, branch, _ = terminal_obstacle_many(spec, xs, cands)
    names = {0: "no_impulse", 1: "impulse", -1: "infeasible"}
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join([f"x{i+1}" for i in range(spec.dimension)] + ["hD", "branch"]) + "\n")
        for x, v, b in zip(xs, val, branch):
            fh.write(",".join([repr(float(c)) for c in x] + [repr(float(v)), names[int(b)]]) + "\n")


# ----------------------------------------------------------------------------
# compatibility of terminal and impulse costs


@dataclass
class CompatibilityEntry:
    x: np.ndarray
    inf_value: float
    h_value: float
    feasible: bool
    holds: bool
    xi: np.ndarray | None


@dataclass
class CompatibilityReport:
    entries: list[CompatibilityEntry]

    @property
    def passed(self) -> bool:
        return all(e.holds for e in self.entries)

    @property
    def violations(self) -> list[CompatibilityEntry]:
        return [e for e in self.entries if not e.holds]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "samples": len(self.entries),
            "violations": [
                {"x": e.x.tolist(), "inf": e.inf_value, "h": e.h_value,
                 "status": "VIOLATED" if e.feasible else "VIOLATED (no feasible impulse)"}
                for e in self.violations[:50]
            ],
        }


def check_compatibility(spec: ProblemSpec, boundary_samples, candidates: ImpulseCandidateSet | None = None,
                        tol: float = 1e-9) -> CompatibilityReport:
    """Test ``inf_{xi in K, x+xi in D} h(x+xi) + l(T,x,xi) < h(x)`` at each sample.

    Samples with no candidate landing in the open target are reported as
    violated, since the inequality cannot be certified there.
    """
    xs = _as_points(spec, boundary_samples)
    if candidates is None:
        candidates = ImpulseCandidateSet.for_spec(spec, float(np.max(np.linalg.norm(xs, axis=1))) + 1.0)
    val, arg = intervention_terminal_many(spec, xs, candidates, open_target=True)
    h = spec.terminal_cost(xs)
    entries = []
    for x, v, a, hv in zip(xs, val, arg, h):
        feasible = a >= 0
        holds = bool(feasible and v < hv - tol)
        entries.append(CompatibilityEntry(x.copy(), float(v), float(hv), bool(feasible), holds,
                                          candidates.vectors[a].copy() if feasible else None))
    return CompatibilityReport(entries)


def boundary_samples(spec: ProblemSpec, lower, upper, count: int = 101) -> np.ndarray:
    """Points of a box lattice lying outside the open target (boundary included)."""
    n = spec.dimension
    per = max(2, int(round(count ** (1.0 / n))))
    axes = [np.linspace(a, b, per) for a, b in zip(np.atleast_1d(lower), np.atleast_1d(upper))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[~spec.target.in_open(pts)]


# ----------------------------------------------------------------------------
# idempotence of the terminal obstacle under unconstrained impulses


@dataclass
class IdempotenceReport:
    max_identity_gap: float
    identity_holds: bool
    chain_margin: float
    chain_holds: bool
    compatibility: CompatibilityReport
    nodes: int

    @property
    def passed(self) -> bool:
        return self.identity_holds and self.chain_holds and self.compatibility.passed

    def to_dict(self) -> dict:
        return {"max_identity_gap": self.max_identity_gap, "identity_holds": self.identity_holds,
                "chain_margin": self.chain_margin, "chain_holds": self.chain_holds,
                "compatibility_passed": self.compatibility.passed, "nodes": self.nodes,
                "passed": self.passed}


def _lattice_intervention(spec: ProblemSpec, grid: SpatialGrid, values: np.ndarray, t: float,
                          steps: np.ndarray, vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``min_o values[x + o] + l(t, x, o)`` over lattice offsets; landings off the grid are skipped."""
    nodes = grid.nodes()
    idx = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=1)
    flat = values.ravel()
    best = np.full(grid.size, np.inf)
    arg = np.full(grid.size, -1, dtype=np.int64)
    cells = np.array(grid.cells)
    for sl in _chunks(len(steps), grid.size):
        tgt = idx[:, None, :] + steps[None, sl, :]
        ok = np.all((tgt >= 0) & (tgt <= cells), axis=-1)
        lin = np.ravel_multi_index(tuple(np.clip(tgt, 0, cells).transpose(2, 0, 1)), grid.shape)
        cost = np.where(ok, flat[lin] + spec.ell(t, nodes[:, None, :], vecs[None, sl, :]), np.inf)
        k = np.argmin(cost, axis=1)
        b = cost[np.arange(grid.size), k]
        better = b < best
        best = np.where(better, b, best)
        arg = np.where(better, k + sl.start, arg)
    return best.reshape(grid.shape), arg.reshape(grid.shape)


def check_idempotence(spec: ProblemSpec, grid: SpatialGrid, candidates: ImpulseCandidateSet | None = None,
                      tol: float | None = None) -> IdempotenceReport:
    """Check ``min{h^D, N^{R^n}[h^D]} = h^D`` and ``N^{R^n}[N^D[h]] >= N^D[h] + delta0`` on a grid.

    The unconstrained operator ranges over lattice offsets of the grid lying
    in K, so landings are exact nodes.  Compatibility is checked on the
    grid nodes outside the open target and reported alongside.
    """
    nodes = grid.nodes()
    if candidates is None:
        candidates = ImpulseCandidateSet.for_spec(spec, float(np.max(np.linalg.norm(nodes, axis=1))) + 1.0)
    tol = tol if tol is not None else 2.0 * candidates.step
    hD, _, _ = terminal_obstacle_many(spec, nodes, candidates)
    nD, _ = intervention_terminal_many(spec, nodes, candidates)
    hD, nD = hD.reshape(grid.shape), nD.reshape(grid.shape)
    steps, vecs = lattice_offsets(grid, spec.cone, grid.diameter)
    nhD, _ = _lattice_intervention(spec, grid, hD, spec.horizon, steps, vecs)
    lhs = np.minimum(hD, nhD)
    fin = np.isfinite(hD)
    gap = float(np.max(np.abs(lhs[fin] - hD[fin]))) if fin.any() else 0.0
    if np.any(np.isfinite(lhs) & ~fin):
        gap = math.inf
    nnD, _ = _lattice_intervention(spec, grid, nD, spec.horizon, steps, vecs)
    fin2 = np.isfinite(nD)
    chain = float(np.min(nnD[fin2] - nD[fin2] - spec.ell.delta0)) if fin2.any() else math.inf
    outside = nodes[~spec.target.in_open(nodes)]
    comp = check_compatibility(spec, outside, candidates)
    return IdempotenceReport(gap, gap <= tol, chain, chain >= -tol, comp, grid.size)
