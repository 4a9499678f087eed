"""Backward dynamic programming for the impulse-control quasi-variational inequality.

Each slice ``V_k`` is the smaller of two branches:

* ``C_k`` (no impulse before ``T``): the characteristic from ``(t_k, x)`` is
  traced to ``T`` with RK4 and the terminal datum is interpolated once at
  its foot.  Tracing all the way avoids the numerical smearing of repeated
  interpolation, which matters where ``V`` is discontinuous.
* ``Z_k`` (some impulse in ``[t_k, T)``): either an impulse now, ``N[V_k]``,
  or a semi-Lagrangian step to ``Z_{k+1}``.  ``Z`` is continuous, so
  interpolating it is harmless.

The continuation is ``W_k = min(C_k, g dt + I[Z_{k+1}](Phi(x)))`` and the
slice solves the obstacle problem ``V_k = min(W_k, N[V_k])`` by fixed-point
iteration.  The intervention operator ``N`` ranges over lattice offsets in
K, so post-impulse states are grid nodes and need no interpolation.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ImpulseControl, rk4_step
from .geometry import lattice_offsets, value_bound
from .grids import SpatialGrid, interpolate
from .model import ProblemSpec

log = logging.getLogger("impulse_qvi")

CONTINUE, JUMP, INFEASIBLE = 0, 1, -1
GATHER_LIMIT = 30_000_000


class LatticeIntervention:
    """``N[v](t, x_i) = min_o v(x_i + o) + l(t, x_i, o)`` over lattice offsets ``o`` in K."""

    def __init__(self, spec: ProblemSpec, grid: SpatialGrid, r_max: float):
        self.spec, self.grid = spec, grid
        self.steps, self.vectors = lattice_offsets(grid, spec.cone, r_max)
        self.r_max = float(r_max)
        self.nodes = grid.nodes()
        self.idx = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=1)
        self._lin = None
        if grid.size * len(self.steps) <= GATHER_LIMIT:
            self._lin = self._gather(slice(0, len(self.steps)))
        self._cost_t, self._cost = None, None

    def _gather(self, sl: slice) -> np.ndarray:
        cells = np.array(self.grid.cells)
        tgt = self.idx[:, None, :] + self.steps[None, sl, :]
        ok = np.all((tgt >= 0) & (tgt <= cells), axis=-1)
        lin = np.ravel_multi_index(tuple(np.clip(tgt, 0, cells).transpose(2, 0, 1)), self.grid.shape)
        return np.where(ok, lin, -1)

    def _costs(self, t: float, sl: slice) -> np.ndarray:
        return self.spec.ell(t, self.nodes[:, None, :], self.vectors[None, sl, :])

    def apply(self, values: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Return ``N[values]`` and the argmin offset index per node (-1 if ``+inf``)."""
        flat = np.append(np.asarray(values, dtype=float).ravel(), np.inf)
        G, m = self.grid.size, len(self.steps)
        if self._lin is not None:
            if self._cost_t != t:
                self._cost_t, self._cost = t, self._costs(t, slice(0, m))
            tot = flat[self._lin] + self._cost
            arg = np.argmin(tot, axis=1)
            best = tot[np.arange(G), arg]
        else:
            best = np.full(G, np.inf)
            arg = np.zeros(G, dtype=np.int64)
            width = max(1, GATHER_LIMIT // (4 * G))
            for a in range(0, m, width):
                sl = slice(a, min(m, a + width))
                tot = flat[self._gather(sl)] + self._costs(t, sl)
                k = np.argmin(tot, axis=1)
                b = tot[np.arange(G), k]
                better = b < best
                best = np.where(better, b, best)
                arg = np.where(better, k + a, arg)
        arg = np.where(np.isfinite(best), arg, -1)
        return best.reshape(self.grid.shape), arg.reshape(self.grid.shape)


@dataclass
class ValueGrid:
    """Time-sliced value samples with policy and the intermediate branches of the scheme.

    Arrays have a leading time axis of length ``M + 1``; ``+inf`` marks
    infeasible nodes.  ``policy`` holds ``CONTINUE`` (0), ``JUMP`` (1) or
    ``INFEASIBLE`` (-1) and ``xi`` the impulse at JUMP nodes (NaN elsewhere).
    """

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    policy: np.ndarray
    xi: np.ndarray
    intervention: np.ndarray
    continuation: np.ndarray
    no_impulse: np.ndarray
    impulse_branch: np.ndarray
    mode: str = "constrained"
    offset_radius: float = 0.0
    iterations: np.ndarray | None = None
    flagged: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    ARRAYS = ("times", "values", "policy", "xi", "intervention", "continuation",
              "no_impulse", "impulse_branch", "iterations")

    @property
    def M(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def slice_index(self, t: float) -> int:
        k = (t - self.times[0]) / self.dt
        if abs(k - round(k)) > 1e-6:
            raise ValueError(f"t={t} is not a time node")
        return int(round(k))

    def value_at(self, t: float, x) -> np.ndarray:
        k = self.slice_index(t)
        outside = "inf" if self.mode == "constrained" else "clamp"
        return interpolate(self.grid, self.values[k], np.atleast_2d(np.asarray(x, float)), outside)

    def save(self, path) -> None:
        meta = dict(self.meta, grid=self.grid.to_dict(), mode=self.mode, offset_radius=self.offset_radius,
                    flagged=list(self.flagged))
        np.savez_compressed(path, meta=np.array(json.dumps(meta, sort_keys=True)),
                            **{k: getattr(self, k) for k in self.ARRAYS})

    @classmethod
    def load(cls, path) -> "ValueGrid":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in cls.ARRAYS}
        grid = SpatialGrid.from_dict(meta.pop("grid"))
        mode = meta.pop("mode")
        radius = meta.pop("offset_radius")
        flagged = meta.pop("flagged")
        return cls(grid=grid, mode=mode, offset_radius=radius, flagged=flagged, meta=meta, **arrays)

    def to_csv(self, path, header: str | None = None, slices=None) -> None:
        nodes = self.grid.nodes()
        n = nodes.shape[1]
        names = {CONTINUE: "CONTINUE", JUMP: "JUMP", INFEASIBLE: "INFEASIBLE"}
        ks = range(len(self.times)) if slices is None else slices
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(",".join(["t"] + [f"x{i+1}" for i in range(n)] + ["V", "policy"]
                              + [f"xi{i+1}" for i in range(n)]) + "\n")
            for k in ks:
                t = repr(float(self.times[k]))
                v = self.values[k].ravel()
                pol = self.policy[k].ravel()
                xi = self.xi[k].reshape(-1, n)
                for i in range(len(nodes)):
                    row = [t] + [repr(float(c)) for c in nodes[i]] + [repr(float(v[i])), names[int(pol[i])]]
                    row += ["" if not np.isfinite(c) else repr(float(c)) for c in xi[i]]
                    fh.write(",".join(row) + "\n")


@dataclass
class SolverOptions:
    """Knobs of :func:`solve`.

    Attributes
    ----------
    t0 : float
        Initial time of the time grid.
    offset_radius : float, optional
        Largest impulse norm searched; defaults to the smaller of the grid
        diameter and the a priori impulse bound.
    tol_fp : float, optional
        Fixed-point tolerance, default ``1e-10`` times the value scale.
    max_iter : int, optional
        Obstacle iteration cap, default ``ceil((nu_bar + 1) / l0)``.
    terminal : ndarray, optional
        Replacement terminal slice (used by comparison tests).
    """

    t0: float = 0.0
    offset_radius: float | None = None
    tol_fp: float | None = None
    max_iter: int | None = None
    terminal: np.ndarray | None = None


def _terminal_slice(spec: ProblemSpec, grid: SpatialGrid, op: LatticeIntervention):
    """Lattice ``h^D`` with its branch: landing nodes must lie in the closed target."""
    nodes = op.nodes
    inside = spec.target.in_closure(nodes).reshape(grid.shape)
    h = spec.terminal_cost(nodes).reshape(grid.shape)
    nd, arg = op.apply(np.where(inside, h, np.inf), spec.horizon)
    stay = inside & (h <= nd)
    hD = np.where(stay, h, nd)
    return hD, np.where(stay, -1, arg)


def _trace(spec: ProblemSpec, nodes: np.ndarray, times: np.ndarray):
    """Trace every (slice, node) characteristic to ``T``.

    Returns the foot positions at ``T``, the running cost along each
    characteristic, the one-step feet ``Phi_dt`` and the one-step running costs.
    """
    M, (G, n) = len(times) - 1, nodes.shape
    pos = np.broadcast_to(nodes, (M, G, n)).copy()
    run = np.zeros((M, G))
    foot1 = np.empty((M, G, n))
    run1 = np.empty((M, G))
    for j in range(M):
        act = pos[: j + 1].reshape(-1, n)
        h = times[j + 1] - times[j]
        g0 = spec.g(times[j], act)
        new = rk4_step(spec.f, times[j], act, h)
        inc = 0.5 * h * (g0 + spec.g(times[j + 1], new))
        if not np.all(np.isfinite(new)):
            raise FloatingPointError(f"characteristic tracing overflowed near t={times[j]:.6g}")
        pos[: j + 1] = new.reshape(j + 1, G, n)
        run[: j + 1] += inc.reshape(j + 1, G)
        foot1[j] = pos[j]
        run1[j] = run[j]
    return pos, run, foot1, run1


def solve(spec: ProblemSpec, grid: SpatialGrid, steps: int, mode: str = "constrained",
          options: SolverOptions | None = None) -> ValueGrid:
    """Solve the quasi-variational inequality backward on ``grid`` with ``steps`` time steps.

    Parameters
    ----------
    spec : ProblemSpec
    grid : SpatialGrid
    steps : int
        Number of time steps ``M`` on ``[t0, T]``.
    mode : {"constrained", "unconstrained"}
        Constrained mode treats states outside the grid box as infeasible
        (``+inf``); unconstrained mode extrapolates by the boundary value
        and uses the terminal datum ``min{h^D, N[h^D]}``.
    options : SolverOptions, optional

    Returns
    -------
    ValueGrid
    """
    if mode not in ("constrained", "unconstrained"):
        raise ValueError(f"unknown mode {mode!r}")
    if grid.ndim != spec.dimension:
        raise ValueError("grid dimension does not match the problem")
    opts = options or SolverOptions()
    clock = time.perf_counter()
    T, M = spec.horizon, int(steps)
    if M < 1:
        raise ValueError("need at least one time step")
    times = np.linspace(opts.t0, T, M + 1)
    nodes = grid.nodes()
    shape = grid.shape
    outside = "inf" if mode == "constrained" else "clamp"

    radius = float(np.max(np.linalg.norm(nodes, axis=1)))
    nu_bar = value_bound(spec, radius)
    a0 = float(spec.ell.alpha0(np.array(T)))
    bound = ((nu_bar + 1.0) / a0) ** (1.0 / spec.ell.beta)
    r_off = opts.offset_radius or min(grid.diameter, bound)
    op = LatticeIntervention(spec, grid, r_off)
    cap = opts.max_iter or max(1, int(math.ceil((nu_bar + 1.0) / spec.ell.l0)))

    hD, hD_arg = _terminal_slice(spec, grid, op)
    if opts.terminal is not None:
        terminal = np.asarray(opts.terminal, dtype=float).reshape(shape)
        hD_arg = np.full(shape, -1)
    elif mode == "unconstrained":
        nh, narg = op.apply(hD, T)
        terminal = np.minimum(hD, nh)
        hD_arg = np.where(nh < hD, narg, hD_arg)
    else:
        terminal = hD
    finite_T = terminal[np.isfinite(terminal)]
    scale = max(1.0, float(np.max(np.abs(finite_T)))) if finite_T.size else 1.0
    tol_fp = opts.tol_fp if opts.tol_fp is not None else 1e-10 * scale

    pos, run, foot1, run1 = _trace(spec, nodes, times)
    if mode == "unconstrained" and not np.all(grid.contains(pos.reshape(-1, grid.ndim))):
        log.warning("characteristics leave the grid box; using boundary extrapolation")
    C = np.empty((M + 1,) + shape)
    C[M] = terminal
    C[:M] = (run + interpolate(grid, terminal, pos, outside)).reshape((M,) + shape)

    V = np.empty((M + 1,) + shape)
    Nv = np.full((M + 1,) + shape, np.inf)
    W = np.empty((M + 1,) + shape)
    Z = np.full((M + 1,) + shape, np.inf)
    policy = np.zeros((M + 1,) + shape, dtype=np.int8)
    xi = np.full((M + 1,) + shape + (grid.ndim,), np.nan)
    iters = np.zeros(M + 1, dtype=np.int64)
    flagged = []

    V[M] = W[M] = terminal
    jmp = hD_arg >= 0
    policy[M] = np.where(np.isfinite(terminal), np.where(jmp, JUMP, CONTINUE), INFEASIBLE)
    xi[M][jmp] = op.vectors[hD_arg[jmp]]
    Nv[M], _ = op.apply(terminal, T)

    for k in range(M - 1, -1, -1):
        t = times[k]
        wz = run1[k].reshape(shape) + interpolate(grid, Z[k + 1], foot1[k], outside).reshape(shape)
        U0 = np.minimum(C[k], wz)
        U = U0
        converged = False
        for j in range(1, cap + 1):
            N, arg = op.apply(U, t)
            U_new = np.minimum(U0, N)
            both = np.isfinite(U_new) & np.isfinite(U)
            diff = np.abs(np.where(both, U_new, 0.0) - np.where(both, U, 0.0))
            same_inf = np.array_equal(np.isfinite(U_new), np.isfinite(U))
            U = U_new
            iters[k] = j
            if same_inf and (diff.size == 0 or float(np.max(diff)) <= tol_fp):
                converged = True
                break
        N, arg = op.apply(U, t)
        if not converged:
            flagged.append(int(k))
            log.warning("obstacle iteration hit its cap of %d at t=%.6g", cap, t)
            U = np.minimum(U, N)
        V[k], Nv[k], W[k] = U, N, U0
        Z[k] = np.minimum(wz, N)
        jump = N < U0
        policy[k] = np.where(np.isfinite(U), np.where(jump, JUMP, CONTINUE), INFEASIBLE)
        sel = jump & (arg >= 0)
        xi[k][sel] = op.vectors[arg[sel]]

    meta = {
        "spec_hash": spec.spec_hash(),
        "steps": M,
        "tol_fp": tol_fp,
        "iteration_cap": cap,
        "nu_bar": nu_bar,
        "offsets": int(len(op.steps)),
        "seconds": time.perf_counter() - clock,
    }
    return ValueGrid(grid, times, V, policy, xi, Nv, W, C, Z, mode, float(r_off), iters, flagged, meta)


def intervention(spec: ProblemSpec, grid: SpatialGrid, values: np.ndarray, t: float, x,
                 candidates=None, outside: str = "inf") -> tuple[float, np.ndarray | None]:
    """Pointwise ``N[v](t, x) = min_xi I[v](x + xi) + l(t, x, xi)`` over a candidate set.

    ``I`` is multilinear interpolation with strict ``+inf`` propagation; the
    argmin tie-break is smallest ``|xi|``, then lexicographic.
    """
    from .geometry import ImpulseCandidateSet

    x = np.asarray(x, dtype=float).reshape(1, spec.dimension)
    cands = candidates or ImpulseCandidateSet.build(spec.cone, grid.diameter, step=float(np.min(grid.spacing)))
    V = cands.vectors
    tot = interpolate(grid, values, x + V, outside) + spec.ell(t, x, V)
    k = int(np.argmin(tot))
    if not np.isfinite(tot[k]):
        return math.inf, None
    return float(tot[k]), V[k].copy()


@dataclass
class ComparisonReport:
    terminal_identical: bool
    max_abs_diff: float
    differing_nodes: int
    finite_mismatch: int
    compared_nodes: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_solutions(vc: ValueGrid, vu: ValueGrid, tol: float = 1e-9) -> ComparisonReport:
    a, b = vc.values, vu.values
    both = np.isfinite(a) & np.isfinite(b)
    d = np.abs(np.where(both, a, 0.0) - np.where(both, b, 0.0))
    same_T = bool(np.array_equal(a[-1], b[-1]))
    return ComparisonReport(same_T, float(np.max(d)) if both.any() else 0.0, int(np.sum(d > tol)),
                            int(np.sum(np.isfinite(a) != np.isfinite(b))), int(np.sum(both)))


def solve_unconstrained_compare(spec: ProblemSpec, grid: SpatialGrid, steps: int,
                                options: SolverOptions | None = None):
    """Solve both modes on the same grid and report how far they differ.

    The terminal slices are compared bitwise; the interior discrepancy is
    measured and reported without any assertion.
    """
    vc = solve(spec, grid, steps, "constrained", options)
    vu = solve(spec, grid, steps, "unconstrained", options)
    return compare_solutions(vc, vu), vc, vu


class SynthesisIncomplete(RuntimeError):
    def __init__(self, message: str, partial: ImpulseControl):
        self.partial = partial
        super().__init__(message)


def synthesize_control(spec: ProblemSpec, vg: ValueGrid, t: float, x, jump_tol: float | None = None,
                       max_impulses: int | None = None) -> ImpulseControl:
    """Build a feedback impulse control from a solved value grid.

    Along the free flow the state is compared at each time node: an impulse
    is made only when jumping beats continuing by more than ``jump_tol``
    (default ``dx + dt``), so near-ties defer to later impulses, which the
    monotone impulse cost favors.  At ``T`` the terminal datum decides.
    """
    grid = vg.grid
    n = spec.dimension
    y = np.asarray(x, dtype=float).reshape(n).copy()
    times = vg.times
    dt = vg.dt
    tol = jump_tol if jump_tol is not None else float(np.max(grid.spacing)) + dt
    cap = max_impulses or int(vg.meta.get("iteration_cap", 10)) + 1
    outside = "inf" if vg.mode == "constrained" else "clamp"
    _, offs = lattice_offsets(grid, spec.cone, vg.offset_radius)
    taus, xis = [], []

    def partial():
        return ImpulseControl(tuple(taus), tuple(xis), t)

    k = int(math.ceil((t - times[0]) / dt - 1e-9))
    if k > vg.M:
        raise ValueError("t lies beyond the horizon")
    s = t
    if times[k] > t:
        y = rk4_step(spec.f, t, y[None, :], times[k] - t)[0]
        s = times[k]
    while True:
        if not grid.contains(y[None, :])[0] and vg.mode == "constrained":
            raise SynthesisIncomplete(f"state left the grid at t={s:.6g}", partial())
        if k == vg.M:
            break
        cont = float(interpolate(grid, vg.continuation[k], y[None, :], outside)[0])
        jv = interpolate(grid, vg.values[k], y + offs, outside) + spec.ell(s, y[None, :], offs)
        o = int(np.argmin(jv))
        if len(taus) < cap and np.isfinite(jv[o]) and jv[o] < cont - tol:
            taus.append(s)
            xis.append(offs[o].copy())
            y = y + offs[o]
        y = rk4_step(spec.f, s, y[None, :], times[k + 1] - s)[0]
        k += 1
        s = times[k]
    h = float(spec.terminal_cost(y[None, :])[0])
    inside = bool(spec.target.in_closure(y[None, :])[0])
    land = y + offs
    ok = spec.target.in_closure(land)
    jv = np.where(ok, spec.terminal_cost(land) + spec.ell(spec.horizon, y[None, :], offs), np.inf)
    o = int(np.argmin(jv))
    if not inside or jv[o] < h:
        if not np.isfinite(jv[o]):
            raise SynthesisIncomplete("no impulse reaches the target at T", partial())
        taus.append(spec.horizon)
        xis.append(offs[o].copy())
    return partial()
