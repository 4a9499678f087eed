"""Cost functional of an impulse control and an exhaustive-search reference value."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .dynamics import ImpulseControl, integrate, rk4_step
from .geometry import ImpulseCandidateSet, value_bound
from .model import ProblemSpec

CHUNK = 2_000_000


@dataclass
class CostBreakdown:
    running: float
    terminal: float
    impulse_total: float
    per_impulse: list = field(default_factory=list)
    feasible: bool = True

    @property
    def total(self) -> float:
        if not self.feasible:
            return math.inf
        return self.running + self.terminal + self.impulse_total

    def to_dict(self) -> dict:
        return {
            "running": self.running,
            "terminal": self.terminal,
            "impulse_total": self.impulse_total,
            "per_impulse": [
                {"tau": tau, "pre_state": list(map(float, pre)), "xi": list(map(float, xi)), "cost": c}
                for tau, pre, xi, c in self.per_impulse
            ],
            "feasible": self.feasible,
            "total": self.total if self.feasible else None,
        }


def _segment_integral(spec: ProblemSpec, s: np.ndarray, x: np.ndarray) -> float:
    if len(s) < 2:
        return 0.0
    return float(simpson(spec.g(s, x), x=s))


def evaluate_cost(spec: ProblemSpec, t: float, x, ctrl: ImpulseControl | None = None,
                  step: float | None = None) -> CostBreakdown:
    """Running, terminal and impulse costs of ``ctrl`` from ``(t, x)``.

    The running cost uses composite Simpson quadrature on each continuous
    piece of the integration mesh.  Impulse costs are charged at the state
    just before each jump, so simultaneous impulses see chained pre-states.
    The total is ``+inf`` when the terminal state misses the closed target.
    """
    ctrl = ctrl or ImpulseControl.trivial(t)
    traj = integrate(spec, t, x, ctrl, step)
    running = sum(_segment_integral(spec, s, xs) for s, xs in traj.segments())
    per = []
    for j in traj.jumps:
        c = float(spec.ell(j.tau, j.pre, j.xi))
        per.append((j.tau, j.pre, j.xi, c))
    feasible = bool(spec.target.in_closure(traj.terminal))
    terminal = float(spec.terminal_cost(traj.terminal))
    return CostBreakdown(running, terminal, float(sum(p[3] for p in per)), per, feasible)


@dataclass
class EnumerationBudget:
    """Limits of the exhaustive search.

    Attributes
    ----------
    n_max : int, optional
        Maximal impulse count; defaults to the a priori bound ``(nu_bar + 1) / l0``.
    time_points : int
        Interior impulse times; the grid also contains the initial time and ``T``.
    candidates : ImpulseCandidateSet, optional
    step : float, optional
        Magnitude spacing used when ``candidates`` is not given.
    max_evaluations : float
        Refuse searches whose worst-case size exceeds this.
    dt : float, optional
        Integration step for the flow between impulse times, default ``T / 200``.
    """

    n_max: int | None = None
    time_points: int = 9
    candidates: ImpulseCandidateSet | None = None
    step: float | None = None
    max_evaluations: float = 1e8
    dt: float | None = None


class BudgetExceeded(RuntimeError):
    def __init__(self, estimate: float, limit: float):
        self.estimate = estimate
        super().__init__(f"enumeration would need about {estimate:.3g} evaluations (limit {limit:.3g})")


@dataclass
class BruteForceResult:
    value: float
    control: ImpulseControl | None
    evaluations: int
    estimate: float


def enumeration_size(n_times: int, n_cands: int, n_max: int) -> float:
    """Worst-case count of (nondecreasing time tuple, vector tuple) pairs."""
    return float(sum(math.comb(n_times + k - 1, k) * float(n_cands) ** k for k in range(n_max + 1)))


def _sweep(spec: ProblemSpec, times: np.ndarray, tidx: np.ndarray, states: np.ndarray, dt: float):
    """States and accumulated running cost of each node at every later time point."""
    B, m = len(tidx), len(times)
    S = np.full((B, m, spec.dimension), np.nan)
    R = np.full((B, m), np.nan)
    cur = np.zeros_like(states)
    acc = np.zeros(B)
    for j in range(m):
        start = tidx == j
        cur[start] = states[start]
        acc[start] = 0.0
        live = tidx <= j
        S[live, j] = cur[live]
        R[live, j] = acc[live]
        if j == m - 1 or not live.any():
            continue
        a, b = times[j], times[j + 1]
        k = max(2, int(math.ceil((b - a) / dt - 1e-9)))
        k += k % 2
        h = (b - a) / k
        y = cur[live]
        gs = [spec.g(a, y)]
        for q in range(k):
            y = rk4_step(spec.f, a + q * h, y, h)
            gs.append(spec.g(a + (q + 1) * h, y))
        cur[live] = y
        acc[live] += simpson(np.array(gs), dx=h, axis=0)
    return S, R


def _dedup(tidx, states, cost, parent, cidx, quantum: float = 1e-9):
    """Keep the cheapest node among those sharing a time index and (quantized) state.

    Nodes with the same time and state have the same cost-to-go, so dropping
    the costlier duplicates leaves the minimum unchanged.
    """
    if len(tidx) == 0:
        return tidx, states, cost, parent, cidx
    q = np.round(states / quantum)
    if states.shape[1] == 1 and np.all(np.abs(q) < 2.0**40):
        key = (tidx.astype(np.int64) << 42) + (q[:, 0].astype(np.int64) + (1 << 41))
        order = np.lexsort((cost, key))
        ks = key[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = ks[1:] != ks[:-1]
    else:
        keys = np.column_stack([tidx.astype(float), q])
        order = np.lexsort((cost,) + tuple(keys[:, k] for k in range(keys.shape[1] - 1, -1, -1)))
        ks = keys[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = np.any(ks[1:] != ks[:-1], axis=1)
    sel = order[first]
    return tidx[sel], states[sel], cost[sel], parent[sel], cidx[sel]


def brute_force_value(spec: ProblemSpec, t: float, x, budget: EnumerationBudget | None = None) -> BruteForceResult:
    """Exhaustive minimum of the cost over a finite family of impulse controls.

    Controls have at most ``n_max`` impulses, times on a coarse grid and
    vectors in a candidate set.  Because every cost term is nonnegative, a
    partial control whose cost already reaches the incumbent is pruned,
    which leaves the minimum unchanged.
    """
    budget = budget or EnumerationBudget()
    T = spec.horizon
    x = np.asarray(x, dtype=float).reshape(spec.dimension)
    times = np.unique(np.concatenate([[t], np.linspace(t, T, budget.time_points + 2), [T]]))
    cands = budget.candidates or ImpulseCandidateSet.for_spec(spec, float(np.linalg.norm(x)) + 1.0, budget.step)
    V, norms = cands.vectors, cands.norms
    if budget.n_max is None:
        n_max = int(math.ceil((value_bound(spec, float(np.linalg.norm(x)) + 1.0) + 1.0) / spec.ell.l0))
    else:
        n_max = int(budget.n_max)
    estimate = enumeration_size(len(times), len(V), n_max)
    if estimate > budget.max_evaluations:
        raise BudgetExceeded(estimate, budget.max_evaluations)
    dt = budget.dt or spec.horizon / 200.0
    beta, l0 = spec.ell.beta, spec.ell.l0

    tidx = np.array([0])
    states = x[None, :]
    cost = np.zeros(1)
    parents: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    best, best_leaf, evaluations = math.inf, None, 0
    for level in range(n_max + 1):
        S, R = _sweep(spec, times, tidx, states, dt)
        XT = S[:, -1]
        total = cost + R[:, -1] + spec.terminal_cost(XT)
        total = np.where(spec.target.in_closure(XT), total, np.inf)
        evaluations += len(total)
        k = int(np.argmin(total))
        if total[k] < best:
            best, best_leaf = float(total[k]), (level, k)
        if level == n_max:
            break
        kids_t, kids_x, kids_c, kids_p, kids_c_idx = [], [], [], [], []
        bb, jj = np.nonzero(np.arange(len(times))[None, :] >= tidx[:, None])
        base = cost[bb] + R[bb, jj]
        room = best - base - l0
        a0 = spec.ell.alpha0(times[jj])
        with np.errstate(invalid="ignore", over="ignore"):
            lim = np.where(room > 0, np.maximum(room, 0.0) / a0, -1.0) ** (1.0 / beta)
        lim = np.where(room > 0, lim, -1.0)
        stop = np.searchsorted(norms, lim, side="right")
        live = np.nonzero(stop > 0)[0]
        bb, jj, base, stop = bb[live], jj[live], base[live], stop[live]
        ends = np.cumsum(stop)
        lo = 0
        while lo < len(stop):
            hi = int(np.searchsorted(ends, (ends[lo - 1] if lo else 0) + CHUNK, side="right"))
            hi = max(hi, lo + 1)
            cnt = stop[lo:hi]
            rep = np.repeat(np.arange(lo, hi), cnt)
            first = np.repeat(np.cumsum(cnt) - cnt, cnt)
            ci = np.arange(len(rep)) - first
            pre = S[bb[rep], jj[rep]]
            c = base[rep] + spec.ell(times[jj[rep]], pre, V[ci])
            evaluations += len(c)
            keep = c < best
            part = _dedup(jj[rep][keep], pre[keep] + V[ci[keep]], c[keep], bb[rep][keep], ci[keep])
            for dst, src in zip((kids_t, kids_x, kids_c, kids_p, kids_c_idx), part):
                dst.append(src)
            lo = hi
        if not any(len(k) for k in kids_t):
            break
        tidx, states, cost, par, cidx = _dedup(*(np.concatenate(k) for k in
                                                 (kids_t, kids_x, kids_c, kids_p, kids_c_idx)))
        parents.append((par, tidx, cidx))

    if best_leaf is None:
        return BruteForceResult(math.inf, None, evaluations, estimate)
    level, k = best_leaf
    taus, xis = [], []
    for lv in range(level, 0, -1):
        p, tj, ci = parents[lv - 1]
        taus.append(float(times[tj[k]]))
        xis.append(V[ci[k]].copy())
        k = int(p[k])
    ctrl = ImpulseControl(tuple(reversed(taus)), tuple(reversed(xis)), t)
    return BruteForceResult(best, ctrl, evaluations, estimate)


__all__ = [
    "BruteForceResult", "BudgetExceeded", "CostBreakdown", "EnumerationBudget",
    "brute_force_value", "enumeration_size", "evaluate_cost",
]
