"""Post-hoc checks of solver output: closed-form oracles, residuals, moduli, bounds and DPP inequalities."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .dynamics import rk4_step
from .grids import SpatialGrid, interpolate
from .model import ProblemSpec
from .reachability import ReachableMask
from .solver import JUMP, LatticeIntervention, ValueGrid

A0, A1 = 1.0 / 90.0, 71.0 / 90.0
B0, B1 = 31.0 / 90.0, 41.0 / 90.0
C_LOW, C_HIGH = 247.0 / 180.0, 103.0 / 180.0
N_AT_0, N_AT_1 = 247.0 / 180.0, 283.0 / 180.0


class OracleSelfCheckError(AssertionError):
    pass


def _s(t, x, T):
    """Characteristic coordinate ``x + T - t`` of the unit-drift examples."""
    return np.asarray(x, dtype=float)[..., 0] + T - np.asarray(t, dtype=float)


def _v1(s):
    return np.where(s < 0, 1.0 - s, np.where(s <= 1, 0.0, s))


def _v2(s):
    return np.where(s < A0, C_LOW - s, np.where(s <= A1, 9.0 * (s - 0.4) ** 2, C_HIGH + s))


def _v3(s):
    return np.where(s > 1, np.inf, np.where(s < A0, C_LOW - s, 9.0 * (s - 0.4) ** 2))


def _v4(s):
    return np.where(s < A0, C_LOW - s, 9.0 * (s - 0.4) ** 2)


def _ex24(case):
    rules = {"i": lambda s: s <= 1, "ii": lambda s: s >= 0, "iii": lambda s: np.ones_like(s, bool),
             "iv": lambda s: s <= 0}
    return rules[case]


def _ex25(t, x, T):
    """Closed-form reachable set of the rotation example where one is known; NaN elsewhere."""
    x = np.asarray(x, dtype=float)
    r = T - float(t)
    x1, x2 = x[..., 0], x[..., 1]
    if abs(r) < 1e-12:
        inside = (x1 <= 0) & (x2 <= 1) | (x1 > 0) & (x1 <= 1) & (x2 <= np.sqrt(np.clip(1 - x1**2, 0, None)))
        return inside.astype(float)
    if abs(r - math.pi / 2) < 1e-9:
        return (x2 <= 1).astype(float)
    if r > math.pi / 2:
        return np.ones(x1.shape)
    return np.full(x1.shape, np.nan)


@dataclass(frozen=True)
class AnalyticOracle:
    """Closed-form value (or reachability indicator) with breakpoints in the characteristic coordinate.

    ``evaluate(t, x, T)`` returns values (``+inf`` where infeasible) or, for
    set oracles, 1.0/0.0 membership and NaN outside the validity region.
    """

    name: str
    kind: str
    evaluate: Callable
    breakpoints: tuple = ()
    foot: Callable | None = _s

    def distance_to_breakpoint(self, t, x, T) -> np.ndarray:
        if not self.breakpoints:
            return np.full(np.shape(np.asarray(x))[:-1], np.inf)
        s = _s(t, x, T)
        return np.min(np.abs(s[..., None] - np.array(self.breakpoints)), axis=-1)

    def self_check(self) -> dict:
        """Continuity/jump checks of the piecewise formulas; raises on failure."""
        out = {}
        if self.name in ("V2", "V3", "V4"):
            for b in (A0, A1) if self.name == "V2" else (A0,):
                left = C_LOW - b if b == A0 else 9.0 * (b - 0.4) ** 2
                right = 9.0 * (b - 0.4) ** 2 if b == A0 else C_HIGH + b
                out[f"continuity@{b:.6f}"] = abs(left - right)
                if abs(left - right) >= 1e-12:
                    raise OracleSelfCheckError(f"{self.name} oracle discontinuous at {b}")
            exact = Fraction(247, 180) - Fraction(1, 90) - 9 * (Fraction(1, 90) - Fraction(2, 5)) ** 2
            if exact != 0:
                raise OracleSelfCheckError("rational breakpoint identity fails")
        if self.name == "V1":
            jump0 = float(_v1(np.array(-1e-15)) - _v1(np.array(0.0)))
            jump1 = float(_v1(np.array(1.0 + 1e-15)) - _v1(np.array(1.0)))
            out["jump@0"], out["jump@1"] = jump0, jump1
            if abs(jump0 - 1.0) > 1e-12 or abs(jump1 - 1.0) > 1e-12:
                raise OracleSelfCheckError("V1 oracle jump sizes differ from 1")
        return out


def _value_oracle(name, fn, bps):
    return AnalyticOracle(name, "value", lambda t, x, T: fn(_s(t, x, T)), bps)


ORACLES = {
    "V1": _value_oracle("V1", _v1, (0.0, 1.0)),
    "V2": _value_oracle("V2", _v2, (A0, A1)),
    "V3": _value_oracle("V3", _v3, (A0, 1.0)),
    "V4": _value_oracle("V4", _v4, (A0,)),
    "Ex25_reach": AnalyticOracle("Ex25_reach", "set", _ex25, (), None),
}
for _case, _bp in (("i", (1.0,)), ("ii", (0.0,)), ("iii", ()), ("iv", (0.0,))):
    ORACLES[f"Ex24_domains_{_case}"] = AnalyticOracle(
        f"Ex24_domains_{_case}", "set",
        (lambda rule: lambda t, x, T: rule(_s(t, x, T)).astype(float))(_ex24(_case)), _bp)


def get_oracle(name: str) -> AnalyticOracle:
    try:
        return ORACLES[name]
    except KeyError:
        raise KeyError(f"unknown oracle {name!r}; known: {', '.join(sorted(ORACLES))}") from None


# ---------------------------------------------------------------------------
# oracle comparison


@dataclass
class ErrorTable:
    max_error: float
    mean_error: float
    compared: int
    excluded: int
    inf_mismatch: int
    tol_acc: float
    worst_at: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.inf_mismatch == 0 and self.max_error <= self.tol_acc

    def to_dict(self) -> dict:
        return dict(asdict(self), passed=self.passed)


def default_tol_acc(vg: ValueGrid, C: float = 2.0) -> float:
    """``C (dx + dt)`` with the frozen constant ``C = 2``."""
    return C * (float(np.max(vg.grid.spacing)) + vg.dt)


def compare_to_oracle(vg: ValueGrid, oracle: AnalyticOracle, band: int = 2, tol_acc: float | None = None,
                      exclude_outflow: bool = False) -> ErrorTable:
    """Max and mean error against a value oracle, skipping a ``band``-cell zone around breakpoints.

    With ``exclude_outflow`` nodes whose free characteristic leaves the grid
    box before ``T`` are skipped too: their value depends on states the grid
    does not hold.
    """
    if oracle.kind != "value":
        raise ValueError("compare_to_oracle needs a value oracle")
    oracle.self_check()
    tol = default_tol_acc(vg) if tol_acc is None else float(tol_acc)
    T = float(vg.times[-1])
    X = vg.grid.nodes()
    dx = float(np.max(vg.grid.spacing))
    lo, hi = vg.grid.lower[0], vg.grid.upper[0]
    errs, worst, excluded, mism = [], (0.0, None), 0, 0
    for k, t in enumerate(vg.times):
        v = vg.values[k].ravel()
        o = oracle.evaluate(t, X, T)
        keep = oracle.distance_to_breakpoint(t, X, T) > band * dx
        if exclude_outflow and oracle.foot is not None:
            s = oracle.foot(t, X, T)
            keep &= (s >= lo - 1e-12) & (s <= hi + 1e-12)
        excluded += int(np.sum(~keep))
        mism += int(np.sum(keep & (np.isfinite(v) != np.isfinite(o))))
        both = keep & np.isfinite(v) & np.isfinite(o)
        e = np.abs(v[both] - o[both])
        if e.size:
            errs.append(e)
            j = int(np.argmax(e))
            if e[j] > worst[0]:
                worst = (float(e[j]), (float(t), *map(float, X[both][j])))
    allerr = np.concatenate(errs) if errs else np.zeros(0)
    return ErrorTable(float(allerr.max()) if allerr.size else 0.0, float(allerr.mean()) if allerr.size else 0.0,
                      int(allerr.size), excluded, mism, tol, worst[1])


@dataclass
class MaskReport:
    slices_checked: int
    nodes_checked: int
    mismatches: int
    far_mismatches: int

    @property
    def passed(self) -> bool:
        return self.slices_checked > 0 and self.far_mismatches == 0

    def to_dict(self) -> dict:
        return dict(asdict(self), passed=self.passed)


def compare_mask(mask: ReachableMask, oracle: AnalyticOracle, times=None, cells: int = 1) -> MaskReport:
    """Compare reachable masks with a set oracle; a mismatch is tolerated when the
    oracle changes its answer within ``cells`` grid cells of the node."""
    grid = mask.grid
    X = grid.nodes()
    T = float(mask.times[-1])
    h = grid.spacing
    offsets = np.array(list(np.ndindex(*(2 * cells + 1,) * grid.ndim))) - cells
    ks = range(len(mask.times)) if times is None else [mask.slice_index(t) for t in times]
    sl = nodes = mm = far = 0
    for k in ks:
        t = float(mask.times[k])
        truth = oracle.evaluate(t, X, T)
        valid = ~np.isnan(truth)
        if not valid.any():
            continue
        sl += 1
        got = mask.slices[k].ravel()
        bad = valid & (got != (truth > 0.5))
        nodes += int(valid.sum())
        mm += int(bad.sum())
        if bad.any():
            near = np.zeros(int(bad.sum()), dtype=bool)
            for o in offsets:
                near |= (oracle.evaluate(t, X[bad] + o * h, T) > 0.5) == got[bad]
            far += int(np.sum(~near))
    return MaskReport(sl, nodes, mm, far)


# ---------------------------------------------------------------------------
# residual and modulus


def _kink_mask(vg: ValueGrid, factor: float = 0.5) -> np.ndarray:
    """Nodes next to a kink, a jump or a non-finite value, per slice."""
    V = vg.values
    finite = np.isfinite(V)
    mark = ~finite
    for ax in range(1, V.ndim):
        h = vg.grid.spacing[ax - 1]
        a = np.moveaxis(np.where(finite, V, 0.0), ax, -1)
        fin = np.moveaxis(finite, ax, -1)
        d2 = np.zeros_like(a)
        d2[..., 1:-1] = np.abs(a[..., 2:] - 2 * a[..., 1:-1] + a[..., :-2])
        ok = np.zeros_like(fin)
        ok[..., 1:-1] = fin[..., 2:] & fin[..., 1:-1] & fin[..., :-2]
        kink = ok & (d2 > factor * h)
        pol = np.moveaxis(vg.policy, ax, -1)
        switch = np.zeros_like(fin)
        switch[..., 1:] |= pol[..., 1:] != pol[..., :-1]
        switch[..., :-1] |= pol[..., 1:] != pol[..., :-1]
        mark |= np.moveaxis(kink | switch, -1, ax)
    return mark


def _dilate(mask: np.ndarray, cells: int, time_cells: int = 1) -> np.ndarray:
    out = mask.copy()
    for ax in range(mask.ndim):
        reach = time_cells if ax == 0 else cells
        cur = out.copy()
        for j in range(1, reach + 1):
            sl_a = [slice(None)] * mask.ndim
            sl_b = [slice(None)] * mask.ndim
            sl_a[ax], sl_b[ax] = slice(j, None), slice(None, -j)
            cur[tuple(sl_a)] |= out[tuple(sl_b)]
            cur[tuple(sl_b)] |= out[tuple(sl_a)]
        out = cur
    return out


@dataclass
class ResidualReport:
    max_residual: float
    mean_residual: float
    nodes: int
    excluded_fraction: float
    residual: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "mean_residual": self.mean_residual, "nodes": self.nodes,
                "excluded_fraction": self.excluded_fraction}


def viscosity_residual(spec: ProblemSpec, vg: ValueGrid, band: int = 2, exclude=None) -> ResidualReport:
    """Grid residual ``min{D_t V + <D_x V, f> + g, N[V] - V}`` at interior finite nodes.

    Central differences in time and space; nodes within ``band`` cells of a
    detected kink, jump, policy switch or non-finite value are excluded, as
    are nodes flagged by the optional boolean array ``exclude``.
    """
    V, grid = vg.values, vg.grid
    M, n = vg.M, grid.ndim
    bad = _dilate(_kink_mask(vg), band)
    if exclude is not None:
        bad |= np.asarray(exclude, dtype=bool)
    interior = np.zeros_like(bad)
    inner = (slice(1, M),) + tuple(slice(1, c) for c in grid.cells)
    interior[inner] = True
    use = interior & ~bad
    res = np.full(V.shape, np.nan)
    X = grid.nodes()
    for k in range(1, M):
        if not use[k].any():
            continue
        t = vg.times[k]
        dt = (V[k + 1] - V[k - 1]) / (vg.times[k + 1] - vg.times[k - 1])
        f = spec.f(t, X).reshape(grid.shape + (n,))
        adv = np.zeros(grid.shape)
        for ax in range(n):
            d = np.zeros(grid.shape)
            a = np.moveaxis(V[k], ax, -1)
            dd = np.moveaxis(d, ax, -1)
            dd[..., 1:-1] = (a[..., 2:] - a[..., :-2]) / (2 * grid.spacing[ax])
            adv += d * f[..., ax]
        g = spec.g(t, X).reshape(grid.shape)
        with np.errstate(invalid="ignore"):
            r = np.minimum(dt + adv + g, vg.intervention[k] - V[k])
        res[k] = np.where(use[k], r, np.nan)
    vals = np.abs(res[np.isfinite(res)])
    total = int(interior.sum())
    return ResidualReport(float(vals.max()) if vals.size else 0.0, float(vals.mean()) if vals.size else 0.0,
                          int(vals.size), 1.0 - vals.size / total if total else 0.0, res)


# a unit jump across one cell doubles C exactly per halving; allow for round-off
GROWTH_LIMIT = 2.0 - 1e-9


@dataclass
class ModulusReport:
    C_hat: float
    pairs: int
    status: str
    C_hat_refined: float | None = None
    growth: float | None = None

    @property
    def stable(self) -> bool | None:
        return None if self.growth is None else self.growth < GROWTH_LIMIT

    def to_dict(self) -> dict:
        return dict(asdict(self), stable=self.stable)


def _modulus(vg: ValueGrid, mu: float, delta: float) -> tuple[float, int]:
    V = vg.values
    X = vg.grid.nodes().reshape(vg.grid.shape + (vg.grid.ndim,))
    r = np.linalg.norm(X, axis=-1) ** mu
    best, count = 0.0, 0
    for ax in range(V.ndim):
        a = np.moveaxis(V, ax, 0)
        d = np.abs(a[1:] - a[:-1])
        ok = np.isfinite(a[1:]) & np.isfinite(a[:-1])
        if ax == 0:
            weight = (1 + r)[None] * np.diff(vg.times)[(slice(None),) + (None,) * vg.grid.ndim]
        else:
            rr = np.moveaxis(r, ax - 1, 0)
            weight = (1 + np.maximum(rr[1:], rr[:-1])) * vg.grid.spacing[ax - 1] ** delta
            weight = np.moveaxis(weight, 0, ax - 1)[None]
            weight = np.moveaxis(np.broadcast_to(weight, np.moveaxis(d, 0, ax).shape), ax, 0)
        with np.errstate(invalid="ignore"):
            q = np.where(ok, d / weight, 0.0)
        count += int(ok.sum())
        best = max(best, float(q.max()) if q.size else 0.0)
    return best, count


def continuity_modulus(vg: ValueGrid, mu: float = 1.0, delta: float = 1.0, refined: ValueGrid | None = None,
                       min_pairs: int = 100) -> ModulusReport:
    """Smallest ``C`` with ``|dV| <= C (1 + max(|x|,|x'|)^mu)(|dt| + |dx|^delta)`` over adjacent finite pairs.

    With a ``refined`` grid the growth ratio of ``C`` is reported; growth of
    two or more flags a suspected discontinuity.
    """
    C, pairs = _modulus(vg, mu, delta)
    if pairs < min_pairs:
        return ModulusReport(C, pairs, "INSUFFICIENT_DATA")
    if refined is None:
        return ModulusReport(C, pairs, "OK")
    Cr, pr = _modulus(refined, mu, delta)
    if pr < min_pairs:
        return ModulusReport(C, pairs, "INSUFFICIENT_DATA", Cr)
    growth = Cr / C if C > 0 else (math.inf if Cr > 0 else 1.0)
    return ModulusReport(C, pairs, "OK" if growth < GROWTH_LIMIT else "DISCONTINUITY_SUSPECTED", Cr, growth)


# ---------------------------------------------------------------------------
# growth bound


@dataclass
class GrowthReport:
    worst_slack: float
    checked: int
    C0: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def nu_constant(spec: ProblemSpec, radii=(0.0, 1.0, 2.0, 5.0, 10.0), samples: int = 32) -> float:
    """``C0`` with ``nu(r) <= C0 (1 + r)`` on sampled radii."""
    from .geometry import estimate_nu

    table = estimate_nu(spec, radii, samples)
    nu = np.where(np.isfinite(table.nu), table.nu, np.nan)
    if np.all(np.isnan(nu)):
        return math.inf
    return float(np.nanmax(nu / (1.0 + table.radii)))


def growth_bound(spec: ProblemSpec, t, x, C0: float) -> np.ndarray:
    """Upper bound of ``V(t, x)`` from one terminal impulse after a free flow.

    States obey ``|X| <= e^{L(T-t)}(1 + |x|)``, the impulse ``|xi| <= C0(1 + |X|)``,
    and g, h, l are bounded through the declared growth constants.
    """
    L = spec.holder.L
    Lf = spec.dynamics.L
    p = spec.holder.mu + spec.holder.delta
    T = spec.horizon
    t = np.asarray(t, dtype=float)
    r = np.linalg.norm(np.asarray(x, dtype=float).reshape(-1, spec.dimension), axis=1)
    R = np.exp(Lf * (T - t)) * (1.0 + r)
    xi = C0 * (1.0 + R)
    alpha_T = float(spec.ell.alpha(np.array(T)))
    return (T - t) * L * (1 + R**p) + L * (1 + (R + xi) ** p) + L + alpha_T * xi**spec.ell.beta


def growth_bound_check(spec: ProblemSpec, vg: ValueGrid, C0: float | None = None, tol: float = 1e-9) -> GrowthReport:
    C0 = nu_constant(spec) if C0 is None else C0
    X = vg.grid.nodes()
    worst, count = math.inf, 0
    for k, t in enumerate(vg.times):
        v = vg.values[k].ravel()
        ok = np.isfinite(v)
        if not ok.any():
            continue
        slack = growth_bound(spec, t, X[ok], C0) - v[ok]
        worst = min(worst, float(slack.min()))
        count += int(ok.sum())
    return GrowthReport(worst, count, C0, bool(worst >= -tol))


# ---------------------------------------------------------------------------
# dynamic programming checks


@dataclass
class DPPReport:
    opt1_violations: int
    opt1_worst: float
    opt2_violations: int
    opt2_worst: float
    opt2_interp_violations: int
    opt2_interp_worst: float
    strict_branch_worst: float
    post_jump_min_gap: float
    jump_nodes: int
    finite_nodes: int
    tol: float
    tol_acc: float
    delta0: float

    @property
    def passed(self) -> bool:
        return (self.opt1_violations == 0 and self.opt2_violations == 0
                and self.strict_branch_worst <= self.tol_acc
                and self.post_jump_min_gap >= self.delta0 - 2 * self.tol_acc)

    def to_dict(self) -> dict:
        return dict(asdict(self), passed=self.passed)


def dpp_check(spec: ProblemSpec, vg: ValueGrid, tol: float = 1e-9, tol_acc: float | None = None) -> DPPReport:
    """Re-check the discrete dynamic programming inequalities from the stored slices.

    * ``V_k <= N[V_k]`` with ``N`` recomputed over the lattice offsets;
    * ``V_k <= g dt + V_{k+1}(Phi(x))`` where the next slice is evaluated at
      the one-step foot the way the scheme does it: the exactly traced
      no-impulse branch, or the interpolated impulse branch;
    * the same with plain multilinear interpolation of ``V_{k+1}`` (reported
      only, since interpolation undershoots at concave kinks and jumps);
    * continuation equality where the intervention is strictly worse;
    * the post-jump gap ``N[V] - V >= delta0`` at landing nodes.
    """
    grid = vg.grid
    tol_acc = default_tol_acc(vg) if tol_acc is None else tol_acc
    op = LatticeIntervention(spec, grid, vg.offset_radius)
    X = grid.nodes()
    outside = "inf" if vg.mode == "constrained" else "clamp"
    o1n = o2n = o2in = 0
    o1w = o2w = o2iw = strict = -math.inf
    gap, jumps, finite = math.inf, 0, 0
    delta0 = spec.ell.delta0
    for k in range(vg.M + 1):
        t = vg.times[k]
        V = vg.values[k]
        fin = np.isfinite(V)
        finite += int(fin.sum())
        N, _ = op.apply(V, t)
        with np.errstate(invalid="ignore"):
            d1 = np.where(fin, V - N, -np.inf)
        o1n += int(np.sum(d1 > tol))
        o1w = max(o1w, float(d1.max()))
        if k < vg.M:
            dt = vg.times[k + 1] - t
            foot = rk4_step(spec.f, t, X, dt)
            run = (0.5 * dt * (spec.g(t, X) + spec.g(vg.times[k + 1], foot))).reshape(grid.shape)
            wz = run + interpolate(grid, vg.impulse_branch[k + 1], foot, outside).reshape(grid.shape)
            W = np.minimum(vg.no_impulse[k], wz)
            with np.errstate(invalid="ignore"):
                d2 = np.where(fin, V - W, -np.inf)
            o2n += int(np.sum(d2 > tol))
            o2w = max(o2w, float(d2.max()))
            lit = run + interpolate(grid, vg.values[k + 1], foot, outside).reshape(grid.shape)
            with np.errstate(invalid="ignore"):
                d3 = np.where(fin, V - lit, -np.inf)
            o2in += int(np.sum(d3 > tol))
            o2iw = max(o2iw, float(d3.max()))
            sel = fin & (V < N - tol)
            if sel.any():
                strict = max(strict, float(np.max(np.abs(V[sel] - W[sel]))))
        jmask = (vg.policy[k] == JUMP)
        if jmask.any():
            land = X[jmask.ravel()] + vg.xi[k][jmask]
            idx = np.round((land - np.array(grid.lower)) / grid.spacing).astype(int)
            inside = np.all((idx >= 0) & (idx <= np.array(grid.cells)), axis=1)
            idx = idx[inside]
            vt = V[tuple(idx.T)]
            nt = N[tuple(idx.T)]
            ok = np.isfinite(vt) & np.isfinite(nt)
            jumps += int(ok.sum())
            if ok.any():
                gap = min(gap, float(np.min(nt[ok] - vt[ok])))
    return DPPReport(o1n, o1w, o2n, o2w, o2in, o2iw, max(strict, 0.0), gap, jumps, finite, tol, tol_acc, delta0)


__all__ = [
    "A0", "A1", "B0", "B1", "AnalyticOracle", "DPPReport", "ErrorTable", "GrowthReport", "MaskReport",
    "ModulusReport", "ORACLES", "OracleSelfCheckError", "ResidualReport", "compare_mask", "compare_to_oracle",
    "continuity_modulus", "default_tol_acc", "dpp_check", "get_oracle", "growth_bound", "growth_bound_check",
    "nu_constant", "viscosity_residual",
]
