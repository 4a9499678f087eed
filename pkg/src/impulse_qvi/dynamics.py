"""Forward integration of the impulse-controlled state equation.

Between impulse times the state follows ``x' = f(t, x)`` (classical RK4 on a
uniform sub-mesh); at each impulse time the state jumps by ``xi``.  Impulse
times are always mesh nodes, so a jump never falls inside a step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ProblemSpec


class IntegrationError(RuntimeError):
    """The state became non-finite during integration."""

    def __init__(self, time: float, message: str = ""):
        self.time = float(time)
        super().__init__(message or f"non-finite state at s={self.time:.12g}")


@dataclass(frozen=True)
class ImpulseControl:
    """Finite list of impulses ``(tau_k, xi_k)`` with nondecreasing times.

    The empty control is the trivial (no-impulse) control.
    """

    times: tuple = ()
    vectors: tuple = ()
    origin_t: float = 0.0

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        vectors = tuple(tuple(float(v) for v in np.atleast_1d(xi)) for xi in self.vectors)
        if len(times) != len(vectors):
            raise ValueError("impulse times and vectors differ in length")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("impulse times must be nondecreasing")
        if times and times[0] < self.origin_t:
            raise ValueError("impulse before the initial time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def trivial(cls, origin_t: float = 0.0) -> "ImpulseControl":
        return cls((), (), origin_t)

    @classmethod
    def single(cls, tau: float, xi, origin_t: float = 0.0) -> "ImpulseControl":
        return cls((tau,), (xi,), origin_t)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def tau(self) -> np.ndarray:
        return np.array(self.times, dtype=float)

    @property
    def xi(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros((0, 0))
        return np.array(self.vectors, dtype=float)

    def validate(self, spec: ProblemSpec, t: float | None = None, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` if a time leaves ``[t, T]`` or a vector leaves K."""
        t0 = self.origin_t if t is None else t
        if len(self) == 0:
            return
        if self.tau[0] < t0 - 1e-12 or self.tau[-1] > spec.horizon + 1e-12:
            raise ValueError(f"impulse times must lie in [{t0}, {spec.horizon}]")
        if self.xi.shape[1] != spec.dimension:
            raise ValueError("impulse vectors have the wrong dimension")
        bad = ~spec.cone.contains(self.xi, tol)
        if np.any(bad):
            raise ValueError(f"impulse {int(np.argmax(bad))} is not in the cone K")


@dataclass
class JumpRecord:
    tau: float
    pre: np.ndarray
    xi: np.ndarray
    post: np.ndarray


@dataclass
class Trajectory:
    """Sampled path; a jump contributes a pre-state row and a post-state row at the same time."""

    s: np.ndarray
    x: np.ndarray
    is_jump: np.ndarray
    xi: np.ndarray
    jumps: list[JumpRecord] = field(default_factory=list)
    terminal_pre: np.ndarray | None = None
    terminal: np.ndarray | None = None

    def segments(self):
        """Yield ``(s, x)`` arrays of the continuous pieces between jumps."""
        start = 0
        for k in range(1, len(self.s) + 1):
            if k == len(self.s) or self.is_jump[k]:
                if k - start >= 1:
                    yield self.s[start:k], self.x[start:k]
                start = k

    def right_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Times and right-continuous states ``X(s+0)``, one row per distinct time."""
        keep = np.ones(len(self.s), dtype=bool)
        keep[:-1] = self.s[1:] != self.s[:-1]
        return self.s[keep], self.x[keep]

    def to_csv(self, path, header: str | None = None) -> None:
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x{i+1}" for i in range(n)] + ["is_jump"] + [f"xi{i+1}" for i in range(n)])
            for s, x, j, xi in zip(self.s, self.x, self.is_jump, self.xi):
                w.writerow([repr(float(s))] + [repr(float(v)) for v in x] + [int(j)] + [repr(float(v)) for v in xi])


def rk4_step(f, t, x: np.ndarray, h) -> np.ndarray:
    """One classical Runge-Kutta step; ``t`` and ``h`` may be per-row arrays."""
    t = np.asarray(t, dtype=float)
    hh = np.asarray(h, dtype=float)
    hc = hh[..., None] if hh.ndim else hh
    k1 = f(t, x)
    k2 = f(t + 0.5 * hh, x + 0.5 * hc * k1)
    k3 = f(t + 0.5 * hh, x + 0.5 * hc * k2)
    k4 = f(t + hh, x + hc * k3)
    return x + hc / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps(a: float, b: float, dt: float) -> int:
    return max(1, int(math.ceil(abs(b - a) / dt - 1e-9)))


def _flow(spec: ProblemSpec, t: float, x: np.ndarray, t_end: float, dt: float, record: bool):
    m = _steps(t, t_end, dt) if t_end != t else 0
    h = (t_end - t) / m if m else 0.0
    ss, xs = [t], [x.copy()]
    for k in range(m):
        s = t + k * h
        x = rk4_step(spec.f, s, x, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(s + h)
        if record:
            ss.append(t + (k + 1) * h if k + 1 < m else t_end)
            xs.append(x.copy())
    return x, ss, xs


def default_step(spec: ProblemSpec) -> float:
    return spec.horizon / 1000.0


def integrate(spec: ProblemSpec, t: float, x, ctrl: ImpulseControl | None = None,
              step: float | None = None) -> Trajectory:
    """Integrate the controlled state equation from ``(t, x)`` to the horizon.

    Parameters
    ----------
    spec : ProblemSpec
    t : float
        Initial time in ``[0, T)``.
    x : array_like
        Initial state.
    ctrl : ImpulseControl, optional
        Impulses applied in list order; several impulses may share a time.
    step : float, optional
        Maximal RK4 step, default ``T / 1000``.

    Returns
    -------
    Trajectory
        Pre- and post-jump states are both recorded; an impulse at ``T``
        changes ``terminal`` but not ``terminal_pre``.
    """
    ctrl = ctrl or ImpulseControl.trivial(t)
    T = spec.horizon
    dt = step or default_step(spec)
    if dt <= 0:
        raise ValueError("step must be positive")
    if not 0.0 <= t <= T:
        raise ValueError(f"initial time {t} outside [0, {T}]")
    ctrl.validate(spec, t)
    n = spec.dimension
    state = np.asarray(x, dtype=float).reshape(n).copy()
    if not np.all(np.isfinite(state)):
        raise IntegrationError(t, "non-finite initial state")
    S, X, J, XI = [t], [state.copy()], [False], [np.zeros(n)]
    jumps: list[JumpRecord] = []
    cur = t
    terminal_pre = None
    events = list(zip(ctrl.tau, ctrl.xi))
    for tau, xi in events + [(T, None)]:
        if tau > cur:
            state, ss, xs = _flow(spec, cur, state, tau, dt, record=True)
            S.extend(ss[1:])
            X.extend(xs[1:])
            J.extend([False] * (len(ss) - 1))
            XI.extend([np.zeros(n)] * (len(ss) - 1))
            cur = tau
        if xi is None:
            break
        if terminal_pre is None and tau >= T:
            terminal_pre = state.copy()
        pre = state.copy()
        state = pre + xi
        jumps.append(JumpRecord(float(tau), pre, xi.copy(), state.copy()))
        S.append(tau)
        X.append(state.copy())
        J.append(True)
        XI.append(xi.copy())
    if terminal_pre is None:
        terminal_pre = state.copy()
    return Trajectory(np.array(S), np.array(X), np.array(J), np.array(XI), jumps,
                      terminal_pre, state.copy())


def flow_no_impulse(spec: ProblemSpec, t: float, x, t_hat: float, step: float | None = None) -> np.ndarray:
    """Impulse-free flow map ``X(t_hat; t, x)``; ``x`` may be a batch ``(..., n)``."""
    if t_hat < t:
        raise ValueError("flow_no_impulse needs t <= t_hat")
    x = np.asarray(x, dtype=float)
    if t_hat == t:
        return x.copy()
    out, _, _ = _flow(spec, t, x, t_hat, step or default_step(spec), record=False)
    return out


def backward_flow(spec: ProblemSpec, T_end: float, zeta, t: float, step: float | None = None) -> np.ndarray:
    """Solve ``Y' = f(s, Y)`` backward from ``Y(T_end) = zeta`` down to time ``t``."""
    if t > T_end:
        raise ValueError("backward_flow needs t <= T_end")
    zeta = np.asarray(zeta, dtype=float)
    if t == T_end:
        return zeta.copy()
    out, _, _ = _flow(spec, T_end, zeta, t, step or default_step(spec), record=False)
    return out


@dataclass
class BoundReport:
    growth_slack: float
    modulus_slack: float
    passed: bool
    pairs_checked: int


def _growth_bound(L, t, x0, tau, xi_norm, s):
    b = np.exp(L * (s - t)) * (1.0 + np.linalg.norm(x0))
    for tk, zk in zip(tau, xi_norm):
        b = b + np.where(tk <= s, np.exp(L * (s - tk)) * zk, 0.0)
    return b


def check_trajectory_bounds(spec: ProblemSpec, traj: Trajectory, t: float, x, ctrl: ImpulseControl,
                            max_pairs: int = 2000, seed: int = 0, tol: float = 1e-9) -> BoundReport:
    """Check the a priori state bound and the time-modulus bound along a trajectory."""
    L = spec.dynamics.L
    x = np.asarray(x, dtype=float)
    tau, zn = ctrl.tau, np.linalg.norm(ctrl.xi, axis=1) if len(ctrl) else np.zeros(0)
    norms = np.linalg.norm(traj.x, axis=1)
    bound = _growth_bound(L, t, x, tau, zn, traj.s)
    scale = 1.0 + float(np.max(bound))
    growth_slack = float(np.min(bound - norms))

    s, X = traj.right_limits()
    i, j = np.triu_indices(len(s), 1)
    if len(i) > max_pairs:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(i), size=max_pairs, replace=False)
        i, j = i[pick], j[pick]
    a, b = s[i], s[j]
    lhs = np.linalg.norm(X[j] - X[i], axis=1)
    coef = np.exp(-L * t) * (1.0 + np.linalg.norm(x)) + np.zeros_like(a)
    jumps_between = np.zeros_like(a)
    for tk, zk in zip(tau, zn):
        coef = coef + np.where(tk <= b, zk * np.exp(-L * tk), 0.0)
        jumps_between = jumps_between + np.where((tk > a) & (tk <= b), zk, 0.0)
    rhs = L * (b - a) + coef * (np.exp(L * b) - np.exp(L * a)) + jumps_between
    modulus_slack = float(np.min(rhs - lhs)) if len(a) else math.inf
    ok = growth_slack >= -tol * scale and modulus_slack >= -tol * scale
    return BoundReport(growth_slack, modulus_slack, bool(ok), int(len(a)))


def check_stability_bound(spec: ProblemSpec, t: float, x, x_hat, ctrl: ImpulseControl,
                          step: float | None = None, tol: float = 1e-9) -> float:
    """Worst slack of ``e^{L(s-t)}|x - x_hat| - |X(s) - X_hat(s)|`` over the mesh."""
    a = integrate(spec, t, x, ctrl, step)
    b = integrate(spec, t, x_hat, ctrl, step)
    L = spec.dynamics.L
    gap = np.linalg.norm(a.x - b.x, axis=1)
    bound = np.exp(L * (a.s - t)) * np.linalg.norm(np.asarray(x, float) - np.asarray(x_hat, float))
    return float(np.min(bound - gap))
