"""Problem data: dynamics, costs, impulse cone, target set and horizon.

Every function in a problem is drawn from a small catalog of parametric
families so that specs serialize to JSON and compare by value.  New
families are added by registering a builder in the ``*_FAMILIES`` dicts.

All callables are vectorized: states are arrays of shape ``(..., n)`` and
times broadcast against the leading dimensions.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np


class SpecError(ValueError):
    """Malformed or inconsistent problem specification."""


def _vec(value, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise SpecError(f"{name}: expected a vector, got shape {arr.shape}")
    return arr


def _mat(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise SpecError(f"{name}: expected a matrix, got shape {arr.shape}")
    return arr


def _bound(value, default: float) -> float:
    return default if value is None else float(value)


def _time_table(value, name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar or piecewise-linear ``[[t, a], ...]`` table as a function of time."""
    if np.isscalar(value):
        const = float(value)
        return lambda t: np.full(np.shape(t), const)
    tab = _mat(value, name)
    if tab.shape[1] != 2 or tab.shape[0] < 1:
        raise SpecError(f"{name}: table rows must be [t, value]")
    if np.any(np.diff(tab[:, 0]) <= 0):
        raise SpecError(f"{name}: table times must increase strictly")
    ts, vs = tab[:, 0].copy(), tab[:, 1].copy()
    return lambda t: np.interp(t, ts, vs)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1)


# ----------------------------------------------------------------------------
# family builders: each takes (params, n) and returns a callable


def _dyn_constant(p, n):
    drift = _vec(p["drift"], "dynamics.params.drift")
    _check_len(drift, n, "dynamics.params.drift")
    return lambda t, x: np.broadcast_to(drift, np.shape(x)).copy()


def _dyn_affine(p, n):
    A = _mat(p["A"], "dynamics.params.A")
    b0 = _vec(p.get("b0", np.zeros(n)), "dynamics.params.b0")
    b1 = _vec(p.get("b1", np.zeros(n)), "dynamics.params.b1")
    _check_shape(A, (n, n), "dynamics.params.A")
    _check_len(b0, n, "dynamics.params.b0")
    _check_len(b1, n, "dynamics.params.b1")

    def f(t, x):
        x = np.asarray(x, dtype=float)
        tt = np.asarray(t, dtype=float)[..., None]
        return x @ A.T + b0 + b1 * tt

    return f


def _dyn_rotation(p, n):
    if n != 2:
        raise SpecError("dynamics: rotation family needs dimension 2")
    omega = float(p.get("omega", 1.0))

    def f(t, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = omega * x[..., 1]
        out[..., 1] = -omega * x[..., 0]
        return out

    return f


def _dyn_polynomial(p, n):
    A = _mat(p.get("A", np.zeros((n, n))), "dynamics.params.A")
    _check_shape(A, (n, n), "dynamics.params.A")
    coeffs = [_vec(c, "dynamics.params.coeffs") for c in p.get("coeffs", [])]
    for c in coeffs:
        _check_len(c, n, "dynamics.params.coeffs")

    def f(t, x):
        x = np.asarray(x, dtype=float)
        tt = np.asarray(t, dtype=float)[..., None]
        out = x @ A.T
        for k, c in enumerate(coeffs):
            out = out + c * tt**k
        return out

    return f


def _field_zero(p, n):
    return lambda t, x: np.zeros(np.shape(x)[:-1])


def _field_constant(p, n):
    value = float(p["value"])
    return lambda t, x: np.full(np.shape(x)[:-1], value)


def _field_quadratic(p, n):
    scale = float(p.get("scale", 1.0))
    center = _vec(p.get("center", np.zeros(n)), "center")
    offset = float(p.get("offset", 0.0))
    _check_len(center, n, "center")
    return lambda t, x: scale * np.sum((np.asarray(x, dtype=float) - center) ** 2, axis=-1) + offset


def _field_norm_power(p, n):
    scale = float(p.get("scale", 1.0))
    power = float(p.get("power", 1.0))
    center = _vec(p.get("center", np.zeros(n)), "center")
    _check_len(center, n, "center")
    return lambda t, x: scale * _norm(np.asarray(x, dtype=float) - center) ** power


def _ell_affine_norm(p, n):
    c0 = float(p.get("c0", 1.0))
    beta = float(p.get("beta", 1.0))
    alpha = _time_table(p.get("alpha", 1.0), "alpha")
    gamma = float(p.get("gamma", 0.0))

    def ell(t, x, xi):
        xi = np.asarray(xi, dtype=float)
        x = np.asarray(x, dtype=float)
        out = c0 + alpha(np.asarray(t, dtype=float)) * _norm(xi) ** beta
        if gamma:
            r = _norm(x)
            out = out + gamma * r / (1.0 + r)
        return out

    return ell


DYNAMICS_FAMILIES: dict[str, Callable] = {
    "constant_drift": _dyn_constant,
    "affine": _dyn_affine,
    "rotation": _dyn_rotation,
    "polynomial": _dyn_polynomial,
}

FIELD_FAMILIES: dict[str, Callable] = {
    "zero": _field_zero,
    "constant": _field_constant,
    "quadratic": _field_quadratic,
    "norm_power": _field_norm_power,
}

IMPULSE_COST_FAMILIES: dict[str, Callable] = {
    "affine_norm": _ell_affine_norm,
    "affine_norm_xdep": _ell_affine_norm,
}


def _check_len(v, n, name):
    if v.shape != (n,):
        raise SpecError(f"{name}: dimension {v.shape[0]} does not match problem dimension {n}")


def _check_shape(a, shape, name):
    if a.shape != shape:
        raise SpecError(f"{name}: shape {a.shape} does not match expected {shape}")


# ----------------------------------------------------------------------------
# target level functions: negative inside D, zero on the boundary


def _target_box(p, n):
    lo = np.array([_bound(v, -np.inf) for v in p["lower"]])
    hi = np.array([_bound(v, np.inf) for v in p["upper"]])
    _check_len(lo, n, "target.params.lower")
    _check_len(hi, n, "target.params.upper")
    if np.any(hi <= lo):
        raise SpecError("target.params: box must have lower < upper")

    def level(x):
        x = np.asarray(x, dtype=float)
        d = np.maximum(lo - x, x - hi)
        outside = _norm(np.maximum(d, 0.0))
        return np.where(np.all(d <= 0.0, axis=-1), np.max(d, axis=-1), outside)

    return level


def _target_ball(p, n):
    c = _vec(p.get("center", np.zeros(n)), "target.params.center")
    r = float(p["radius"])
    _check_len(c, n, "target.params.center")
    if r <= 0:
        raise SpecError("target.params.radius must be positive")
    return lambda x: _norm(np.asarray(x, dtype=float) - c) - r


def _halfspaces(A, b):
    scale = np.linalg.norm(A, axis=1)
    if np.any(scale == 0):
        raise SpecError("target.params: zero half-space normal")

    def level(x):
        x = np.asarray(x, dtype=float)
        return np.max((x @ A.T - b) / scale, axis=-1)

    return level


def _target_halfspace(p, n):
    a = _vec(p["normal"], "target.params.normal")
    _check_len(a, n, "target.params.normal")
    return _halfspaces(a[None, :], np.array([float(p.get("offset", 0.0))]))


def _target_halfspaces(p, n):
    A = _mat(p["A"], "target.params.A")
    b = _vec(p["b"], "target.params.b")
    if A.shape[1] != n or b.shape[0] != A.shape[0]:
        raise SpecError("target.params: A must be m x n and b must have m entries")
    return _halfspaces(A, b)


def _target_conic_wedge(p, n):
    A = _mat(p["A"], "target.params.A")
    if A.shape[1] != n:
        raise SpecError("target.params.A: columns must match problem dimension")
    return _halfspaces(A, np.zeros(A.shape[0]))


def _target_exp_boundary(p, n):
    if n != 2:
        raise SpecError("target: exp_boundary family needs dimension 2")
    return lambda x: np.exp(np.abs(np.asarray(x)[..., 1])) - 1.0 - np.asarray(x)[..., 0]


TARGET_FAMILIES: dict[str, Callable] = {
    "box": _target_box,
    "ball": _target_ball,
    "halfspace": _target_halfspace,
    "halfspaces": _target_halfspaces,
    "conic_wedge": _target_conic_wedge,
    "exp_boundary": _target_exp_boundary,
}


def _param_scale(params) -> float:
    """Largest finite absolute number appearing in a parameter tree."""
    vals = [0.0]

    def walk(v):
        if isinstance(v, dict):
            for w in v.values():
                walk(w)
        elif isinstance(v, (list, tuple)):
            for w in v:
                walk(w)
        elif isinstance(v, (int, float)) and math.isfinite(v):
            vals.append(abs(float(v)))

    walk(params)
    return max(vals)


# ----------------------------------------------------------------------------
# spec dataclasses


@dataclass(frozen=True, eq=True)
class DynamicsSpec:
    family: str
    params: dict
    L: float
    n: int = 1

    def __post_init__(self):
        if self.family not in DYNAMICS_FAMILIES:
            raise SpecError(f"dynamics.family: unknown family {self.family!r}")
        if not self.L > 0:
            raise SpecError("dynamics.L must be positive")
        _ = self.f

    @cached_property
    def f(self) -> Callable:
        try:
            return DYNAMICS_FAMILIES[self.family](self.params, self.n)
        except KeyError as exc:
            raise SpecError(f"dynamics.params: missing {exc}") from None

    @property
    def autonomous(self) -> bool:
        """True when ``f`` does not depend on time."""
        p = self.params
        if self.family == "affine":
            return not np.any(np.asarray(p.get("b1", 0.0), dtype=float))
        if self.family == "polynomial":
            return not any(np.any(np.asarray(c, dtype=float)) for c in p.get("coeffs", [])[1:])
        return True

    def to_dict(self) -> dict:
        return {"family": self.family, "params": copy.deepcopy(self.params), "L": self.L}


@dataclass(frozen=True, eq=True)
class CostFieldSpec:
    family: str
    params: dict
    n: int = 1
    role: str = "g"

    def __post_init__(self):
        if self.family not in FIELD_FAMILIES:
            raise SpecError(f"costs.{self.role}.family: unknown family {self.family!r}")
        _ = self.fn

    @cached_property
    def fn(self) -> Callable:
        try:
            return FIELD_FAMILIES[self.family](self.params, self.n)
        except KeyError as exc:
            raise SpecError(f"costs.{self.role}.params: missing {exc}") from None

    def __call__(self, t, x) -> np.ndarray:
        return self.fn(t, x)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": copy.deepcopy(self.params)}


@dataclass(frozen=True, eq=True)
class ImpulseCostSpec:
    """Impulse cost ``c0 + alpha(t)|xi|^beta`` (plus a bounded x-term for the xdep family)."""

    family: str
    params: dict
    n: int = 1

    def __post_init__(self):
        if self.family not in IMPULSE_COST_FAMILIES:
            raise SpecError(f"costs.l.family: unknown family {self.family!r}")
        if not 0.0 < self.beta <= 1.0:
            raise SpecError("costs.l.params.beta must lie in (0, 1]")
        if self.l0 < 0 or self.delta0 < 0:
            raise SpecError("costs.l.params: l0 and delta0 must be nonnegative")
        if self.family == "affine_norm" and self.params.get("gamma", 0.0):
            raise SpecError("costs.l.params.gamma requires the affine_norm_xdep family")
        _ = self.fn, self.alpha, self.alpha0

    @property
    def beta(self) -> float:
        return float(self.params.get("beta", 1.0))

    @property
    def l0(self) -> float:
        return float(self.params.get("l0", self.params.get("c0", 1.0)))

    @property
    def delta0(self) -> float:
        return float(self.params.get("delta0", self.l0))

    @cached_property
    def alpha(self) -> Callable:
        return _time_table(self.params.get("alpha", 1.0), "costs.l.params.alpha")

    @cached_property
    def alpha0(self) -> Callable:
        return _time_table(self.params.get("alpha0", self.params.get("alpha", 1.0)), "costs.l.params.alpha0")

    @cached_property
    def fn(self) -> Callable:
        return IMPULSE_COST_FAMILIES[self.family](self.params, self.n)

    def __call__(self, t, x, xi) -> np.ndarray:
        return self.fn(t, x, xi)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": copy.deepcopy(self.params)}


@dataclass(frozen=True, eq=True)
class ConeSpec:
    """Closed convex cone generated by unit vectors, or the whole space."""

    generators: tuple = ()
    full_space: bool = False
    n: int = 1

    def __post_init__(self):
        if not self.full_space:
            if len(self.generators) == 0:
                raise SpecError("cone: give generators or set full_space")
            G = np.array(self.generators, dtype=float)
            if G.ndim != 2 or G.shape[1] != self.n:
                raise SpecError(f"cone.generators: expected vectors of length {self.n}")
            norms = np.linalg.norm(G, axis=1)
            if np.any(norms == 0):
                raise SpecError("cone.generators: zero generator")
            unit = tuple(tuple(float(v) for v in g) for g in G / norms[:, None])
            object.__setattr__(self, "generators", unit)

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.full_space:
            return np.vstack([np.eye(self.n), -np.eye(self.n)])
        return np.array(self.generators, dtype=float)

    @cached_property
    def _hrep(self):
        """Orthonormal span basis ``B`` (n x r) and inward facet normals in span coordinates."""
        G = self.matrix
        _, s, vt = np.linalg.svd(G, full_matrices=False)
        r = int(np.sum(s > 1e-12 * max(s.max(), 1.0)))
        B = vt[:r].T
        Y = G @ B
        normals = []
        if r == 1:
            signs = np.sign(Y[:, 0])
            if np.all(signs > 0):
                normals.append(np.array([1.0]))
            elif np.all(signs < 0):
                normals.append(np.array([-1.0]))
        else:
            for subset in itertools.combinations(range(len(Y)), r - 1):
                S = Y[list(subset)]
                if np.linalg.matrix_rank(S, tol=1e-10) != r - 1:
                    continue
                _, _, v = np.linalg.svd(S)
                nrm = v[-1]
                proj = Y @ nrm
                if np.all(proj >= -1e-12):
                    normals.append(nrm)
                elif np.all(proj <= 1e-12):
                    normals.append(-nrm)
        N = np.array(normals).reshape(-1, r)
        if len(N):
            N = np.unique(np.round(N, 12), axis=0)
        return B, N

    @property
    def span_dim(self) -> int:
        return self.n if self.full_space else self._hrep[0].shape[1]

    def contains(self, xi, tol: float = 1e-9) -> np.ndarray:
        """Cone membership with tolerance ``tol * max(1, |xi|)``."""
        xi = np.asarray(xi, dtype=float)
        if self.full_space:
            return np.ones(xi.shape[:-1], dtype=bool)
        B, N = self._hrep
        slack = tol * np.maximum(1.0, _norm(xi))
        y = xi @ B
        resid = _norm(xi - y @ B.T)
        ok = resid <= slack
        if len(N):
            ok &= np.min(y @ N.T, axis=-1) >= -slack
        return ok

    def to_dict(self) -> dict:
        if self.full_space:
            return {"full_space": True}
        return {"generators": [list(g) for g in self.generators]}


@dataclass(frozen=True, eq=True)
class TargetSpec:
    """Open convex target ``D = {level < 0}``; the closure adds ``level <= eps_bd``."""

    family: str
    params: dict
    boundary_tolerance: float | None = None
    n: int = 1

    def __post_init__(self):
        if self.family not in TARGET_FAMILIES:
            raise SpecError(f"target.family: unknown family {self.family!r}")
        _ = self.level

    @cached_property
    def level(self) -> Callable:
        try:
            return TARGET_FAMILIES[self.family](self.params, self.n)
        except KeyError as exc:
            raise SpecError(f"target.params: missing {exc}") from None

    @property
    def eps_bd(self) -> float:
        if self.boundary_tolerance is not None:
            return float(self.boundary_tolerance)
        return 1e-9 * (1.0 + _param_scale(self.params))

    def in_closure(self, x) -> np.ndarray:
        return self.level(x) <= self.eps_bd

    def in_open(self, x) -> np.ndarray:
        return self.level(x) < -self.eps_bd

    def to_dict(self) -> dict:
        return {"family": self.family, "params": copy.deepcopy(self.params),
                "boundary_tolerance": self.boundary_tolerance}


@dataclass(frozen=True)
class HolderSpec:
    """Constants ``L, mu, delta`` of the growth and Hölder hypotheses on g, h and l."""

    L: float = 1.0
    mu: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.mu > 0 and 0 < self.delta <= 1):
            raise SpecError("costs.holder: need L > 0, mu > 0, 0 < delta <= 1")


@dataclass(frozen=True)
class SamplePlan:
    """Sample lattice for hypothesis probes: counts in (t, x, xi), ranges and seed."""

    lattice: tuple = (10, 10, 10)
    x_range: tuple = (-3.0, 3.0)
    xi_range: tuple = (0.0, 3.0)
    seed: int = 0
    tolerance: float = 1e-9

    def to_dict(self) -> dict:
        return {"lattice": list(self.lattice), "x_range": list(self.x_range),
                "xi_range": list(self.xi_range), "seed": self.seed, "tolerance": self.tolerance}


@dataclass(frozen=True)
class ProblemSpec:
    dimension: int
    horizon: float
    dynamics: DynamicsSpec
    g: CostFieldSpec
    h: CostFieldSpec
    ell: ImpulseCostSpec
    cone: ConeSpec
    target: TargetSpec
    holder: HolderSpec = field(default_factory=HolderSpec)
    validation: SamplePlan = field(default_factory=SamplePlan)
    domain: dict | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")
        n = self.dimension
        for name, part in (("dynamics", self.dynamics), ("costs.g", self.g), ("costs.h", self.h),
                           ("costs.l", self.ell), ("cone", self.cone), ("target", self.target)):
            if part.n != n:
                raise SpecError(f"{name}: dimension {part.n} does not match problem dimension {n}")

    @property
    def T(self) -> float:
        return self.horizon

    @property
    def n(self) -> int:
        return self.dimension

    def f(self, t, x) -> np.ndarray:
        return self.dynamics.f(t, x)

    def terminal_cost(self, x) -> np.ndarray:
        return self.h(self.horizon, x)

    def to_dict(self) -> dict:
        d = {
            "dimension": self.dimension,
            "horizon": self.horizon,
            "dynamics": self.dynamics.to_dict(),
            "cone": self.cone.to_dict(),
            "target": self.target.to_dict(),
            "costs": {
                "g": self.g.to_dict(),
                "h": self.h.to_dict(),
                "l": self.ell.to_dict(),
                "holder": {"L": self.holder.L, "mu": self.holder.mu, "delta": self.holder.delta},
            },
            "validation": self.validation.to_dict(),
        }
        if self.domain is not None:
            d["domain"] = copy.deepcopy(self.domain)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return spec_from_dict(d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _require(d, key, path):
    if not isinstance(d, dict):
        raise SpecError(f"{path}: expected an object")
    if key not in d:
        raise SpecError(f"{path}.{key}: missing required field" if path else f"{key}: missing required field")
    return d[key]


def spec_from_dict(d: dict) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from its JSON tree, with field-path diagnostics."""
    if not isinstance(d, dict):
        raise SpecError("spec: top level must be a JSON object")
    n = _require(d, "dimension", "")
    if not isinstance(n, int) or n < 1:
        raise SpecError("dimension: must be a positive integer")
    T = float(_require(d, "horizon", ""))
    dyn = _require(d, "dynamics", "")
    costs = _require(d, "costs", "")
    cone = _require(d, "cone", "")
    tgt = _require(d, "target", "")
    holder = costs.get("holder", {}) if isinstance(costs, dict) else {}
    val = d.get("validation", {})
    try:
        plan = SamplePlan(
            lattice=tuple(int(v) for v in val.get("lattice", (10, 10, 10))),
            x_range=tuple(float(v) for v in val.get("x_range", (-3.0, 3.0))),
            xi_range=tuple(float(v) for v in val.get("xi_range", (0.0, 3.0))),
            seed=int(val.get("seed", 0)),
            tolerance=float(val.get("tolerance", 1e-9)),
        )
    except (TypeError, ValueError) as exc:
        raise SpecError(f"validation: {exc}") from None
    if len(plan.lattice) != 3:
        raise SpecError("validation.lattice: expected three counts (t, x, xi)")
    return ProblemSpec(
        dimension=n,
        horizon=T,
        dynamics=DynamicsSpec(_require(dyn, "family", "dynamics"), dict(dyn.get("params", {})),
                              float(_require(dyn, "L", "dynamics")), n),
        g=CostFieldSpec(_require(_require(costs, "g", "costs"), "family", "costs.g"),
                        dict(costs["g"].get("params", {})), n, "g"),
        h=CostFieldSpec(_require(_require(costs, "h", "costs"), "family", "costs.h"),
                        dict(costs["h"].get("params", {})), n, "h"),
        ell=ImpulseCostSpec(_require(_require(costs, "l", "costs"), "family", "costs.l"),
                            dict(costs["l"].get("params", {})), n),
        cone=ConeSpec(tuple(tuple(g) for g in cone.get("generators", ())),
                      bool(cone.get("full_space", False)), n),
        target=TargetSpec(_require(tgt, "family", "target"), dict(tgt.get("params", {})),
                          tgt.get("boundary_tolerance"), n),
        holder=HolderSpec(float(holder.get("L", 1.0)), float(holder.get("mu", 1.0)),
                          float(holder.get("delta", 1.0))),
        validation=plan,
        domain=copy.deepcopy(d.get("domain")),
    )


def load_spec(path) -> ProblemSpec:
    """Read a JSON spec file.

    Raises
    ------
    SpecError
        On empty files, JSON syntax errors (with line and column) and on
        missing or inconsistent fields (with the field path).
    """
    text = Path(path).read_text()
    if not text.strip():
        raise SpecError(f"{path}: empty spec file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return spec_from_dict(data)


def save_spec(spec: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# hypothesis probes


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    fatal: bool = False
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        """False only when a fatal check failed."""
        return not any(c.fatal and not c.passed for c in self.checks)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "all_passed": self.all_passed,
                "checks": [c.__dict__.copy() for c in self.checks]}

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else ("FAIL (fatal)" if c.fatal else "FAIL")
            lines.append(f"{c.name:24s} {status:13s} margin={c.margin:.6g} {c.detail}".rstrip())
        return "\n".join(lines)


def sample_cone(cone: ConeSpec, count: int, radius: tuple, rng: np.random.Generator) -> np.ndarray:
    """``count`` cone points with magnitudes spread over ``radius``; the first is always 0."""
    n = cone.n
    lo, hi = float(radius[0]), float(radius[1])
    pts = [np.zeros(n)]
    if count <= 1:
        return np.array(pts)
    mags = np.linspace(max(lo, 0.0), hi, count - 1)
    if n == 1:
        signs = np.array([[1.0], [-1.0]])
        dirs = signs[cone.contains(signs)]
        choice = dirs[np.arange(count - 1) % len(dirs)]
        pts.extend(choice * mags[:, None])
        return np.array(pts)
    if cone.full_space:
        d = rng.normal(size=(count - 1, n))
    else:
        w = rng.exponential(size=(count - 1, len(cone.generators)))
        d = w @ cone.matrix
    d /= np.maximum(_norm(d), 1e-300)[:, None]
    pts.extend(d * mags[:, None])
    return np.array(pts)


def _sample_x(spec: ProblemSpec, count: int, rng) -> np.ndarray:
    lo, hi = spec.validation.x_range
    if spec.dimension == 1:
        return np.linspace(lo, hi, count)[:, None]
    return rng.uniform(lo, hi, size=(count, spec.dimension))


def _pair_margin(values: np.ndarray, xs: np.ndarray, bound: Callable) -> float:
    """Smallest ``bound(x, x') - |v(x) - v(x')|`` over all ordered pairs."""
    i, j = np.triu_indices(len(xs), 1)
    return float(np.min(bound(xs[i], xs[j]) - np.abs(values[..., i] - values[..., j]))) if len(i) else np.inf


def _check(name, margin, tol, fatal=False, detail="", strict=False) -> CheckResult:
    passed = margin > tol if strict else margin >= -tol
    return CheckResult(name, bool(passed), float(margin), fatal, detail)


def validate_spec(spec: ProblemSpec, samples: SamplePlan | None = None) -> ValidationReport:
    """Probe the standing hypotheses at sample points.

    Each check reports its worst margin (bound minus measured quantity).
    Failures are warnings except a negative subadditivity margin, which is
    fatal for the dynamic-programming scheme.
    """
    plan = samples or spec.validation
    if samples is not None:
        spec = ProblemSpec(**{**spec.__dict__, "validation": plan})
    nt, nx, nxi = plan.lattice
    tol = plan.tolerance
    rng = np.random.default_rng(plan.seed)
    n, T = spec.dimension, spec.horizon
    Lf, Lh, mu, dl = spec.dynamics.L, spec.holder.L, spec.holder.mu, spec.holder.delta
    ts = np.linspace(0.0, T, nt)
    xs = _sample_x(spec, nx, rng)
    xis = sample_cone(spec.cone, nxi, plan.xi_range, rng)
    r = _norm(xs)
    checks: list[CheckResult] = []

    def holder_bound(a, b):
        return Lh * (1.0 + np.maximum(_norm(a), _norm(b)) ** mu) * _norm(a - b) ** dl

    # f
    fx = np.stack([spec.f(t, xs) for t in ts])
    i, j = np.triu_indices(len(xs), 1)
    diff = _norm(fx[:, i] - fx[:, j])
    m = float(np.min(Lf * _norm(xs[i] - xs[j]) - diff)) if len(i) else np.inf
    checks.append(_check("f_lipschitz", m, tol * (1 + Lf)))
    f0 = _norm(np.stack([spec.f(t, np.zeros((1, n)))[0] for t in ts]))
    checks.append(_check("f_origin", float(np.min(Lf - f0)), tol))

    # g, h growth and Hölder
    gx = np.stack([spec.g(t, xs) for t in ts])
    hx = spec.terminal_cost(xs)
    growth = Lh * (1.0 + r ** (mu + dl))
    checks.append(_check("g_growth", float(min(np.min(growth - gx), np.min(gx))), tol))
    checks.append(_check("h_growth", float(min(np.min(growth - hx), np.min(hx))), tol))
    checks.append(_check("g_holder", float(np.min(holder_bound(xs[i], xs[j]) - np.abs(gx[:, i] - gx[:, j])))
                         if len(i) else np.inf, tol * (1 + Lh)))
    checks.append(_check("h_holder", _pair_margin(hx, xs, holder_bound), tol * (1 + Lh)))

    # impulse cost
    ell = spec.ell
    T_, X_, Z_ = np.meshgrid(np.arange(nt), np.arange(nx), np.arange(nxi), indexing="ij")
    tt, xx, zz = ts[T_.ravel()], xs[X_.ravel()], xis[Z_.ravel()]
    lv = ell(tt, xx, zz)
    zn = _norm(zz) ** ell.beta
    checks.append(_check("ell_positive", float(np.min(lv)), tol, strict=True,
                         detail="impulse cost must be strictly positive (fixed cost)"))
    lower = ell.l0 + ell.alpha0(tt) * zn
    checks.append(_check("ell1_lower", float(np.min(lv - lower)), tol,
                         detail=f"l0={ell.l0:g}"))
    checks.append(_check("ell1_upper", float(np.min(Lh + ell.alpha(tt) * zn - lv)), tol))
    lij = np.stack([ell(t, xs, z[None, :].repeat(len(xs), 0)) for t in ts for z in xis])
    checks.append(_check("ell2_holder", float(np.min(holder_bound(xs[i], xs[j]) - np.abs(lij[:, i] - lij[:, j])))
                         if len(i) else np.inf, tol * (1 + Lh)))

    # subadditivity on an nt x nx x nxi x nxi' lattice capped near 10^4 samples
    k = max(2, int(round((10_000 / max(nt * nx, 1)) ** 0.5)))
    xi2 = sample_cone(spec.cone, k, plan.xi_range, rng)
    A, B, C, E = np.meshgrid(np.arange(nt), np.arange(nx), np.arange(k), np.arange(k), indexing="ij")
    t4, x4, a4, b4 = ts[A.ravel()], xs[B.ravel()], xi2[C.ravel()], xi2[E.ravel()]
    saving = np.minimum(ell(t4, x4, a4) + ell(t4, x4 + a4, b4),
                        ell(t4, x4, b4) + ell(t4, x4 + b4, a4)) - ell(t4, x4, a4 + b4)
    checks.append(_check("ell3_subadditivity", float(np.min(saving) - ell.delta0), tol, fatal=True,
                         detail=f"delta0={ell.delta0:g}, samples={saving.size}"))

    # monotone in time
    t1, t2 = np.meshgrid(ts, ts, indexing="ij")
    sel = t1 <= t2
    t1, t2 = t1[sel], t2[sel]
    worst_up, worst_lo = np.inf, np.inf
    for z in xis:
        zz_ = np.broadcast_to(z, (len(xs), n))
        l1 = np.stack([ell(t, xs, zz_) for t in t1])
        l2 = np.stack([ell(t, xs, zz_) for t in t2])
        worst_up = min(worst_up, float(np.min(l1 - l2)))
        worst_lo = min(worst_lo, float(np.min(l2 - (l1 - Lh * np.abs(t2 - t1)[:, None]))))
    checks.append(_check("ell4_monotone", min(worst_up, worst_lo), tol))
    tf = np.linspace(0.0, T, 201)
    a_inc = np.max(np.diff(ell.alpha(tf))) if len(tf) > 1 else 0.0
    a0_inc = np.max(np.diff(ell.alpha0(tf))) if len(tf) > 1 else 0.0
    a_min = min(np.min(ell.alpha(tf)), np.min(ell.alpha0(tf)))
    checks.append(_check("alpha_decreasing", float(min(-a_inc, -a0_inc, a_min)), tol,
                         detail="alpha, alpha0 positive and nonincreasing"))

    # convexity of D and closure of K
    cand = np.vstack([xs, rng.uniform(plan.x_range[0], plan.x_range[1], size=(200, n))])
    inside = cand[spec.target.in_closure(cand)]
    if len(inside) >= 2:
        p, q = np.triu_indices(len(inside), 1)
        mid = 0.5 * (inside[p] + inside[q])
        lvl = spec.target.level(mid)
        checks.append(_check("target_convex", float(np.min(spec.target.eps_bd - lvl)), tol))
    else:
        checks.append(CheckResult("target_convex", True, np.inf, detail="fewer than two samples in the target"))
    p, q = np.triu_indices(len(xis))
    sums = xis[p] + xis[q]
    ok = spec.cone.contains(sums)
    checks.append(CheckResult("cone_closure", bool(np.all(ok)), 0.0 if np.all(ok) else -1.0,
                              detail=f"{int(np.sum(~ok))} sums outside K"))
    return ValidationReport(checks)


def check_compatibility(spec: ProblemSpec, boundary_samples, candidates=None, tol: float = 1e-9):
    """Compatibility of terminal and impulse costs at points outside the open target.

    See :func:`impulse_qvi.geometry.check_compatibility`.
    """
    from .geometry import check_compatibility as _check_compat

    return _check_compat(spec, boundary_samples, candidates, tol)
