"""Built-in problem instances with known closed-form answers."""

from __future__ import annotations

import copy
import math

from .model import ProblemSpec, spec_from_dict

POS = [[1.0]]
NEG = [[-1.0]]


def _one_d(h: dict, cone: dict, target: dict, horizon: float = 1.0, holder_L: float = 20.0) -> dict:
    return {
        "dimension": 1,
        "horizon": horizon,
        "dynamics": {"family": "constant_drift", "params": {"drift": [1.0]}, "L": 1.0},
        "cone": cone,
        "target": target,
        "costs": {
            "g": {"family": "zero"},
            "h": h,
            "l": {"family": "affine_norm", "params": {"c0": 1.0, "alpha": 1.0, "beta": 1.0}},
            "holder": {"L": holder_L, "mu": 1.0, "delta": 1.0},
        },
        "validation": {"x_range": [-3.0, 3.0], "xi_range": [0.0, 3.0], "seed": 0},
    }


def _interval(lo, hi) -> dict:
    return {"family": "box", "params": {"lower": [lo], "upper": [hi]}}


ZERO = {"family": "zero"}
PARABOLA = {"family": "quadratic", "params": {"scale": 9.0, "center": [0.4], "offset": 0.0}}
FULL = {"full_space": True}


def _v1() -> dict:
    return _one_d(ZERO, FULL, _interval(0.0, 1.0))


def _v2() -> dict:
    return _one_d(PARABOLA, FULL, _interval(0.0, 1.0))


def _v3() -> dict:
    return _one_d(PARABOLA, {"generators": POS}, _interval(0.0, 1.0))


def _v4() -> dict:
    return _one_d(PARABOLA, {"generators": POS}, _interval(0.0, None))


def _ex24(case: str) -> dict:
    cones = {"i": POS, "ii": NEG, "iii": POS, "iv": POS}
    targets = {"i": (0.0, 1.0), "ii": (0.0, 1.0), "iii": (0.0, None), "iv": (None, 0.0)}
    return _one_d(ZERO, {"generators": cones[case]}, _interval(*targets[case]))


def _ex25(horizon: float = math.pi) -> dict:
    return {
        "dimension": 2,
        "horizon": horizon,
        "dynamics": {"family": "rotation", "params": {"omega": 1.0}, "L": 1.0},
        "cone": {"generators": [[1.0, 0.0], [0.0, 1.0]]},
        "target": {"family": "ball", "params": {"center": [0.0, 0.0], "radius": 1.0}},
        "costs": {
            "g": ZERO,
            "h": ZERO,
            "l": {"family": "affine_norm", "params": {"c0": 1.0, "alpha": 1.0, "beta": 1.0}},
            "holder": {"L": 1.0, "mu": 1.0, "delta": 1.0},
        },
        "validation": {"x_range": [-3.0, 3.0], "xi_range": [0.0, 3.0], "seed": 0},
    }


def _with_domain(build, bounds, cells):
    def make():
        d = build()
        d["domain"] = {"bounds": bounds, "cells": cells}
        return d
    return make


BUILDERS = {
    "ex31_v1": _with_domain(_v1, [[-2.0, 3.0]], [500]),
    "ex31_v2": _with_domain(_v2, [[-1.0, 2.0]], [400]),
    "ex31_v3": _with_domain(_v3, [[-1.0, 2.0]], [400]),
    "ex31_v4": _with_domain(_v4, [[-1.0, 2.0]], [400]),
    "ex24_i": _with_domain(lambda: _ex24("i"), [[-3.0, 3.0]], [600]),
    "ex24_ii": _with_domain(lambda: _ex24("ii"), [[-3.0, 3.0]], [600]),
    "ex24_iii": _with_domain(lambda: _ex24("iii"), [[-3.0, 3.0]], [600]),
    "ex24_iv": _with_domain(lambda: _ex24("iv"), [[-3.0, 3.0]], [600]),
    "ex25": _with_domain(_ex25, [[-3.0, 3.0], [-3.0, 3.0]], [200, 200]),
}


def example_dict(name: str) -> dict:
    """JSON tree of a built-in example, including a default grid under ``domain``."""
    try:
        return copy.deepcopy(BUILDERS[name]())
    except KeyError:
        raise KeyError(f"unknown example {name!r}; known: {', '.join(sorted(BUILDERS))}") from None


def example(name: str) -> ProblemSpec:
    """Return a built-in :class:`ProblemSpec` by name (see ``BUILDERS``)."""
    return spec_from_dict(example_dict(name))
