from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from impulse_qvi import (ImpulseCandidateSet, ImpulseControl, ORACLES, SpatialGrid, evaluate_cost, example,
                         example_dict, get_oracle, min_impulse_to_target, solve, spec_from_dict)
from impulse_qvi.verification import (A0, A1, C_HIGH, C_LOW, compare_to_oracle, continuity_modulus,
                                      default_tol_acc, dpp_check, growth_bound, growth_bound_check, nu_constant,
                                      viscosity_residual)


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_oracle_self_checks(name):
    get_oracle(name).self_check()


def test_v2_oracle_continuity_from_both_sides():
    v2 = get_oracle("V2")
    for b in (A0, A1):
        lo = v2.evaluate(0.0, np.array([[b - 1e-13 - 1.0]]), 1.0)
        hi = v2.evaluate(0.0, np.array([[b + 1e-13 - 1.0]]), 1.0)
        assert abs(float(lo[0]) - float(hi[0])) < 1e-11


def test_v1_oracle_jumps():
    out = get_oracle("V1").self_check()
    assert out["jump@0"] == pytest.approx(1.0, abs=1e-12)
    assert out["jump@1"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("s, value", [(0.0, 247 / 180), (0.4, 0.0), (0.9, 103 / 180 + 0.9), (A0, C_LOW - A0),
                                      (A1, C_HIGH + A1)])
def test_v2_oracle_values(s, value):
    assert float(get_oracle("V2").evaluate(0.0, np.array([[s - 1.0]]), 1.0)[0]) == pytest.approx(value, abs=1e-12)


def test_unknown_oracle():
    with pytest.raises(KeyError):
        get_oracle("V9")


def test_oracle_comparison_against_itself(v2_small):
    oracle = get_oracle("V2")
    X = v2_small.grid.nodes()
    exact = np.stack([oracle.evaluate(t, X, 1.0) for t in v2_small.times])
    vg = dataclasses.replace(v2_small, values=exact)
    table = compare_to_oracle(vg, oracle)
    assert table.max_error == 0.0 and table.passed
    assert table.excluded > 0


def test_breakpoint_band_honored(v1_grid):
    table = compare_to_oracle(v1_grid, get_oracle("V1"), band=0)
    assert not table.passed
    assert compare_to_oracle(v1_grid, get_oracle("V1")).passed


def test_residual_is_zero_on_flat_band(v1_spec, v1_grid):
    report = viscosity_residual(v1_spec, v1_grid)
    assert report.max_residual < 1e-9


def test_residual_shrinks_under_refinement(v2_spec, v2_series):
    # at 100 cells the kink band covers most of the informative nodes
    r = [viscosity_residual(v2_spec, v2_series[n]).max_residual for n in (200, 400, 800)]
    assert r[0] / r[1] >= 1.8 and r[1] / r[2] >= 1.8, r


def test_modulus_stable_for_v2(v2_series):
    rep = continuity_modulus(v2_series[100], refined=v2_series[200])
    assert rep.status == "OK" and rep.stable


def test_modulus_flags_v1_discontinuity(v1_spec):
    coarse = solve(v1_spec, SpatialGrid((-2.0,), (3.0,), (100,)), 40)
    fine = solve(v1_spec, SpatialGrid((-2.0,), (3.0,), (200,)), 80)
    rep = continuity_modulus(coarse, refined=fine)
    assert rep.status == "DISCONTINUITY_SUSPECTED"
    assert rep.growth == pytest.approx(2.0)


def test_modulus_of_constant_is_zero(v2_small):
    vg = dataclasses.replace(v2_small, values=np.full_like(v2_small.values, 0.7))
    assert continuity_modulus(vg).C_hat == 0.0


def test_modulus_needs_enough_pairs(v2_spec):
    vg = solve(v2_spec, SpatialGrid((-1.0,), (2.0,), (6,)), 4)
    assert continuity_modulus(vg).status == "INSUFFICIENT_DATA"


def test_growth_bound_v1(v1_spec, v1_grid):
    rep = growth_bound_check(v1_spec, v1_grid)
    assert rep.passed
    # V1 never exceeds 1 + |x + T - t|
    X = v1_grid.grid.nodes()[:, 0]
    s = X[None, :] + 1.0 - v1_grid.times[:, None]
    fin = np.isfinite(v1_grid.values)
    assert np.all(v1_grid.values[fin] <= 1.0 + np.abs(s[fin]) + 0.02)


def test_growth_bound_conic_target():
    d = example_dict("ex25")
    d["target"] = {"family": "conic_wedge", "params": {"A": [[-1.0, 1.0], [-1.0, -1.0]]}}
    d["cone"] = {"generators": [[1.0, 0.0]]}
    spec = spec_from_dict(d)
    C0 = nu_constant(spec)
    rng = np.random.default_rng(0)
    for r in (1.0, 5.0, 10.0):
        for _ in range(5):
            u = rng.normal(size=2)
            x = r * u / np.linalg.norm(u)
            z = np.array([-x[0], x[1]])  # flow of the rotation over [0, pi]
            m = min_impulse_to_target(spec, z, ImpulseCandidateSet.build(spec.cone, 25.0, step=0.01))
            # any admissible control bounds V from above
            upper = evaluate_cost(spec, 0.0, x, ImpulseControl.single(spec.horizon, m.xi)).total
            assert upper <= float(growth_bound(spec, 0.0, x, C0)[0])


def test_dpp_checks_v1(v1_spec, v1_grid):
    rep = dpp_check(v1_spec, v1_grid)
    assert rep.opt1_violations == 0 and rep.opt2_violations == 0
    assert rep.post_jump_min_gap >= rep.delta0 - 2 * rep.tol_acc
    assert rep.passed


def test_dpp_checks_v2(v2_spec, v2_grid):
    rep = dpp_check(v2_spec, v2_grid)
    assert rep.passed, rep


def test_default_tolerance(v2_grid):
    assert default_tol_acc(v2_grid) == pytest.approx(2 * (0.01 + 0.005))


def test_v4_needs_outflow_exclusion():
    spec = example("ex31_v4")
    vg = solve(spec, SpatialGrid((-1.0,), (2.0,), (120,)), 60)
    table = compare_to_oracle(vg, get_oracle("V4"), exclude_outflow=True)
    assert table.passed
    assert math.isfinite(table.max_error)
