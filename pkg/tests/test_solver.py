from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulse_qvi import (CONTINUE, INFEASIBLE, JUMP, SolverOptions, SpatialGrid, SynthesisIncomplete, ValueGrid,
                         dpp_check, evaluate_cost, example, intervention, solve, solve_unconstrained_compare,
                         synthesize_control)
from impulse_qvi.solver import LatticeIntervention

SMALL = SpatialGrid((-1.0,), (2.0,), (60,))


@pytest.fixture(scope="module")
def v3_small():
    return solve(example("ex31_v3"), SMALL, 30)


def test_rejects_bad_arguments(v2_spec):
    with pytest.raises(ValueError):
        solve(v2_spec, SMALL, 10, mode="sideways")
    with pytest.raises(ValueError):
        solve(v2_spec, SpatialGrid((-1.0, -1.0), (1.0, 1.0), (4, 4)), 10)


def test_value_grid_shapes(v2_small):
    vg = v2_small
    assert vg.values.shape == (61, 121)
    assert vg.times[0] == 0.0 and vg.times[-1] == 1.0
    for name in ValueGrid.ARRAYS:
        arr = getattr(vg, name)
        if arr is not None and name not in ("times", "iterations"):
            assert arr.shape[:2] == vg.values.shape, name


def test_value_is_min_of_branches(v2_small):
    vg = v2_small
    assert np.array_equal(vg.values, np.minimum(vg.no_impulse, vg.impulse_branch))


def test_policy_codes(v3_small):
    vg = v3_small
    inf = ~np.isfinite(vg.values)
    assert np.all(vg.policy[inf] == INFEASIBLE)
    assert set(np.unique(vg.policy[~inf])) <= {CONTINUE, JUMP}
    assert np.any(vg.policy == JUMP)


def test_infeasible_region_matches_cone(v3_small):
    vg = v3_small
    X = vg.grid.nodes()[:, 0]
    s = X[None, :] + 1.0 - vg.times[:, None]
    assert np.all(np.isinf(vg.values[s > 1 + 1e-9]))
    assert np.all(np.isfinite(vg.values[s < 1 - 1e-9]))


def test_fixed_point_converges_within_cap(v2_small):
    assert not v2_small.flagged
    assert int(np.max(v2_small.iterations)) <= v2_small.meta["iteration_cap"]


def test_lattice_intervention_matches_pointwise(v2_small, v2_spec):
    vg = v2_small
    op = LatticeIntervention(v2_spec, vg.grid, vg.offset_radius)
    N, _ = op.apply(vg.values[10], float(vg.times[10]))
    X = vg.grid.nodes()
    for i in (0, 17, 60, 120):
        ref, _ = intervention(v2_spec, vg.grid, vg.values[10], float(vg.times[10]), X[i], outside="inf")
        assert N.ravel()[i] == pytest.approx(ref, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 2.0), st.integers(0, 60))
def test_scheme_is_monotone_in_terminal_data(c, bump_at):
    spec = example("ex31_v2")
    grid = SpatialGrid((-1.0,), (2.0,), (60,))
    base = solve(spec, grid, 20)
    raised = base.values[-1].copy()
    raised[bump_at] += c
    raised += 0.1 * c
    up = solve(spec, grid, 20, options=SolverOptions(terminal=raised))
    fin = np.isfinite(base.values)
    assert np.all(up.values[fin] >= base.values[fin] - 1e-12)


def test_npz_round_trip_is_bit_identical(tmp_path, v2_small, v2_spec):
    path = tmp_path / "v.npz"
    v2_small.save(path)
    back = ValueGrid.load(path)
    for name in ValueGrid.ARRAYS:
        a, b = getattr(v2_small, name), getattr(back, name)
        assert (a is None and b is None) or np.array_equal(a, b, equal_nan=True), name
    assert back.meta == v2_small.meta
    assert dpp_check(v2_spec, back).to_dict() == dpp_check(v2_spec, v2_small).to_dict()


def test_csv_export(tmp_path, v2_small):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    v2_small.to_csv(a, "spec_hash=x")
    v2_small.to_csv(b, "spec_hash=x")
    assert a.read_bytes() == b.read_bytes()
    with open(a) as fh:
        assert fh.readline().startswith("# spec_hash=")
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "V", "policy", "xi1"]
    assert len(rows) == 1 + v2_small.values.size
    assert {r[3] for r in rows[1:]} <= {"CONTINUE", "JUMP", "INFEASIBLE"}


def test_solve_is_deterministic(v2_spec):
    a = solve(v2_spec, SMALL, 20)
    b = solve(v2_spec, SMALL, 20)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.policy, b.policy)


def test_unconstrained_terminal_identity(v2_spec):
    report, vc, vu = solve_unconstrained_compare(v2_spec, SMALL, 30)
    assert report.terminal_identical
    assert np.array_equal(vc.values[-1], vu.values[-1])


@pytest.mark.parametrize("x, cost, n_jumps", [(-1.3, 1.3, 1), (-0.5, 0.0, 0), (1.0, 2.0, 1)])
def test_synthesis_v1(v1_spec, v1_grid, x, cost, n_jumps):
    ctrl = synthesize_control(v1_spec, v1_grid, 0.0, [x])
    assert len(ctrl) == n_jumps
    total = evaluate_cost(v1_spec, 0.0, [x], ctrl).total
    assert total == pytest.approx(cost, abs=0.02)


def test_synthesis_v2_attains_value(v2_spec, v2_grid):
    ctrl = synthesize_control(v2_spec, v2_grid, 0.0, [-1.0])
    total = evaluate_cost(v2_spec, 0.0, [-1.0], ctrl).total
    assert total == pytest.approx(247 / 180, abs=0.01)
    assert total >= float(v2_grid.value_at(0.0, [-1.0])[0]) - 0.03


def test_synthesis_reports_failure(v3_small):
    with pytest.raises(SynthesisIncomplete) as info:
        synthesize_control(example("ex31_v3"), v3_small, 0.0, [0.5])
    assert len(info.value.partial) == 0


def test_value_at_grid_node(v2_small):
    vg = v2_small
    assert float(vg.value_at(0.0, [0.0])[0]) == pytest.approx(vg.values[0, 40])
    with pytest.raises(ValueError):
        vg.slice_index(0.5 + 1e-3)
    assert math.isfinite(vg.dt)
