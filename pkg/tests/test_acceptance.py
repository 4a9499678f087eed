"""Acceptance criteria, one test (and one printed PASS/FAIL line) per criterion item."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from impulse_qvi import (EnumerationBudget, ImpulseCandidateSet, ImpulseControl, SpatialGrid, brute_force_value,
                         check_trajectory_bounds, compare_mask, compare_solutions, compare_to_oracle,
                         compute_reachable, dpp_check, example, example_dict, get_oracle, integrate,
                         intervention_terminal, solve, spec_from_dict, validate_spec)
from impulse_qvi.verification import B0, B1, default_tol_acc

from .conftest import BOX, STEPS


@pytest.fixture()
def line(capsys):
    def emit(tag: str, label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{tag}] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    return emit


def test_c1_v1_reproduction(v1_spec, line):
    start = time.perf_counter()
    vg = solve(v1_spec, SpatialGrid(*BOX), STEPS)
    seconds = time.perf_counter() - start
    dx = float(vg.grid.spacing[0])
    table = compare_to_oracle(vg, get_oracle("V1"), band=2, tol_acc=2 * dx)
    ok = table.passed and seconds <= 60.0
    line("C1", "V1 reproduction", ok,
         f"max_err={table.max_error:.3g} tol={2 * dx:.3g} compared={table.compared} runtime={seconds:.1f}s")
    assert table.passed and seconds <= 60.0


def test_c2_v2_reproduction(v2_grid, line):
    tol = default_tol_acc(v2_grid)
    table = compare_to_oracle(v2_grid, get_oracle("V2"), band=2, tol_acc=tol)
    X = v2_grid.grid.nodes()[:, 0]
    s = X + 1.0 - v2_grid.times[0]
    at0 = float(v2_grid.values[0][np.argmin(np.abs(s - 0.0))])
    at09 = float(v2_grid.values[0][np.argmin(np.abs(s - 0.9))])
    consts = abs(at0 - 247 / 180) <= tol and abs(at09 - (103 / 180 + 0.9)) <= tol
    ok = table.passed and consts
    line("C2", "V2 reproduction", ok,
         f"max_err={table.max_error:.3g} tol={tol:.3g} V(s=0)={at0:.6f} V(s=0.9)={at09:.6f}")
    assert ok


def test_c3_v3_v4_reproduction(line):
    grid = SpatialGrid(*BOX)
    v3 = solve(example("ex31_v3"), grid, STEPS)
    v4 = solve(example("ex31_v4"), grid, STEPS)
    tol = default_tol_acc(v3)
    t3 = compare_to_oracle(v3, get_oracle("V3"), tol_acc=tol)
    X = grid.nodes()[:, 0]
    s = X[None, :] + 1.0 - v3.times[:, None]
    inf_exact = bool(np.all(np.isinf(v3.values[s > 1 + 1e-9])) and np.all(np.isfinite(v3.values[s <= 1 - 1e-9])))
    t4 = compare_to_oracle(v4, get_oracle("V4"), tol_acc=tol, exclude_outflow=True)
    stays = (X[None, :] + 1.0 - v4.times[:, None]) <= grid.upper[0] + 1e-12
    v4_finite = bool(np.all(np.isfinite(v4.values[stays])))
    ok = t3.passed and inf_exact and t4.passed and v4_finite
    line("C3", "V3/V4 reproduction", ok,
         f"V3 max_err={t3.max_error:.3g} inf_exact={inf_exact}; V4 max_err={t4.max_error:.3g} "
         f"finite_in_box={v4_finite} outflow_nodes={int((~stays).sum())}; tol={tol:.3g}")
    assert ok


def test_c4_terminal_obstacle(line):
    spec = example("ex31_v2")
    cands = ImpulseCandidateSet.for_spec(spec, 2.0, step=1e-4)
    r0 = intervention_terminal(spec, [0.0], cands)
    r1 = intervention_terminal(spec, [1.0], cands)
    res = cands.step
    ok = (abs(r0.value - 247 / 180) <= 2 * res and abs(r1.value - 283 / 180) <= 2 * res
          and abs(r0.landing[0] - B0) <= res and abs(r1.landing[0] - B1) <= res)
    line("C4", "terminal obstacle", ok,
         f"N(0)={r0.value:.6f} N(1)={r1.value:.6f} b(0)={r0.landing[0]:.5f} b(1)={r1.landing[0]:.5f} step={res:g}")
    assert ok


@pytest.mark.parametrize("case", ["i", "ii", "iii", "iv"])
def test_c5_half_line_domains(case, line):
    spec = example(f"ex24_{case}")
    grid = SpatialGrid((-3.0,), (3.0,), (600,))
    mask = compute_reachable(spec, grid, 100)
    times = mask.times[np.linspace(0, 99, 10).astype(int)]
    report = compare_mask(mask, get_oracle(f"Ex24_domains_{case}"), times, cells=1)
    ok = report.passed and report.slices_checked == 10
    line("C5", f"Example half-line domain ({case})", ok,
         f"slices={report.slices_checked} mismatches={report.mismatches} beyond_one_cell={report.far_mismatches}")
    assert ok


def test_c5_rotation_reachability(line):
    spec = example("ex25")
    grid = SpatialGrid((-3.0, -3.0), (3.0, 3.0), (200, 200))
    T = spec.horizon
    quarter, beyond = T - math.pi / 2, T - math.pi / 2 - 0.3
    times = np.union1d(np.linspace(0.0, T, 129), [beyond, quarter])
    start = time.perf_counter()
    mask = compute_reachable(spec, grid, times)
    seconds = time.perf_counter() - start
    report = compare_mask(mask, get_oracle("Ex25_reach"), [quarter], cells=1)
    full = bool(mask.mask_at(beyond).all())
    ok = report.passed and full
    line("C5", "rotation reachability", ok,
         f"quarter-turn mismatches={report.mismatches} beyond_one_cell={report.far_mismatches} "
         f"full_grid_at_T-pi/2-0.3={full} runtime={seconds:.1f}s")
    assert ok


@pytest.mark.parametrize("name", ["ex31_v1", "ex31_v2"])
def test_c6_brute_force_equivalence(name, v1_grid, v2_grid, line):
    spec = example(name)
    vg = v1_grid if name == "ex31_v1" else v2_grid
    step = 0.01
    cands = ImpulseCandidateSet.build(spec.cone, 4.0, step=step, levels=0)
    tol = default_tol_acc(vg) + step
    rng = np.random.default_rng(0)
    fk, fi = np.nonzero(np.isfinite(vg.values))
    pick = rng.choice(len(fk), 50, replace=False)
    X = vg.grid.nodes()
    errs = []
    for p in pick:
        k, i = fk[p], fi[p]
        r = brute_force_value(spec, float(vg.times[k]), X[i], EnumerationBudget(n_max=2, time_points=3,
                                                                                candidates=cands))
        errs.append(abs(r.value - vg.values[k, i]))
    worst = float(np.max(errs))
    ok = worst <= tol
    line("C6", f"brute-force equivalence ({name})", ok, f"nodes=50 max_diff={worst:.3g} tol={tol:.3g}")
    assert ok


@pytest.mark.parametrize("name", ["ex31_v1", "ex31_v2"])
def test_c7_dpp_inequalities(name, v1_grid, v2_grid, line):
    spec = example(name)
    vg = v1_grid if name == "ex31_v1" else v2_grid
    rep = dpp_check(spec, vg, tol=1e-9)
    ok = rep.opt1_violations == 0 and rep.opt2_violations == 0
    line("C7", f"DPP inequalities, scheme form ({name})", ok,
         f"finite_nodes={rep.finite_nodes} V<=N[V] violations={rep.opt1_violations} "
         f"one-step violations={rep.opt2_violations} tol=1e-9")
    assert ok


@pytest.mark.xfail(strict=True, reason="an interpolating scheme undershoots plain interpolation at kinks and jumps")
@pytest.mark.parametrize("name", ["ex31_v1", "ex31_v2"])
def test_c7_dpp_literal_interpolation(name, v1_grid, v2_grid, line):
    spec = example(name)
    vg = v1_grid if name == "ex31_v1" else v2_grid
    rep = dpp_check(spec, vg, tol=1e-9)
    ok = rep.opt2_interp_violations == 0
    line("C7", f"DPP one-step inequality with plain interpolation ({name})", ok,
         f"violations={rep.opt2_interp_violations} worst={rep.opt2_interp_worst:.3g} tol=1e-9")
    assert ok


@pytest.mark.parametrize("name", ["ex31_v1", "ex31_v2", "ex25"])
def test_c7_subadditivity(name, line):
    spec = example(name)
    check = validate_spec(spec)["ell3_subadditivity"]
    ok = check.passed
    line("C7", f"subadditivity margin ({name})", ok, f"margin_minus_delta0={check.margin:.3g} {check.detail}")
    assert ok


@pytest.mark.parametrize("name", ["ex31_v1", "ex31_v2"])
def test_c7_post_jump_gap(name, v1_grid, v2_grid, line):
    spec = example(name)
    vg = v1_grid if name == "ex31_v1" else v2_grid
    rep = dpp_check(spec, vg)
    need = rep.delta0 - 2 * rep.tol_acc
    ok = rep.jump_nodes > 0 and rep.post_jump_min_gap >= need
    line("C7", f"post-jump gap ({name})", ok,
         f"jump_nodes={rep.jump_nodes} min_gap={rep.post_jump_min_gap:.5f} required={need:.5f}")
    assert ok


def test_c7_refinement_halving(v2_series, line):
    errs = [compare_to_oracle(v2_series[n], get_oracle("V2")).max_error for n in (100, 200, 400)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = min(ratios) >= 1.8
    line("C7", "V2 refinement halving", ok,
         f"max_err={', '.join(f'{e:.3g}' for e in errs)} ratios={', '.join(f'{r:.2f}' for r in ratios)}")
    assert ok


def test_c7_trajectory_bounds(line):
    rng = np.random.default_rng(0)
    base = example_dict("ex25")
    failures = 0
    for _ in range(100):
        A = rng.uniform(-1.5, 1.5, (2, 2))
        b = rng.uniform(-1.5, 1.5, 2)
        L = max(float(np.linalg.norm(A, 2)), float(np.linalg.norm(b))) + 1e-6
        d = dict(base, dynamics={"family": "affine", "params": {"A": A.tolist(), "b0": b.tolist()}, "L": L},
                 cone={"full_space": True})
        spec = spec_from_dict(d)
        m = int(rng.integers(0, 5))
        taus = np.sort(rng.uniform(0.0, spec.horizon, m))
        ctrl = ImpulseControl(tuple(taus), tuple(rng.uniform(-2, 2, (m, 2))), 0.0)
        x = rng.uniform(-3, 3, 2)
        traj = integrate(spec, 0.0, x, ctrl, step=spec.horizon / 400)
        failures += not check_trajectory_bounds(spec, traj, 0.0, x, ctrl, max_pairs=500).passed
    ok = failures == 0
    line("C7", "trajectory bounds", ok, f"draws=100 failures={failures}")
    assert ok


def test_c8_terminal_identity(v2_spec, line):
    grids = [(SpatialGrid((-1.0,), (2.0,), (60,)), 30), (SpatialGrid((-1.0,), (2.0,), (400,)), 200),
             (SpatialGrid(*BOX), STEPS)]
    same, diffs = [], []
    for grid, steps in grids:
        vc = solve(v2_spec, grid, steps, "constrained")
        vu = solve(v2_spec, grid, steps, "unconstrained")
        rep = compare_solutions(vc, vu)
        same.append(rep.terminal_identical and np.array_equal(vc.values[-1], vu.values[-1]))
        diffs.append(rep.max_abs_diff)
    ok = all(same)
    line("C8", "terminal slice identity", ok,
         f"grids={len(grids)} bitwise_identical={same} interior_max_diff={', '.join(f'{d:.3g}' for d in diffs)}")
    assert ok
