from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulse_qvi import SpatialGrid, compute_reachable, example, get_oracle, make_partition, reachable_at
from impulse_qvi.reachability import UNKNOWN, dilate_by_cone
from impulse_qvi.verification import compare_mask

LINE = SpatialGrid((-3.0,), (3.0,), (120,))


@pytest.mark.parametrize("case", ["i", "ii", "iii", "iv"])
def test_half_line_domains(case):
    spec = example(f"ex24_{case}")
    mask = compute_reachable(spec, LINE, 10)
    report = compare_mask(mask, get_oracle(f"Ex24_domains_{case}"))
    assert report.slices_checked == 11
    assert report.passed, report


def test_terminal_slice_is_target_minus_cone():
    spec = example("ex24_i")
    mask = compute_reachable(spec, LINE, 4)
    x = LINE.nodes()[:, 0]
    assert np.array_equal(mask.slices[-1], x <= 1.0 + 1e-12)


def test_dilation_along_negative_generator():
    spec = example("ex24_ii")
    phi = np.where(np.abs(LINE.nodes()[:, 0]) < 0.2, -1.0, 1.0)
    out = dilate_by_cone(spec, LINE, phi)
    x = LINE.nodes()[:, 0]
    # K = (-inf, 0], so S - K reaches every point to the right of S
    assert np.array_equal(out <= 0, x > -0.2)


def test_partition_must_increase():
    with pytest.raises(ValueError):
        make_partition(example("ex24_i"), [0.0, 0.5, 0.4, 1.0])


def test_partition_always_ends_at_horizon():
    times = make_partition(example("ex24_i"), [0.0, 0.5])
    assert times[-1] == 1.0


def test_refinement_only_grows_sets():
    spec = example("ex25")
    grid = SpatialGrid((-3.0, -3.0), (3.0, 3.0), (48, 48))
    T = spec.horizon
    base = make_partition(spec, 16)
    coarse = compute_reachable(spec, grid, [0.0, T / 2, T], base=base)
    fine = compute_reachable(spec, grid, [0.0, T / 4, T / 2, 3 * T / 4, T], base=base)
    assert fine.contains(coarse)
    assert np.all(fine.added_volume(coarse) >= 0)


def test_query_is_tri_state():
    spec = example("ex24_i")
    mask = compute_reachable(spec, LINE, 10)
    assert reachable_at(spec, 0.0, [-0.5], mask) is True
    assert reachable_at(spec, 0.0, [2.5], mask) is False
    assert reachable_at(spec, 0.0, [7.0], mask) is UNKNOWN
    assert reachable_at(spec, 1.5, [0.0], mask) is UNKNOWN


def test_query_between_partition_times_flows_forward():
    spec = example("ex24_i")
    mask = compute_reachable(spec, LINE, 2)
    # at t = 0.25 the free flow carries x = 0.1 to 0.35 at t = 0.5, still reachable
    assert reachable_at(spec, 0.25, [0.1], mask) is True
    assert reachable_at(spec, 0.25, [1.5], mask) is False


def test_mask_csv_is_deterministic(tmp_path):
    spec = example("ex24_iv")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    compute_reachable(spec, LINE, 5).to_csv(a, "h")
    compute_reachable(spec, LINE, 5).to_csv(b, "h")
    assert a.read_bytes() == b.read_bytes()


def test_rotation_quarter_turn_coarse():
    spec = example("ex25")
    grid = SpatialGrid((-3.0, -3.0), (3.0, 3.0), (60, 60))
    T = spec.horizon
    times = np.union1d(np.linspace(0.0, T, 41), [T - math.pi / 2])
    mask = compute_reachable(spec, grid, times)
    report = compare_mask(mask, get_oracle("Ex25_reach"), [T - math.pi / 2, T])
    assert report.passed, report


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.9, 2.9), st.integers(0, 10))
def test_half_line_query_matches_closed_form(x, k):
    spec = example("ex24_i")
    mask = _MASK_CACHE.setdefault("i", compute_reachable(spec, LINE, 10))
    t = k / 10
    got = reachable_at(spec, t, [x], mask)
    s = x + 1.0 - t
    if abs(s - 1.0) > 2 * LINE.spacing[0]:
        assert got is (s <= 1.0)


_MASK_CACHE: dict = {}
