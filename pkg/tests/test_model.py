from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulse_qvi import SamplePlan, SpecError, example, example_dict, load_spec, save_spec, spec_from_dict, validate_spec
from impulse_qvi.catalog import BUILDERS
from impulse_qvi.model import check_compatibility, sample_cone
from impulse_qvi.geometry import boundary_samples


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_round_trip_preserves_hash(name, tmp_path):
    spec = example(name)
    path = tmp_path / "s.json"
    save_spec(spec, path)
    again = load_spec(path)
    assert again.spec_hash() == spec.spec_hash()
    assert again.to_dict() == spec.to_dict()


def test_hash_changes_with_content():
    a = example_dict("ex31_v2")
    b = example_dict("ex31_v2")
    b["costs"]["h"]["params"]["scale"] = 8.0
    assert spec_from_dict(a).spec_hash() != spec_from_dict(b).spec_hash()


def test_empty_file_is_rejected(tmp_path):
    p = tmp_path / "e.json"
    p.write_text("  \n")
    with pytest.raises(SpecError, match="empty"):
        load_spec(p)


def test_syntax_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"dimension": 1,\n "horizon": }')
    with pytest.raises(SpecError, match="line 2"):
        load_spec(p)


def test_missing_field_reports_path():
    d = example_dict("ex31_v1")
    del d["dynamics"]["L"]
    with pytest.raises(SpecError, match="dynamics"):
        spec_from_dict(d)


def test_dimension_mismatch():
    d = example_dict("ex31_v1")
    d["target"] = {"family": "ball", "params": {"center": [0.0, 0.0], "radius": 1.0}}
    with pytest.raises(SpecError):
        spec_from_dict(d)


def test_unknown_family():
    d = example_dict("ex31_v1")
    d["dynamics"]["family"] = "chaotic"
    with pytest.raises(SpecError):
        spec_from_dict(d)


def test_nonpositive_horizon():
    d = example_dict("ex31_v1")
    d["horizon"] = 0.0
    with pytest.raises(SpecError):
        spec_from_dict(d)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_catalog_passes_fatal_checks(name):
    report = validate_spec(example(name))
    assert report.ok
    assert report["ell3_subadditivity"].passed


def test_validation_is_seed_deterministic():
    spec = example("ex31_v2")
    a = validate_spec(spec, SamplePlan(seed=3)).to_dict()
    b = validate_spec(spec, SamplePlan(seed=3)).to_dict()
    assert a == b


def test_overstated_delta0_is_fatal():
    d = example_dict("ex31_v1")
    d["costs"]["l"]["params"]["delta0"] = 2.0
    report = validate_spec(spec_from_dict(d))
    assert not report["ell3_subadditivity"].passed
    assert not report.ok


def test_v1_terminal_compatibility_fails_v2_holds():
    v1, v2 = example("ex31_v1"), example("ex31_v2")
    pts = boundary_samples(v1, [-3.0], [3.0], 121)
    assert not check_compatibility(v1, pts).passed
    assert check_compatibility(v2, boundary_samples(v2, [-3.0], [3.0], 121)).passed


def test_sample_cone_stays_in_cone():
    spec = example("ex25")
    xi = sample_cone(spec.cone, 200, (0.0, 3.0), np.random.default_rng(0))
    assert np.allclose(xi[0], 0.0)
    assert np.all(spec.cone.contains(xi))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=2, max_size=2), st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_cone_closed_under_addition(a, b):
    cone = example("ex25").cone
    a, b = np.array(a), np.array(b)
    assert cone.contains(a + b).all()
    assert cone.contains(2.5 * a).all()


def test_affine_autonomy_flag():
    d = example_dict("ex25")
    d["dynamics"] = {"family": "affine", "params": {"A": [[0, 1], [-1, 0]], "b0": [0, 0]}, "L": 1.0}
    assert spec_from_dict(d).dynamics.autonomous
    assert json.loads(spec_from_dict(d).canonical_json())["dynamics"]["family"] == "affine"
