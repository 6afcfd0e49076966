import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackforge.errors import DegenerateGeometry, SingularState
from trackforge.sim import (CLUTTER, ControlInput, DatasetConfig, NoiseParams, TargetState, Volume,
                            generate_clutter, generate_dataset, generate_truth, measure, measure_array,
                            propagate_state, spherical_to_cartesian)

G = 9.8


def test_level_flight_equilibrium():
    s = propagate_state(TargetState(0, 0, 1000, 200, 0, 0), ControlInput(0, 1, 0), 0.1)
    assert s.x == pytest.approx(20, abs=1e-9)
    assert (s.y, s.z, s.v, s.phi_p, s.phi_a) == pytest.approx((0, 1000, 200, 0, 0), abs=1e-9)


def test_coordinated_turn_heading_change():
    s = propagate_state(TargetState(0, 0, 1000, 200, 0, 0), ControlInput(0.26, 1 / math.cos(0.26), 0), 0.1)
    assert s.phi_p == pytest.approx(0, abs=1e-12)
    assert s.phi_a == pytest.approx(0.0013035, abs=1e-7)


def test_longitudinal_overload_accelerates():
    s = propagate_state(TargetState(0, 0, 1000, 200, 0, 0), ControlInput(0, 1, 1), 0.1)
    assert s.v == pytest.approx(200.98, abs=1e-9)


@pytest.mark.parametrize("state", [TargetState(0, 0, 1000, 0.5, 0, 0),
                                   TargetState(0, 0, 1000, 200, math.pi / 2, 0)])
def test_singular_states_rejected(state):
    with pytest.raises(SingularState):
        propagate_state(state, ControlInput(0, 1, 0), 0.1)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(100, 600), pp=st.floats(-0.5, 0.5), pa=st.floats(-3, 3))
def test_equilibrium_drift_per_step(v, pp, pa):
    # pitch held by n_z = cos(pp), speed by n_x = sin(pp)
    s0 = TargetState(0, 0, 5000, v, pp, pa)
    s1 = propagate_state(s0, ControlInput(0, math.cos(pp), math.sin(pp)), 0.1)
    assert abs(s1.v - v) < 1e-9 and abs(s1.phi_p - pp) < 1e-9 and abs(s1.phi_a - pa) < 1e-9


@pytest.mark.parametrize("v,roll", [(200, 0.26), (450, 0.8), (150, -0.5)])
def test_turn_rate_law(v, roll):
    s0 = TargetState(0, 0, 5000, v, 0, 0)
    s1 = propagate_state(s0, ControlInput(roll, 1 / math.cos(roll), 0), 0.001)
    rate = (s1.phi_a - s0.phi_a) / 0.001
    assert rate == pytest.approx(G / v * math.tan(roll), abs=1e-6)


def test_truth_is_seeded_and_bounded():
    a, b = generate_truth(11, 10_000), generate_truth(11, 10_000)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.states[:, 3].min() >= 100 and a.states[:, 3].max() <= 600
    one = generate_truth(11, 1)
    np.testing.assert_array_equal(one.states, a.states[:1])


def test_measure_examples():
    m = measure(TargetState(1000, 0, 0, 100, 0, 0), None)
    assert m.as_array() == pytest.approx([1000, 0, 0, 100])
    m = measure(TargetState(300, 400, 0, 200, 0, 0), None)
    assert m.as_array() == pytest.approx([500, 0, 0.92730, 120], abs=1e-5)


def test_measure_at_origin_is_degenerate():
    with pytest.raises(DegenerateGeometry):
        measure(TargetState(0.1, 0, 0, 100, 0, 0), None)


def test_conversion_examples():
    np.testing.assert_allclose(spherical_to_cartesian([1000, 0, 0, 100]), [1000, 0, 0, 100, 0, 0], atol=1e-12)
    np.testing.assert_allclose(spherical_to_cartesian([500, 0, 0.92730, 120]), [300, 400, 0, 72, 96, 0],
                               atol=5e-3)


def test_position_round_trip():
    rng = np.random.default_rng(0)
    pos = rng.uniform(-1e5, 1e5, (10_000, 3))
    vel = rng.normal(size=(10_000, 3)) * 300
    back = spherical_to_cartesian(measure_array(pos, vel))[:, :3]
    rel = np.linalg.norm(back - pos, axis=1) / np.linalg.norm(pos, axis=1)
    assert rel.max() < 1e-9


def test_noise_calibration():
    noise = NoiseParams()
    rng = np.random.default_rng(1)
    pos = np.tile([30_000.0, 20_000.0, 5_000.0], (100_000, 1))
    vel = np.tile([200.0, -100.0, 0.0], (100_000, 1))
    std = measure_array(pos, vel, noise, rng).std(axis=0)
    np.testing.assert_allclose(std, noise.as_array(), rtol=0.02)


def test_noise_params_must_be_positive():
    with pytest.raises(ValueError):
        NoiseParams(sigma_d=0)


def test_clutter():
    vol = Volume((-1e4, -1e4, 1e3), (1e4, 1e4, 5e3))
    assert generate_clutter(0, 0, vol) == []
    a, b = generate_clutter(4, 50, vol), generate_clutter(4, 50, vol)
    assert a == b and len(a) == 50 and all(m.origin_tag == CLUTTER for m in a)
    pts = spherical_to_cartesian(np.array([m.as_array() for m in a]))
    assert np.all(pts[:, :3] >= np.array(vol.lo) - 1e-6) and np.all(pts[:, :3] <= np.array(vol.hi) + 1e-6)
    assert np.all(np.abs(pts[:, 3:]).sum(axis=1) <= 600 * math.sqrt(3))


def test_dataset_split_and_bytes(tmp_path):
    cfg = DatasetConfig(n_tracks=10)
    ds = generate_dataset(cfg, 3, tmp_path / "a")
    assert len(ds.train) == 8 and len(ds.val) == 2
    assert all(len(r.meas) == 100 and len(r.truth) == 100 for r in ds.train + ds.val)
    generate_dataset(cfg, 3, tmp_path / "b")
    for name in ("train.jsonl", "val.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dataset_needs_tracks():
    with pytest.raises(ValueError):
        generate_dataset(DatasetConfig(n_tracks=0), 0)
