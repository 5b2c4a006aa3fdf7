import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivevla import geodesy, ingest, synth


def test_profile_validation():
    with pytest.raises(ValueError):
        synth.MotionProfile("teleport")
    with pytest.raises(ValueError):
        synth.MotionProfile(imu_rate_hz=30)
    with pytest.raises(ValueError):
        synth.MotionProfile(speed=-1.0)
    with pytest.raises(ValueError):
        synth.CorruptionSpec(gnss_sigma=-0.1)


def test_truth_shapes_and_frame_rate():
    truth = synth.gen_truth(synth.MotionProfile(duration=30.0))
    assert len(truth.frames) == 600 and len(truth.can) == 600
    assert len(truth.t) == 30 * synth.IMU_RATE_HZ + 1
    ts = [f.timestamp for f in truth.frames]
    assert set(np.diff(ts).tolist()) == {50}


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(synth.KINDS), st.floats(0.0, 25.0), st.floats(-0.3, 0.3), st.floats(-math.pi, math.pi))
def test_positions_integrate_velocity_exactly(kind, speed, rate, yaw0):
    truth = synth.gen_truth(synth.MotionProfile(kind, speed, rate, duration=3.0, initial_yaw=yaw0))
    dt = 1.0 / truth.profile.imu_rate_hz
    step = truth.pos_ned[1:] - truth.pos_ned[:-1]
    assert np.allclose(step, (truth.vel_ned[1:] + truth.vel_ned[:-1]) / 2 * dt, atol=1e-9)
    assert np.allclose(np.linalg.norm(truth.vel_ned, axis=1), truth.speed, atol=1e-9)


def test_constant_turn_closes_a_circle():
    # a 30 s period lands exactly on the IMU grid
    rate, speed = 2 * math.pi / 30.0, 10.0
    truth = synth.gen_truth(synth.MotionProfile("constant_turn", speed, rate, duration=30.0))
    assert np.linalg.norm(truth.pos_ned[-1]) < 1e-2
    assert np.abs(np.linalg.norm(truth.pos_ned - [0.0, -speed / rate, 0.0], axis=1) - speed / rate).max() < 1e-2


def test_lane_change_returns_to_heading_with_lateral_offset():
    truth = synth.gen_truth(synth.MotionProfile("lane_change", 15.0, initial_yaw=0.0, lane_offset=3.5))
    assert truth.yaw[-1] == pytest.approx(0.0, abs=1e-9)
    # left is west when facing north
    assert truth.pos_ned[-1, 1] == pytest.approx(-3.5, abs=0.05)
    assert any(c.left_blinker for c in truth.can) and not any(c.right_blinker for c in truth.can)


def test_steering_sign_and_stationary_zero():
    assert synth.steering_from_yaw_rate(0.1, 10.0) > 0
    assert synth.steering_from_yaw_rate(-0.1, 10.0) < 0
    assert synth.steering_from_yaw_rate(0.1, 0.0) == 0.0


def test_stop_and_go_has_lights_and_braking():
    truth = synth.gen_truth(synth.MotionProfile("stop_and_go", 10.0, lead_vehicle=True))
    states = {tl.state for tl in truth.traffic_lights}
    assert states == {"red", "green"}
    assert min(c.v_ego for c in truth.can) == 0.0
    assert any(c.brake_pressed for c in truth.can)


def test_corrupt_labels_and_determinism():
    truth = synth.gen_truth(synth.MotionProfile(duration=10.0))
    spec = synth.CorruptionSpec(gnss_sigma=0.5, jump_injections=[(4.0, 5.0)],
                                vibration_injections=[(6.0, 7.0, 0.2, 10.0)], gnss_dropout=[(1.0, 2.0)])
    a, la = synth.corrupt(truth, spec, seed=3)
    b, lb = synth.corrupt(truth, spec, seed=3)
    assert la == lb and la.jump_frames == [80]
    assert la.vibration_frames == list(range(120, 141))
    assert la.dropout_frames == list(range(20, 40))
    assert ingest.serialize_stream(a.gnss) == ingest.serialize_stream(b.gnss)
    invalid = [g.timestamp for g in a.gnss if not g.fix_valid]
    assert len(invalid) == 20


def test_jump_offsets_the_fixes_laterally():
    truth = synth.gen_truth(synth.MotionProfile(duration=6.0, initial_yaw=0.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec(jump_injections=[(3.0, 5.0)]))
    origin = truth.origin_ecef
    before = geodesy.ecef_to_ned(log.gnss[59].position_ecef, origin)
    after = geodesy.ecef_to_ned(log.gnss[60].position_ecef, origin)
    assert after[1] - before[1] == pytest.approx(5.0, abs=1e-6)


def test_imu_reports_forward_left_up():
    truth = synth.gen_truth(synth.MotionProfile("constant_turn", 10.0, 0.2, duration=2.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec())
    a = np.array([s.accel_device for s in log.imu])
    g = np.array([s.gyro_device for s in log.imu])
    # centripetal acceleration of a left turn points left
    assert np.allclose(a[10:, 1], 10.0 * 0.2, atol=1e-6)
    assert np.allclose(g[:, 2], 0.2)


def test_iter_corpus_injects_exact_fractions():
    samples = list(synth.iter_corpus(20, seed=4, jump_fraction=0.1, vibration_fraction=0.15))
    jumps = [s for s in samples if s.labels.has_jump]
    vibs = [s for s in samples if s.labels.has_vibration]
    assert len(jumps) == 2 and len(vibs) == 3
    assert not {id(s) for s in jumps} & {id(s) for s in vibs}
    again = list(synth.iter_corpus(20, seed=4, jump_fraction=0.1, vibration_fraction=0.15))
    assert [s.entry for s in samples] == [s.entry for s in again]


def test_corpus_is_generation_order_independent():
    small = [s.entry for s in synth.iter_corpus(3, seed=8)]
    large = [s.entry for s in synth.iter_corpus(6, seed=8)]
    assert [e["kind"] for e in small] == [e["kind"] for e in large[:3]]


def test_gen_corpus_round_trips_through_the_parser(tmp_path):
    root = synth.gen_corpus(tmp_path / "c", 2, seed=1, placeholder_images=True)
    summary = json.loads((root / "corpus.json").read_text())
    assert summary["n_scenes"] == 2 and len(summary["recordings"]) == 2
    rec = summary["recordings"][0]["recording_id"]
    log = ingest.parse_log(root / rec)
    assert len(log.frames) == 600 and log.camera is not None
    assert (root / log.frames[0].image_path).exists()
    truth_lines = (root / rec / "truth.jsonl").read_text().splitlines()
    assert len(truth_lines) == 600 and json.loads(truth_lines[0])["frame_id"] == 0


def test_straight_ten_metres_per_second_covers_300_m():
    truth = synth.gen_truth(synth.MotionProfile("straight", 10.0, initial_yaw=0.3))
    assert np.linalg.norm(truth.pos_ned[-1]) == pytest.approx(300.0, abs=1e-9)
    assert {c.gear for c in truth.can} == {"drive"}
    assert [c.v_ego for c in truth.can] == pytest.approx(truth.speed[truth.frame_indices()].tolist())


def test_constant_turn_radius_is_speed_over_rate():
    truth = synth.gen_truth(synth.MotionProfile("constant_turn", 10.0, 0.1))
    centre = np.array([0.0, -100.0, 0.0])  # left of a north-facing start
    assert np.abs(np.linalg.norm(truth.pos_ned - centre, axis=1) - 100.0).max() < 1e-3


def test_stop_and_go_acceleration_alternates_by_phase():
    truth = synth.gen_truth(synth.MotionProfile("stop_and_go", 10.0, duration=10.0))
    signs = [int(np.sign(c.a_ego)) for c in truth.can]
    assert signs[:60] == [1] * 60  # accelerate for 3 s
    assert set(signs[100:160]) == {-1}  # brake from 5 to 8 s
    assert truth.can[190].v_ego == 0.0


def test_zero_spec_reproduces_truth():
    truth = synth.gen_truth(synth.MotionProfile(duration=5.0))
    log, labels = synth.corrupt(truth, synth.CorruptionSpec(), seed=123)
    fixes = np.array([g.position_ecef for g in log.gnss])
    assert np.abs(fixes - truth.position_ecef(truth.frame_indices())).max() < 1e-6
    assert log.can == truth.can and not labels.has_jump and not labels.has_vibration


def test_single_jump_gives_exactly_one_long_step():
    truth = synth.gen_truth(synth.MotionProfile("straight", 20.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec(jump_injections=[(10.0, 5.0)]))
    fixes = np.array([g.position_ecef for g in log.gnss])
    steps = np.linalg.norm(np.diff(fixes, axis=0), axis=1)
    assert int((steps > 1.59).sum()) == 1


def test_vibration_labels_are_inclusive_frame_spans():
    truth = synth.gen_truth(synth.MotionProfile())
    _, labels = synth.corrupt(truth, synth.CorruptionSpec(vibration_injections=[(5.0, 10.0, 0.2, 10.0)]))
    assert labels.vibration_frames == list(range(100, 201))
