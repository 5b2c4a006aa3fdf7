import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivevla import geodesy, ingest, synth
from drivevla.errors import MalformedRecord, MissingStream

ORIGIN = geodesy.geodetic_to_ecef(*synth.DEFAULT_ORIGIN)


def _can(t, v=10.0, **kw):
    d = {"timestamp": t, "v_ego": v, "a_ego": 0.0, "steering_angle": 0.0, "gear": "drive"}
    d.update(kw)
    return ingest.CanFrame.from_dict(d)


def _frames(n, t0=0):
    return [ingest.FrameIndex(i, t0 + 50 * i, f"img/{i:06d}.jpg") for i in range(n)]


def _write(path, name, rows):
    path.joinpath(f"{name}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))


def _minimal_dir(tmp_path, can_rows=None):
    _write(tmp_path, "can", can_rows if can_rows is not None else [])
    _write(tmp_path, "gnss", [{"timestamp": 0, "position_ecef": ORIGIN.tolist()}])
    _write(tmp_path, "imu", [])
    _write(tmp_path, "frames", [{"frame_id": i, "timestamp": 50 * i, "image_path": f"{i}.jpg"}
                                for i in range(600)])
    return tmp_path


def test_empty_can_file_is_an_empty_stream(tmp_path):
    log = ingest.parse_log(_minimal_dir(tmp_path))
    assert log.can == []
    assert log.radar == []  # optional stream absent


def test_missing_required_stream(tmp_path):
    _minimal_dir(tmp_path).joinpath("imu.jsonl").unlink()
    with pytest.raises(MissingStream) as err:
        ingest.parse_log(tmp_path)
    assert err.value.name == "imu"


def test_frame_count_and_span(tmp_path):
    log = ingest.parse_log(_minimal_dir(tmp_path))
    assert len(log.frames) == 600
    assert log.span_s == pytest.approx(29.95)


def test_non_numeric_gnss_coordinate_names_stream_and_line():
    good = json.dumps({"timestamp": 0, "position_ecef": ORIGIN.tolist()})
    bad = json.dumps({"timestamp": 50, "position_ecef": ["x", 0.0, 0.0]})
    with pytest.raises(MalformedRecord) as err:
        ingest.parse_stream("gnss", [good, bad])
    assert err.value.stream == "gnss" and err.value.line_number == 2


@pytest.mark.parametrize("line", [
    "not json",
    "[1, 2, 3]",
    json.dumps({"timestamp": 1.5, "v_ego": 1, "a_ego": 0, "steering_angle": 0, "gear": "drive"}),
    json.dumps({"timestamp": 1, "v_ego": -1, "a_ego": 0, "steering_angle": 0, "gear": "drive"}),
    json.dumps({"timestamp": 1, "v_ego": 1, "a_ego": 0, "steering_angle": 0, "gear": "drive",
                "brake": 1.5}),
    json.dumps({"timestamp": 1, "v_ego": 1, "a_ego": 0, "steering_angle": 0, "gear": "drive",
                "left_blinker": 1}),
    json.dumps({"timestamp": 1, "v_ego": 1, "a_ego": 0, "steering_angle": 0}),
])
def test_malformed_can_lines(line):
    with pytest.raises(MalformedRecord):
        ingest.parse_stream("can", [line])


def test_unknown_gear_maps_to_other_and_known_gears_pass():
    assert _can(0, gear="B").gear == "other"
    assert _can(0, gear="Drive").gear == "drive"


def test_fix_far_from_earth_is_malformed_unless_invalid():
    far = json.dumps({"timestamp": 0, "position_ecef": [1.0, 2.0, 3.0]})
    with pytest.raises(MalformedRecord):
        ingest.parse_stream("gnss", [far])
    flagged = json.dumps({"timestamp": 0, "position_ecef": [1.0, 2.0, 3.0], "fix_valid": False})
    assert not ingest.parse_stream("gnss", [flagged])[0].fix_valid


def test_unknown_keys_ignored_blank_lines_skipped_and_sorted():
    rows = [json.dumps({"timestamp": t, "v_ego": 1.0, "a_ego": 0.0, "steering_angle": 0.0,
                        "gear": "drive", "vendor_extra": 1}) for t in (100, 0, 50)]
    parsed = ingest.parse_stream("can", [rows[0], "", rows[1], b"   ", rows[2].encode()])
    assert [c.timestamp for c in parsed] == [0, 50, 100]


def test_traffic_light_validation():
    ok = {"frame_id": 1, "state": "red_with_arrow", "arrow": "left", "bbox": [1, 2, 30, 40]}
    assert ingest.TrafficLightObs.from_dict(ok).area == pytest.approx(29 * 38)
    for bad in ({**ok, "state": "blue"}, {**ok, "arrow": "up"}, {**ok, "bbox": [0, 0, 5000, 1]}):
        with pytest.raises(ValueError):
            ingest.TrafficLightObs.from_dict(bad)


def test_stream_round_trip_on_synthetic_log():
    truth = synth.gen_truth(synth.MotionProfile("lane_change", 12.0, lead_vehicle=True, duration=5.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec(gnss_sigma=0.5), seed=3)
    for name in ingest.REQUIRED_STREAMS + ingest.OPTIONAL_STREAMS:
        records = getattr(log, name)
        text = ingest.serialize_stream(records)
        again = ingest.parse_stream(name, text.splitlines())
        assert ingest.serialize_stream(again) == text
        assert len(again) == len(records)


def test_can_exact_timestamp_match_is_verbatim():
    can = [_can(0, 5.0), _can(50, 6.0), _can(100, 7.0)]
    log = ingest.SensorLog(can=can, gnss=[ingest.GnssFix(0, ORIGIN)], frames=_frames(3))
    aligned = ingest.align_to_frames(log)
    assert [a.can is c for a, c in zip(aligned, can)] == [True, True, True]


def test_nearest_window_and_tie_rule():
    can = [_can(0, 1.0), _can(100, 2.0)]
    log = ingest.SensorLog(can=can, frames=[ingest.FrameIndex(0, 50, "a"), ingest.FrameIndex(1, 250, "b")])
    aligned = ingest.align_to_frames(log)
    assert aligned[0].can.v_ego == 1.0  # equidistant: earlier sample
    assert aligned[1].can is None  # 150 ms from the nearest sample


def test_gnss_midpoint_interpolation():
    a, b = ORIGIN, ORIGIN + np.array([3.0, -4.0, 10.0])
    log = ingest.SensorLog(gnss=[ingest.GnssFix(0, a), ingest.GnssFix(100, b)],
                           frames=[ingest.FrameIndex(0, 50, "x")])
    out = ingest.align_to_frames(log)[0]
    assert out.gnss_available
    assert np.allclose(out.gnss_position, (a + b) / 2, atol=1e-9)


def test_two_second_outage_flags_frames():
    truth = synth.gen_truth(synth.MotionProfile(duration=10.0))
    log, labels = synth.corrupt(truth, synth.CorruptionSpec(gnss_dropout=[(4.0, 6.0)]))
    aligned = ingest.align_to_frames(log)
    missing = [a.frame_id for a in aligned if not a.gnss_available]
    assert len(missing) > 0
    assert set(missing) <= set(labels.dropout_frames)
    assert all(80 <= f < 120 for f in missing)
    assert aligned[0].gnss_available and aligned[-1].gnss_available


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 199), max_size=60), st.lists(st.integers(0, 199), max_size=60))
def test_alignment_length_matches_frames_for_any_gap_pattern(drop_can, drop_gnss):
    frames = _frames(200)
    can = [_can(50 * i) for i in range(200) if i not in set(drop_can)]
    gnss = [ingest.GnssFix(50 * i, ORIGIN) for i in range(200) if i not in set(drop_gnss)]
    aligned = ingest.align_to_frames(ingest.SensorLog(can=can, gnss=gnss, frames=frames))
    assert len(aligned) == len(frames)
    assert [a.frame_id for a in aligned] == list(range(200))


def test_alignment_is_idempotent():
    truth = synth.gen_truth(synth.MotionProfile("straight", 8.0, lead_vehicle=True, duration=4.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec(gnss_sigma=0.3), seed=1)
    first = ingest.align_to_frames(log)
    second = ingest.align_to_frames(log)
    for a, b in zip(first, second):
        assert a.can == b.can and a.lead == b.lead
        assert np.array_equal(a.gnss_position, b.gnss_position)


# -- lead vehicle ---------------------------------------------------------

FULL_BOX = ingest.CameraBox(0, (0.0, 0.0, 1928.0, 1208.0), "car")


def _aligned(v=10.0):
    return ingest.AlignedFrame(ingest.FrameIndex(0, 0, ""), _can(0, v), None, None, False)


def test_no_radar_no_lead():
    assert ingest.select_lead_vehicle([], [FULL_BOX], _aligned()) is None


def test_lead_speed_is_ego_plus_range_rate():
    lead = ingest.select_lead_vehicle([ingest.RadarTarget(0, 20.0, -2.0, 0.0)], [FULL_BOX], _aligned(10.0))
    assert lead.speed == pytest.approx(8.0)
    assert lead.rel_position == pytest.approx((20.0, 0.0))


def test_target_outside_any_box_or_lane_is_ignored():
    tiny = ingest.CameraBox(0, (0.0, 0.0, 5.0, 5.0), "car")
    sign = ingest.CameraBox(0, FULL_BOX.bbox, "traffic_sign")
    target = ingest.RadarTarget(0, 20.0, 0.0, 0.0)
    assert ingest.select_lead_vehicle([target], [tiny, sign], _aligned()) is None
    wide = ingest.RadarTarget(0, 20.0, 0.0, math.atan2(2.5, 20.0))
    assert ingest.select_lead_vehicle([wide], [FULL_BOX], _aligned()) is None


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(5.0, 80.0), st.floats(-3.0, 3.0), st.floats(-5.0, 5.0)),
                min_size=1, max_size=8))
def test_lead_is_the_nearest_associated_in_lane_target(targets):
    cfg = ingest.FusionConfig()
    radar = [ingest.RadarTarget(0, math.hypot(x, y), rr, math.atan2(y, x)) for x, y, rr in targets]
    lead = ingest.select_lead_vehicle(radar, [FULL_BOX], _aligned(), cfg)
    # brute-force oracle over all targets
    gated = []
    for r in radar:
        x, y = r.ego_xy()
        if x > 0 and abs(y) <= cfg.lane_half_width and \
                geodesy.project_to_image((x, y, cfg.target_height), cfg.camera) is not None:
            uv = geodesy.project_to_image((x, y, cfg.target_height), cfg.camera)
            if FULL_BOX.contains(*uv):
                gated.append(x)
    if not gated:
        assert lead is None
    else:
        assert lead.rel_position[0] == pytest.approx(min(gated))


def test_nearest_of_two_targets():
    radar = [ingest.RadarTarget(0, 30.0, 0.0, 0.0), ingest.RadarTarget(0, 15.0, 1.0, 0.0)]
    lead = ingest.select_lead_vehicle(radar, [FULL_BOX], _aligned())
    assert lead.rel_position[0] == pytest.approx(15.0)


def test_lead_acceleration_by_finite_difference():
    truth = synth.gen_truth(synth.MotionProfile("stop_and_go", 8.0, lead_vehicle=True, duration=6.0))
    log, _ = synth.corrupt(truth, synth.CorruptionSpec())
    aligned = ingest.align_to_frames(log)
    leads = [(a.timestamp, a.lead) for a in aligned if a.lead is not None]
    assert len(leads) > 10
    (t0, l0), (t1, l1) = leads[0], leads[1]
    assert l0.accel == 0.0
    if t1 - t0 == 50:
        assert l1.accel == pytest.approx((l1.speed - l0.speed) / 0.05)
