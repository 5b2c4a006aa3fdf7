import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivevla import dataset, evaluation
from drivevla.errors import EmptyTrajectory, LengthMismatch

coords = st.floats(-100, 100, allow_nan=False)


def _path(n, draw):
    return np.array(draw(st.lists(st.tuples(coords, coords, coords), min_size=n, max_size=n)))


def _record(frame_id=0, v=10.0, steer=0.0, count=60, caption=""):
    d = dataset.reference_record().to_dict()
    traj = [[0.0, 0.0, 0.0]] + [[0.5 * k, 0.0, 0.0] for k in range(1, count)]
    d.update(frame_id=frame_id, vEgo=v, steeringAngleDeg=steer, trajectory=traj[:count],
             trajectory_count=count, caption=caption)
    return dataset.FrameRecord.from_dict(d)


# -- metrics --------------------------------------------------------------

def test_identical_paths_score_zero():
    gt = np.random.default_rng(0).normal(size=(10, 3))
    assert evaluation.ade(gt, gt) == 0.0 and evaluation.fde(gt, gt) == 0.0


def test_unit_offset():
    gt = np.random.default_rng(1).normal(size=(10, 3))
    assert evaluation.ade(gt + [1, 0, 0], gt) == pytest.approx(1.0)
    assert evaluation.fde(gt + [1, 0, 0], gt) == pytest.approx(1.0)


def test_metrics_against_loop_oracle():
    rng = np.random.default_rng(2)
    p, g = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    dists = [math.dist(a, b) for a, b in zip(p.tolist(), g.tolist())]
    assert evaluation.ade(p, g) == pytest.approx(sum(dists) / 10)
    assert evaluation.fde(p, g) == pytest.approx(dists[-1])


@settings(max_examples=40, deadline=None)
@given(st.data(), st.floats(-math.pi, math.pi), st.tuples(coords, coords, coords))
def test_metrics_are_rigid_invariant(data, angle, shift):
    p, g = _path(10, data.draw), _path(10, data.draw)
    c, s = math.cos(angle), math.sin(angle)
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    move = lambda x: x @ r.T + shift  # noqa: E731
    assert evaluation.ade(move(p), move(g)) == pytest.approx(evaluation.ade(p, g), abs=1e-9)
    assert evaluation.fde(move(p), move(g)) == pytest.approx(evaluation.fde(p, g), abs=1e-9)
    assert evaluation.fde(p, g) <= max(np.linalg.norm(p - g, axis=1)) + 1e-12


def test_metric_errors():
    with pytest.raises(LengthMismatch):
        evaluation.ade(np.zeros((10, 3)), np.zeros((9, 3)))
    with pytest.raises(LengthMismatch):
        evaluation.fde(np.zeros((10, 3)), np.zeros((10, 2)))
    with pytest.raises(EmptyTrajectory):
        evaluation.ade(np.zeros((0, 3)), np.zeros((0, 3)))


def test_evaluate_is_a_mean_over_pairs():
    gt = np.zeros((10, 3))
    pairs = [evaluation.TrajectoryPair(gt + [1, 0, 0], gt), evaluation.TrajectoryPair(gt + [3, 0, 0], gt)]
    res = evaluation.evaluate(pairs)
    assert (res.ade, res.fde, res.count) == (2.0, 2.0, 2)
    assert evaluation.evaluate([]).count == 0


# -- splits ---------------------------------------------------------------

def test_split_sizes():
    assert evaluation.split_sizes(10000, (0.7, 0.15, 0.15)) == (7000, 1500, 1500)
    assert sum(evaluation.split_sizes(7, (0.7, 0.15, 0.15))) == 7


@settings(max_examples=40, deadline=None)
@given(st.sets(st.text("abcdef0123", min_size=1, max_size=6), max_size=80), st.integers(0, 2**32 - 1))
def test_split_is_a_deterministic_partition(ids, seed):
    spec = evaluation.SplitSpec(seed=seed)
    a = evaluation.split_scenes(list(ids), spec)
    b = evaluation.split_scenes(sorted(ids, reverse=True), spec)
    assert a == b
    flat = a["train"] + a["val"] + a["test"]
    assert sorted(flat) == sorted(ids) and len(set(flat)) == len(flat)
    assert tuple(map(len, (a["train"], a["val"], a["test"]))) == evaluation.split_sizes(len(ids), spec.fractions)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        evaluation.SplitSpec(fractions=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        evaluation.SplitSpec(frame_rate_hz=3.0)
    assert evaluation.SplitSpec().stride == 10


def test_subsample_keeps_complete_frames_on_the_grid():
    # a 600-frame scene: the last 59 frames have truncated paths
    scene = [_record(i, count=min(60, 600 - i)) for i in range(600)]
    kept = evaluation.subsample_scene(scene)
    oracle = [i for i in range(600) if i % 10 == 0 and 600 - i >= 60]
    assert [r.frame_id for r in kept] == oracle and len(kept) == 55


def test_subsample_trajectory_indices():
    pts = np.arange(180.0).reshape(60, 3)
    sub = evaluation.subsample_trajectory(pts)
    assert sub.shape == (10, 3) and sub[0, 0] == 15.0 and sub[-1, 0] == 177.0
    with pytest.raises(LengthMismatch):
        evaluation.subsample_trajectory(pts[:59])


def test_split_and_subsample_tags_scene_ids():
    scenes = {f"s{k}": [_record(i) for i in range(0, 100)] for k in range(10)}
    out = evaluation.split_and_subsample(scenes)
    # 10 scenes split 7/2/1 (half-up rounding), 10 kept frames each
    assert {k: len(v) for k, v in out.items()} == {"train": 70, "val": 20, "test": 10}
    train_ids = {sid for sid, _ in out["train"]}
    assert len(train_ids) == 7 and not train_ids & {sid for sid, _ in out["test"]}


# -- baseline -------------------------------------------------------------

def test_baseline_at_standstill_is_all_zero():
    assert np.array_equal(evaluation.baseline_predict(_record(v=0.0, steer=30.0)), np.zeros((10, 3)))


def test_baseline_straight_line():
    pred = evaluation.baseline_predict(_record(v=10.0))
    times = [i / 20 for i in evaluation.SUBSAMPLE_INDICES]
    assert np.allclose(pred, [[10.0 * t, 0.0, 0.0] for t in times])
    # the last retained point is 59 frames (2.95 s) ahead
    assert pred[-1, 0] == pytest.approx(29.5)


def test_baseline_turn_lies_on_its_circle():
    v, yaw_rate = 10.0, 0.1
    steer = math.degrees(math.atan(yaw_rate * evaluation.WHEELBASE_M / v) * evaluation.STEERING_RATIO)
    pred = evaluation.baseline_predict(_record(v=v, steer=steer))
    assert np.allclose(np.linalg.norm(pred - [0.0, 100.0, 0.0], axis=1), 100.0)
    assert np.all(pred[:, 1] > 0)  # positive steering turns left


def test_arc_points_arc_length():
    pts = evaluation.arc_points(5.0, -0.3, np.linspace(0, 3, 301))
    assert np.linalg.norm(np.diff(pts, axis=0), axis=1).sum() == pytest.approx(15.0, rel=1e-4)
    assert np.all(pts[1:, 1] < 0)


# -- predictions file -----------------------------------------------------

def test_prediction_round_trip():
    traj = np.arange(30.0).reshape(10, 3)
    line = evaluation.prediction_line("s1", 40, traj, "go straight")
    got = evaluation.read_predictions([line, ""])
    assert list(got) == [("s1", 40)]
    assert np.array_equal(got[("s1", 40)][0], traj) and got[("s1", 40)][1] == "go straight"
    with pytest.raises(LengthMismatch):
        evaluation.read_predictions([json.dumps({"frame_id": 0, "trajectory": [[0, 0, 0]]})])


# -- word attribution -----------------------------------------------------

def _pair(offset, gt_caption, pred_caption):
    gt = np.zeros((10, 3))
    return evaluation.TrajectoryPair(gt + [offset, 0, 0], gt, gt_caption=gt_caption,
                                     predicted_caption=pred_caption)


def test_identical_captions_attribute_nothing():
    pairs = [_pair(1.0, "turn left slowly", "Turn left, slowly.")] * 20
    report = evaluation.word_attribution(pairs, stopwords=[], min_freq=0)
    assert report.by_ade == [] and report.by_fde == []


def test_toy_attribution_against_counting_oracle():
    pairs = ([_pair(2.0, "brake hard", "brake")] * 6 + [_pair(4.0, "brake", "brake hard")] * 6
             + [_pair(1.0, "merge right", "merge")] * 12 + [_pair(9.0, "the end", "the end")] * 12)
    report = evaluation.word_attribution(pairs, stopwords=["the"], min_freq=10)
    assert [(r.word, r.mean_ade, r.frequency) for r in report.by_ade] == [("hard", 3.0, 12), ("right", 1.0, 12)]
    assert [r.word for r in report.by_fde] == ["hard", "right"]
    # frequency must exceed the threshold
    assert evaluation.word_attribution(pairs, stopwords=[], min_freq=12).by_ade == []


def test_stopwords_are_dropped():
    pairs = [_pair(1.0, "the car", "car")] * 11
    assert evaluation.word_attribution(pairs, stopwords=["the"]).by_ade == []
    assert "the" in evaluation.load_stopwords()


def test_attribution_csv_columns():
    rows = [evaluation.WordAttribution("hard", 3.0, 2.5, 12)]
    assert evaluation.attribution_csv(rows).splitlines() == [
        "word,mean_ade,mean_fde,frequency", "hard,3.000000,2.500000,12"]
