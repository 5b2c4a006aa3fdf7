"""Pipeline stages over an input corpus directory and an output directory.

Output layout::

    ingest/<recording>.json          alignment summary per recording
    poses/<recording>.jsonl          fused pose per camera frame
    verdicts/<recording>.jsonl       trajectory-filter verdict per frame
    candidates.jsonl                 every 30 s scene with features and weight
    scenes.manifest.jsonl            the sampled scenes
    reports/distribution.{csv,png}   speed/steering histograms before/after sampling
    captions/<scene>.jsonl           rule and combined caption per frame
    captions/<scene>.windows.jsonl   VLM output per caption window
    records/<scene>.jsonl            dataset records
    stats.json, reports/stats.png    corpus statistics
    overlays/<scene>.csv             projected future paths
    overlays/overview.png            first-frame overlays of the first scenes
    eval/report.json, eval/attribution_{ade,fde}.csv, eval/predictions.jsonl

Every stage reads its inputs from disk, so running the stages one by one
gives the same files as ``run_pipeline``.
"""

from __future__ import annotations

import contextlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import captioning, dataset, estimation, evaluation, geodesy, ingest, plotting, sampler, trajfilter
from .artifacts import atomic_write_text, read_jsonl, write_json, write_jsonl
from .captioning.mock_server import MockVlmServer
from .config import PipelineConfig
from .errors import ConfigError, DataError

log = logging.getLogger("drivevla.pipeline")


def _pose_row(frame_id: int, pose: geodesy.Pose) -> dict:
    return {
        "frame_id": frame_id,
        "timestamp": pose.timestamp,
        "position_ecef": [float(x) for x in pose.position],
        "velocity_ecef": [float(x) for x in pose.velocity_ecef],
        "orientation_ned": [float(x) for x in pose.orientation_ned],
    }


def _pose_from_row(d: dict) -> geodesy.Pose:
    return geodesy.Pose(np.array(d["position_ecef"]), np.array(d["orientation_ned"]),
                        np.array(d["velocity_ecef"]), int(d["timestamp"]))


def _estimate_rows(rec_dir: str, noise: estimation.NoiseConfig) -> list[dict]:
    log_ = ingest.parse_log(rec_dir)
    poses = estimation.estimate_path(log_, noise)
    return [_pose_row(fr.frame_id, p) for fr, p in zip(log_.frames, poses)]


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.input = Path(cfg.paths.input)
        self.out = Path(cfg.paths.output)
        self._logs: dict[str, ingest.SensorLog] = {}
        self._aligned: dict[str, list[ingest.AlignedFrame]] = {}
        self._trajs: dict[str, list[estimation.EgoTrajectory]] = {}
        self._records: Optional[dict[str, list[dataset.FrameRecord]]] = None

    # inputs

    def recordings(self) -> dict[str, Path]:
        if not self.input.is_dir():
            raise ConfigError(f"input directory {str(self.input)!r} not found")
        if (self.input / "frames.jsonl").is_file():
            return {self.input.name: self.input}
        recs = {p.name: p for p in sorted(self.input.iterdir())
                if p.is_dir() and (p / "frames.jsonl").is_file()}
        if not recs:
            raise DataError(f"no recordings under {str(self.input)!r}")
        return recs

    def sensor_log(self, rec: str) -> ingest.SensorLog:
        if rec not in self._logs:
            self._logs[rec] = ingest.parse_log(self.recordings()[rec])
        return self._logs[rec]

    def aligned(self, rec: str) -> list[ingest.AlignedFrame]:
        if rec not in self._aligned:
            self._aligned[rec] = ingest.align_to_frames(self.sensor_log(rec))
        return self._aligned[rec]

    # artifacts

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    def poses(self, rec: str) -> list[geodesy.Pose]:
        p = self.path("poses", f"{rec}.jsonl")
        if not p.is_file():
            raise DataError(f"no poses for {rec!r}; run the estimate stage first")
        return [_pose_from_row(d) for d in read_jsonl(p)]

    def trajectories(self, rec: str) -> list[estimation.EgoTrajectory]:
        if rec not in self._trajs:
            self._trajs[rec] = estimation.annotate_future(self.poses(rec))
        return self._trajs[rec]

    def verdicts(self, rec: str) -> list[dict]:
        p = self.path("verdicts", f"{rec}.jsonl")
        if not p.is_file():
            raise DataError(f"no verdicts for {rec!r}; run the filter stage first")
        return read_jsonl(p)

    def manifest(self) -> list[dict]:
        p = self.path("scenes.manifest.jsonl")
        if not p.is_file():
            raise DataError("no scene manifest; run the sample stage first")
        return read_jsonl(p)

    def scene_records(self) -> dict[str, list[dataset.FrameRecord]]:
        if self._records is not None:
            return self._records
        out = {}
        for scene in self.manifest():
            p = self.path("records", f"{scene['scene_id']}.jsonl")
            if not p.is_file():
                raise DataError(f"no records for {scene['scene_id']}; run the emit stage first")
            out[scene["scene_id"]] = dataset.read_jsonl(p)
        self._records = out
        return out


# stages

def stage_ingest(ws: Workspace) -> list[dict]:
    summaries = []
    for rec in ws.recordings():
        frames = ws.aligned(rec)
        s = ws.sensor_log(rec)
        summary = {
            "recording_id": rec,
            "counts": s.counts(),
            "span_s": s.span_s,
            "frames": len(frames),
            "can_matched": sum(fr.can is not None for fr in frames),
            "imu_matched": sum(fr.imu is not None for fr in frames),
            "gnss_available": sum(fr.gnss_available for fr in frames),
            "traffic_light_frames": sum(fr.traffic_light is not None for fr in frames),
            "lead_vehicle_frames": sum(fr.lead is not None for fr in frames),
        }
        write_json(ws.path("ingest", f"{rec}.json"), summary)
        summaries.append(summary)
    log.info("ingested %d recordings", len(summaries))
    return summaries


def stage_estimate(ws: Workspace) -> None:
    recs = ws.recordings()
    noise = ws.cfg.noise
    if ws.cfg.jobs > 1 and len(recs) > 1:
        with ProcessPoolExecutor(max_workers=ws.cfg.jobs) as pool:
            results = list(pool.map(_estimate_rows, [str(p) for p in recs.values()],
                                    [noise] * len(recs)))
    else:
        results = []
        for rec in recs:
            s = ws.sensor_log(rec)
            poses = estimation.estimate_path(s, noise)
            results.append([_pose_row(fr.frame_id, p) for fr, p in zip(s.frames, poses)])
    for rec, rows in zip(recs, results):
        write_jsonl(ws.path("poses", f"{rec}.jsonl"), rows)
        ws._trajs.pop(rec, None)
    log.info("estimated paths for %d recordings", len(recs))


def stage_filter(ws: Workspace) -> dict[str, int]:
    totals = {trajfilter.OK: 0, trajfilter.JUMP: 0, trajfilter.VIBRATION: 0}
    for rec in ws.recordings():
        trajs = ws.trajectories(rec)
        verdicts = trajfilter.filter_recording(trajs, ws.cfg.filter)
        frames = ws.sensor_log(rec).frames
        rows = []
        for fr, tr, v in zip(frames, trajs, verdicts):
            rows.append({"frame_id": fr.frame_id, "trajectory_count": tr.trajectory_count,
                         **v.to_dict()})
            totals[v.reason] += 1
        write_jsonl(ws.path("verdicts", f"{rec}.jsonl"), rows)
    log.info("filter verdicts: %s", totals)
    return totals


def _candidates(ws: Workspace) -> list[sampler.SceneCandidate]:
    out = []
    for rec in ws.recordings():
        frames = ws.aligned(rec)
        verdicts = ws.verdicts(rec)
        for c in sampler.scene_candidates(rec, frames):
            if ws.cfg.sampling.flagged == "scene":
                # a scene with any rejected trajectory is dropped as a whole
                c.eligible = c.eligible and all(v["valid"] for v in verdicts[c.start_frame:c.end_frame])
            out.append(c)
    return out


def stage_sample(ws: Workspace) -> list[dict]:
    cfg = ws.cfg.sampling
    cands = _candidates(ws)
    bins = cfg.binning()
    sampler.assign_weights(cands, bins, cfg.delta)
    n_eligible = sum(c.eligible for c in cands)
    n = n_eligible if cfg.n_scenes is None else cfg.n_scenes
    chosen = sampler.sample_scenes(cands, n, cfg.seed)
    write_jsonl(ws.path("candidates.jsonl"), [c.to_dict() for c in cands])

    rows = []
    for c in chosen:
        frames = ws.aligned(c.recording_id)[c.start_frame:c.end_frame]
        verdicts = ws.verdicts(c.recording_id)[c.start_frame:c.end_frame]
        windows = captioning.make_windows([fr.frame_id for fr in frames])
        row = c.to_dict()
        row["frame_span"] = [frames[0].frame_id, frames[-1].frame_id]
        row["verdicts"] = {r: sum(v["reason"] == r for v in verdicts)
                           for r in (trajfilter.OK, trajfilter.JUMP, trajfilter.VIBRATION)}
        row["caption_windows"] = [list(w.representatives) for w in windows]
        rows.append(row)
    write_jsonl(ws.path("scenes.manifest.jsonl"), rows)

    eligible = [c for c in cands if c.eligible]
    hists = sampler.distribution_report(eligible, chosen, bins)
    atomic_write_text(ws.path("reports", "distribution.csv"), sampler.report_csv(hists))
    plotting.plot_distribution(hists, ws.path("reports", "distribution.png"))
    log.info("sampled %d of %d eligible scenes (%d candidates)", len(chosen), n_eligible, len(cands))
    return rows


def _scene_slice(ws: Workspace, scene: dict):
    rec, start, n = scene["recording_id"], scene["start_frame"], scene["n_frames"]
    return ws.aligned(rec)[start:start + n], ws.trajectories(rec)[start:start + n]


def _kept(ws: Workspace, scene: dict) -> list[bool]:
    """Which scene frames become records: all of them, unless rejected
    trajectories are dropped frame by frame."""
    rec, start, n = scene["recording_id"], scene["start_frame"], scene["n_frames"]
    if ws.cfg.sampling.flagged == "scene":
        return [True] * n
    return [v["valid"] for v in ws.verdicts(rec)[start:start + n]]


@contextlib.contextmanager
def _vlm_client(ws: Workspace, mode: str):
    c = ws.cfg.captioning
    if mode == "rules":
        yield None
    elif mode == "mock":
        with MockVlmServer(c.mock_fixture) as server:
            yield captioning.VlmClient(server.url, c.timeout, c.retries)
    elif mode == "remote":
        if not c.vlm_endpoint:
            raise ConfigError("remote captioning needs a VLM endpoint")
        yield captioning.VlmClient(c.vlm_endpoint, c.timeout, c.retries)
    else:
        raise ConfigError(f"unknown caption mode {mode!r}")


def stage_caption(ws: Workspace, mode: Optional[str] = None) -> int:
    mode = mode or ws.cfg.captioning.mode
    th = ws.cfg.captioning.thresholds
    queries = captioning.load_queries(ws.cfg.captioning.queries)
    n_captions = 0
    with _vlm_client(ws, mode) as client:
        for scene in ws.manifest():
            frames, trajs = _scene_slice(ws, scene)
            rules = [captioning.rule_caption(captioning.context_from_frame(fr, tr), th)
                     for fr, tr in zip(frames, trajs)]
            windows = captioning.make_windows([fr.frame_id for fr in frames])
            by_id = {fr.frame_id: (fr, r) for fr, r in zip(frames, rules)}
            vlm: list = [None] * len(windows)
            if client is not None:
                digests = [captioning.rule_digest([by_id[f][1] for f in w.representatives])
                           for w in windows]
                refs = [[by_id[f][0].frame.image_path for f in w.representatives] for w in windows]
                vlm = captioning.caption_windows(windows, digests, client, queries, refs,
                                                 ws.cfg.captioning.concurrency)
            rows = []
            for pos, (fr, rule) in enumerate(zip(frames, rules)):
                w = captioning.window_of(pos)
                combined = captioning.compose_frame_caption(rule, vlm[w], windows[w], fr.frame_id)
                rows.append({"frame_id": fr.frame_id, "window_index": w, "rule": rule.text,
                             "clauses": rule.clauses, "caption": combined})
            write_jsonl(ws.path("captions", f"{scene['scene_id']}.jsonl"), rows)
            write_jsonl(ws.path("captions", f"{scene['scene_id']}.windows.jsonl"), [
                {"window_index": w.window_index, "representatives": list(w.representatives),
                 "free_text": v.free_text if v else "",
                 "attributes": v.attributes.to_dict() if v else {}}
                for w, v in zip(windows, vlm)])
            n_captions += len(rows)
    log.info("captioned %d frames (%s mode)", n_captions, mode)
    return n_captions


def _traffic_flags(ws: Workspace) -> list[bool]:
    flags = []
    for scene in ws.manifest():
        frames, _ = _scene_slice(ws, scene)
        flags += [fr.traffic_light is not None for fr, keep in zip(frames, _kept(ws, scene)) if keep]
    return flags


def stage_emit(ws: Workspace) -> dataset.DatasetStats:
    emitted = {}
    for scene in ws.manifest():
        rec = scene["recording_id"]
        frames, trajs = _scene_slice(ws, scene)
        start = scene["start_frame"]
        poses = ws.poses(rec)[start:start + scene["n_frames"]]
        cap_path = ws.path("captions", f"{scene['scene_id']}.jsonl")
        if not cap_path.is_file():
            raise DataError(f"no captions for {scene['scene_id']}; run the caption stage first")
        captions = {d["frame_id"]: d["caption"] for d in read_jsonl(cap_path)}
        cam = ws.sensor_log(rec).camera
        records = [dataset.assemble_record(fr, pose, tr, captions[fr.frame_id], cam)
                   for fr, pose, tr, keep in zip(frames, poses, trajs, _kept(ws, scene)) if keep]
        dataset.emit_jsonl(records, ws.path("records", f"{scene['scene_id']}.jsonl"))
        emitted[scene["scene_id"]] = records
    # records survive the JSON round trip unchanged, so later stages reuse them
    ws._records = emitted
    return stage_stats(ws)


def stage_stats(ws: Workspace) -> dataset.DatasetStats:
    scenes = ws.scene_records()
    records = [r for recs in scenes.values() for r in recs]
    stats = dataset.compute_stats(records, scene_count=len(scenes), traffic_lights=_traffic_flags(ws))
    write_json(ws.path("stats.json"), stats.to_dict())
    plotting.plot_stats(stats, ws.path("reports", "stats.png"))
    log.info("dataset: %d scenes, %d frames, %.3f h", stats.scene_count, stats.frame_count, stats.hours)
    return stats


def stage_render(ws: Workspace) -> int:
    """Overlay CSV per scene, plus one figure with the first frame of the first scenes."""
    scenes = ws.scene_records()
    for scene_id, records in scenes.items():
        atomic_write_text(ws.path("overlays", f"{scene_id}.csv"), dataset.overlay_csv(records))
    shown = list(scenes.items())[:plotting.OVERVIEW_PANELS]
    plotting.plot_overlays([(f"{sid} frame {recs[0].frame_id}", dataset.overlay_geometry(recs[0]))
                            for sid, recs in shown], ws.path("overlays", "overview.png"))
    log.info("rendered overlays for %d scenes", len(scenes))
    return len(scenes)


def _predicted_caption(record: dataset.FrameRecord, pred: np.ndarray) -> str:
    """Rule caption of the motion a baseline prediction implies."""
    v = float(record.vEgo)
    k = captioning.steering_curvature(record.steeringAngleDeg) if v > 0 else 0.0
    return captioning.rule_caption(captioning.FrameContext(v, 0.0, k)).text


def stage_eval(ws: Workspace, predictions: Optional[str] = None, split_name: str = "test") -> dict:
    scenes = ws.scene_records()
    groups = evaluation.split_scenes(list(scenes), ws.cfg.split)
    frames = evaluation.split_and_subsample(scenes, ws.cfg.split)
    rules = {}
    for sid in groups[split_name]:
        for d in read_jsonl(ws.path("captions", f"{sid}.jsonl")):
            rules[(sid, d["frame_id"])] = d["rule"]

    given = None
    if predictions is not None:
        with open(predictions, encoding="utf-8") as fh:
            given = evaluation.read_predictions(fh)

    pairs, pred_lines = [], []
    for sid, rec in frames[split_name]:
        gt = evaluation.subsample_trajectory(rec.trajectory)
        if given is None:
            pred = evaluation.baseline_predict(rec)
            pred_caption = _predicted_caption(rec, pred)
            pred_lines.append(evaluation.prediction_line(sid, rec.frame_id, pred, pred_caption))
        else:
            key = (sid, rec.frame_id) if (sid, rec.frame_id) in given else ("", rec.frame_id)
            if key not in given:
                raise DataError(f"no prediction for scene {sid} frame {rec.frame_id}")
            pred, pred_caption = given[key]
        pairs.append(evaluation.TrajectoryPair(pred, gt, rec.caption, pred_caption,
                                               rules[(sid, rec.frame_id)], (sid, rec.frame_id)))

    result = evaluation.evaluate(pairs)
    attribution = evaluation.word_attribution(pairs, top_k=10)
    report = {
        **result.to_dict(),
        "predictor": "baseline" if given is None else str(predictions),
        "split": split_name,
        "split_scenes": {k: len(v) for k, v in groups.items()},
        "split_frames": {k: len(v) for k, v in frames.items()},
        "scene_ids": groups,
        "top_words_by_ade": [r.word for r in attribution.by_ade],
        "top_words_by_fde": [r.word for r in attribution.by_fde],
    }
    write_json(ws.path("eval", "report.json"), report)
    atomic_write_text(ws.path("eval", "attribution_ade.csv"), evaluation.attribution_csv(attribution.by_ade))
    atomic_write_text(ws.path("eval", "attribution_fde.csv"), evaluation.attribution_csv(attribution.by_fde))
    if given is None:
        atomic_write_text(ws.path("eval", "predictions.jsonl"), "".join(l + "\n" for l in pred_lines))
    log.info("eval on %d %s frames: ADE %.3f FDE %.3f", result.count, split_name, result.ade, result.fde)
    return report


def run_pipeline(ws: Workspace, caption_mode: Optional[str] = None,
                 predictions: Optional[str] = None) -> dict:
    stage_ingest(ws)
    stage_estimate(ws)
    stage_filter(ws)
    stage_sample(ws)
    stage_caption(ws, caption_mode)
    stats = stage_emit(ws)
    stage_render(ws)
    report = stage_eval(ws, predictions)
    return {"stats": stats.to_dict(), "eval": report}
