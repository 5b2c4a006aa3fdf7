"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 VLM unreachable or misbehaving.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import __version__, config, pipeline, synth
from .errors import ConfigError, DataError, DriveVlaError, VlmError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VLM = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        d = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        if record.exc_info:
            d["exception"] = self.formatException(record.exc_info)
        return json.dumps(d)


def _setup_logging(json_logs: bool, verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("drivevla")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML pipeline config")
    p.add_argument("--input", help="directory of recordings (or one recording)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for per-recording stages")
    p.add_argument("--log-json", action="store_true", help="log as JSON lines on stderr")
    p.add_argument("-v", "--verbose", action="store_true")


def _caption_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--vlm-endpoint", metavar="URL", help="caption with a remote VLM server")
    g.add_argument("--mock", action="store_true", help="caption with the bundled mock VLM")
    g.add_argument("--rules-only", action="store_true", help="rule-based captions only")
    p.add_argument("--mock-fixture", help="scripted responses for --mock")


def _eval_flags(p: argparse.ArgumentParser, required: bool) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--predictions", metavar="FILE", help="JSONL predictions to score")
    g.add_argument("--baseline", action="store_true", help="score the kinematic baseline")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drivevla", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    for name, help_ in (("ingest", "validate and align recordings"),
                        ("estimate", "fuse GNSS/IMU into per-frame poses"),
                        ("filter", "flag jump/vibration trajectories"),
                        ("emit", "write dataset records and stats"),
                        ("stats", "recompute dataset statistics"),
                        ("render", "write trajectory overlay CSVs and figures")):
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("sample", help="select diverse scenes")
    _common(p)
    p.add_argument("--n-scenes", type=int, help="scenes to draw (default: every eligible scene)")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float, help="additive smoothing constant")

    p = sub.add_parser("caption", help="caption the sampled scenes")
    _common(p)
    _caption_flags(p)

    p = sub.add_parser("eval", help="score trajectory predictions on the test split")
    _common(p)
    _eval_flags(p, required=True)

    p = sub.add_parser("pipeline", help="run every stage in order")
    _common(p)
    _caption_flags(p)
    _eval_flags(p, required=False)
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="corpus")
    p.add_argument("--gnss-sigma", type=float, default=0.1, help="GNSS noise [m]")
    p.add_argument("--imu-sigma", type=float, default=0.05, help="accelerometer noise [m/s^2]")
    p.add_argument("--jump-fraction", type=float, default=0.0)
    p.add_argument("--vibration-fraction", type=float, default=0.0)
    p.add_argument("--mix", help="profile mix, e.g. straight=0.9,constant_turn=0.1")
    p.add_argument("--placeholder-images", action="store_true", help="touch empty image files")
    p.add_argument("--log-json", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> config.PipelineConfig:
    cfg = config.load(args.config)
    if args.input:
        cfg.paths.input = args.input
    if args.out:
        cfg.paths.output = args.out
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    if getattr(args, "n_scenes", None) is not None:
        cfg.sampling.n_scenes = args.n_scenes
    if getattr(args, "seed", None) is not None:
        cfg.sampling.seed = args.seed
    if getattr(args, "delta", None) is not None:
        cfg.sampling.delta = args.delta
    if getattr(args, "mock_fixture", None):
        cfg.captioning.mock_fixture = args.mock_fixture
    if getattr(args, "vlm_endpoint", None):
        cfg.captioning.vlm_endpoint = args.vlm_endpoint
        cfg.captioning.mode = "remote"
    elif getattr(args, "mock", False):
        cfg.captioning.mode = "mock"
    elif getattr(args, "rules_only", False):
        cfg.captioning.mode = "rules"
    return cfg


def _parse_mix(text: Optional[str]) -> Optional[dict]:
    if not text:
        return None
    mix = {}
    for part in text.split(","):
        kind, _, weight = part.partition("=")
        if kind not in synth.KINDS:
            raise ConfigError(f"unknown profile kind {kind!r}")
        try:
            mix[kind] = float(weight)
        except ValueError as exc:
            raise ConfigError(f"bad weight in --mix: {part!r}") from exc
    return mix


def _run(args) -> int:
    if args.command == "synth":
        spec = synth.CorruptionSpec(gnss_sigma=args.gnss_sigma, imu_accel_sigma=args.imu_sigma)
        root = synth.gen_corpus(args.out, args.scenes, _parse_mix(args.mix), spec, args.seed,
                                args.jump_fraction, args.vibration_fraction,
                                placeholder_images=args.placeholder_images)
        print(json.dumps({"corpus": str(root), "scenes": args.scenes}))
        return EXIT_OK

    ws = pipeline.Workspace(_load_config(args))
    cmd = args.command
    if cmd == "ingest":
        result = pipeline.stage_ingest(ws)
        print(json.dumps({"recordings": len(result)}))
    elif cmd == "estimate":
        pipeline.stage_estimate(ws)
    elif cmd == "filter":
        print(json.dumps(pipeline.stage_filter(ws), sort_keys=True))
    elif cmd == "sample":
        print(json.dumps({"scenes": len(pipeline.stage_sample(ws))}))
    elif cmd == "caption":
        print(json.dumps({"captions": pipeline.stage_caption(ws)}))
    elif cmd == "emit":
        print(json.dumps(pipeline.stage_emit(ws).to_dict(), sort_keys=True))
    elif cmd == "stats":
        print(json.dumps(pipeline.stage_stats(ws).to_dict(), sort_keys=True))
    elif cmd == "render":
        print(json.dumps({"scenes": pipeline.stage_render(ws)}))
    elif cmd == "eval":
        report = pipeline.stage_eval(ws, args.predictions)
        print(json.dumps({k: report[k] for k in ("ade", "fde", "count", "split_scenes")}, sort_keys=True))
    elif cmd == "pipeline":
        out = pipeline.run_pipeline(ws, predictions=args.predictions)
        print(json.dumps({"frames": out["stats"]["frame_count"], "scenes": out["stats"]["scene_count"],
                          "ade": out["eval"]["ade"], "fde": out["eval"]["fde"]}, sort_keys=True))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.log_json, args.verbose)
    log = logging.getLogger("drivevla.cli")
    try:
        return _run(args)
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VlmError as exc:
        log.error("%s", exc)
        print(f"vlm error: {exc}", file=sys.stderr)
        return EXIT_VLM
    except (DataError, DriveVlaError, OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
