"""Pipeline configuration: one YAML document, every field optional.

Example::

    paths:
      input: corpus
      output: dataset
    noise: {gnss_sigma: 1.5, accel_sigma: 0.3}
    filter: {max_speed_kmh: 100, tolerance: 1.15}
    sampling: {n_scenes: 10000, seed: 0, delta: 50, flagged: scene}
    captioning: {mode: rules, vlm_endpoint: null, concurrency: 4}
    split: {fractions: [0.7, 0.15, 0.15], seed: 0}
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .captioning.rules import CaptionThresholds
from .errors import ConfigError
from .estimation import NoiseConfig
from .evaluation import SplitSpec
from .sampler import DEFAULT_DELTA, BinningConfig
from .trajfilter import FilterThresholds

VLM_ENDPOINT_ENV = "DRIVEVLA_VLM_ENDPOINT"
CAPTION_MODES = ("rules", "mock", "remote")
# what a rejected trajectory removes: its whole scene, or only its own frame
FLAGGED_MODES = ("scene", "frame")


@dataclass
class Paths:
    input: str = "corpus"
    output: str = "dataset"


@dataclass
class SamplingConfig:
    n_scenes: Optional[int] = None      # None: every eligible scene
    seed: int = 0
    delta: float = DEFAULT_DELTA
    steering_edges: tuple = BinningConfig.steering_edges
    accel_edges: tuple = BinningConfig.accel_edges
    ternary_turn_signal: bool = False
    flagged: str = "scene"

    def binning(self) -> BinningConfig:
        return BinningConfig(tuple(self.steering_edges), tuple(self.accel_edges),
                             self.ternary_turn_signal)


@dataclass
class CaptioningConfig:
    mode: str = "rules"
    vlm_endpoint: Optional[str] = None
    mock_fixture: Optional[str] = None
    queries: Optional[str] = None
    concurrency: int = 4
    timeout: float = 30.0
    retries: int = 3
    thresholds: CaptionThresholds = field(default_factory=CaptionThresholds)


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    filter: FilterThresholds = field(default_factory=FilterThresholds)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    captioning: CaptioningConfig = field(default_factory=CaptioningConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    jobs: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name != "thresholds" else CaptionThresholds()
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: Optional[dict]) -> PipelineConfig:
    cfg = _build(PipelineConfig, data or {}, "config")
    if cfg.captioning.mode not in CAPTION_MODES:
        raise ConfigError(f"captioning.mode must be one of {', '.join(CAPTION_MODES)}")
    if cfg.sampling.flagged not in FLAGGED_MODES:
        raise ConfigError(f"sampling.flagged must be one of {', '.join(FLAGGED_MODES)}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


def load(path: Optional[str | os.PathLike] = None) -> PipelineConfig:
    """Read a config file (defaults when ``path`` is None), then apply the
    VLM endpoint environment override."""
    data = None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} not found")
        try:
            data = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {str(p)!r} is not valid YAML: {exc}") from exc
    cfg = from_dict(data)
    env = os.environ.get(VLM_ENDPOINT_ENV)
    if env:
        cfg.captioning.vlm_endpoint = env
        cfg.captioning.mode = "remote"
    return cfg
