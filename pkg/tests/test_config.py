import pytest

from drivevla import config
from drivevla.errors import ConfigError


def test_defaults():
    cfg = config.from_dict(None)
    assert cfg.captioning.mode == "rules" and cfg.sampling.flagged == "scene"
    assert cfg.split.fractions == (0.70, 0.15, 0.15) and cfg.jobs == 1


def test_nested_values_and_list_to_tuple():
    cfg = config.from_dict({"noise": {"gnss_sigma": 1.5}, "sampling": {"steering_edges": [1, 2, 3]},
                            "split": {"fractions": [0.8, 0.1, 0.1], "seed": 4}})
    assert cfg.noise.gnss_sigma == 1.5
    assert cfg.sampling.binning().steering_edges == (1, 2, 3)
    assert cfg.split.fractions == (0.8, 0.1, 0.1) and cfg.split.seed == 4


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"noise": {"gnss_sgima": 1.0}},
    {"noise": 3},
    {"captioning": {"mode": "telepathy"}},
    {"sampling": {"flagged": "recording"}},
    {"split": {"fractions": [0.5, 0.5, 0.5]}},
    {"jobs": 0},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config.from_dict(data)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="config.noise: unknown keys gnss_sgima"):
        config.from_dict({"noise": {"gnss_sgima": 1.0}})


def test_load_yaml_and_env_override(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("sampling: {n_scenes: 3, flagged: frame}\ncaptioning: {mode: mock}\n")
    monkeypatch.delenv(config.VLM_ENDPOINT_ENV, raising=False)
    cfg = config.load(p)
    assert cfg.sampling.n_scenes == 3 and cfg.sampling.flagged == "frame" and cfg.captioning.mode == "mock"
    monkeypatch.setenv(config.VLM_ENDPOINT_ENV, "http://vlm.local:9000")
    cfg = config.load(p)
    assert cfg.captioning.mode == "remote" and cfg.captioning.vlm_endpoint == "http://vlm.local:9000"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        config.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        config.load(bad)
