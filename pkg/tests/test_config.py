import pytest

from glandnet.config import RunConfig, load_config, parse_config
from glandnet.errors import ConfigError


def test_defaults_and_hash_stable():
    a, b = parse_config(""), load_config()
    assert a == b == RunConfig()
    assert a.hash() == b.hash() and len(a.hash()) == 16


def test_values_parsed_with_types():
    cfg = parse_config("seed = 7\nlr = 0.01  # slower\nstrategy = II\nfusion_dilations = 1,2,3,3,2,1\n\n# c\n")
    assert cfg.seed == 7 and cfg.lr == 0.01 and cfg.strategy == "II"
    assert cfg.fusion_dilations == (1, 2, 3, 3, 2, 1)
    assert cfg.hash() != RunConfig().hash()


def test_text_roundtrip():
    cfg = parse_config("seed = 3\nedge_radius = 3.0\n")
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,match", [
    ("sead = 1", "unknown config key 'sead'"),
    ("seed = 1\nseed = 2", "duplicate"),
    ("seed 1", "expected 'key = value'"),
    ("seed = x", "cannot parse"),
    ("strategy = III", "strategy"),
    ("detection_source = rpn", "detection_source"),
    ("epochs_seg = -1", "non-negative"),
])
def test_bad_config(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_overrides(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("seed = 1\n")
    assert load_config(p, {"seed": 5}).seed == 5
    with pytest.raises(ConfigError):
        load_config(p, {"nope": 1})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.txt")


def test_derived_configs():
    cfg = parse_config("epochs_edge = 7\nlr = 0.2\nweight_testA = 0.5\nweight_testB = 0.5")
    assert cfg.training("edge").epochs == 7 and cfg.training("edge").lr == 0.2
    assert cfg.split_weights() == {"testA": 0.5, "testB": 0.5}
    assert cfg.pipeline().fusion_dilations == cfg.fusion_dilations


def test_fusion_needs_six_dilations():
    with pytest.raises(ConfigError, match="six"):
        parse_config("fusion_dilations = 1,2")
