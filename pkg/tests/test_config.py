import json

import pytest

from xdmap.cli import CliError, build_parser, resolve_config
from xdmap.config import ConfigError, PipelineConfig, RenderConfig, config_from_dict, config_to_dict, load_config, save_config


def _args(*extra):
    return build_parser().parse_args(["map", "--data", "d", "--out", "o", *extra])


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.range_threshold == 50.0 and cfg.render.range_threshold == 50.0
    assert cfg.sampling_hz == 10.0 and cfg.motion_compensation
    assert cfg.margins.pixel_dilation == 1 == cfg.render.dilation
    assert cfg.lidar.model().shape == (128, 1812)


def test_dict_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 7, "range_threshold": 30.0, "scene": {"num_signs": 2}})
    assert config_from_dict(config_to_dict(cfg)) == cfg
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_derived_fields_follow_top_level():
    cfg = PipelineConfig(seed=9, range_threshold=70.0)
    assert cfg.scene.seed == 9 and cfg.render.range_threshold == 70.0


@pytest.mark.parametrize("data", [
    {"nope": 1},
    {"render": {"bogus": 2}},
    {"range_threshold": "far"},
    {"motion_compensation": 1},
    {"sampling_hz": 20.0},
    {"range_threshold": -1.0},
    {"render": {"dilation": 2}},
])
def test_invalid_values_raise(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_precedence_file_then_set_then_flags(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"range_threshold": 30.0, "sampling_hz": 2.0, "seed": 4}))
    base = {"range_threshold": 70.0, "eval_stride": 3, "seed": 2}
    cfg = resolve_config(_args("--config", str(path)), base)
    assert (cfg.range_threshold, cfg.sampling_hz, cfg.eval_stride, cfg.seed) == (30.0, 2.0, 3, 4)
    cfg = resolve_config(_args("--config", str(path), "--set", "range_threshold=40"), base)
    assert cfg.range_threshold == 40.0 and cfg.render.range_threshold == 40.0
    cfg = resolve_config(_args("--config", str(path), "--set", "range_threshold=40", "--range-threshold", "55"), base)
    assert cfg.range_threshold == 55.0 and cfg.render.range_threshold == 55.0
    cfg = resolve_config(_args("--no-motion-compensation", "--seed", "11"), base)
    assert not cfg.motion_compensation and cfg.seed == 11 and cfg.scene.seed == 11


def test_nested_key_in_a_later_layer_moves_the_linked_value():
    cfg = resolve_config(_args("--set", "render.range_threshold=35"), {"range_threshold": 70.0})
    assert cfg.range_threshold == 35.0 and cfg.render.range_threshold == 35.0


def test_contradiction_within_one_layer_is_an_error(tmp_path):
    with pytest.raises(ConfigError):
        resolve_config(_args("--set", "seed=3", "--set", "scene.seed=4"))
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"range_threshold": 30.0, "render": {"range_threshold": 40.0}}))
    with pytest.raises(ConfigError):
        resolve_config(_args("--config", str(path)))


def test_config_file_errors(tmp_path):
    with pytest.raises(CliError) as err:
        resolve_config(_args("--config", str(tmp_path / "missing.json")))
    assert err.value.code == "E_MISSING_INPUT"
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(CliError) as err:
        resolve_config(_args("--config", str(bad)))
    assert err.value.code == "E_CONFIG"
    with pytest.raises(CliError) as err:
        resolve_config(_args("--set", "novalue"))
    assert err.value.code == "E_USAGE"


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(min_segment_pixels=0)
    with pytest.raises(ValueError):
        RenderConfig(range_threshold=0.0)
