"""
Tests for run configuration loading.
"""

import pytest

from airway_gvf.config import Config, load_config, parse_config
from airway_gvf.errors import ConfigError


class TestDefaults:
    """Test cases for default values."""

    def test_stage_defaults(self):
        config = Config()
        assert config.enhance.beta == 0.05
        assert config.enhance.cef_hu_threshold == -800.0
        assert config.leak.s_ratio_max == 0.33
        assert config.tube.t_l == 200.0
        assert config.tube.t_m == 500.0
        assert config.tube.min_spur == 4.0
        assert config.tracer.max_exits == 3
        assert config.tracer.max_generation == 12

    def test_defaults_table_lists_every_key(self):
        keys = dict(Config.defaults_table())
        assert keys["gvf.mu"] == "0.1"
        assert keys["enhance.cef_scales"] == "0.5,1,2"
        assert keys["voi.pitch"] == "None"
        assert "tracer.voxel_budget" in keys
        assert "trachea.explosion_ratio" in keys

    def test_no_path_gives_defaults(self):
        assert load_config(None) == Config()


class TestParse:
    """Test cases for key=value overrides."""

    def test_overrides(self):
        config = parse_config(
            "gvf.mu = 0.2\nenhance.cef_scales = 1, 3\ntracer.use_gvf = false\nvoi.pitch = 0.5\n"
        )
        assert config.gvf.mu == 0.2
        assert config.enhance.cef_scales == [1.0, 3.0]
        assert config.tracer.use_gvf is False
        assert config.voi.pitch == 0.5
        assert config.tube == Config().tube

    def test_optional_none(self):
        assert parse_config("gvf.f_max = none").gvf.f_max is None

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("gvff.mu = 0.2")
        assert exc.value.key == "gvff.mu"

    def test_misspelled_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("gvf.muu = 0.2")
        assert exc.value.key == "gvf.muu"

    def test_invalid_value_names_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("leak.s_ratio_max = 1.5")
        assert exc.value.key == "leak.s_ratio_max"

    def test_unparsable_value_names_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("tracer.threads = many")
        assert exc.value.key == "tracer.threads"

    def test_cross_field_validation(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("trachea.hu_start = -700")
        assert exc.value.key == "trachea"

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("tracer.threads = 4\n")
        assert load_config(path).tracer.threads == 4

    def test_with_threads(self):
        config = Config().with_threads(8)
        assert config.tracer.threads == 8
        assert Config().tracer.threads == 1
