"""Experiment configuration: defaults, desk preset, validation messages."""

import pytest

from operon.config import VARIANTS, config_from_dict, load_config
from operon.nn import ConfigError


class TestDefaults:
    def test_minimal_config(self):
        cfg = config_from_dict({"equation": "kdv"})
        assert cfg.equation == "kdv"
        assert cfg.dt_high == 0.025
        assert cfg.dt_low == 0.125
        assert cfg.t_end == 5.0
        assert cfg.grid.n_x == 100 and cfg.grid.period == 10.0
        assert cfg.training.batch_size == 50
        assert cfg.training.lr1 == 1e-4
        assert cfg.model.branch_widths[-1] == 300

    def test_empty_config_is_valid(self):
        cfg = config_from_dict({})
        assert cfg.equation == "kdv"

    def test_per_equation_defaults(self):
        cfg = config_from_dict({"equation": "burgers"})
        assert cfg.grid.origin == -1.0 and cfg.grid.period == 2.0
        assert cfg.dt_high == 0.01 and cfg.t_end == 2.0
        cfg = config_from_dict({"equation": "cahn_hilliard"})
        assert cfg.dt_high == 0.02 and cfg.t_end == 3.0

    def test_desk_preset(self):
        cfg = config_from_dict({"equation": "kdv"}, desk=True)
        assert (cfg.n_high, cfg.n_low, cfg.n_test) == (50, 200, 50)
        assert cfg.training.epochs == (500, 500, 500)
        assert cfg.model.branch_widths == (15, 25, 45, 38, 32, 30)
        assert cfg.model.lstm_hidden == 20

    def test_seed_override(self):
        cfg = config_from_dict({"seeds": [3, 4]}, seed=9)
        assert cfg.seeds == (9,)


class TestValidation:
    def test_unknown_equation(self):
        with pytest.raises(ConfigError, match="equation"):
            config_from_dict({"equation": "navier_stokes"})

    def test_unknown_variant_lists_valid_names(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"variant": "don_medium"})
        for name in VARIANTS:
            assert name in str(err.value)

    def test_resolution_ratio_enforced(self):
        with pytest.raises(ConfigError, match="dt_low"):
            config_from_dict({"equation": "kdv", "dt_low": 0.1})

    def test_resolution_ratio_override_flag(self):
        cfg = config_from_dict({"equation": "kdv", "dt_low": 0.1,
                                "allow_dt_ratio_mismatch": True})
        assert cfg.dt_low == 0.1

    def test_lr_ordering_path(self):
        with pytest.raises(ConfigError, match="training"):
            config_from_dict({"training": {"lr1": 1e-5, "lr2": 1e-4}})

    def test_unknown_keys_rejected_with_path(self):
        with pytest.raises(ConfigError, match="grid"):
            config_from_dict({"grid": {"nx": 100}})
        with pytest.raises(ConfigError, match="momentum"):
            config_from_dict({"training": {"momentum": 0.9}})
        with pytest.raises(ConfigError, match="colour"):
            config_from_dict({"colour": "blue"})

    def test_variant_data_compatibility(self):
        with pytest.raises(ConfigError, match="n_low"):
            config_from_dict({"variant": "don_low", "n_low": 0})
        with pytest.raises(ConfigError, match="n_high"):
            config_from_dict({"variant": "lstm_high", "n_high": 1})

    def test_equation_params_validated(self):
        with pytest.raises(ConfigError, match="equation_params"):
            config_from_dict({"equation": "kdv", "equation_params": {"zeta": 2.0}})

    def test_bad_seeds(self):
        with pytest.raises(ConfigError, match="seeds"):
            config_from_dict({"seeds": []})
        with pytest.raises(ConfigError, match="seeds"):
            config_from_dict({"seeds": ["a"]})


class TestLoadConfig:
    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"equation": "bbm", "n_high": 7}')
        cfg = load_config(path)
        assert cfg.equation == "bbm" and cfg.n_high == 7

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config(path)
