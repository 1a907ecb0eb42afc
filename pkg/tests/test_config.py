import json

import numpy as np
import pytest

from sig_recognition.config import EngineConfig, engine_keys, load_config, resolve_mode
from sig_recognition.exceptions import InputError
from sig_recognition.globals import MODE_ENV_VAR


class TestEngineConfig:
    def test_defaults(self):
        config = EngineConfig()
        assert (config.depth, config.mode, config.aggregation) == (2, "plain", "max")
        assert config.dtw_radius == 1
        assert config.priors is None

    @pytest.mark.parametrize(
        "values",
        [
            {"depth": 0},
            {"depth": 7},
            {"mode": "fast"},
            {"aggregation": "sum"},
            {"dtw_reduction": "max"},
            {"interpolation": "cubic"},
            {"dtw_radius": -1},
            {"tie_tolerance": -1e-3},
            {"priors": {"a": 0.5, "b": 0.6}},
            {"priors": {"a": -0.5, "b": 1.5}},
            {"dimension_mask": [False, False]},
        ],
    )
    def test_rejects_invalid_values(self, values):
        with pytest.raises(InputError):
            EngineConfig(**values)

    def test_prior_vector(self):
        config = EngineConfig(priors={"a": 0.2, "1": 0.8})
        np.testing.assert_allclose(config.prior_vector(["a", 1]), [0.2, 0.8])
        np.testing.assert_allclose(EngineConfig().prior_vector(["a", "b"]), [0.5, 0.5])
        with pytest.raises(InputError):
            config.prior_vector(["a", "b"])

    def test_dict_round_trip(self):
        config = EngineConfig(depth=3, mode="dtw", dimension_mask=[True, False])
        assert EngineConfig.from_dict(config.to_dict()) == config
        assert config.replace(depth=4).depth == 4
        assert sorted(config.to_dict()) == sorted(engine_keys())

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(InputError, match="window"):
            EngineConfig.from_dict({"window": 3})


class TestLoadConfig:
    def test_engine_and_run_keys(self, tmp_path):
        fp = tmp_path / "config.json"
        fp.write_text(json.dumps({"depth": 3, "eps_merge": 0.2, "seed": 4}))
        assert load_config(fp) == {"depth": 3, "eps_merge": 0.2, "seed": 4}

    @pytest.mark.parametrize("text", ['{"depht": 3}', "[1, 2]", "{not json"])
    def test_rejects_malformed_files(self, tmp_path, text):
        fp = tmp_path / "config.json"
        fp.write_text(text)
        with pytest.raises(InputError):
            load_config(fp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_config(tmp_path / "absent.json")


class TestResolveMode:
    def test_explicit_mode_wins(self, monkeypatch):
        monkeypatch.setenv(MODE_ENV_VAR, "dtw")
        assert resolve_mode("plain") == "plain"

    def test_environment_variable(self, monkeypatch):
        monkeypatch.setenv(MODE_ENV_VAR, "dtw")
        assert resolve_mode() == "dtw"

    def test_default(self, monkeypatch):
        monkeypatch.delenv(MODE_ENV_VAR, raising=False)
        assert resolve_mode() == "plain"

    def test_rejects_unknown_mode(self, monkeypatch):
        monkeypatch.setenv(MODE_ENV_VAR, "fastest")
        with pytest.raises(InputError):
            resolve_mode()
