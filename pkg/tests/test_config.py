"""Config dataclass validation and the flat key = value file format."""

import numpy as np
import pytest

from fuseseg.config import (NetworkConfig, TrainConfig, format_config,
                            load_config, parse_config_text)
from fuseseg.errors import ConfigError


class TestNetworkConfig:
    def test_defaults_validate(self):
        cfg = NetworkConfig().validate()
        assert cfg.fusion_mode == "gated"
        assert cfg.disentangle is True

    def test_stage_channels_doubling(self):
        cfg = NetworkConfig(base_channels=4, stages=4)
        assert [cfg.stage_channels(s) for s in range(4)] == [4, 8, 16, 32]

    @pytest.mark.parametrize("kw", [
        dict(modalities=0),
        dict(classes=1),
        dict(stages=0),
        dict(base_channels=0),
        dict(appearance_dim=0),
        dict(patch=24, stages=4),       # 24 % 16 != 0
        dict(leaky_slope=0.0),
        dict(leaky_slope=1.0),
        dict(dropout_prob=-0.1),
        dict(dropout_prob=1.0),
        dict(fusion_mode="max"),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            NetworkConfig(**kw).validate()

    def test_patch_divisibility_boundary(self):
        NetworkConfig(patch=16, stages=4).validate()
        with pytest.raises(ConfigError):
            NetworkConfig(patch=8, stages=4).validate()


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [
        dict(batch_size=2),
        dict(max_epoch=0),
        dict(learning_rate=0.0),
        dict(learning_rate=-1e-4),
        dict(lam=-0.1),
        dict(beta=-0.1),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_validate_recurses_into_network(self):
        cfg = TrainConfig(network=NetworkConfig(stages=0))
        with pytest.raises(ConfigError):
            cfg.validate()


class TestParse:
    def test_basic_file(self, tmp_path):
        text = (
            "# comment line\n"
            "\n"
            "modalities = 2\n"
            "classes = 3\n"
            "stages = 2\n"
            "patch = 16\n"
            "learning_rate = 5e-4\n"
            "max_epoch = 7\n"
            "lambda = 0.25\n"
            "fusion_mode = average\n"
            "disentangle = false\n"
        )
        path = tmp_path / "t.cfg"
        path.write_text(text)
        cfg = load_config(path)
        assert cfg.network.modalities == 2
        assert cfg.network.classes == 3
        assert cfg.network.fusion_mode == "average"
        assert cfg.network.disentangle is False
        assert cfg.learning_rate == 5e-4
        assert cfg.max_epoch == 7
        assert cfg.lam == 0.25
        # untouched keys keep their defaults
        assert cfg.beta == 0.1
        assert cfg.network.appearance_dim == 8

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("learnig_rate = 1e-3\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("max_epoch = 3\nmax_epoch = 4\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("max_epoch 3\n")

    def test_bad_int(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("max_epoch = three\n")

    def test_bad_bool(self):
        with pytest.raises(ConfigError, match="boolean"):
            parse_config_text("disentangle = maybe\n")

    def test_bool_spellings(self):
        for raw, want in [("true", True), ("1", True), ("yes", True),
                          ("false", False), ("0", False), ("no", False)]:
            cfg = parse_config_text(f"disentangle = {raw}\n")
            assert cfg.network.disentangle is want

    def test_error_names_line(self):
        with pytest.raises(ConfigError, match="<config>:2"):
            parse_config_text("max_epoch = 3\nbogus = 1\n")

    def test_invalid_after_parse(self):
        # parsing succeeds syntactically, validation still runs
        with pytest.raises(ConfigError, match="patch"):
            parse_config_text("patch = 24\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.cfg")


class TestRoundTrip:
    def test_format_parse_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            cfg = TrainConfig(
                learning_rate=float(rng.uniform(1e-5, 1e-2)),
                max_epoch=int(rng.integers(1, 50)),
                poly_power=float(rng.uniform(0.5, 2.0)),
                lam=float(rng.uniform(0, 1)),
                beta=float(rng.uniform(0, 1)),
                seed=int(rng.integers(0, 1 << 16)),
                network=NetworkConfig(
                    modalities=int(rng.integers(1, 5)),
                    classes=int(rng.integers(2, 6)),
                    stages=2,
                    base_channels=int(rng.integers(1, 9)),
                    appearance_dim=int(rng.integers(1, 17)),
                    patch=int(rng.integers(1, 5)) * 4,
                    dropout_prob=float(rng.uniform(0, 0.9)),
                    fusion_mode=("gated", "average")[int(rng.integers(2))],
                    disentangle=bool(rng.integers(2)),
                ),
            ).validate()
            back = parse_config_text(format_config(cfg))
            assert back == cfg

    def test_lambda_alias_in_output(self):
        text = format_config(TrainConfig())
        assert "lambda = " in text
        assert "lam = " not in text.replace("lambda = ", "")
