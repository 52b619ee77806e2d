"""Tests for experiment configuration."""

from pathlib import Path

import pytest

from pixcorr.config import RESOLVED_FILE, ExperimentConfig, parse_entries
from pixcorr.errors import ConfigurationError
from pixcorr.models import AttDomains, AttForm, AttMetric, Optimizer, Variant


class TestDefaults:
    def test_gta5_like_profile(self) -> None:
        config = ExperimentConfig.load()
        loss = config.loss_config()
        assert loss.att_form is AttForm.Z_VS_ZPP
        assert loss.att_domains is AttDomains.BOTH
        assert loss.att_metric is AttMetric.L1
        assert loss.lam == 0.1
        assert config.variant_list() == list(Variant)

    def test_train_config(self) -> None:
        train = ExperimentConfig.load().train_config()
        assert train.iterations == 6000
        assert train.base_lr == 0.01
        assert train.weight_decay == 5e-4
        assert train.poly_power == 0.9
        assert train.optimizer is Optimizer.SGD
        assert ExperimentConfig.load().sam_train_config().iterations == 3000


class TestLoading:
    def test_file_and_comments(self, tmp_path: Path) -> None:
        path = tmp_path / "exp.cfg"
        path.write_text("# experiment\nlambda = 0.3  # stronger\nuse_skip = no\ngens=2\n")
        config = ExperimentConfig.load(path)
        assert config.lam == 0.3
        assert config.use_skip is False
        assert config.gens == 2

    def test_overrides_beat_file(self, tmp_path: Path) -> None:
        path = tmp_path / "exp.cfg"
        path.write_text("lambda = 0.3\nseed = 4\n")
        config = ExperimentConfig.load(path, {"lambda": "0.5"})
        assert config.lam == 0.5
        assert config.seed == 4

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigurationError, match="unknown config key: colour"):
            ExperimentConfig.load(overrides={"colour": "red"})

    def test_bad_value_names_key(self) -> None:
        with pytest.raises(ConfigurationError, match="gens"):
            ExperimentConfig.load(overrides={"gens": "three"})

    @pytest.mark.parametrize(
        "key, value",
        [("lambda", "-1"), ("att_metric", "l2"), ("profile", "cityscapes"), ("gens", "0"),
         ("downsample", "3"), ("variants", "ours,ours"), ("use_conv", "maybe")],
    )
    def test_invalid(self, key: str, value: str) -> None:
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(overrides={key: value})

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(tmp_path / "absent.cfg")

    def test_malformed_line(self) -> None:
        with pytest.raises(ConfigurationError, match=":2:"):
            parse_entries("seed = 1\nnonsense\n")


class TestProfiles:
    def test_synthia_profile(self) -> None:
        loss = ExperimentConfig.load(overrides={"profile": "synthia-like"}).loss_config()
        assert loss.att_form is AttForm.Z_VS_ZP
        assert loss.att_domains is AttDomains.TARGET_ONLY

    def test_explicit_keys_beat_profile(self) -> None:
        config = ExperimentConfig.load(
            overrides={"profile": "synthia-like", "att_form": "z-zpp", "att_metric": "kl"}
        )
        loss = config.loss_config()
        assert loss.att_form is AttForm.Z_VS_ZPP
        assert loss.att_domains is AttDomains.TARGET_ONLY
        assert loss.att_metric is AttMetric.KL


class TestRunDirectory:
    def test_hash_ignores_seed_and_out(self) -> None:
        a = ExperimentConfig.load(overrides={"seed": "1", "out": "x"})
        b = ExperimentConfig.load(overrides={"seed": "2", "out": "y"})
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 10

    def test_hash_tracks_settings(self) -> None:
        a = ExperimentConfig.load()
        b = ExperimentConfig.load(overrides={"lambda": "0.2"})
        assert a.config_hash() != b.config_hash()

    def test_run_dir_name(self, tmp_path: Path) -> None:
        config = ExperimentConfig.load(overrides={"seed": "7", "out": str(tmp_path)})
        assert config.run_dir() == tmp_path / f"run-{config.config_hash()}-s7"

    def test_resolved_file_reloads(self, tmp_path: Path) -> None:
        config = ExperimentConfig.load(overrides={"lambda": "0.25", "use_conv": "false"})
        path = config.write_resolved(tmp_path)
        assert path == tmp_path / RESOLVED_FILE
        assert "lambda = 0.25" in path.read_text()
        assert ExperimentConfig.load(path) == config
