"""Tests for the shared data models."""

import math

import numpy as np
import pytest

from pixcorr.errors import ConfigurationError
from pixcorr.models import (
    IGNORE,
    AttDomains,
    AttForm,
    ClassThresholds,
    Domain,
    DomainSpec,
    IoUReport,
    LossConfig,
    PseudoLabelMap,
    SceneClass,
    SceneDataset,
    TrainConfig,
    Variant,
)


class TestEnums:
    def test_scene_class_labels(self) -> None:
        assert [c.label for c in SceneClass] == ["sky", "road", "building", "vehicle", "pole"]

    def test_variant_titles(self) -> None:
        assert Variant("pseudo-only").title == "Pseudo-Only"
        assert str(Variant.OURS) == "ours"

    def test_profiles(self) -> None:
        synthia = LossConfig.synthia_like()
        assert synthia.att_form is AttForm.Z_VS_ZP
        assert synthia.att_domains is AttDomains.TARGET_ONLY


class TestValidation:
    def test_negative_lambda(self) -> None:
        with pytest.raises(ConfigurationError):
            LossConfig(lam=-0.1)

    @pytest.mark.parametrize(
        "kwargs",
        [{"iterations": 0}, {"poly_power": 0.0}, {"batch_size": 2}, {"eval_interval": 0},
         {"momentum": 1.0}, {"base_lr": 0.0}],
    )
    def test_train_config(self, kwargs: dict) -> None:
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)


class TestPayloads:
    def test_thresholds_str(self) -> None:
        assert str(ClassThresholds(np.array([0.5, math.inf]))) == "0.500000 inf"

    def test_pseudo_map_mask(self) -> None:
        pseudo = PseudoLabelMap(np.array([[0, IGNORE], [3, IGNORE]], dtype=np.uint8))
        assert pseudo.shape == (2, 2)
        assert pseudo.labeled.tolist() == [[True, False], [True, False]]

    def test_iou_report(self) -> None:
        report = IoUReport(np.array([1.0, np.nan, 0.5]), 0.75, np.array([[2, 0], [1, 1]]))
        assert report.present.tolist() == [True, False, True]
        assert report.pixel_accuracy == 0.75
        assert str(report) == "mIoU 75.00 [100.0, -, 50.0]"

    def test_dataset_str(self) -> None:
        assert "empty" in str(SceneDataset(Domain.SOURCE))

    def test_domains_differ_in_appearance_only(self) -> None:
        source, target = DomainSpec.default_source(), DomainSpec.default_target()
        assert source.palette != target.palette
        assert source.sky_fraction == target.sky_fraction
        assert source.road_fraction == target.road_fraction
