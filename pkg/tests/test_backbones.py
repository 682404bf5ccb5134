import numpy as np
import pytest

from ctdnet.backbones import (
    KINDS,
    BackboneConfig,
    build_backbone,
    count_parameters,
    encoder_forward,
)
from ctdnet.errors import ConfigError, ShapeError, UnsupportedForwardError
from ctdnet.nn.init import meta_init
from ctdnet.tensor import Tensor


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("size", [96, 352])
def test_stage_strides(kind, size):
    cfg = BackboneConfig.preset(kind)
    with meta_init():
        feats = encoder_forward(Tensor.meta((2, 3, size, size)), cfg)
    for feat, stride, ch in zip(feats, (4, 8, 16, 32), cfg.channels):
        assert feat.shape == (2, ch, size // stride, size // stride)


def test_tiny_runs_on_real_data():
    backbone = build_backbone(BackboneConfig.preset("tiny"))
    feats = backbone(Tensor(np.random.default_rng(0).random((1, 3, 64, 64))))
    assert [f.shape[1] for f in feats] == [16, 32, 64, 128]
    assert all(np.isfinite(f.data).all() for f in feats)


def test_structural_refuses_real_data():
    with meta_init():
        backbone = build_backbone(BackboneConfig.preset("resnet50-structural"))
    with pytest.raises(UnsupportedForwardError):
        backbone(Tensor(np.zeros((1, 3, 64, 64))))


def test_known_parameter_counts():
    # torchvision's conv trunks without the classifier
    with meta_init():
        r18 = build_backbone(BackboneConfig.preset("resnet18"))
        r50 = build_backbone(BackboneConfig.preset("resnet50-structural"))
        mb2 = build_backbone(BackboneConfig.preset("mobilenetv2-structural"))
    assert count_parameters(r18) == 11_176_512
    assert count_parameters(r50) == 23_508_032
    assert abs(count_parameters(mb2) - 1_810_000) / 1_810_000 < 0.05


def test_width_multiplier_scales_channels():
    cfg = BackboneConfig.preset("tiny", width=2.0)
    assert cfg.channels == (32, 64, 128, 256)
    assert build_backbone(cfg).stage_channels == (32, 64, 128, 256)


def test_image_validation():
    backbone = build_backbone(BackboneConfig.preset("tiny"))
    with pytest.raises(ShapeError):
        backbone(Tensor.meta((1, 3, 100, 96)))
    with pytest.raises(ShapeError):
        backbone(Tensor.meta((1, 1, 96, 96)))


@pytest.mark.parametrize("kwargs", [
    dict(kind="vgg"),
    dict(stage_channels=(1, 2, 3)),
    dict(depths=(0, 1, 1, 1)),
    dict(width=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        BackboneConfig(**kwargs)


@pytest.mark.parametrize("kind", ["tiny", "resnet18"])
def test_constant_image_gives_finite_stages(kind):
    backbone = build_backbone(BackboneConfig.preset(kind))
    feats = backbone(Tensor(np.full((2, 3, 64, 64), 0.5)))
    assert all(np.isfinite(f.data).all() for f in feats)
