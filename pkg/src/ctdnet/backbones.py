"""Encoders producing the stride-{4, 8, 16, 32} feature stages.

``tiny`` and ``resnet18`` are trainable. ``mobilenetv2-structural`` and
``resnet50-structural`` exist for parameter audits: they build the exact
layer graph (shape-only under :func:`ctdnet.nn.init.meta_init`) and accept
meta tensors for shape inference, but refuse real data.
"""
from __future__ import annotations

import dataclasses
from typing import NamedTuple

from .errors import ConfigError, ShapeError, UnsupportedForwardError
from .nn import ConvBNReLU, MaxPool2d, Module, Sequential
from .tensor import Tensor
from .tensor.tensor import relu

KINDS = ("tiny", "resnet18", "mobilenetv2-structural", "resnet50-structural")
STRUCTURAL_KINDS = ("mobilenetv2-structural", "resnet50-structural")


class StageFeatures(NamedTuple):
    e2: Tensor
    e3: Tensor
    e4: Tensor
    e5: Tensor


@dataclasses.dataclass(frozen=True)
class BackboneConfig:
    kind: str = "resnet18"
    stage_channels: tuple = (64, 128, 256, 512)
    depths: tuple = (2, 2, 2, 2)
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}; expected one of {KINDS}")
        if len(self.stage_channels) != 4 or len(self.depths) != 4:
            raise ConfigError("a backbone has exactly four stages")
        if any(c < 1 for c in self.stage_channels) or any(d < 1 for d in self.depths):
            raise ConfigError("stage channels and depths must be positive")
        if self.width <= 0:
            raise ConfigError("width multiplier must be positive")

    @classmethod
    def preset(cls, kind, width=1.0):
        if kind == "tiny":
            return cls("tiny", (16, 32, 64, 128), (1, 1, 1, 1), width)
        if kind == "resnet18":
            return cls("resnet18", (64, 128, 256, 512), (2, 2, 2, 2))
        if kind == "resnet50-structural":
            return cls("resnet50-structural", (256, 512, 1024, 2048), (3, 4, 6, 3))
        if kind == "mobilenetv2-structural":
            return cls("mobilenetv2-structural", (24, 32, 96, 320), (2, 3, 7, 4))
        raise ConfigError(f"unknown backbone kind {kind!r}; expected one of {KINDS}")

    @property
    def channels(self):
        """Effective stage widths after the width multiplier."""
        if self.width == 1.0:
            return tuple(self.stage_channels)
        return tuple(max(1, int(round(c * self.width))) for c in self.stage_channels)

    @property
    def trainable(self):
        return self.kind not in STRUCTURAL_KINDS


class BasicBlock(Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = ConvBNReLU(in_ch, out_ch, 3, stride)
        self.conv2 = ConvBNReLU(out_ch, out_ch, 3, activation=False)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = ConvBNReLU(in_ch, out_ch, 1, stride, padding=0, activation=False)

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        return relu(self.conv2(self.conv1(x)) + identity)


class Bottleneck(Module):
    expansion = 4

    def __init__(self, in_ch, planes, stride=1):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = ConvBNReLU(in_ch, planes, 1, padding=0)
        self.conv2 = ConvBNReLU(planes, planes, 3, stride)
        self.conv3 = ConvBNReLU(planes, out_ch, 1, padding=0, activation=False)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = ConvBNReLU(in_ch, out_ch, 1, stride, padding=0, activation=False)

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        return relu(self.conv3(self.conv2(self.conv1(x))) + identity)


class InvertedResidual(Module):
    # ReLU6 is modelled as ReLU; structural graphs never see real data.
    def __init__(self, in_ch, out_ch, stride, expand):
        super().__init__()
        hidden = in_ch * expand
        layers = []
        if expand != 1:
            layers.append(ConvBNReLU(in_ch, hidden, 1, padding=0))
        layers.append(ConvBNReLU(hidden, hidden, 3, stride, groups=hidden))
        layers.append(ConvBNReLU(hidden, out_ch, 1, padding=0, activation=False))
        self.body = Sequential(*layers)
        self.residual = stride == 1 and in_ch == out_ch

    def forward(self, x):
        y = self.body(x)
        return y + x if self.residual else y


class Backbone(Module):
    """Common entry point: validates the image and returns :class:`StageFeatures`."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.stage_channels = config.channels

    def forward(self, image):
        if len(image.shape) != 4 or image.shape[1] != 3:
            raise ShapeError(f"image must be (B, 3, H, W), got {image.shape}")
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ShapeError(f"image extents must be divisible by 32, got {h}x{w}")
        if not self.config.trainable and not image.is_meta:
            raise UnsupportedForwardError(
                f"{self.config.kind} is structural-only; pass a meta tensor for shape inference"
            )
        return StageFeatures(*self.stages(image))

    def stages(self, image):
        raise NotImplementedError


class ResNetLike(Backbone):
    """Stem + max-pool + four stages of residual blocks (tiny, resnet18, resnet50)."""

    def __init__(self, config):
        super().__init__(config)
        if config.kind == "tiny":
            stem_ch = self.stage_channels[0]
            self.stem = ConvBNReLU(3, stem_ch, 3, stride=2)
        else:
            stem_ch = 64
            self.stem = ConvBNReLU(3, stem_ch, 7, stride=2, padding=3)
        self.pool = MaxPool2d(3, 2, 1)
        bottleneck = config.kind == "resnet50-structural"
        in_ch = stem_ch
        for i, (ch, depth) in enumerate(zip(self.stage_channels, config.depths)):
            blocks = []
            for j in range(depth):
                stride = 2 if (i > 0 and j == 0) else 1
                if bottleneck:
                    blocks.append(Bottleneck(in_ch, ch // Bottleneck.expansion, stride))
                else:
                    blocks.append(BasicBlock(in_ch, ch, stride))
                in_ch = ch
            setattr(self, f"layer{i + 1}", Sequential(*blocks))

    def stages(self, image):
        x = self.pool(self.stem(image))
        e2 = self.layer1(x)
        e3 = self.layer2(e2)
        e4 = self.layer3(e3)
        e5 = self.layer4(e4)
        return e2, e3, e4, e5


class MobileNetV2(Backbone):
    # (expand, out channels, repeats, first stride); stage taps after blocks 3, 6, 13, 17
    SETTINGS = ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1))
    TAPS = (3, 6, 13, 17)

    def __init__(self, config):
        super().__init__(config)
        blocks = [ConvBNReLU(3, 32, 3, stride=2)]
        in_ch = 32
        for expand, ch, repeats, stride in self.SETTINGS:
            for r in range(repeats):
                blocks.append(InvertedResidual(in_ch, ch, stride if r == 0 else 1, expand))
                in_ch = ch
        self.features = Sequential(*blocks)

    def stages(self, image):
        taps, x = [], image
        for i, block in enumerate(self.features):
            x = block(x)
            if i in self.TAPS:
                taps.append(x)
        return taps


def build_backbone(config):
    if config.kind == "mobilenetv2-structural":
        if config.width != 1.0:
            raise ConfigError("the structural MobileNetV2 is only defined at width 1.0")
        return MobileNetV2(config)
    return ResNetLike(config)


def encoder_forward(image, backbone):
    """Run ``backbone`` (a module or a :class:`BackboneConfig`) on ``image``."""
    if isinstance(backbone, BackboneConfig):
        backbone = build_backbone(backbone)
    return backbone(image)


def count_parameters(model):
    """Number of learnable scalars (running statistics excluded)."""
    return sum(p.size for p in model.parameters())
