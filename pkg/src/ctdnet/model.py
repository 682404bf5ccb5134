"""The complementary trilateral decoder network (S, M and L variants).

Three decoder branches leave a shared encoder: a semantic path over the two
deepest stages plus global context, a spatial path over the stride-8 stage,
and a boundary path over the stride-4 stage. CAM merges semantic and spatial
features, BRM then folds in the boundary features. Six heads (a 3x3 conv and
a sigmoid each) are deeply supervised.
"""
from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from .backbones import BackboneConfig, build_backbone
from .errors import ConfigError, ShapeError
from .nn import BRM, CAM, FFM, SAM, SAP, Conv2d, ConvBNReLU, Module
from .tensor import Tensor, no_grad
from .tensor import functional as F
from .tensor.tensor import sigmoid

SALIENCY_HEADS = ("d_p123", "d_p12", "d_p1", "e_g5", "e6")
BOUNDARY_HEAD = "d_p3"
HEADS = SALIENCY_HEADS + (BOUNDARY_HEAD,)
HEAD_STRIDES = {"d_p123": 4, "d_p12": 8, "d_p1": 16, "e_g5": 32, "e6": 32, "d_p3": 4}


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


@dataclasses.dataclass(frozen=True)
class VariantConfig:
    name: str = "M"
    backbone: BackboneConfig = dataclasses.field(default_factory=BackboneConfig)
    decoder_width: int = 64
    sap_enabled: bool = True
    cam_substituted_by_conv3: bool = False
    extra_e3_sap: bool = False
    extra_e2_sam: bool = False
    input_size: int = 352
    sap_branches: int = 4
    sap_kind: str = "avg"
    sap_projection_kernel: int = 3

    def __post_init__(self):
        if self.name not in ("S", "M", "L", "custom"):
            raise ConfigError(f"variant name must be S, M, L or custom, got {self.name!r}")
        if self.input_size % 32 or self.input_size < 32:
            raise ConfigError(f"input resolution must be a positive multiple of 32, got {self.input_size}")
        if self.decoder_width < 1 or self.sap_branches < 1:
            raise ConfigError("decoder width and SAP branch count must be positive")
        if self.sap_projection_kernel not in (1, 3):
            raise ConfigError("SAP projection kernel must be 1 or 3")
        if self.sap_kind not in ("avg", "max"):
            raise ConfigError(f"SAP kind must be avg or max, got {self.sap_kind!r}")
        if self.extra_e3_sap and not self.sap_enabled:
            raise ConfigError("extra_e3_sap requires sap_enabled")
        rules = {
            "S": dict(sap_enabled=False, cam_substituted_by_conv3=True),
            "M": dict(sap_enabled=True, extra_e3_sap=False, extra_e2_sam=False,
                      cam_substituted_by_conv3=False),
            "L": dict(extra_e3_sap=True, extra_e2_sam=True, sap_enabled=True),
        }.get(self.name, {})
        bad = [k for k, v in rules.items() if getattr(self, k) != v]
        if bad:
            raise ConfigError(f"variant {self.name} requires {', '.join(f'{k}={rules[k]}' for k in bad)}")

    @classmethod
    def preset(cls, name, backbone=None, input_size=352, decoder_width=None):
        """The S, M and L variants; ``backbone`` may swap the encoder (e.g. ``"tiny"``)."""
        if name == "S":
            kw = dict(backbone="mobilenetv2-structural", decoder_width=32, sap_enabled=False,
                      cam_substituted_by_conv3=True)
        elif name == "M":
            kw = dict(backbone="resnet18", decoder_width=64)
        elif name == "L":
            # 1x1 projections: 3x3 over 4x2048 SAP channels would dwarf the backbone
            kw = dict(backbone="resnet50-structural", decoder_width=64, extra_e3_sap=True,
                      extra_e2_sam=True, sap_projection_kernel=1)
        else:
            raise ConfigError(f"unknown variant {name!r}; expected S, M or L")
        bb = backbone if backbone is not None else kw.pop("backbone")
        kw.pop("backbone", None)
        if isinstance(bb, str):
            bb = BackboneConfig.preset(bb)
        if decoder_width is not None:
            kw["decoder_width"] = decoder_width
        return cls(name=name, backbone=bb, input_size=input_size, **kw)

    def to_fields(self):
        """Flat key=value mapping (checkpoint headers, config files)."""
        bb = self.backbone
        return {
            "variant": self.name,
            "backbone": bb.kind,
            "stage_channels": ",".join(str(c) for c in bb.stage_channels),
            "depths": ",".join(str(d) for d in bb.depths),
            "width": repr(float(bb.width)),
            "decoder_width": str(self.decoder_width),
            "sap_enabled": str(self.sap_enabled).lower(),
            "cam_substituted_by_conv3": str(self.cam_substituted_by_conv3).lower(),
            "extra_e3_sap": str(self.extra_e3_sap).lower(),
            "extra_e2_sam": str(self.extra_e2_sam).lower(),
            "input_size": str(self.input_size),
            "sap_branches": str(self.sap_branches),
            "sap_kind": self.sap_kind,
            "sap_projection_kernel": str(self.sap_projection_kernel),
        }

    @classmethod
    def from_fields(cls, fields):
        try:
            bb = BackboneConfig(
                kind=fields["backbone"],
                stage_channels=tuple(int(c) for c in fields["stage_channels"].split(",")),
                depths=tuple(int(d) for d in fields["depths"].split(",")),
                width=float(fields["width"]),
            )
            return cls(
                name=fields["variant"],
                backbone=bb,
                decoder_width=int(fields["decoder_width"]),
                sap_enabled=_bool(fields["sap_enabled"]),
                cam_substituted_by_conv3=_bool(fields["cam_substituted_by_conv3"]),
                extra_e3_sap=_bool(fields["extra_e3_sap"]),
                extra_e2_sam=_bool(fields["extra_e2_sam"]),
                input_size=int(fields["input_size"]),
                sap_branches=int(fields["sap_branches"]),
                sap_kind=fields["sap_kind"],
                sap_projection_kernel=int(fields["sap_projection_kernel"]),
            )
        except KeyError as exc:
            raise ConfigError(f"variant description lacks field {exc.args[0]!r}") from exc

    def digest(self):
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.to_fields().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclasses.dataclass
class HeadOutputs:
    """Decoder features and their single-channel sigmoid predictions, keyed by head name."""

    features: dict
    predictions: dict

    def __getitem__(self, name):
        return self.predictions[name]

    @property
    def boundary(self):
        return self.predictions[BOUNDARY_HEAD]

    def saliency(self):
        return [self.predictions[n] for n in SALIENCY_HEADS]


class Heads(Module):
    def __init__(self, channels):
        super().__init__()
        for name in HEADS:
            setattr(self, name, Conv2d(channels, 1, 3, bias=True))

    def forward(self, features):
        return {name: sigmoid(getattr(self, name)(features[name])) for name in HEADS}


def _up(x, ref):
    return F.bilinear_upsample(x, ref.shape[2], ref.shape[3])


class CTDNet(Module):
    def __init__(self, variant: VariantConfig):
        super().__init__()
        self.variant = variant
        C = variant.decoder_width
        N = variant.sap_branches
        kp = variant.sap_projection_kernel
        self.backbone = build_backbone(variant.backbone)
        c2, c3, c4, c5 = self.backbone.stage_channels

        # semantic path
        self.e6_proj = ConvBNReLU(c5, C, 1, padding=0)
        if variant.sap_enabled:
            self.sap5 = SAP(N, variant.sap_kind)
            self.sem5 = ConvBNReLU(N * c5, C, kp)
        else:
            self.sem5 = ConvBNReLU(c5, C, 1, padding=0)
        self.ffm1 = FFM(C)
        if variant.sap_enabled:
            self.sap4 = SAP(N, variant.sap_kind)
            self.sem4 = ConvBNReLU(N * c4, C, kp)
        else:
            self.sem4 = ConvBNReLU(c4, C, 1, padding=0)
        self.ffm2 = FFM(C)

        # spatial path
        if variant.extra_e3_sap:
            self.sap3 = SAP(N, variant.sap_kind)
            self.sem3 = ConvBNReLU(N * c3, C, kp)
            self.sam = SAM(C, C)
        else:
            self.sam = SAM(c3, C)

        # boundary path
        if variant.extra_e2_sam:
            self.sam2 = SAM(c2, C)
            self.e2_proj = ConvBNReLU(C, C, 1, padding=0)
        else:
            self.e2_proj = ConvBNReLU(c2, C, 1, padding=0)
        self.ffm3 = FFM(C)

        # merging
        if variant.cam_substituted_by_conv3:
            self.fuse = ConvBNReLU(C, C, 3)
        else:
            self.cam = CAM(C)
        self.brm = BRM(C)
        self.heads = Heads(C)

    # -- the three branches ---------------------------------------------------
    def semantic_path(self, e4, e5):
        """Returns (d_p1, e_g5, e6)."""
        gap = F.global_avg_pool(e5)
        e6 = _up(self.e6_proj(gap), e5)
        s5 = self.sem5(self.sap5(e5)) if self.variant.sap_enabled else self.sem5(e5)
        e_g5 = self.ffm1(s5, e6)
        s4 = self.sem4(self.sap4(e4)) if self.variant.sap_enabled else self.sem4(e4)
        d_p1 = self.ffm2(s4, _up(e_g5, s4))
        return d_p1, e_g5, e6

    def spatial_path(self, e3):
        x = self.sem3(self.sap3(e3)) if self.variant.extra_e3_sap else e3
        return self.sam(x)

    def boundary_path(self, e2, e_g5):
        x = self.sam2(e2) if self.variant.extra_e2_sam else e2
        local = self.e2_proj(x)
        return self.ffm3(local, _up(e_g5, local))

    def merge_semantic_spatial(self, d_p1, d_p2):
        if self.variant.cam_substituted_by_conv3:
            if d_p2.shape[2:] != (2 * d_p1.shape[2], 2 * d_p1.shape[3]):
                raise ShapeError(f"spatial branch must be 2x the semantic one: {d_p1.shape} vs {d_p2.shape}")
            return self.fuse(_up(d_p1, d_p2) + d_p2)
        return self.cam(d_p1, d_p2)

    def forward(self, image):
        e2, e3, e4, e5 = self.backbone(image)
        d_p1, e_g5, e6 = self.semantic_path(e4, e5)
        d_p2 = self.spatial_path(e3)
        d_p3 = self.boundary_path(e2, e_g5)
        d_p12 = self.merge_semantic_spatial(d_p1, d_p2)
        d_p123 = self.brm(d_p12, d_p3)
        features = {"d_p123": d_p123, "d_p12": d_p12, "d_p1": d_p1,
                    "e_g5": e_g5, "e6": e6, "d_p3": d_p3}
        return HeadOutputs(features, self.heads(features))


def ctd_forward(image, model):
    return model(image)


def predict_saliency(model, image):
    """Final saliency map resized to the input's spatial extent, as a numpy array.

    Runs in eval mode without gradient tracking; the model's previous mode is
    restored afterwards.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(x)
            pred = F.bilinear_upsample(out["d_p123"], x.shape[2], x.shape[3])
    finally:
        model.train(was_training)
    return np.clip(pred.data, 0.0, 1.0)


def predict_maps(model, image, size=None):
    """(saliency, boundary) numpy maps resized to ``size`` (defaults to the input's)."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    h, w = size or x.shape[2:]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(x)
            sal = F.bilinear_upsample(out["d_p123"], h, w).data
            bnd = F.bilinear_upsample(out["d_p3"], h, w).data
    finally:
        model.train(was_training)
    return np.clip(sal, 0.0, 1.0), np.clip(bnd, 0.0, 1.0)
