import dataclasses

import numpy as np
import pytest

from ctdnet.audit import TARGETS, build_structural, structural_audit, without_sap
from ctdnet.backbones import BackboneConfig
from ctdnet.errors import ConfigError
from ctdnet.losses import total_loss
from ctdnet.model import (
    HEAD_STRIDES,
    HEADS,
    SALIENCY_HEADS,
    CTDNet,
    VariantConfig,
    predict_maps,
    predict_saliency,
)
from ctdnet.tensor import Tensor


def tiny(name="M", size=96, backbone="tiny", **kw):
    return VariantConfig.preset(name, backbone=backbone, input_size=size, **kw)


@pytest.mark.parametrize("name", ["S", "M", "L"])
@pytest.mark.parametrize("size", [352, 96])
def test_head_strides(name, size):
    model = build_structural(VariantConfig.preset(name, input_size=size))
    out = model(Tensor.meta((1, 3, size, size)))
    for head in HEADS:
        s = HEAD_STRIDES[head]
        assert out[head].shape == (1, 1, size // s, size // s), head
        assert out.features[head].shape[1] == model.variant.decoder_width


def test_head_order_and_saliency_list():
    assert HEADS == ("d_p123", "d_p12", "d_p1", "e_g5", "e6", "d_p3")
    out = CTDNet(tiny())(Tensor(np.random.default_rng(0).random((1, 3, 64, 64))))
    assert [p.shape[2] for p in out.saliency()] == [16, 8, 4, 2, 2]
    assert out.boundary.shape == (1, 1, 16, 16)
    for p in out.predictions.values():
        assert np.all((p.data >= 0) & (p.data <= 1))


def test_e6_is_spatially_constant():
    out = CTDNet(tiny())(Tensor(np.random.default_rng(1).random((2, 3, 96, 96))))
    e6 = out.features["e6"].data
    np.testing.assert_allclose(e6, e6[:, :, :1, :1] * np.ones_like(e6), atol=1e-6)


def test_every_parameter_receives_gradient():
    rng = np.random.default_rng(2)
    model = CTDNet(tiny())
    g = (rng.random((2, 1, 64, 64)) > 0.5).astype(np.float32)
    total_loss(model(Tensor(rng.random((2, 3, 64, 64)))), g, g).backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_prediction_is_deterministic_and_restores_mode():
    rng = np.random.default_rng(3)
    model = CTDNet(tiny())
    x = rng.random((1, 3, 64, 64))
    a = predict_saliency(model, x)
    b = predict_saliency(model, x)
    assert a.shape == (1, 1, 64, 64)
    assert a.tobytes() == b.tobytes()
    assert model.training
    sal, bnd = predict_maps(model, x, size=(50, 70))
    assert sal.shape == bnd.shape == (1, 1, 50, 70)


@pytest.mark.parametrize("name,kw", [
    ("S", dict(sap_enabled=True)),
    ("M", dict(extra_e2_sam=True)),
    ("L", dict(extra_e3_sap=False)),
])
def test_variant_rules(name, kw):
    with pytest.raises(ConfigError):
        dataclasses.replace(VariantConfig.preset(name), **kw)


def test_variant_field_round_trip():
    for name in ("S", "M", "L"):
        v = VariantConfig.preset(name)
        assert VariantConfig.from_fields(v.to_fields()) == v
    assert tiny().digest() != tiny(size=128).digest()


def test_input_size_must_be_multiple_of_32():
    with pytest.raises(ConfigError):
        VariantConfig.preset("M", input_size=100)


class TestAudit:
    @pytest.mark.parametrize("name", ["S", "M", "L"])
    def test_within_tolerance(self, name):
        table = structural_audit(name)
        target, tol = TARGETS[name]
        assert abs(table.total - target) / target <= tol
        assert table.passed
        assert f"PASS CTD-{name}" in table.to_text()

    def test_rows_are_cumulative(self):
        table = structural_audit("M")
        assert sum(r.params for r in table.rows) == table.total
        assert table.to_csv().splitlines()[0] == "module,params,cumulative"

    def test_sap_blocks_are_free(self):
        table = structural_audit("L")
        for name in ("sap3", "sap4", "sap5"):
            assert table.params_of(name) == 0

    def test_removing_sap(self):
        m = VariantConfig.preset("M")
        assert structural_audit(m).total - structural_audit(without_sap(m)).total > 500_000

    def test_doubling_tiny_width_roughly_quadruples_backbone(self):
        def params(width):
            return structural_audit(tiny(backbone=BackboneConfig.preset("tiny", width))).rows[0].params

        assert abs(params(2.0) / params(1.0) - 4) < 0.2

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            structural_audit("XL")


def test_saliency_head_names_cover_loss_routing():
    assert set(SALIENCY_HEADS) | {"d_p3"} == set(HEADS)
