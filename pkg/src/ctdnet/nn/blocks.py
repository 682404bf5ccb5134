"""Fusion and attention blocks of the trilateral decoder."""
from ..errors import ShapeError
from ..tensor import functional as F
from ..tensor.tensor import concat, sigmoid
from .layers import Conv2d, ConvBNReLU
from .module import Module


def _same_shape(a, b, who):
    if a.shape != b.shape:
        raise ShapeError(f"{who}: inputs must share a shape, got {a.shape} and {b.shape}")


def _upsample_to(x, ref):
    return F.bilinear_upsample(x, ref.shape[2], ref.shape[3])


class FFM(Module):
    """Feature fusion: elementwise product, then two 3x3 ConvBNReLU layers."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = ConvBNReLU(channels, channels, 3)
        self.conv2 = ConvBNReLU(channels, channels, 3)

    def forward(self, f1, f2):
        _same_shape(f1, f2, "FFM")
        return self.conv2(self.conv1(f1 * f2))


class SAP(Module):
    """Scale-adaptive pooling: N parallel stride-1 poolings, kernels 2n+1, padding n.

    Holds no parameters. Output has N times the input channels and the same
    spatial extent.
    """

    def __init__(self, branches=4, kind="avg"):
        super().__init__()
        if branches < 1:
            raise ValueError("SAP needs at least one branch")
        if kind not in ("avg", "max"):
            raise ValueError(f"SAP pooling kind must be 'avg' or 'max', got {kind!r}")
        self.branches = branches
        self.kind = kind

    def out_channels(self, in_channels):
        return self.branches * in_channels

    def forward(self, x):
        return concat(
            [F.pool2d(x, self.kind, 2 * n + 1, 1, n) for n in range(self.branches)], axis=1
        )


class SAM(Module):
    """Spatial attention over channel-pooled maps, then a 3x3 ConvBNReLU squeeze."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.attn = Conv2d(2, 1, 5, padding=2, bias=True)
        self.proj = ConvBNReLU(in_channels, out_channels, 3)

    def attention(self, x):
        pooled = concat([F.channel_pool(x, "avg"), F.channel_pool(x, "max")], axis=1)
        return sigmoid(self.attn(pooled))

    def forward(self, x, return_attention=False):
        m = self.attention(x)
        out = self.proj(x * m)
        return (out, m) if return_attention else out


class CAM(Module):
    """Cross aggregation of a coarse map with a map at exactly twice its resolution."""

    def __init__(self, channels):
        super().__init__()
        self.down = ConvBNReLU(channels, channels, 3, stride=2, padding=1)
        self.conv_coarse = ConvBNReLU(channels, channels, 3)
        self.conv_fine = ConvBNReLU(channels, channels, 3)
        self.ffm = FFM(channels)

    def forward(self, d_p1, d_p2, return_intermediates=False):
        b1, c1, h1, w1 = d_p1.shape
        b2, c2, h2, w2 = d_p2.shape
        if (b1, c1) != (b2, c2) or (h2, w2) != (2 * h1, 2 * w1):
            raise ShapeError(f"CAM needs the fine input at exactly 2x: {d_p1.shape} vs {d_p2.shape}")
        up1 = _upsample_to(d_p1, d_p2)
        down2 = self.down(d_p2)
        coarse = self.conv_coarse(d_p1 * down2)
        fine = self.conv_fine(d_p2 * up1)
        out = self.ffm(_upsample_to(coarse, fine), fine)
        return (out, coarse, fine) if return_intermediates else out


class BRM(Module):
    """Boundary refinement: add, channel attention from pooled context, residual fuse."""

    def __init__(self, channels):
        super().__init__()
        self.fc = Conv2d(channels, channels, 1, bias=True)
        self.conv1 = ConvBNReLU(channels, channels, 3)
        self.conv2 = ConvBNReLU(channels, channels, 3)

    def channel_attention(self, fused):
        return sigmoid(self.fc(F.global_avg_pool(fused)))

    def forward(self, d_p12, d_p3, return_intermediates=False):
        b1, c1, h1, w1 = d_p12.shape
        b2, c2, h2, w2 = d_p3.shape
        if (b1, c1) != (b2, c2) or (h2, w2) != (2 * h1, 2 * w1):
            raise ShapeError(f"BRM needs the boundary input at exactly 2x: {d_p12.shape} vs {d_p3.shape}")
        fused = _upsample_to(d_p12, d_p3) + d_p3
        attn = self.channel_attention(fused)
        refined = fused * attn
        out = self.conv2(self.conv1(refined + fused))
        return (out, fused, attn, refined) if return_intermediates else out
