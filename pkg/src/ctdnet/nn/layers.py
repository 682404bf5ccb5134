"""Parameterised layers built on the tensor core."""
from ..tensor import functional as F
from ..tensor.tensor import relu
from . import init
from .module import Module, Parameter


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=None,
                 bias=True, groups=1):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ValueError("channels must be divisible by groups")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.weight = Parameter.create(
            (out_channels, in_channels // groups, kernel_size, kernel_size),
            lambda s: init.he_normal(s, fan_in),
        )
        self.bias = Parameter.create((out_channels,), lambda s: init.constant(s, 0.0)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def __repr__(self):
        return (f"Conv2d({self.in_channels}, {self.out_channels}, k={self.kernel_size}, "
                f"s={self.stride}, p={self.padding})")


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        if eps <= 0 or not 0 < momentum < 1:
            raise ValueError("need eps > 0 and momentum in (0, 1)")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter.create((channels,), lambda s: init.constant(s, 1.0))
        self.beta = Parameter.create((channels,), lambda s: init.constant(s, 0.0))
        if init.is_meta_init():
            self.running_mean = self.running_var = None
        else:
            self.running_mean = init.constant((channels,), 0.0)
            self.running_var = init.constant((channels,), 1.0)

    def forward(self, x):
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    """Bias-free convolution, batch norm, optional ReLU."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None,
                 activation=True, groups=1):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, padding,
                           bias=False, groups=groups)
        self.bn = BatchNorm2d(out_channels)
        self.activation = activation

    @property
    def out_channels(self):
        return self.conv.out_channels

    def forward(self, x):
        y = self.bn(self.conv(x))
        return relu(y) if self.activation else y


class Identity(Module):
    def forward(self, x):
        return x


class MaxPool2d(Module):
    def __init__(self, kernel_size, stride=None, padding=0):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = kernel_size if stride is None else stride
        self.padding = padding

    def forward(self, x):
        return F.pool2d(x, "max", self.kernel_size, self.stride, self.padding)
