"""Layers, module system and the decoder's fusion blocks."""
from . import init
from .blocks import BRM, CAM, FFM, SAM, SAP
from .layers import BatchNorm2d, Conv2d, ConvBNReLU, Identity, MaxPool2d
from .module import Module, Parameter, Sequential

__all__ = [
    "BRM",
    "BatchNorm2d",
    "CAM",
    "Conv2d",
    "ConvBNReLU",
    "FFM",
    "Identity",
    "MaxPool2d",
    "Module",
    "Parameter",
    "SAM",
    "SAP",
    "Sequential",
    "init",
]
