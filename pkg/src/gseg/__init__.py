"""Rotation- and reflection-equivariant (p4 / p4m) segmentation networks in numpy."""

from .group import GroupSpec, StabilizerElement, compose, enumerate_group, inverse
from .segnet import SegNetConfig, build, count_params, loss, predict
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
