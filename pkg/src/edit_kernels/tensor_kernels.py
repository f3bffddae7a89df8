"""Deterministic float32 numeric kernels.

Everything attention-related is built from the handful of functions here:
dense products, channels-first 2-D convolution (dense and depthwise), row
softmax, group/layer normalization and the pointwise activations used by the
feature maps. Tensors are plain ``numpy.ndarray`` objects in float32, row-major.
Spatial tensors are laid out ``C x H x W``.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

DTYPE = np.float32
NORM_EPS = 1e-5


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


@dataclass(frozen=True)
class Conv2DParams:
    """Convolution weights plus geometry.

    ``kernel`` is ``[outC, inC, kH, kW]`` for a dense convolution and
    ``[C, 1, kH, kW]`` when ``depthwise`` is set. ``padding`` is the zero pad on
    the top/left edge; the bottom/right pad is whatever makes the output extent
    ``ceil(H / stride)``.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    depthwise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", as_tensor(self.kernel))
        object.__setattr__(self, "bias", as_tensor(self.bias))
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be 4-D, got shape {self.kernel.shape}")
        out_c, in_c, kh, kw = self.kernel.shape
        if self.bias.shape != (out_c,):
            raise ShapeError(f"conv bias shape {self.bias.shape} != ({out_c},)")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if kh < 1 or kw < 1:
            raise ShapeError(f"empty conv kernel {self.kernel.shape}")
        if self.depthwise and in_c != 1:
            raise ShapeError(f"depthwise kernel must be [C, 1, kH, kW], got {self.kernel.shape}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[0] if self.depthwise else self.kernel.shape[1]


@dataclass(frozen=True)
class NormParams:
    scale: np.ndarray
    shift: np.ndarray
    groups: int = 1
    eps: float = NORM_EPS

    def __post_init__(self):
        object.__setattr__(self, "scale", as_tensor(self.scale))
        object.__setattr__(self, "shift", as_tensor(self.shift))
        if self.scale.ndim != 1 or self.scale.shape != self.shift.shape:
            raise ShapeError(f"norm scale/shift shapes {self.scale.shape}, {self.shift.shape}")
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if self.scale.shape[0] % self.groups:
            raise ConfigError(f"{self.scale.shape[0]} channels not divisible by {self.groups} groups")
        if not self.eps > 0:
            raise ConfigError("norm epsilon must be positive")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return a @ b


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` with ``weight`` stored ``[out, in]``."""
    y = matmul(x, as_tensor(weight).T)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (y.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} != ({y.shape[1]},)")
        y += bias
    return y


def conv_output_extent(size: int, stride: int) -> int:
    return -(-size // stride)


def conv2d(x: np.ndarray, p: Conv2DParams) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects C x H x W input, got {x.shape}")
    c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"conv2d input has {c} channels, kernel expects {p.in_channels}")
    if p.depthwise and p.out_channels != c:
        raise ShapeError("depthwise conv must keep the channel count")
    _, _, kh, kw = p.kernel.shape
    s = p.stride
    oh, ow = conv_output_extent(h, s), conv_output_extent(w, s)
    pad_b = max(0, (oh - 1) * s + kh - h - p.padding)
    pad_r = max(0, (ow - 1) * s + kw - w - p.padding)
    xp = np.pad(x, ((0, 0), (p.padding, pad_b), (p.padding, pad_r)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :oh, :ow]
    if p.depthwise:
        out = np.einsum("chwij,cij->chw", win, p.kernel[:, 0])
    else:
        cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
        out = (cols @ p.kernel.reshape(p.out_channels, -1).T).T.reshape(p.out_channels, oh, ow)
    out = out + p.bias[:, None, None]
    return np.ascontiguousarray(out, dtype=DTYPE)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    e /= e.sum(axis=-1, keepdims=True)
    return e


def group_norm(x: np.ndarray, p: NormParams) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"group_norm expects C x H x W input, got {x.shape}")
    c = x.shape[0]
    if c != p.scale.shape[0]:
        raise ShapeError(f"group_norm input has {c} channels, params have {p.scale.shape[0]}")
    if c % p.groups:
        raise ConfigError(f"{c} channels not divisible by {p.groups} groups")
    g = x.reshape(p.groups, -1)
    mean = g.mean(axis=1, keepdims=True)
    centered = g - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    y = (centered / np.sqrt(var + DTYPE(p.eps))).reshape(x.shape)
    return y * p.scale[:, None, None] + p.shift[:, None, None]


def layer_norm(x: np.ndarray, p: NormParams) -> np.ndarray:
    """Normalize each token (row of ``N x C``) over its channels."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != p.scale.shape[0]:
        raise ShapeError(f"layer_norm input {x.shape} vs {p.scale.shape[0]} channels")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered / np.sqrt(var + DTYPE(p.eps)) * p.scale + p.shift


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), DTYPE(0))


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    x = as_tensor(x)
    return np.where(x >= 0, x, x * DTYPE(slope))


def elu_plus_one(x: np.ndarray) -> np.ndarray:
    # ELU(x) + 1 == exp(x) for x <= 0; positive until exp underflows float32.
    x = as_tensor(x)
    return np.where(x > 0, x + DTYPE(1), np.exp(np.minimum(x, DTYPE(0))))


def inv_sqrt(d: int) -> float:
    return 1.0 / math.sqrt(d)
