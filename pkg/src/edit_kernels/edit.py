"""Linear compressed attention: ConvFusion queries, Spatial Compressor keys/values.

Queries keep one row per image token; keys and values come from a stride-2
depthwise convolution and therefore have ``ceil(H/2) * ceil(W/2)`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import tensor_kernels as tk
from .attention import EPS_DEN, QKV, linear_attention, merge_heads, split_heads
from .errors import ConfigError, ShapeError
from .tokens import ImageTokenGrid

LEAKY_SLOPE = 0.01


def bottleneck_width(d: int) -> int:
    return -(-d // 2)


def gn_groups(channels: int) -> int:
    return math.gcd(32, channels)


@dataclass(frozen=True)
class ConvFusionWeights:
    compress: tk.Conv2DParams  # 3x3, d -> d_mid
    expand: tk.Conv2DParams  # 1x1, d_mid -> d
    norm: tk.NormParams  # group norm over d_mid

    def __post_init__(self):
        if self.compress.depthwise or self.expand.depthwise:
            raise ConfigError("ConvFusion convolutions are dense")
        if self.compress.stride != 1 or self.expand.stride != 1:
            raise ConfigError("ConvFusion convolutions must keep the grid (stride 1)")
        if self.expand.out_channels != self.compress.in_channels:
            raise ShapeError(
                f"expand produces {self.expand.out_channels} channels, residual needs "
                f"{self.compress.in_channels}"
            )
        if self.expand.in_channels != self.compress.out_channels:
            raise ShapeError("expand input width must equal the compress output width")
        if self.norm.scale.shape[0] != self.compress.out_channels:
            raise ShapeError("group norm width must equal the bottleneck width")

    @property
    def dim(self) -> int:
        return self.compress.in_channels

    @classmethod
    def from_store(cls, w, prefix: str = "cf") -> "ConvFusionWeights":
        ck = w[f"{prefix}.compress.weight"]
        mid = ck.shape[0]
        return cls(
            compress=tk.Conv2DParams(ck, w[f"{prefix}.compress.bias"], stride=1,
                                     padding=ck.shape[2] // 2),
            expand=tk.Conv2DParams(w[f"{prefix}.expand.weight"], w[f"{prefix}.expand.bias"]),
            norm=tk.NormParams(w[f"{prefix}.norm.scale"], w[f"{prefix}.norm.shift"],
                               groups=gn_groups(mid)),
        )


@dataclass(frozen=True)
class SpatialCompressorWeights:
    proj_weight: np.ndarray  # [d, d], applied as x @ W.T + b
    proj_bias: np.ndarray
    dw: tk.Conv2DParams  # 3x3 depthwise, stride 2

    def __post_init__(self):
        object.__setattr__(self, "proj_weight", tk.as_tensor(self.proj_weight))
        object.__setattr__(self, "proj_bias", tk.as_tensor(self.proj_bias))
        if not self.dw.depthwise or self.dw.stride != 2:
            raise ConfigError("Spatial Compressor needs a depthwise stride-2 convolution")
        d = self.proj_weight.shape[0]
        if self.proj_weight.shape != (d, d) or self.dw.out_channels != d:
            raise ShapeError(
                f"projection {self.proj_weight.shape} and depthwise width "
                f"{self.dw.out_channels} disagree"
            )

    @property
    def dim(self) -> int:
        return self.proj_weight.shape[0]

    @classmethod
    def from_store(cls, w, prefix: str = "sc") -> "SpatialCompressorWeights":
        k = w[f"{prefix}.dw.weight"]
        return cls(
            w[f"{prefix}.proj.weight"],
            w[f"{prefix}.proj.bias"],
            tk.Conv2DParams(k, w[f"{prefix}.dw.bias"], stride=2, padding=k.shape[2] // 2,
                            depthwise=True),
        )


@dataclass(frozen=True)
class EditWeights:
    cf: ConvFusionWeights
    sc: SpatialCompressorWeights
    out_weight: np.ndarray
    out_bias: np.ndarray

    @classmethod
    def from_store(cls, w, cf_prefix="cf", sc_prefix="sc", out_prefix="out") -> "EditWeights":
        return cls(
            ConvFusionWeights.from_store(w, cf_prefix),
            SpatialCompressorWeights.from_store(w, sc_prefix),
            w[f"{out_prefix}.weight"],
            w[f"{out_prefix}.bias"],
        )


def _check_dim(x: ImageTokenGrid, d: int) -> None:
    if x.dim != d:
        raise ShapeError(f"grid tokens have width {x.dim}, weights expect {d}")


def conv_fusion(x: ImageTokenGrid, w: ConvFusionWeights) -> np.ndarray:
    """Query map ``ReLU(X + Conv1x1(GN(LeakyReLU(Conv3x3(X)))))`` on the latent grid."""
    _check_dim(x, w.dim)
    img = x.to_image()
    h = tk.conv2d(img, w.compress)
    h = tk.leaky_relu(h, LEAKY_SLOPE)
    h = tk.group_norm(h, w.norm)
    h = tk.conv2d(h, w.expand)
    return tk.relu(x.tokens + ImageTokenGrid.from_image(h).tokens)


def spatial_compress(x: ImageTokenGrid, w: SpatialCompressorWeights) -> np.ndarray:
    """``Conv(Linear(X))`` with the stride-2 depthwise kernel; ``ceil(H/2)*ceil(W/2)`` rows."""
    _check_dim(x, w.dim)
    proj = x.with_tokens(tk.linear(x.tokens, w.proj_weight, w.proj_bias))
    return ImageTokenGrid.from_image(tk.conv2d(proj.to_image(), w.dw)).tokens


spatial_compressor = spatial_compress


def compressed_count(height: int, width: int) -> int:
    return -(-height // 2) * -(-width // 2)


def edit_keys_values(x: ImageTokenGrid, w: SpatialCompressorWeights):
    """One compressor evaluation; keys are its ReLU, values are the raw output."""
    v = spatial_compress(x, w)
    return tk.relu(v), v


def edit_qkv(x: ImageTokenGrid, w: EditWeights):
    q = conv_fusion(x, w.cf)
    k, v = edit_keys_values(x, w.sc)
    return q, k, v


def edit_attention(x: ImageTokenGrid, w: EditWeights, heads: int = 1,
                   eps: float = EPS_DEN, strict: bool = False) -> np.ndarray:
    if heads < 1 or x.dim % heads:
        raise ConfigError(f"model dim {x.dim} not divisible by {heads} heads")
    q, k, v = edit_qkv(x, w)
    parts = [
        linear_attention(QKV(qh, kh, vh), eps=eps, strict=strict)
        for qh, kh, vh in zip(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads))
    ]
    return tk.linear(merge_heads(parts), w.out_weight, w.out_bias)
