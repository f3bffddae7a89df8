"""Softmax, generalized-similarity and linear attention plus the baseline feature maps.

All ops take per-head ``Q, K, V`` matrices (``N x d``). Head splitting lives in
:func:`split_heads` / :func:`merge_heads`; feature maps always act on the full
model width before the split.
"""

from __future__ import annotations

from dataclasses import dataclass
import enum
import math

import numpy as np

from . import tensor_kernels as tk
from .errors import ConfigError, DegenerateAttentionError, ShapeError
from .tokens import ImageTokenGrid, tokens_of

EPS_DEN = 1e-6

# Rows of Q processed per softmax block; bounds the logits buffer to
# _ROW_BLOCK * N_k floats without changing the arithmetic per row.
_ROW_BLOCK = 1024


class SimilarityFn(enum.Enum):
    EXP_SCALED_DOT = "exp_scaled_dot"
    DOT = "dot"


class FeatureMapKind(enum.Enum):
    IDENTITY = "identity"
    RELU_LINEAR = "relu_linear"
    LINFUSION = "linfusion"
    CONVFUSION = "convfusion"
    SPATIAL_COMPRESSOR = "spatial_compressor"

    @property
    def preserves_token_count(self) -> bool:
        return self is not FeatureMapKind.SPATIAL_COMPRESSOR

    @property
    def spatial(self) -> bool:
        return self in (FeatureMapKind.CONVFUSION, FeatureMapKind.SPATIAL_COMPRESSOR)


@dataclass(frozen=True)
class QKV:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("q", "k", "v"):
            object.__setattr__(self, name, tk.as_tensor(getattr(self, name)))
        q, k, v = self.q, self.k, self.v
        if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
            raise ShapeError(f"QKV must be 2-D, got {q.shape}, {k.shape}, {v.shape}")
        if k.shape[0] != v.shape[0]:
            raise ShapeError(f"K has {k.shape[0]} rows, V has {v.shape[0]}")
        if q.shape[1] != k.shape[1]:
            raise ShapeError(f"Q width {q.shape[1]} != K width {k.shape[1]}")


def _check_den(den: np.ndarray, eps: float, strict: bool) -> np.ndarray:
    """Apply the denominator policy: raise below ``eps`` when strict, else add ``eps``."""
    if strict:
        bad = np.flatnonzero(~(den >= eps))
        if bad.size:
            i = int(bad[0])
            raise DegenerateAttentionError(i, float(den[i]), eps)
        return den
    return den + den.dtype.type(eps)


def sdpa(qkv: QKV, scale: float | None = None) -> np.ndarray:
    """``softmax(Q K^T * scale) V`` with ``scale = 1/sqrt(d)`` by default."""
    q, k, v = qkv.q, qkv.k, qkv.v
    if k.shape[0] == 0:
        raise ShapeError("sdpa needs at least one key")
    s = tk.DTYPE(tk.inv_sqrt(q.shape[1]) if scale is None else scale)
    out = np.empty((q.shape[0], v.shape[1]), dtype=tk.DTYPE)
    kt = np.ascontiguousarray(k.T)
    for start in range(0, q.shape[0], _ROW_BLOCK):
        stop = start + _ROW_BLOCK
        logits = q[start:stop] @ kt
        logits *= s
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        out[start:stop] = logits @ v
    return out


def _sim(sim: SimilarityFn, qi: np.ndarray, kj: np.ndarray, scale: float) -> float:
    dot = float(np.dot(qi, kj))
    if sim is SimilarityFn.EXP_SCALED_DOT:
        return math.exp(dot * scale)
    return dot


def generalized_attention(qkv: QKV, sim: SimilarityFn, eps: float = EPS_DEN,
                          strict: bool = True) -> np.ndarray:
    """Explicit double loop over ``(i, j)``: ``y_i = sum_j sim(q_i,k_j) v_j / sum_j sim(q_i,k_j)``.

    No max-subtraction is applied for ``EXP_SCALED_DOT``, so keep logits moderate.
    """
    q, k, v = qkv.q, qkv.k, qkv.v
    scale = tk.inv_sqrt(q.shape[1])
    out = np.zeros((q.shape[0], v.shape[1]), dtype=np.float64)
    for i in range(q.shape[0]):
        num = np.zeros(v.shape[1], dtype=np.float64)
        den = 0.0
        for j in range(k.shape[0]):
            w = _sim(sim, q[i], k[j], scale)
            num += w * v[j]
            den += w
        if strict and not den >= eps:
            raise DegenerateAttentionError(i, den, eps)
        out[i] = num / (den if strict else den + eps)
    return out.astype(tk.DTYPE)


def linear_attention(qkv: QKV, eps: float = EPS_DEN, strict: bool = False) -> np.ndarray:
    """Associativity-reordered linear attention, ``O(N d^2)``.

    ``S = K^T V`` and ``z = sum_j K_j`` are formed once; each row is then
    ``(Q_i S) / (Q_i z)``. Q and K are expected to be non-negative.
    """
    q, k, v = qkv.q, qkv.k, qkv.v
    kv = k.T @ v
    z = k.sum(axis=0)
    num = q @ kv
    den = _check_den(q @ z, eps, strict)
    return num / den[:, None]


def linear_attention_parts(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Numerator rows ``Q S`` and normalizers ``Q z`` of linear attention."""
    return q @ (k.T @ v), q @ k.sum(axis=0)


# --- head handling -----------------------------------------------------------

def split_heads(x: np.ndarray, heads: int) -> list[np.ndarray]:
    if heads < 1 or x.shape[1] % heads:
        raise ConfigError(f"model dim {x.shape[1]} not divisible by {heads} heads")
    dh = x.shape[1] // heads
    return [np.ascontiguousarray(x[:, h * dh:(h + 1) * dh]) for h in range(heads)]


def merge_heads(parts: list[np.ndarray]) -> np.ndarray:
    return np.ascontiguousarray(np.concatenate(parts, axis=1), dtype=tk.DTYPE)


def multihead(fn, q, k, v, heads: int) -> np.ndarray:
    qs, ks, vs = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    return merge_heads([fn(QKV(a, b, c)) for a, b, c in zip(qs, ks, vs)])


# --- feature maps --------------------------------------------------------------

DEFAULT_PREFIX = {
    FeatureMapKind.IDENTITY: "",
    FeatureMapKind.RELU_LINEAR: "sana",
    FeatureMapKind.LINFUSION: "lf",
    FeatureMapKind.CONVFUSION: "cf",
    FeatureMapKind.SPATIAL_COMPRESSOR: "sc",
}


def relu_linear_map(x: np.ndarray, w, prefix: str = "sana") -> np.ndarray:
    return tk.relu(tk.linear(x, w[f"{prefix}.weight"], w[f"{prefix}.bias"]))


def linfusion_map(x: np.ndarray, w, prefix: str = "lf", slope: float = 0.01) -> np.ndarray:
    """``1 + ELU(x + Linear(LN(LeakyReLU(Linear(x)))))`` token by token."""
    h = tk.linear(x, w[f"{prefix}.down.weight"], w[f"{prefix}.down.bias"])
    h = tk.leaky_relu(h, slope)
    h = tk.layer_norm(h, tk.NormParams(w[f"{prefix}.norm.scale"], w[f"{prefix}.norm.shift"]))
    h = tk.linear(h, w[f"{prefix}.up.weight"], w[f"{prefix}.up.bias"])
    return tk.elu_plus_one(x + h)


def apply_feature_map(x, kind: FeatureMapKind, w, prefix: str | None = None) -> np.ndarray:
    """Dispatch a feature map by kind; spatial kinds need an :class:`ImageTokenGrid`."""
    prefix = DEFAULT_PREFIX[kind] if prefix is None else prefix
    if kind.spatial:
        if not isinstance(x, ImageTokenGrid):
            raise ShapeError(f"{kind.value} feature map needs an ImageTokenGrid, got a bare sequence")
        from . import edit  # edit builds on this module

        if kind is FeatureMapKind.CONVFUSION:
            return edit.conv_fusion(x, edit.ConvFusionWeights.from_store(w, prefix))
        return edit.spatial_compress(x, edit.SpatialCompressorWeights.from_store(w, prefix))
    t = tokens_of(x)
    if kind is FeatureMapKind.IDENTITY:
        return t.copy()
    if kind is FeatureMapKind.RELU_LINEAR:
        return relu_linear_map(t, w, prefix)
    return linfusion_map(t, w, prefix)


# --- KV token compression ----------------------------------------------------

def kv_compress_params(kernel: np.ndarray, bias: np.ndarray | None = None) -> tk.Conv2DParams:
    """Depthwise ``k x k`` stride-``k`` convolution from a ``[C, 1, k, k]`` kernel."""
    kernel = tk.as_tensor(kernel)
    c, _, kh, kw = kernel.shape
    if kh != kw:
        raise ConfigError(f"compression kernel must be square, got {kh}x{kw}")
    if bias is None:
        bias = np.zeros(c, tk.DTYPE)
    return tk.Conv2DParams(kernel, bias, stride=kh, padding=0, depthwise=True)


def averaging_kernel(channels: int, factor: int) -> np.ndarray:
    return np.full((channels, 1, factor, factor), 1.0 / (factor * factor), tk.DTYPE)


def kv_compress(k: ImageTokenGrid, v: ImageTokenGrid, factor: int,
                params: tk.Conv2DParams | None = None):
    """Aggregate each ``factor x factor`` block of K and V tokens with one shared kernel.

    Token count drops from ``H*W`` to ``ceil(H/f)*ceil(W/f)``; partial edge
    blocks see zero padding. Without ``params`` the kernel is a plain average.
    """
    if factor < 1:
        raise ConfigError(f"compression factor must be >= 1, got {factor}")
    if (k.height, k.width) != (v.height, v.width) or k.dim != v.dim:
        raise ShapeError("K and V grids differ")
    if factor == 1 and params is None:
        return k.tokens.copy(), v.tokens.copy()
    if params is None:
        params = kv_compress_params(averaging_kernel(k.dim, factor))
    if params.stride != factor:
        raise ConfigError(f"kernel stride {params.stride} != factor {factor}")
    ck = ImageTokenGrid.from_image(tk.conv2d(k.to_image(), params))
    cv = ImageTokenGrid.from_image(tk.conv2d(v.to_image(), params))
    return ck.tokens, cv.tokens
