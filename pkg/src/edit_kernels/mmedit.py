"""Joint image/prompt attention: direct, four-block decomposed, and hybrid linear/softmax.

Every op below works on one head at a time (``*_qkv`` functions) or on full
model-width tokens with projections (``*_attention`` / ``joint_forward``).

The four-block form writes each query row as a two-way mixture

    y = eta * A(q, K1, V1) + (1 - eta) * A(q, K2, V2)

where ``eta`` is the share of the row's softmax mass that falls on ``K1``.
:func:`mixed_rows` is the single implementation of that mixture; both the
decomposed joint attention and the prompt rows of the hybrid go through it.
"""

from __future__ import annotations

from dataclasses import dataclass
import enum

import numpy as np

from . import tensor_kernels as tk
from .attention import EPS_DEN, QKV, linear_attention_parts, merge_heads, sdpa, split_heads
from .edit import EditWeights, conv_fusion, edit_keys_values
from .errors import ConfigError, DegenerateAttentionError, ShapeError
from .tokens import ImageTokenGrid

_ROW_BLOCK = 1024


class EtaMode(enum.Enum):
    EXACT_SOFTMAX = "exact_softmax"
    EXACT_LINEAR = "exact_linear"
    APPROX_TOKEN_COUNT = "approx_token_count"


class ImageMaps(enum.Enum):
    PLAIN = "plain"  # linear projections, no compression
    EDIT = "edit"  # ConvFusion queries, Spatial Compressor keys/values


@dataclass(frozen=True)
class MultimodalTokens:
    image: ImageTokenGrid
    prompt: np.ndarray

    def __post_init__(self):
        p = tk.as_tensor(self.prompt)
        if p.ndim == 1 and p.size == 0:
            p = p.reshape(0, self.image.dim)
        object.__setattr__(self, "prompt", p)
        if p.ndim != 2 or p.shape[1] != self.image.dim:
            raise ShapeError(f"prompt tokens {p.shape} do not match image width {self.image.dim}")

    @property
    def n_image(self) -> int:
        return self.image.n

    @property
    def n_prompt(self) -> int:
        return self.prompt.shape[0]


@dataclass(frozen=True)
class JointQKV:
    q_i: np.ndarray
    k_i: np.ndarray
    v_i: np.ndarray
    q_p: np.ndarray
    k_p: np.ndarray
    v_p: np.ndarray
    image_maps: ImageMaps = ImageMaps.PLAIN

    def __post_init__(self):
        for name in ("q_i", "k_i", "v_i", "q_p", "k_p", "v_p"):
            object.__setattr__(self, name, tk.as_tensor(getattr(self, name)))
        mats = (self.q_i, self.k_i, self.v_i, self.q_p, self.k_p, self.v_p)
        if any(m.ndim != 2 for m in mats):
            raise ShapeError("JointQKV members must be 2-D")
        dh = self.q_i.shape[1]
        if any(m.shape[1] != dh for m in mats):
            raise ShapeError(f"head dims differ: {[m.shape for m in mats]}")
        if self.k_i.shape[0] != self.v_i.shape[0] or self.k_p.shape[0] != self.v_p.shape[0]:
            raise ShapeError("key/value row counts differ")

    @property
    def head_dim(self) -> int:
        return self.q_i.shape[1]


# --- normalization factors -----------------------------------------------------

def _softmax_mass(logit_blocks):
    """Per-row ``sum exp(l - m)`` for each block, ``m`` shared across all blocks."""
    nonempty = [b for b in logit_blocks if b.shape[1]]
    m = np.max(np.concatenate([b.max(axis=1, keepdims=True) for b in nonempty], axis=1),
               axis=1, keepdims=True)
    exps = [np.exp(b - m) if b.shape[1] else b for b in logit_blocks]
    sums = [e.sum(axis=1) for e in exps]
    return exps, sums


def eta(q: np.ndarray, k1: np.ndarray, k2: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Share of each query row's joint softmax mass that lands on ``k1``.

    Logits are scaled by ``1/sqrt(d_h)`` so the value matches the joint softmax.
    Returns one float32 per row of ``q``.
    """
    q, k1, k2 = tk.as_tensor(q), tk.as_tensor(k1), tk.as_tensor(k2)
    if k1.shape[0] == 0 and k2.shape[0] == 0:
        raise ConfigError("eta needs at least one key")
    if k1.shape[0] == 0:
        return np.zeros(q.shape[0], tk.DTYPE)
    s = tk.DTYPE(tk.inv_sqrt(q.shape[1]) if scale is None else scale)
    out = np.empty(q.shape[0], tk.DTYPE)
    for start in range(0, q.shape[0], _ROW_BLOCK):
        qb = q[start:start + _ROW_BLOCK]
        _, (s1, s2) = _softmax_mass([(qb @ k1.T) * s, (qb @ k2.T) * s])
        out[start:start + _ROW_BLOCK] = s1 / (s1 + s2)
    return out


def eta_lin(q: np.ndarray, k_img: np.ndarray, k_prompt: np.ndarray, eps: float = EPS_DEN,
            strict: bool = False, scale: float | None = None) -> np.ndarray:
    """Mixing weight of the linear image block: ``L / (L + E)`` per query row.

    ``L = sum_j q . k_img_j`` (plain dot products, as in linear attention) and
    ``E = sum_j exp(q . k_prompt_j / sqrt(d_h))``. Evaluated in float64.
    """
    q = np.asarray(q, np.float64)
    k_img = np.asarray(k_img, np.float64)
    k_prompt = np.asarray(k_prompt, np.float64)
    lin = q @ k_img.sum(axis=0) if k_img.shape[0] else np.zeros(q.shape[0])
    if k_prompt.shape[0]:
        s = tk.inv_sqrt(q.shape[1]) if scale is None else scale
        logits = (q @ k_prompt.T) * s
        m = logits.max(axis=1)
        e = np.exp(m) * np.exp(logits - m[:, None]).sum(axis=1)
    else:
        e = np.zeros(q.shape[0])
    total = lin + e
    if strict:
        bad = np.flatnonzero(~(total >= eps))
        if bad.size:
            i = int(bad[0])
            raise DegenerateAttentionError(i, float(total[i]), eps)
        return (lin / total).astype(tk.DTYPE)
    return (lin / (total + eps)).astype(tk.DTYPE)


def eta_token_count(n_image: int, n_text: int) -> float:
    """Constant stand-in for ``eta_lin`` from token counts alone."""
    if n_image < 0 or n_text < 0 or n_image + n_text == 0:
        raise ConfigError(f"bad token counts ({n_image}, {n_text})")
    return n_image / (n_image + n_text)


# --- block attention --------------------------------------------------------------

def _mix(w: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    w = np.asarray(w, tk.DTYPE).reshape(-1, 1)
    return w * a1 + (tk.DTYPE(1) - w) * a2


def _block_attention(exps: np.ndarray, sums: np.ndarray, v: np.ndarray) -> np.ndarray:
    if exps.shape[1] == 0:
        return np.zeros((exps.shape[0], v.shape[1]), tk.DTYPE)
    return (exps @ v) / sums[:, None]


def _softmax_block(q, k, v):
    if k.shape[0] == 0:
        return np.zeros((q.shape[0], v.shape[1]), tk.DTYPE)
    return sdpa(QKV(q, k, v))


def mixed_rows(q, k1, v1, k2, v2, scale: float | None = None, return_parts: bool = False):
    """``eta(q,k1,k2) * A(q,k1,v1) + (1 - eta) * A(q,k2,v2)`` per query row.

    The two softmax blocks share one row max, so ``eta`` and both block
    attentions come from the same exponentials. An empty key block contributes
    zero weight.
    """
    q, k1, v1, k2, v2 = (tk.as_tensor(a) for a in (q, k1, v1, k2, v2))
    if k1.shape[0] + k2.shape[0] == 0:
        raise ConfigError("query rows need at least one key")
    s = tk.DTYPE(tk.inv_sqrt(q.shape[1]) if scale is None else scale)
    dv = v1.shape[1]
    out = np.empty((q.shape[0], dv), tk.DTYPE)
    etas = np.empty(q.shape[0], tk.DTYPE)
    a1_all = np.empty_like(out) if return_parts else None
    a2_all = np.empty_like(out) if return_parts else None
    k1t, k2t = np.ascontiguousarray(k1.T), np.ascontiguousarray(k2.T)
    for start in range(0, q.shape[0], _ROW_BLOCK):
        sl = slice(start, start + _ROW_BLOCK)
        qb = q[sl]
        (e1, e2), (s1, s2) = _softmax_mass([(qb @ k1t) * s, (qb @ k2t) * s])
        a1 = _block_attention(e1, s1, v1)
        a2 = _block_attention(e2, s2, v2)
        w = s1 / (s1 + s2)
        etas[sl] = w
        out[sl] = _mix(w, a1, a2)
        if return_parts:
            a1_all[sl] = a1
            a2_all[sl] = a2
    if return_parts:
        return out, etas, a1_all, a2_all
    return out


def joint_attention_direct(j: JointQKV, scale: float | None = None):
    """Softmax attention over the concatenated sequence, split back into (image, prompt)."""
    q = np.concatenate([j.q_i, j.q_p])
    k = np.concatenate([j.k_i, j.k_p])
    v = np.concatenate([j.v_i, j.v_p])
    if q.shape[0] == 0:
        return j.q_i.copy(), j.q_p.copy()
    y = sdpa(QKV(q, k, v), scale=scale)
    n_i = j.q_i.shape[0]
    return y[:n_i], y[n_i:]


def joint_attention_decomposed(j: JointQKV, scale: float | None = None):
    """Four-block form of joint attention with per-row normalization factors.

    Image rows mix image->image and image->prompt attention by
    ``eta(Q_I, K_I, K_P)``; prompt rows mix prompt->image and prompt->prompt by
    ``eta(Q_P, K_I, K_P)`` (the weight on the image block).
    """
    img = mixed_rows(j.q_i, j.k_i, j.v_i, j.k_p, j.v_p, scale)
    prm = mixed_rows(j.q_p, j.k_i, j.v_i, j.k_p, j.v_p, scale)
    return img, prm


def hybrid_qkv(j: JointQKV, mode: EtaMode = EtaMode.APPROX_TOKEN_COUNT, *,
               image_block: str = "linear", n_image: int | None = None,
               n_text: int | None = None, eta_image=None, eps: float = EPS_DEN,
               strict: bool = False, return_parts: bool = False):
    """Hybrid joint attention for one head.

    ``image_block="linear"`` swaps the image->image softmax block for linear
    attention; ``"softmax"`` keeps it exact (a sanity configuration). Prompt
    rows are always the exact two-block softmax mixture against whatever
    ``K_I``/``V_I`` the caller supplies (compressed for EDiT maps).

    ``n_image`` is the uncompressed image token count used by the token-count
    approximation (defaults to ``len(q_i)``), ``n_text`` defaults to the number
    of prompt tokens. ``eta_image`` overrides the image mixing weight.
    """
    if image_block not in ("linear", "softmax"):
        raise ConfigError(f"image_block must be 'linear' or 'softmax', got {image_block!r}")
    prompt_out = mixed_rows(j.q_p, j.k_i, j.v_i, j.k_p, j.v_p)
    n_q = j.q_i.shape[0]
    parts = {}
    if image_block == "softmax" and mode is EtaMode.EXACT_SOFTMAX and eta_image is None:
        image_out, w, a_img, a_cross = mixed_rows(j.q_i, j.k_i, j.v_i, j.k_p, j.v_p,
                                                  return_parts=True)
        parts = {"eta": w, "image_block": a_img, "cross_block": a_cross}
    else:
        a_cross = _softmax_block(j.q_i, j.k_p, j.v_p)
        if image_block == "linear":
            num, den = linear_attention_parts(j.q_i, j.k_i, j.v_i)
            if strict:
                bad = np.flatnonzero(~(den >= eps))
                if bad.size:
                    raise DegenerateAttentionError(int(bad[0]), float(den[bad[0]]), eps)
                a_img = num / den[:, None]
            else:
                a_img = num / (den + tk.DTYPE(eps))[:, None]
        else:
            a_img = _softmax_block(j.q_i, j.k_i, j.v_i)
        if eta_image is not None:
            w = np.broadcast_to(np.asarray(eta_image, tk.DTYPE), (n_q,))
        elif mode is EtaMode.APPROX_TOKEN_COUNT:
            n_img = n_q if n_image is None else n_image
            n_txt = j.q_p.shape[0] if n_text is None else n_text
            w = np.full(n_q, eta_token_count(n_img, n_txt), tk.DTYPE)
        elif mode is EtaMode.EXACT_LINEAR:
            w = eta_lin(j.q_i, j.k_i, j.k_p, eps=eps, strict=strict)
        else:
            w = eta(j.q_i, j.k_i, j.k_p)
        image_out = _mix(w, a_img, a_cross)
        parts = {"eta": w, "image_block": a_img, "cross_block": a_cross}
    if return_parts:
        return image_out, prompt_out, parts
    return image_out, prompt_out


# --- full-width layers ----------------------------------------------------------------

def _proj(x, w, name):
    return tk.linear(x, w[f"{name}.weight"], w[f"{name}.bias"])


def _per_head(q_i, k_i, v_i, q_p, k_p, v_p, heads, image_maps):
    split = [split_heads(m, heads) for m in (q_i, k_i, v_i, q_p, k_p, v_p)]
    return [JointQKV(*ms, image_maps=image_maps) for ms in zip(*split)]


def _finish(m: MultimodalTokens, w, img_heads, prm_heads):
    img = tk.linear(merge_heads(img_heads), w["out.weight"], w["out.bias"])
    prm = merge_heads(prm_heads) if prm_heads else np.zeros((0, m.image.dim), tk.DTYPE)
    if m.n_prompt:
        prm = tk.linear(prm, w["prompt.out.weight"], w["prompt.out.bias"])
    return img, prm


def prompt_qkv(m: MultimodalTokens, w):
    p = m.prompt
    return _proj(p, w, "prompt.q"), _proj(p, w, "prompt.k"), _proj(p, w, "prompt.v")


def joint_heads(m: MultimodalTokens, w, heads: int):
    x = m.image.tokens
    qi, ki, vi = _proj(x, w, "q"), _proj(x, w, "k"), _proj(x, w, "v")
    return _per_head(qi, ki, vi, *prompt_qkv(m, w), heads, ImageMaps.PLAIN)


def hybrid_heads(m: MultimodalTokens, w, heads: int, image_maps: ImageMaps = ImageMaps.EDIT):
    if image_maps is ImageMaps.EDIT:
        ew = EditWeights.from_store(w)
        qi = conv_fusion(m.image, ew.cf)
        ki, vi = edit_keys_values(m.image, ew.sc)
    else:
        x = m.image.tokens
        qi, ki, vi = _proj(x, w, "q"), _proj(x, w, "k"), _proj(x, w, "v")
    return _per_head(qi, ki, vi, *prompt_qkv(m, w), heads, image_maps)


def joint_forward(m: MultimodalTokens, w, heads: int = 1, decomposed: bool = False):
    """MM-DiT joint attention layer: per-modality projections, joint softmax, output projections."""
    if heads < 1 or m.image.dim % heads:
        raise ConfigError(f"model dim {m.image.dim} not divisible by {heads} heads")
    fn = joint_attention_decomposed if decomposed else joint_attention_direct
    outs = [fn(j) for j in joint_heads(m, w, heads)]
    return _finish(m, w, [o[0] for o in outs], [o[1] for o in outs] if m.n_prompt else [])


def hybrid_attention(m: MultimodalTokens, w, mode: EtaMode = EtaMode.APPROX_TOKEN_COUNT,
                     heads: int = 1, *, image_maps: ImageMaps = ImageMaps.EDIT,
                     image_block: str = "linear", n_text: int | None = None,
                     eps: float = EPS_DEN, strict: bool = False):
    """MM-EDiT attention layer returning ``(image_out, prompt_out)`` at model width."""
    if heads < 1 or m.image.dim % heads:
        raise ConfigError(f"model dim {m.image.dim} not divisible by {heads} heads")
    outs = [
        hybrid_qkv(j, mode, image_block=image_block, n_image=m.n_image, n_text=n_text,
                   eps=eps, strict=strict)
        for j in hybrid_heads(m, w, heads, image_maps)
    ]
    return _finish(m, w, [o[0] for o in outs], [o[1] for o in outs] if m.n_prompt else [])
