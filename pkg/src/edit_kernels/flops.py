"""Closed-form multiply-accumulate counts per mechanism.

Counts are exact Python integers of multiply-adds in matrix products and
convolutions (``m x k @ k x n`` costs ``m*k*n``). Bias adds, softmax
exponentials and normalization statistics are not counted. Every term is named
so callers can inspect, e.g., the image-image ``QK^T`` block on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import AttentionConfig
from .edit import bottleneck_width

CONV_TAPS = 9  # 3x3 kernels in ConvFusion and the Spatial Compressor


@dataclass(frozen=True)
class FlopCount:
    mechanism: str
    terms: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.terms.values())

    def __getitem__(self, key: str) -> int:
        return self.terms.get(key, 0)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _linear_block(t: dict, n_q: int, n_k: int, d: int, dh: int, tag: str = "") -> None:
    # per head: K^T V is n_k*dh*dh, Q S is n_q*dh*dh; z and Q.z are n*dh
    t[f"kv{tag}"] = n_k * d * dh
    t[f"q_kv{tag}"] = n_q * d * dh
    t[f"norm{tag}"] = (n_k + n_q) * d


def _softmax_block(t: dict, n_q: int, n_k: int, d: int, tag: str) -> None:
    t[f"qk_{tag}"] = n_q * n_k * d
    t[f"pv_{tag}"] = n_q * n_k * d


def _convfusion(t: dict, n: int, d: int) -> None:
    mid = bottleneck_width(d)
    t["cf_compress"] = n * CONV_TAPS * d * mid
    t["cf_expand"] = n * mid * d


def _spatial_compressor(t: dict, n: int, n_c: int, d: int) -> None:
    t["sc_proj"] = n * d * d
    t["sc_dw"] = n_c * CONV_TAPS * d


def flop_model(cfg: AttentionConfig, mechanism: str | None = None) -> FlopCount:
    """Multiply-adds of one attention layer for ``cfg`` (or ``mechanism`` overriding it)."""
    mech = mechanism or cfg.mechanism
    d, dh = cfg.d, cfg.head_dim
    n, n_p = cfg.n_image, cfg.n_prompt
    n_c = _ceil_div(cfg.height, 2) * _ceil_div(cfg.width, 2)
    t: dict[str, int] = {}

    if mech in ("sdpa", "linear", "sana"):
        t["proj_qkv"] = 3 * n * d * d
        if mech == "sdpa":
            _softmax_block(t, n, n, d, "ii")
        else:
            _linear_block(t, n, n, d, dh)
        t["out"] = n * d * d
    elif mech == "linfusion":
        lf = bottleneck_width(d)
        t["lf_maps"] = 2 * (n * d * lf + n * lf * d)
        t["proj_v"] = n * d * d
        _linear_block(t, n, n, d, dh)
        t["out"] = n * d * d
    elif mech == "kvcomp":
        k = cfg.kv_factor
        n_kv = _ceil_div(cfg.height, k) * _ceil_div(cfg.width, k)
        t["proj_qkv"] = 3 * n * d * d
        t["kv_compress"] = 2 * n_kv * k * k * d
        _softmax_block(t, n, n_kv, d, "ii")
        t["out"] = n * d * d
    elif mech == "edit":
        _convfusion(t, n, d)
        _spatial_compressor(t, n, n_c, d)
        _linear_block(t, n, n_c, d, dh)
        t["out"] = n * d * d
    elif mech in ("joint", "joint-decomposed"):
        t["proj_qkv"] = 3 * n * d * d
        t["prompt_proj_qkv"] = 3 * n_p * d * d
        _softmax_block(t, n, n, d, "ii")
        _softmax_block(t, n, n_p, d, "ip")
        _softmax_block(t, n_p, n, d, "pi")
        _softmax_block(t, n_p, n_p, d, "pp")
        t["out"] = (n + n_p) * d * d
    elif mech in ("hybrid", "hybrid-exact"):
        _convfusion(t, n, d)
        _spatial_compressor(t, n, n_c, d)
        t["prompt_proj_qkv"] = 3 * n_p * d * d
        # the exact linear mixing weight reuses Q.z and the image->prompt exponentials
        _linear_block(t, n, n_c, d, dh, "_ii")
        _softmax_block(t, n, n_p, d, "ip")
        _softmax_block(t, n_p, n_c, d, "pi")
        _softmax_block(t, n_p, n_p, d, "pp")
        t["out"] = (n + n_p) * d * d
    else:
        raise ValueError(f"no FLOP model for mechanism {mech!r}")
    return FlopCount(mech, t)
