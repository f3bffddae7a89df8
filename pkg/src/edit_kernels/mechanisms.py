"""Weight manifests and forward runners for every benchmarkable mechanism.

A manifest maps tensor name -> ``(shape, fan_in, init)``; ``seeded_store``
materializes it deterministically and ``build_runner`` turns a config plus a
validated store into a callable over ``(image_grid, prompt_tokens)``.
"""

from __future__ import annotations

import numpy as np

from . import tensor_kernels as tk
from .attention import (
    FeatureMapKind,
    apply_feature_map,
    kv_compress,
    kv_compress_params,
    linear_attention,
    multihead,
    sdpa,
)
from .config import AttentionConfig
from .errors import MissingWeightError, ShapeError
from .edit import EditWeights, bottleneck_width, edit_attention
from .mmedit import EtaMode, MultimodalTokens, hybrid_attention, joint_forward
from .tokens import ImageTokenGrid
from .weights import WeightStore, seeded_tensor


def _linear(name: str, din: int, dout: int) -> dict:
    return {
        f"{name}.weight": ((dout, din), din, "uniform"),
        f"{name}.bias": ((dout,), din, "uniform"),
    }


def _norm(name: str, c: int) -> dict:
    return {f"{name}.scale": ((c,), c, "ones"), f"{name}.shift": ((c,), c, "zeros")}


def _convfusion(d: int, prefix: str = "cf") -> dict:
    mid = bottleneck_width(d)
    return {
        f"{prefix}.compress.weight": ((mid, d, 3, 3), 9 * d, "uniform"),
        f"{prefix}.compress.bias": ((mid,), 9 * d, "uniform"),
        **_norm(f"{prefix}.norm", mid),
        f"{prefix}.expand.weight": ((d, mid, 1, 1), mid, "uniform"),
        f"{prefix}.expand.bias": ((d,), mid, "uniform"),
    }


def _spatial_compressor(d: int, prefix: str = "sc") -> dict:
    return {
        **_linear(f"{prefix}.proj", d, d),
        f"{prefix}.dw.weight": ((d, 1, 3, 3), 9, "uniform"),
        f"{prefix}.dw.bias": ((d,), 9, "uniform"),
    }


def _linfusion(d: int, prefix: str) -> dict:
    lf = bottleneck_width(d)
    return {
        **_linear(f"{prefix}.down", d, lf),
        **_norm(f"{prefix}.norm", lf),
        **_linear(f"{prefix}.up", lf, d),
    }


def _prompt(d: int) -> dict:
    return {**_linear("prompt.q", d, d), **_linear("prompt.k", d, d),
            **_linear("prompt.v", d, d), **_linear("prompt.out", d, d)}


def _qkv(d: int) -> dict:
    return {**_linear("q", d, d), **_linear("k", d, d), **_linear("v", d, d)}


def manifest(cfg: AttentionConfig) -> dict:
    d, mech = cfg.d, cfg.mechanism
    out = _linear("out", d, d)
    if mech in ("sdpa", "linear"):
        return {**_qkv(d), **out}
    if mech == "sana":
        return {**_linear("sana.q", d, d), **_linear("sana.k", d, d), **_linear("v", d, d), **out}
    if mech == "linfusion":
        return {**_linfusion(d, "lf.q"), **_linfusion(d, "lf.k"), **_linear("v", d, d), **out}
    if mech == "kvcomp":
        k = cfg.kv_factor
        return {
            **_qkv(d),
            "kvcomp.weight": ((d, 1, k, k), k * k, "mean"),
            "kvcomp.bias": ((d,), k * k, "zeros"),
            **out,
        }
    if mech == "edit":
        return {**_convfusion(d), **_spatial_compressor(d), **out}
    if mech in ("joint", "joint-decomposed"):
        return {**_qkv(d), **_prompt(d), **out}
    if mech in ("hybrid", "hybrid-exact"):
        return {**_convfusion(d), **_spatial_compressor(d), **_prompt(d), **out}
    raise ValueError(f"no manifest for {mech!r}")


def seeded_store(cfg: AttentionConfig, seed: int) -> WeightStore:
    store = WeightStore(provenance=("seeded", seed))
    for name, (shape, fan_in, init) in manifest(cfg).items():
        store.add(name, seeded_tensor(seed, name, shape, fan_in, init))
    return store


def validate_store(cfg: AttentionConfig, store) -> None:
    """Every manifest name present with the manifest's shape."""
    for name, (shape, _, _) in manifest(cfg).items():
        if name not in store:
            raise MissingWeightError(name, cfg.label)
        if tuple(store[name].shape) != tuple(shape):
            raise ShapeError(f"{name}: shape {tuple(store[name].shape)} != manifest {tuple(shape)}")


def make_inputs(cfg: AttentionConfig, seed: int):
    rng = np.random.default_rng([seed, 0x1D])
    x = rng.standard_normal((cfg.n_image, cfg.d)).astype(tk.DTYPE)
    grid = ImageTokenGrid(x, cfg.height, cfg.width)
    prompt = rng.standard_normal((cfg.n_prompt if cfg.multimodal else 0, cfg.d)).astype(tk.DTYPE)
    return grid, prompt


def _proj(x, w, name):
    return tk.linear(x, w[f"{name}.weight"], w[f"{name}.bias"])


def build_runner(cfg: AttentionConfig, w):
    """Return ``f(grid, prompt) -> output`` for ``cfg.mechanism`` bound to weights ``w``."""
    validate_store(cfg, w)
    mech, heads = cfg.mechanism, cfg.heads
    eps_kw = {"strict": cfg.strict}

    def close(y):
        return _proj(y, w, "out")

    if mech == "sdpa":
        def run(grid, prompt):
            x = grid.tokens
            return close(multihead(sdpa, _proj(x, w, "q"), _proj(x, w, "k"), _proj(x, w, "v"), heads))
    elif mech in ("linear", "sana", "linfusion"):
        def run(grid, prompt):
            x = grid.tokens
            if mech == "linear":
                q, k = tk.elu_plus_one(_proj(x, w, "q")), tk.elu_plus_one(_proj(x, w, "k"))
            elif mech == "sana":
                q = apply_feature_map(x, FeatureMapKind.RELU_LINEAR, w, "sana.q")
                k = apply_feature_map(x, FeatureMapKind.RELU_LINEAR, w, "sana.k")
            else:
                q = apply_feature_map(x, FeatureMapKind.LINFUSION, w, "lf.q")
                k = apply_feature_map(x, FeatureMapKind.LINFUSION, w, "lf.k")
            v = _proj(x, w, "v")
            return close(multihead(lambda t: linear_attention(t, **eps_kw), q, k, v, heads))
    elif mech == "kvcomp":
        params = kv_compress_params(w["kvcomp.weight"], w["kvcomp.bias"])

        def run(grid, prompt):
            x = grid.tokens
            q = _proj(x, w, "q")
            k, v = kv_compress(grid.with_tokens(_proj(x, w, "k")), grid.with_tokens(_proj(x, w, "v")),
                               cfg.kv_factor, params)
            return close(multihead(sdpa, q, k, v, heads))
    elif mech == "edit":
        ew = EditWeights.from_store(w)

        def run(grid, prompt):
            return edit_attention(grid, ew, heads, **eps_kw)
    elif mech in ("joint", "joint-decomposed"):
        def run(grid, prompt):
            return joint_forward(MultimodalTokens(grid, prompt), w, heads,
                                 decomposed=mech == "joint-decomposed")
    elif mech in ("hybrid", "hybrid-exact"):
        mode = EtaMode.EXACT_LINEAR if mech == "hybrid-exact" else cfg.eta_mode

        def run(grid, prompt):
            return hybrid_attention(MultimodalTokens(grid, prompt), w, mode, heads, **eps_kw)
    else:
        raise ValueError(f"no runner for {mech!r}")
    return run
