"""Seeded oracle-equivalence suites.

Each suite draws a family of random instances from one seed, runs the
production path and an independent reference, and reports the worst error.
The report text contains no timings, so a fixed seed reproduces it byte for
byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import oracle
from . import tensor_kernels as tk
from .attention import QKV, SimilarityFn, generalized_attention, linear_attention, sdpa
from .edit import (
    EditWeights,
    conv_fusion,
    edit_keys_values,
    edit_qkv,
    gn_groups,
    spatial_compress,
)
from .config import AttentionConfig
from .mechanisms import seeded_store
from .mmedit import (
    EtaMode,
    JointQKV,
    eta,
    hybrid_qkv,
    joint_attention_decomposed,
    joint_attention_direct,
)
from .tokens import ImageTokenGrid

DEFAULT_TOLERANCE = 1e-5
N_IMAGE_CHOICES = (1, 4, 16, 64)
N_PROMPT_CHOICES = (0, 1, 5, 16)
HEAD_DIM_CHOICES = (4, 8, 16)


@dataclass
class SuiteResult:
    name: str
    metric: str
    instances: int = 0
    max_error: float = 0.0
    worst: dict = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    def record(self, err: float, **dims) -> None:
        self.instances += 1
        if self.instances == 1 or err > self.max_error or math.isnan(err):
            if not math.isnan(self.max_error):
                self.max_error = float(err)
                self.worst = dims

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<30} n={self.instances:<4d} {self.metric} "
                f"max_err={self.max_error:.3e} tol={self.tolerance:.1e}")


def _rng(seed: int, suite: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(map(ord, suite)), len(suite)])


def _uniform(rng, shape, lo=-3.0, hi=3.0) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape).astype(tk.DTYPE)


def max_abs(a, b) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def max_rel(a, b) -> float:
    """Normwise relative error ``max|a - b| / max|b|``."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if not a.size:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30))


# --- instance families (also used by the test-suite) ---------------------------

def joint_instance(rng, n_image: int, n_prompt: int, head_dim: int) -> JointQKV:
    shapes = [(n_image, head_dim)] * 3 + [(n_prompt, head_dim)] * 3
    return JointQKV(*(_uniform(rng, s) for s in shapes))


def joint_family(seed: int, count: int = 100):
    """``count`` instances cycling through every (N_I, N_P, d_h) combination."""
    rng = _rng(seed, "joint")
    combos = [(ni, npr, dh) for ni in N_IMAGE_CHOICES for npr in N_PROMPT_CHOICES
              for dh in HEAD_DIM_CHOICES]
    for i in range(count):
        ni, npr, dh = combos[i % len(combos)]
        yield (ni, npr, dh), joint_instance(rng, ni, npr, dh)


def nonneg_family(seed: int, count: int = 100, max_n: int = 64, max_d: int = 16):
    """Non-negative Q, K and signed V for linear-attention identities."""
    rng = _rng(seed, "nonneg")
    for _ in range(count):
        nq = int(rng.integers(1, max_n + 1))
        nk = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        q = _uniform(rng, (nq, d), 0.0, 3.0)
        k = _uniform(rng, (nk, d), 0.0, 3.0)
        v = _uniform(rng, (nk, d))
        yield (nq, nk, d), QKV(q, k, v)


def signed_family(seed: int, count: int = 100, max_n: int = 64, max_d: int = 16):
    rng = _rng(seed, "signed")
    for _ in range(count):
        nq = int(rng.integers(1, max_n + 1))
        nk = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        yield (nq, nk, d), QKV(_uniform(rng, (nq, d)), _uniform(rng, (nk, d)), _uniform(rng, (nk, d)))


def small_dims(rng, lo=1, hi=8):
    return int(rng.integers(lo, hi + 1))


# --- suites --------------------------------------------------------------------------

def suite_matmul(seed, tol, count=100):
    r = SuiteResult("matmul_vs_triple_loop", "abs", tolerance=tol)
    rng = _rng(seed, "matmul")
    for _ in range(count):
        m, k, n = small_dims(rng), small_dims(rng), small_dims(rng)
        a, b = _uniform(rng, (m, k)), _uniform(rng, (k, n))
        r.record(max_abs(tk.matmul(a, b), oracle.oracle_matmul(a, b)), m=m, k=k, n=n)
    return r


def random_conv(rng, depthwise: bool | None = None):
    c = small_dims(rng)
    h, w = small_dims(rng), small_dims(rng)
    ksize = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    dw = bool(rng.integers(0, 2)) if depthwise is None else depthwise
    oc = c if dw else small_dims(rng)
    kernel = _uniform(rng, (oc, 1 if dw else c, ksize, ksize), -1, 1)
    p = tk.Conv2DParams(kernel, _uniform(rng, (oc,), -1, 1), stride=stride,
                        padding=ksize // 2, depthwise=dw)
    x = _uniform(rng, (c, h, w))
    return x, p


def suite_conv2d(seed, tol, count=100):
    r = SuiteResult("conv2d_vs_nested_loop", "abs", tolerance=tol)
    rng = _rng(seed, "conv2d")
    for _ in range(count):
        x, p = random_conv(rng)
        ref = oracle.oracle_conv2d(x, p.kernel, p.bias, p.stride, p.padding, p.depthwise)
        r.record(max_abs(tk.conv2d(x, p), ref), shape=x.shape, kernel=p.kernel.shape,
                 stride=p.stride, depthwise=p.depthwise)
    return r


def suite_group_norm(seed, tol, count=100):
    r = SuiteResult("group_norm_vs_two_pass", "abs", tolerance=tol)
    rng = _rng(seed, "group_norm")
    for _ in range(count):
        groups = small_dims(rng, 1, 4)
        c = groups * small_dims(rng, 1, 2)
        h, w = small_dims(rng), small_dims(rng)
        x = _uniform(rng, (c, h, w))
        p = tk.NormParams(_uniform(rng, (c,), 0.5, 1.5), _uniform(rng, (c,), -1, 1), groups)
        ref = oracle.oracle_groupnorm(x, p.scale, p.shift, groups)
        r.record(max_abs(tk.group_norm(x, p), ref), c=c, h=h, w=w, groups=groups)
    return r


def suite_sdpa(seed, tol, count=100):
    r = SuiteResult("sdpa_vs_exp_similarity", "abs", tolerance=tol)
    for dims, inst in signed_family(seed, count):
        ref = generalized_attention(inst, SimilarityFn.EXP_SCALED_DOT)
        r.record(max(max_abs(sdpa(inst), ref),
                     max_abs(sdpa(inst), oracle.oracle_attention(inst.q, inst.k, inst.v))),
                 n_q=dims[0], n_k=dims[1], d=dims[2])
    return r


def linear_rel_error(inst: QKV, den_floor: float = 1e-3) -> float:
    """Relative error of linear attention against the dot-similarity oracle on rows
    whose normalizer is at least ``den_floor``."""
    den = np.asarray(inst.q, np.float64) @ np.asarray(inst.k, np.float64).sum(axis=0)
    keep = den >= den_floor
    if not keep.any():
        return 0.0
    sub = QKV(inst.q[keep], inst.k, inst.v)
    got = linear_attention(sub, strict=True)
    ref = oracle.oracle_attention(sub.q, sub.k, sub.v, "dot")
    return max_rel(got, ref)


def suite_linear(seed, tol, count=100):
    r = SuiteResult("linear_vs_dot_similarity", "rel", tolerance=tol)
    for dims, inst in nonneg_family(seed, count):
        r.record(linear_rel_error(inst), n_q=dims[0], n_k=dims[1], d=dims[2])
    return r


def suite_decomposition(seed, tol, count=100):
    r = SuiteResult("joint_decomposed_vs_direct", "abs", tolerance=tol)
    for (ni, npr, dh), j in joint_family(seed, count):
        a_i, a_p = joint_attention_decomposed(j)
        b_i, b_p = joint_attention_direct(j)
        r.record(max(max_abs(a_i, b_i), max_abs(a_p, b_p)), n_image=ni, n_prompt=npr, head_dim=dh)
    return r


def suite_joint_oracle(seed, tol, count=40):
    r = SuiteResult("joint_direct_vs_oracle", "abs", tolerance=tol)
    for (ni, npr, dh), j in joint_family(seed + 1, count):
        b_i, b_p = joint_attention_direct(j)
        o_i, o_p = oracle.oracle_joint(j.q_i, j.k_i, j.v_i, j.q_p, j.k_p, j.v_p)
        r.record(max(max_abs(b_i, np.array(o_i).reshape(b_i.shape)),
                     max_abs(b_p, np.array(o_p).reshape(b_p.shape))),
                 n_image=ni, n_prompt=npr, head_dim=dh)
    return r


def suite_hybrid_reduction(seed, tol, count=50):
    r = SuiteResult("hybrid_softmax_vs_joint", "abs", tolerance=tol)
    for (ni, npr, dh), j in joint_family(seed + 2, count):
        a_i, a_p = hybrid_qkv(j, EtaMode.EXACT_SOFTMAX, image_block="softmax")
        b_i, b_p = joint_attention_direct(j)
        r.record(max(max_abs(a_i, b_i), max_abs(a_p, b_p)), n_image=ni, n_prompt=npr, head_dim=dh)
    return r


def suite_eta_complement(seed, tol, count=100):
    r = SuiteResult("eta_complement_sums_to_one", "abs", tolerance=tol)
    for (ni, npr, dh), j in joint_family(seed + 3, count):
        if npr == 0:
            continue
        s = eta(j.q_i, j.k_i, j.k_p).astype(np.float64) + eta(j.q_i, j.k_p, j.k_i)
        r.record(max_abs(s, np.ones_like(s)), n_image=ni, n_prompt=npr, head_dim=dh)
    return r


def _edit_instance(rng, h, w, d, seed):
    cfg = AttentionConfig("edit", d=d, heads=1, height=h, width=w)
    store = seeded_store(cfg, seed)
    x = ImageTokenGrid(_uniform(rng, (h * w, d)), h, w)
    return x, store


def suite_convfusion(seed, tol, count=30):
    r = SuiteResult("conv_fusion_vs_oracle", "abs", tolerance=tol)
    rng = _rng(seed, "convfusion")
    for i in range(count):
        h, w, d = small_dims(rng, 1, 5), small_dims(rng, 1, 5), 2 * small_dims(rng, 1, 4)
        x, store = _edit_instance(rng, h, w, d, seed + i)
        ew = EditWeights.from_store(store)
        got = conv_fusion(x, ew.cf)
        ref = oracle.oracle_conv_fusion(x.tokens, h, w, store, gn_groups(ew.cf.compress.out_channels))
        got_sc = spatial_compress(x, ew.sc)
        ref_sc = oracle.oracle_spatial_compressor(x.tokens, h, w, store)
        r.record(max(max_abs(got, ref), max_abs(got_sc, ref_sc)), h=h, w=w, d=d)
    return r


def suite_edit_attention(seed, tol, count=20):
    r = SuiteResult("edit_linear_vs_dot_similarity", "rel", tolerance=tol)
    rng = _rng(seed, "edit_attention")
    for i in range(count):
        h, w, d = small_dims(rng, 1, 8), small_dims(rng, 1, 8), 8
        x, store = _edit_instance(rng, h, w, d, seed + 100 + i)
        q, k, v = edit_qkv(x, EditWeights.from_store(store))
        r.record(linear_rel_error(QKV(q, k, v)), h=h, w=w, d=d)
    return r


def suite_token_counts(seed, tol):
    r = SuiteResult("compressed_token_count_law", "count", tolerance=max(tol, 0.5))
    rng = _rng(seed, "tokens")
    d = 4
    store = seeded_store(AttentionConfig("edit", d=d, heads=1, height=1, width=1), seed)
    sc = EditWeights.from_store(store).sc
    for h in range(1, 10):
        for w in range(1, 10):
            k, v = edit_keys_values(ImageTokenGrid(_uniform(rng, (h * w, d)), h, w), sc)
            want = math.ceil(h / 2) * math.ceil(w / 2)
            r.record(float(abs(k.shape[0] - want) + abs(v.shape[0] - want)), h=h, w=w)
    return r


SUITES = (
    suite_matmul,
    suite_conv2d,
    suite_group_norm,
    suite_sdpa,
    suite_linear,
    suite_decomposition,
    suite_joint_oracle,
    suite_hybrid_reduction,
    suite_eta_complement,
    suite_convfusion,
    suite_edit_attention,
    suite_token_counts,
)


def run_verify(seed: int = 42, tolerance: float = DEFAULT_TOLERANCE):
    """Run every suite; returns ``(all_passed, results, report_text)``."""
    results = [suite(seed, tolerance) for suite in SUITES]
    lines = [f"edit-kernels verify seed={seed} tolerance={tolerance:.1e}"]
    for res in results:
        lines.append(res.line())
        if not res.passed:
            lines.append(f"      worst instance: seed={seed} {res.worst}")
    ok = all(res.passed for res in results)
    lines.append(f"{'OK' if ok else 'FAILED'}: {sum(r.passed for r in results)}/{len(results)} suites passed")
    return ok, results, "\n".join(lines) + "\n"
