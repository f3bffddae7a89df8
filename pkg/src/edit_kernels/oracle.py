"""Brute-force reference implementations used by the test and verify suites.

Nothing here imports the production kernels. Inputs are converted to nested
Python float lists and every reduction is an explicit loop accumulating in
double precision, so a disagreement with the vectorized float32 code points at
the production path.
"""

from __future__ import annotations

import math


class OracleError(ArithmeticError):
    pass


class MulCounter:
    """Tally of scalar multiplications performed inside ``q . k`` dot products."""

    def __init__(self):
        self.qk = 0


def _rows(a) -> list[list[float]]:
    return [[float(x) for x in row] for row in (a.tolist() if hasattr(a, "tolist") else a)]


def _dot(a, b, counter=None) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    if counter is not None:
        counter.qk += len(a)
    return s


def oracle_matmul(a, b) -> list[list[float]]:
    a, b = _rows(a), _rows(b)
    m, k = len(a), len(a[0]) if a else 0
    if len(b) != k:
        raise ValueError(f"inner dims differ: {k} vs {len(b)}")
    n = len(b[0]) if b else 0
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def oracle_attention(q, k, v, sim: str = "exp_scaled_dot", counter: MulCounter | None = None):
    """``y_i = sum_j sim(q_i, k_j) v_j / sum_j sim(q_i, k_j)`` by double loop.

    ``sim`` is ``"exp_scaled_dot"`` (``exp(q.k / sqrt(d))``) or ``"dot"``.
    """
    sim = getattr(sim, "value", sim)
    q, k, v = _rows(q), _rows(k), _rows(v)
    if len(k) != len(v):
        raise ValueError("K and V row counts differ")
    d = len(q[0]) if q else 0
    scale = 1.0 / math.sqrt(d) if d else 1.0
    dv = len(v[0]) if v else 0
    out = []
    for i, qi in enumerate(q):
        num = [0.0] * dv
        den = 0.0
        for kj, vj in zip(k, v):
            t = _dot(qi, kj, counter)
            w = math.exp(t * scale) if sim == "exp_scaled_dot" else t
            den += w
            for c in range(dv):
                num[c] += w * vj[c]
        if den == 0.0:
            raise OracleError(f"zero denominator at row {i}")
        out.append([x / den for x in num])
    return out


def oracle_joint(q_i, k_i, v_i, q_p, k_p, v_p, return_weights: bool = False):
    """Joint softmax over the concatenated sequence with the full logit matrix in float64."""
    q = _rows(q_i) + _rows(q_p)
    k = _rows(k_i) + _rows(k_p)
    v = _rows(v_i) + _rows(v_p)
    n_img = len(_rows(q_i))
    d = len(q[0]) if q else 0
    scale = 1.0 / math.sqrt(d) if d else 1.0
    logits = [[_dot(a, b) * scale for b in k] for a in q]
    weights = []
    for row in logits:
        m = max(row)
        e = [math.exp(x - m) for x in row]
        s = 0.0
        for x in e:
            s += x
        weights.append([x / s for x in e])
    dv = len(v[0]) if v else 0
    y = []
    for wrow in weights:
        acc = [0.0] * dv
        for w, vj in zip(wrow, v):
            for c in range(dv):
                acc[c] += w * vj[c]
        y.append(acc)
    result = (y[:n_img], y[n_img:])
    return (*result, weights) if return_weights else result


def oracle_conv2d(x, kernel, bias, stride: int = 1, padding: int = 0, depthwise: bool = False):
    """Quadruple-loop cross-correlation; output extent ``ceil(H / stride)``, zeros outside."""
    x = [_rows(ch) for ch in x.tolist()] if hasattr(x, "tolist") else x
    kern = kernel.tolist() if hasattr(kernel, "tolist") else kernel
    bias = [float(b) for b in (bias.tolist() if hasattr(bias, "tolist") else bias)]
    c_in, h, w = len(x), len(x[0]), len(x[0][0]) if x[0] else 0
    c_out, kh, kw = len(kern), len(kern[0][0]), len(kern[0][0][0])
    oh, ow = -(-h // stride), -(-w // stride)

    def px(c, r, s):
        if 0 <= r < h and 0 <= s < w:
            return float(x[c][r][s])
        return 0.0

    out = [[[0.0] * ow for _ in range(oh)] for _ in range(c_out)]
    for o in range(c_out):
        in_chans = [o] if depthwise else range(c_in)
        for r in range(oh):
            for s in range(ow):
                acc = bias[o]
                for ci_idx, c in enumerate(in_chans):
                    kk = kern[o][0 if depthwise else ci_idx]
                    for i in range(kh):
                        for j in range(kw):
                            acc += float(kk[i][j]) * px(c, r * stride - padding + i,
                                                        s * stride - padding + j)
                out[o][r][s] = acc
    return out


def oracle_groupnorm(x, scale, shift, groups: int, eps: float = 1e-5):
    """Two-pass group normalization over a ``C x H x W`` nested list."""
    x = [_rows(ch) for ch in x.tolist()] if hasattr(x, "tolist") else x
    scale = [float(a) for a in scale]
    shift = [float(a) for a in shift]
    c = len(x)
    if c % groups:
        raise ValueError(f"{c} channels not divisible by {groups}")
    per = c // groups
    out = [[row[:] for row in ch] for ch in x]
    for g in range(groups):
        chans = range(g * per, (g + 1) * per)
        vals = [v for ch in chans for row in x[ch] for v in row]
        mean = 0.0
        for v in vals:
            mean += v
        mean /= len(vals)
        var = 0.0
        for v in vals:
            var += (v - mean) ** 2
        var /= len(vals)
        inv = 1.0 / math.sqrt(var + eps)
        for ch in chans:
            for r, row in enumerate(x[ch]):
                for s, v in enumerate(row):
                    out[ch][r][s] = (v - mean) * inv * scale[ch] + shift[ch]
    return out


def oracle_layernorm(x, scale, shift, eps: float = 1e-5):
    out = []
    for row in _rows(x):
        mean = sum(row) / len(row)
        var = sum((v - mean) ** 2 for v in row) / len(row)
        inv = 1.0 / math.sqrt(var + eps)
        out.append([(v - mean) * inv * float(a) + float(b) for v, a, b in zip(row, scale, shift)])
    return out


def oracle_linear(x, weight, bias):
    """``x W^T + b`` with ``W`` stored ``[out, in]``."""
    w = _rows(weight)
    b = [float(t) for t in bias]
    return [[_dot(row, wr) + bo for wr, bo in zip(w, b)] for row in _rows(x)]


def _to_image(tokens, h, w):
    t = _rows(tokens)
    d = len(t[0]) if t else 0
    return [[[t[r * w + s][c] for s in range(w)] for r in range(h)] for c in range(d)]


def _to_tokens(img):
    d, h, w = len(img), len(img[0]), len(img[0][0]) if img[0] else 0
    return [[img[c][r][s] for c in range(d)] for r in range(h) for s in range(w)]


def oracle_conv_fusion(tokens, h, w, weights, groups: int, slope: float = 0.01):
    """Reference ConvFusion query map from a name -> array mapping under ``cf.``."""
    img = _to_image(tokens, h, w)
    ck = weights["cf.compress.weight"]
    mid = oracle_conv2d(img, ck, weights["cf.compress.bias"], 1, ck.shape[2] // 2)
    mid = [[[v if v >= 0 else v * slope for v in row] for row in ch] for ch in mid]
    mid = oracle_groupnorm(mid, weights["cf.norm.scale"], weights["cf.norm.shift"], groups)
    up = oracle_conv2d(mid, weights["cf.expand.weight"], weights["cf.expand.bias"], 1, 0)
    res = _to_tokens(up)
    return [[max(0.0, a + b) for a, b in zip(xr, ur)] for xr, ur in zip(_rows(tokens), res)]


def oracle_spatial_compressor(tokens, h, w, weights):
    """Reference ``Conv(Linear(X))`` with a stride-2 depthwise 3x3 kernel."""
    proj = oracle_linear(tokens, weights["sc.proj.weight"], weights["sc.proj.bias"])
    k = weights["sc.dw.weight"]
    out = oracle_conv2d(_to_image(proj, h, w), k, weights["sc.dw.bias"], 2, k.shape[2] // 2,
                        depthwise=True)
    return _to_tokens(out)
