"""Independent straight-line double-precision oracles for the attention math.

Everything here is scalar-loop code over plain Python floats, written
directly from the attention construction, deliberately sharing nothing
with the library's vectorized tape ops.
"""

from __future__ import annotations

import math

import numpy as np


def softmax_list(vals):
    m = max(vals)
    exps = [math.exp(v - m) for v in vals]
    s = sum(exps)
    return [e / s for e in exps]


def sigmoid_scalar(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def layernorm_list(vals, gamma, beta, eps=1e-5):
    c = len(vals)
    mu = sum(vals) / c
    var = sum((v - mu) ** 2 for v in vals) / c
    inv = 1.0 / math.sqrt(var + eps)
    return [(v - mu) * inv * g + b for v, g, b in zip(vals, gamma, beta)]


def conv3x3_scalar(inp, weight, bias):
    """3x3 same-padding cross-correlation; inp (C,H,W), weight (O,C,3,3)."""
    cin, h, w = inp.shape
    cout = weight.shape[0]
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for i in range(h):
            for j in range(w):
                acc = float(bias[o])
                for c in range(cin):
                    for u in range(3):
                        for v in range(3):
                            ii, jj = i + u - 1, j + v - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += float(inp[c, ii, jj]) * float(weight[o, c, u, v])
                out[o, i, j] = acc
    return out


def bilinear_scalar(inp, out_h, out_w):
    """Half-pixel bilinear resampling of a (C,H,W) array, scalar loops."""
    c, h, w = inp.shape
    out = np.zeros((c, out_h, out_w))
    for ch in range(c):
        for i in range(out_h):
            src_i = max((i + 0.5) * h / out_h - 0.5, 0.0)
            i0 = min(int(math.floor(src_i)), h - 1)
            i1 = min(i0 + 1, h - 1)
            li = src_i - i0
            for j in range(out_w):
                src_j = max((j + 0.5) * w / out_w - 0.5, 0.0)
                j0 = min(int(math.floor(src_j)), w - 1)
                j1 = min(j0 + 1, w - 1)
                lj = src_j - j0
                top = (1 - lj) * float(inp[ch, i0, j0]) + lj * float(inp[ch, i0, j1])
                bot = (1 - lj) * float(inp[ch, i1, j0]) + lj * float(inp[ch, i1, j1])
                out[ch, i, j] = (1 - li) * top + li * bot
    return out


def lsam_oracle(x, params):
    """Single-input attention re-weighting; x is (1,C,H,W) float64.

    ``params`` maps field names to float64 numpy arrays (same fields
    as the library's parameter bundle) plus the integer reduction.
    """
    _, c, h, w = x.shape
    hw = h * w
    r = params["reduction"]
    cr = c // r
    seq = [[float(x[0, ch, p // w, p % w]) for ch in range(c)] for p in range(hw)]
    w_sq = params["spatial_query"]
    w_sk = params["spatial_key"]
    w_cq = params["channel_query"]
    w_ck = params["channel_key"]
    w_co = params["channel_out"]

    pooled = []
    for k in range(cr):
        total = 0.0
        for p in range(hw):
            acc = 0.0
            for ch in range(c):
                acc += seq[p][ch] * float(w_sq[ch, k])
            total += acc
        pooled.append(total / hw)
    q_sp = softmax_list(pooled)

    k_sp = [
        [sum(seq[p][ch] * float(w_sk[ch, k]) for ch in range(c)) for k in range(cr)]
        for p in range(hw)
    ]
    s_sp = [sigmoid_scalar(sum(k_sp[p][k] * q_sp[k] for k in range(cr))) for p in range(hw)]

    q_ch_raw = [sum(seq[p][ch] * float(w_cq[ch, 0]) for ch in range(c)) for p in range(hw)]
    q_ch = softmax_list(q_ch_raw)
    k_ch = [
        [sum(seq[p][ch] * float(w_ck[ch, k]) for ch in range(c)) for k in range(cr)]
        for p in range(hw)
    ]
    corr = [sum(q_ch[p] * k_ch[p][k] for p in range(hw)) for k in range(cr)]
    z = [sum(corr[k] * float(w_co[k, ch]) for k in range(cr)) for ch in range(c)]
    zn = layernorm_list(z, params["ln_gamma"], params["ln_beta"])
    s_ch = [sigmoid_scalar(v) for v in zn]

    out = np.zeros_like(x)
    for p in range(hw):
        for ch in range(c):
            out[0, ch, p // w, p % w] = s_sp[p] * seq[p][ch] + s_ch[ch] * seq[p][ch]
    return out


def lcam_oracle(f_high, f_low, params, direction):
    """Cross-resolution attention; inputs (1,C,Hh,Wh) and (1,C,Hl,Wl) float64."""
    _, c, hh, wh = f_high.shape
    _, _, hl, wl = f_low.shape
    r = params["reduction"]
    cr = c // r

    if direction == "top_down":
        value = f_high[0]
        query = bilinear_scalar(f_low[0], hh, wh)
        vh, vw = hh, wh
    else:
        value = f_low[0]
        query = bilinear_scalar(f_high[0], hl, wl)
        vh, vw = hl, wl
    hw = vh * vw
    seq = [[float(value[ch, p // vw, p % vw]) for ch in range(c)] for p in range(hw)]

    qs_map = conv3x3_scalar(
        query, params["spatial_query_conv_w"], params["spatial_query_conv_b"]
    )
    pooled = [float(qs_map[k].mean()) for k in range(cr)]
    q_sp = softmax_list(pooled)

    w_sk = params["spatial_key"]
    k_sp = [
        [sum(seq[p][ch] * float(w_sk[ch, k]) for ch in range(c)) for k in range(cr)]
        for p in range(hw)
    ]
    s_sp = [sigmoid_scalar(sum(k_sp[p][k] * q_sp[k] for k in range(cr))) for p in range(hw)]

    qc_map = conv3x3_scalar(
        query, params["channel_query_conv_w"], params["channel_query_conv_b"]
    )
    q_ch = softmax_list([float(qc_map[0, p // vw, p % vw]) for p in range(hw)])

    w_ck = params["channel_key"]
    k_ch = [
        [sum(seq[p][ch] * float(w_ck[ch, k]) for ch in range(c)) for k in range(cr)]
        for p in range(hw)
    ]
    corr = [sum(q_ch[p] * k_ch[p][k] for p in range(hw)) for k in range(cr)]
    w_co = params["channel_out"]
    z = [sum(corr[k] * float(w_co[k, ch]) for k in range(cr)) for ch in range(c)]
    zn = layernorm_list(z, params["ln_gamma"], params["ln_beta"])
    s_ch = [sigmoid_scalar(v) for v in zn]

    out = np.zeros((1, c, vh, vw))
    for p in range(hw):
        for ch in range(c):
            val = seq[p][ch]
            out[0, ch, p // vw, p % vw] = s_sp[p] * val + s_ch[ch] * val + val
    return out


def params_to_arrays(p) -> dict:
    """Flatten a parameter bundle into a dict of float64 arrays."""
    out = {"reduction": p.reduction}
    for name, t in p.named_tensors("x"):
        out[name.split(".", 1)[1]] = t.data.astype(np.float64)
    return out
