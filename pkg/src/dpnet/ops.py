"""Differentiable primitive operations.

Each op validates its operands, computes the forward value eagerly with
numpy, and, when a tape is active, records a closure computing the
vector-Jacobian product.  All ops are pure: inputs are never mutated and
every call returns a fresh tensor.

Reduction-order determinism: accumulations go through numpy matmul or
einsum, whose per-output-element reduction order is fixed for a given
build, so identical inputs produce bit-identical outputs across runs.

Ops with subgradient kinks (relu, maximum, minimum) report their branch
selection masks to an optional capture context; the gradient checker
uses those to detect and skip coordinates where a finite-difference
probe crosses a kink.
"""

from __future__ import annotations

import numpy as np

from .tensor import ConfigError, ShapeError, Tensor, record, tape_active

# --------------------------------------------------------------------------
# kink reporting
# --------------------------------------------------------------------------

_KINK_SINK: list[np.ndarray] | None = None


class capture_kinks:
    """Collect branch-selection masks from kinked ops during a forward pass."""

    def __init__(self):
        self.masks: list[np.ndarray] = []
        self._prev: list[np.ndarray] | None = None

    def __enter__(self) -> "capture_kinks":
        global _KINK_SINK
        self._prev = _KINK_SINK
        _KINK_SINK = self.masks
        return self

    def __exit__(self, exc_type, exc, tb):
        global _KINK_SINK
        _KINK_SINK = self._prev
        return False


def _report_kink(mask: np.ndarray) -> None:
    if _KINK_SINK is not None:
        _KINK_SINK.append(mask.copy())


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def full(shape, value, dtype=np.float32) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype))


def _coerce_pair(a, b):
    """Return (a, b, a_arr, b_arr) where scalars became constant arrays."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.dtype != b.dtype:
            raise ConfigError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")
        _check_broadcast(a.shape, b.shape)
        return a, b, a.data, b.data
    if isinstance(a, Tensor):
        return a, None, a.data, np.asarray(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return None, b, np.asarray(a, dtype=b.dtype), b.data
    raise TypeError("at least one operand must be a Tensor")


def _check_broadcast(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    # Broadcasting is limited to singleton-axis stretching at equal rank;
    # scalars (rank 0) are also accepted.
    if sa == () or sb == ():
        return
    if len(sa) != len(sb):
        raise ShapeError(
            f"elementwise rank mismatch: {sa} vs {sb} (no implicit rank promotion)"
        )
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] > 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, fwd, vjp_a, vjp_b) -> Tensor:
    ta, tb, aa, bb = _coerce_pair(a, b)
    out = Tensor(fwd(aa, bb))
    if tape_active():
        inputs = [t for t in (ta, tb) if t is not None]

        def vjp(g):
            parts = []
            if ta is not None:
                parts.append(_reduce_to(vjp_a(g, aa, bb), aa.shape))
            if tb is not None:
                parts.append(_reduce_to(vjp_b(g, aa, bb), bb.shape))
            return parts

        record(inputs, out, vjp)
    return out


# --------------------------------------------------------------------------
# elementwise family
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    if tape_active():
        record([x], out, lambda g: [-g])
    return out


def maximum(a, b) -> Tensor:
    ta, tb, aa, bb = _coerce_pair(a, b)
    take_a = aa >= bb
    _report_kink(take_a)
    out = Tensor(np.maximum(aa, bb))
    if tape_active():
        inputs = [t for t in (ta, tb) if t is not None]

        def vjp(g):
            parts = []
            if ta is not None:
                parts.append(_reduce_to(g * take_a, aa.shape))
            if tb is not None:
                parts.append(_reduce_to(g * ~take_a, bb.shape))
            return parts

        record(inputs, out, vjp)
    return out


def minimum(a, b) -> Tensor:
    ta, tb, aa, bb = _coerce_pair(a, b)
    take_a = aa <= bb
    _report_kink(take_a)
    out = Tensor(np.minimum(aa, bb))
    if tape_active():
        inputs = [t for t in (ta, tb) if t is not None]

        def vjp(g):
            parts = []
            if ta is not None:
                parts.append(_reduce_to(g * take_a, aa.shape))
            if tb is not None:
                parts.append(_reduce_to(g * ~take_a, bb.shape))
            return parts

        record(inputs, out, vjp)
    return out


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    _report_kink(pos)
    out = Tensor(np.maximum(x.data, 0))
    if tape_active():
        record([x], out, lambda g: [g * pos])
    return out


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows; both branches are exact logistic values.
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(y.astype(x.dtype, copy=False))
    if tape_active():
        yv = out.data
        record([x], out, lambda g: [g * yv * (1.0 - yv)])
    return out


def atan2(y, x) -> Tensor:
    """Elementwise arctangent of y/x honoring quadrant; safe at the origin."""

    def fwd(yy, xx):
        return np.arctan2(yy, xx)

    def vjp_y(g, yy, xx):
        denom = yy * yy + xx * xx
        return np.where(denom == 0, 0.0, g * xx / np.where(denom == 0, 1.0, denom))

    def vjp_x(g, yy, xx):
        denom = yy * yy + xx * xx
        return np.where(denom == 0, 0.0, -g * yy / np.where(denom == 0, 1.0, denom))

    return _binary(y, x, fwd, vjp_y, vjp_x)


# --------------------------------------------------------------------------
# normalization and activation maps
# --------------------------------------------------------------------------


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if tape_active():
        yv = out.data

        def vjp(g):
            dot = (g * yv).sum(axis=axis, keepdims=True)
            return [(g - dot) * yv]

        record([x], out, vjp)
    return out


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learnable affine parameters.

    Uses biased variance (divide by C).  A constant slice maps to beta.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match last axis {c}"
        )
    if eps <= 0:
        raise ConfigError("layernorm eps must be positive")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gamma.data + beta.data)
    if tape_active():

        def vjp(g):
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (dxhat - m1 - xhat * m2)
            reduce_axes = tuple(range(g.ndim - 1))
            dgamma = (g * xhat).sum(axis=reduce_axes)
            dbeta = g.sum(axis=reduce_axes)
            return [dx, dgamma, dbeta]

        record([x, gamma, beta], out, vjp)
    return out


def batchnorm_inference(
    x: Tensor,
    mean: Tensor,
    var: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Frozen-statistics batch normalization over channel axis 1."""
    if x.ndim < 2:
        raise ShapeError(f"batchnorm input must have a channel axis, got shape {x.shape}")
    c = x.shape[1]
    for name, t in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm {name} shape {t.shape} != ({c},)")
    cshape = (1, c) + (1,) * (x.ndim - 2)
    inv = (1.0 / np.sqrt(var.data + eps)).reshape(cshape)
    m = mean.data.reshape(cshape)
    ga = gamma.data.reshape(cshape)
    be = beta.data.reshape(cshape)
    centered = x.data - m
    out = Tensor(centered * inv * ga + be)
    if tape_active():
        axes = (0,) + tuple(range(2, x.ndim))

        def vjp(g):
            dx = g * ga * inv
            dgamma = (g * centered * inv).sum(axis=axes).reshape(-1)
            dbeta = g.sum(axis=axes).reshape(-1)
            dmean = -(g * ga * inv).sum(axis=axes).reshape(-1)
            dvar = (g * centered * ga * (-0.5) * inv**3).sum(axis=axes).reshape(-1)
            return [dx, dmean, dvar, dgamma, dbeta]

        record([x, mean, var, gamma, beta], out, vjp)
    return out


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise ConfigError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul shapes {a.shape} and {b.shape}: inner extents "
            f"{a.shape[-1]} != {b.shape[-2]}"
        )
    out = Tensor(a.data @ b.data)
    if tape_active():
        A, B = a.data, b.data

        def vjp(g):
            ga = _reduce_to(g @ B.swapaxes(-1, -2), A.shape)
            gb = _reduce_to(A.swapaxes(-1, -2) @ g, B.shape)
            return [ga, gb]

        record([a, b], out, vjp)
    return out


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


def _patch_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Sliding-window view (N, C, kh, kw, Ho, Wo) over a padded input."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def _col2im(
    dpatches: np.ndarray, xshape: tuple[int, ...], stride: int, padding: int
) -> np.ndarray:
    n, c, h, w = xshape
    _, _, kh, kw, ho, wo = dpatches.shape
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dpatches.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += dpatches[
                :, :, u, v
            ]
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(dxp)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding.

    ``groups == in_channels`` gives a depthwise convolution; 1x1 kernels with
    ``groups == 1`` reduce to a per-pixel channel projection.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    if x.dtype != w.dtype:
        raise ConfigError(f"dtype mismatch: {x.dtype.name} vs {w.dtype.name}")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(
            f"channel counts in={cin}, out={cout} are not divisible by groups={groups}"
        )
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight shape {w.shape} inconsistent with in_channels={cin}, groups={groups}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    patches = _patch_view(xp, kh, kw, stride)

    if groups == 1:
        cols = np.ascontiguousarray(patches).reshape(n, cin * kh * kw, ho * wo)
        wmat = w.data.reshape(cout, cin * kh * kw)
        y = (wmat @ cols).reshape(n, cout, ho, wo)
    else:
        pg = np.ascontiguousarray(patches).reshape(
            n, groups, cin // groups, kh, kw, ho, wo
        )
        wg = w.data.reshape(groups, cout // groups, cin // groups, kh, kw)
        y = np.einsum("ngcuvij,gocuv->ngoij", pg, wg, optimize=True).reshape(
            n, cout, ho, wo
        )
    if bias is not None:
        y = y + bias.data.reshape(1, cout, 1, 1)
    out = Tensor(y)

    if tape_active():
        inputs = [x, w] + ([bias] if bias is not None else [])

        def vjp(g):
            if groups == 1:
                gmat = g.reshape(n, cout, ho * wo)
                dw = np.einsum("nol,nkl->ok", gmat, cols).reshape(w.shape)
                dcols = np.einsum("ok,nol->nkl", wmat, gmat)
                dpatches = dcols.reshape(n, cin, kh, kw, ho, wo)
            else:
                gg = g.reshape(n, groups, cout // groups, ho, wo)
                dw = np.einsum("ngcuvij,ngoij->gocuv", pg, gg).reshape(w.shape)
                dpatches = np.einsum("gocuv,ngoij->ngcuvij", wg, gg, optimize=True).reshape(
                    n, cin, kh, kw, ho, wo
                )
            dx = _col2im(dpatches, x.shape, stride, padding)
            parts = [dx, dw]
            if bias is not None:
                parts.append(g.sum(axis=(0, 2, 3)))
            return parts

        record(inputs, out, vjp)
    return out


# --------------------------------------------------------------------------
# pooling and resampling
# --------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    if tape_active():
        scale = 1.0 / (h * w)
        record([x], out, lambda g: [np.broadcast_to(g * scale, x.shape).copy()])
    return out


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean over one axis, keeping it as a singleton."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"mean axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    out = Tensor(x.data.mean(axis=axis, keepdims=True))
    if tape_active():
        scale = 1.0 / x.shape[axis]
        record([x], out, lambda g: [np.broadcast_to(g * scale, x.shape).copy()])
    return out


_INTERP_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _interp_matrix(n_in: int, n_out: int, dtype: np.dtype) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix, half-pixel mapping."""
    key = (n_in, n_out, np.dtype(dtype).name)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    m = m.astype(dtype)
    _INTERP_CACHE[key] = m
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resampling with half-pixel coordinate mapping.

    Preserves constants exactly and never leaves the input value range.
    """
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize expects N x C x H x W, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size {out_h}x{out_w} must be at least 1x1")
    n, c, h, w = x.shape
    ah = _interp_matrix(h, out_h, x.dtype)
    aw = _interp_matrix(w, out_w, x.dtype)
    out = Tensor(ah @ x.data @ aw.T)
    if tape_active():
        record([x], out, lambda g: [ah.T @ g @ aw])
    return out


# --------------------------------------------------------------------------
# channel rearrangement
# --------------------------------------------------------------------------


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: output j*g+i reads input i*(C/g)+j."""
    if x.ndim != 4:
        raise ShapeError(f"channel_shuffle expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    y = x.data.reshape(n, groups, c // groups, h, w).swapaxes(1, 2).reshape(n, c, h, w)
    out = Tensor(y)
    if tape_active():
        inv = c // groups

        def vjp(g):
            return [g.reshape(n, inv, groups, h, w).swapaxes(1, 2).reshape(n, c, h, w)]

        record([x], out, vjp)
    return out


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (gradient zero-pads back)."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(
            f"slice [{start}:{stop}] invalid for axis {axis} of shape {x.shape}"
        )
    idx = tuple(slice(None) if ax != axis else slice(start, stop) for ax in range(x.ndim))
    out = Tensor(x.data[idx].copy())
    if tape_active():

        def vjp(g):
            dx = np.zeros_like(x.data)
            dx[idx] = g
            return [dx]

        record([x], out, vjp)
    return out


def channel_split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split N x C x H x W into two halves along the channel axis."""
    if x.ndim != 4:
        raise ShapeError(f"channel_split expects N x C x H x W, got {x.shape}")
    c = x.shape[1]
    if c % 2:
        raise ConfigError(f"channel_split requires an even channel count, got {c}")
    return slice_axis(x, 1, 0, c // 2), slice_axis(x, 1, c // 2, c)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of an empty sequence")
    first = ts[0]
    for t in ts[1:]:
        if t.ndim != first.ndim:
            raise ShapeError(f"concat rank mismatch: {first.shape} vs {t.shape}")
        if t.dtype != first.dtype:
            raise ConfigError(f"dtype mismatch: {first.dtype.name} vs {t.dtype.name}")
    axis = axis % first.ndim
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    if tape_active():
        sizes = [t.shape[axis] for t in ts]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            parts = []
            for t, o0, o1 in zip(ts, offsets[:-1], offsets[1:]):
                idx = tuple(
                    slice(None) if ax != axis else slice(int(o0), int(o1))
                    for ax in range(t.ndim)
                )
                parts.append(g[idx])
            return parts

        record(ts, out, vjp)
    return out


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}: {e}") from None
    out = Tensor(y.copy())
    if tape_active():
        record([x], out, lambda g: [g.reshape(x.shape)])
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {x.ndim}")
    out = Tensor(np.transpose(x.data, axes).copy())
    if tape_active():
        inv = tuple(int(i) for i in np.argsort(axes))
        record([x], out, lambda g: [np.transpose(g, inv).copy()])
    return out
