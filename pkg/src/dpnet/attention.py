"""Lightweight self- and cross-attention modules.

LSAM re-weights a single feature map with a spatial map (one weight per
position) and a channel map (one weight per channel, broadcast over
positions), both derived from pooled low-dimensional projections of the
input sequence.

LCAM extends the same construction to two resolutions: queries come from
one input (resampled to the other's grid), keys and the re-weighted
values come from the other input, and the result is residual.  The
top-down form re-weights the high-resolution input; the bottom-up form
re-weights the low-resolution input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import ops
from .rng import Lcg64
from .tensor import ConfigError, Tensor

TOP_DOWN = "top_down"
BOTTOM_UP = "bottom_up"


def _projection(rng: Lcg64, rows: int, cols: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(rows)
    return Tensor(rng.uniform((rows, cols), -bound, bound).astype(dtype))


def _conv_weight(rng: Lcg64, cout: int, cin: int, k: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(cin * k * k)
    return Tensor(rng.uniform((cout, cin, k, k), -bound, bound).astype(dtype))


@dataclass
class LsamParams:
    """Projections and normalization for single-input attention at width C."""

    spatial_query: Tensor  # (C, C/r)
    spatial_key: Tensor  # (C, C/r)
    channel_query: Tensor  # (C, 1)
    channel_key: Tensor  # (C, C/r)
    channel_out: Tensor  # (C/r, C)
    ln_gamma: Tensor  # (C,)
    ln_beta: Tensor  # (C,)
    reduction: int

    @property
    def channels(self) -> int:
        return self.spatial_query.shape[0]

    @classmethod
    def init(cls, channels: int, reduction: int, rng: Lcg64, dtype=np.float32) -> "LsamParams":
        _check_width(channels, reduction)
        cr = channels // reduction
        return cls(
            spatial_query=_projection(rng, channels, cr, dtype),
            spatial_key=_projection(rng, channels, cr, dtype),
            channel_query=_projection(rng, channels, 1, dtype),
            channel_key=_projection(rng, channels, cr, dtype),
            channel_out=_projection(rng, cr, channels, dtype),
            ln_gamma=ops.ones(channels, dtype),
            ln_beta=ops.zeros(channels, dtype),
            reduction=reduction,
        )

    @classmethod
    def zeros(cls, channels: int, reduction: int, dtype=np.float32) -> "LsamParams":
        _check_width(channels, reduction)
        cr = channels // reduction
        return cls(
            spatial_query=ops.zeros((channels, cr), dtype),
            spatial_key=ops.zeros((channels, cr), dtype),
            channel_query=ops.zeros((channels, 1), dtype),
            channel_key=ops.zeros((channels, cr), dtype),
            channel_out=ops.zeros((cr, channels), dtype),
            ln_gamma=ops.ones(channels, dtype),
            ln_beta=ops.zeros(channels, dtype),
            reduction=reduction,
        )

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.spatial_query", self.spatial_query
        yield f"{prefix}.spatial_key", self.spatial_key
        yield f"{prefix}.channel_query", self.channel_query
        yield f"{prefix}.channel_key", self.channel_key
        yield f"{prefix}.channel_out", self.channel_out
        yield f"{prefix}.ln_gamma", self.ln_gamma
        yield f"{prefix}.ln_beta", self.ln_beta

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors("p")]


def _check_width(channels: int, reduction: int) -> None:
    if reduction < 1 or channels % reduction:
        raise ConfigError(
            f"attention width {channels} is not divisible by reduction {reduction}"
        )


class LsamTrace(NamedTuple):
    """Intermediate attention quantities exposed for verification."""

    spatial_query: Tensor  # (N, 1, C/r), rows sum to 1
    spatial_map: Tensor  # (N, HW, 1), entries in (0, 1)
    channel_query: Tensor  # (N, HW, 1), columns sum to 1 over HW
    channel_map: Tensor  # (N, 1, C), entries in (0, 1)


def _to_sequence(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (n, c, h * w)), (0, 2, 1))


def _to_map(seq: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    n, c, h, w = shape
    return ops.reshape(ops.transpose(seq, (0, 2, 1)), (n, c, h, w))


def lsam_attention(x: Tensor, p: LsamParams) -> LsamTrace:
    """Compute the four attention quantities for an N x C x H x W input."""
    if x.ndim != 4:
        raise ConfigError(f"attention input must be N x C x H x W, got {x.shape}")
    _check_width(x.shape[1], p.reduction)
    if x.shape[1] != p.channels:
        raise ConfigError(
            f"input channels {x.shape[1]} do not match parameter width {p.channels}"
        )
    seq = _to_sequence(x)  # (N, HW, C)
    pooled = ops.mean_axis(ops.matmul(seq, p.spatial_query), axis=1)
    spatial_query = ops.softmax(pooled, axis=-1)  # (N, 1, C/r)
    spatial_keys = ops.matmul(seq, p.spatial_key)  # (N, HW, C/r)
    spatial_map = ops.sigmoid(
        ops.matmul(spatial_keys, ops.transpose(spatial_query, (0, 2, 1)))
    )  # (N, HW, 1)

    channel_query = ops.softmax(ops.matmul(seq, p.channel_query), axis=1)  # (N, HW, 1)
    channel_keys = ops.matmul(seq, p.channel_key)  # (N, HW, C/r)
    corr = ops.matmul(ops.transpose(channel_query, (0, 2, 1)), channel_keys)
    channel_map = ops.sigmoid(
        ops.layernorm(ops.matmul(corr, p.channel_out), p.ln_gamma, p.ln_beta)
    )  # (N, 1, C)
    return LsamTrace(spatial_query, spatial_map, channel_query, channel_map)


def lsam_forward(x: Tensor, p: LsamParams) -> Tensor:
    """Re-weight ``x`` with its spatial and channel attention maps."""
    trace = lsam_attention(x, p)
    seq = _to_sequence(x)
    out_seq = ops.add(ops.mul(trace.spatial_map, seq), ops.mul(trace.channel_map, seq))
    return _to_map(out_seq, x.shape)


@dataclass
class LcamParams:
    """Cross-resolution attention parameters at width C.

    The two 3x3 convolutions digest the resampled query input; keys and
    the output projection act on the re-weighted sequence.
    """

    spatial_query_conv_w: Tensor  # (C/r, C, 3, 3)
    spatial_query_conv_b: Tensor  # (C/r,)
    channel_query_conv_w: Tensor  # (1, C, 3, 3)
    channel_query_conv_b: Tensor  # (1,)
    spatial_key: Tensor  # (C, C/r)
    channel_key: Tensor  # (C, C/r)
    channel_out: Tensor  # (C/r, C)
    ln_gamma: Tensor  # (C,)
    ln_beta: Tensor  # (C,)
    reduction: int
    direction: str = TOP_DOWN

    @property
    def channels(self) -> int:
        return self.spatial_key.shape[0]

    @classmethod
    def init(
        cls,
        channels: int,
        reduction: int,
        rng: Lcg64,
        direction: str = TOP_DOWN,
        dtype=np.float32,
    ) -> "LcamParams":
        _check_width(channels, reduction)
        _check_direction(direction)
        cr = channels // reduction
        return cls(
            spatial_query_conv_w=_conv_weight(rng, cr, channels, 3, dtype),
            spatial_query_conv_b=ops.zeros(cr, dtype),
            channel_query_conv_w=_conv_weight(rng, 1, channels, 3, dtype),
            channel_query_conv_b=ops.zeros(1, dtype),
            spatial_key=_projection(rng, channels, cr, dtype),
            channel_key=_projection(rng, channels, cr, dtype),
            channel_out=_projection(rng, cr, channels, dtype),
            ln_gamma=ops.ones(channels, dtype),
            ln_beta=ops.zeros(channels, dtype),
            reduction=reduction,
            direction=direction,
        )

    @classmethod
    def zeros(
        cls, channels: int, reduction: int, direction: str = TOP_DOWN, dtype=np.float32
    ) -> "LcamParams":
        _check_width(channels, reduction)
        _check_direction(direction)
        cr = channels // reduction
        return cls(
            spatial_query_conv_w=ops.zeros((cr, channels, 3, 3), dtype),
            spatial_query_conv_b=ops.zeros(cr, dtype),
            channel_query_conv_w=ops.zeros((1, channels, 3, 3), dtype),
            channel_query_conv_b=ops.zeros(1, dtype),
            spatial_key=ops.zeros((channels, cr), dtype),
            channel_key=ops.zeros((channels, cr), dtype),
            channel_out=ops.zeros((cr, channels), dtype),
            ln_gamma=ops.ones(channels, dtype),
            ln_beta=ops.zeros(channels, dtype),
            reduction=reduction,
            direction=direction,
        )

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.spatial_query_conv_w", self.spatial_query_conv_w
        yield f"{prefix}.spatial_query_conv_b", self.spatial_query_conv_b
        yield f"{prefix}.channel_query_conv_w", self.channel_query_conv_w
        yield f"{prefix}.channel_query_conv_b", self.channel_query_conv_b
        yield f"{prefix}.spatial_key", self.spatial_key
        yield f"{prefix}.channel_key", self.channel_key
        yield f"{prefix}.channel_out", self.channel_out
        yield f"{prefix}.ln_gamma", self.ln_gamma
        yield f"{prefix}.ln_beta", self.ln_beta

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors("p")]


def _check_direction(direction: str) -> None:
    if direction not in (TOP_DOWN, BOTTOM_UP):
        raise ConfigError(f"unknown attention direction {direction!r}")


class LcamTrace(NamedTuple):
    spatial_query: Tensor  # (N, C/r, 1), sums to 1 over C/r
    spatial_map: Tensor  # (N, HW, 1)
    channel_query: Tensor  # (N, 1, HW), sums to 1 over positions
    channel_map: Tensor  # (N, 1, C)


def lcam_attention(value_map: Tensor, query_map: Tensor, p: LcamParams) -> LcamTrace:
    """Attention maps for a value map with a same-resolution query map."""
    n, c, h, w = value_map.shape
    seq = _to_sequence(value_map)  # (N, HW, C)

    qs = ops.conv2d(
        query_map, p.spatial_query_conv_w, p.spatial_query_conv_b, padding=1
    )  # (N, C/r, H, W)
    cr = qs.shape[1]
    pooled = ops.reshape(ops.global_avg_pool(qs), (n, 1, cr))
    spatial_query = ops.transpose(ops.softmax(pooled, axis=-1), (0, 2, 1))  # (N, C/r, 1)
    spatial_keys = ops.matmul(seq, p.spatial_key)  # (N, HW, C/r)
    spatial_map = ops.sigmoid(ops.matmul(spatial_keys, spatial_query))  # (N, HW, 1)

    qc = ops.conv2d(
        query_map, p.channel_query_conv_w, p.channel_query_conv_b, padding=1
    )  # (N, 1, H, W)
    channel_query = ops.softmax(ops.reshape(qc, (n, 1, h * w)), axis=-1)  # (N, 1, HW)
    channel_keys = ops.matmul(seq, p.channel_key)  # (N, HW, C/r)
    corr = ops.matmul(channel_query, channel_keys)  # (N, 1, C/r)
    channel_map = ops.sigmoid(
        ops.layernorm(ops.matmul(corr, p.channel_out), p.ln_gamma, p.ln_beta)
    )  # (N, 1, C)
    return LcamTrace(spatial_query, spatial_map, channel_query, channel_map)


def lcam_forward(f_high: Tensor, f_low: Tensor, p: LcamParams) -> Tensor:
    """Cross-resolution attention with a residual connection.

    Top-down: the low-resolution input is upsampled to provide queries and
    the high-resolution input is re-weighted (output keeps its size).
    Bottom-up: the high-resolution input is downsampled to provide queries
    and the low-resolution input is re-weighted.
    """
    if f_high.ndim != 4 or f_low.ndim != 4:
        raise ConfigError("attention inputs must be N x C x H x W")
    if f_high.shape[1] != f_low.shape[1]:
        raise ConfigError(
            f"channel mismatch between inputs: {f_high.shape[1]} vs {f_low.shape[1]}"
        )
    if f_high.shape[1] != p.channels:
        raise ConfigError(
            f"input channels {f_high.shape[1]} do not match parameter width {p.channels}"
        )
    if f_high.shape[2] < f_low.shape[2] or f_high.shape[3] < f_low.shape[3]:
        raise ConfigError(
            f"first input {f_high.shape} must not be smaller than second {f_low.shape}"
        )
    _check_width(f_high.shape[1], p.reduction)
    if p.direction == TOP_DOWN:
        value_map = f_high
        query_map = ops.bilinear_resize(f_low, f_high.shape[2], f_high.shape[3])
    else:
        value_map = f_low
        query_map = ops.bilinear_resize(f_high, f_low.shape[2], f_low.shape[3])

    trace = lcam_attention(value_map, query_map, p)
    seq = _to_sequence(value_map)
    weighted = ops.add(ops.mul(trace.spatial_map, seq), ops.mul(trace.channel_map, seq))
    out_seq = ops.add(weighted, seq)
    return _to_map(out_seq, value_map.shape)
