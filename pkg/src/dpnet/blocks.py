"""Composite building blocks: shuffle blocks, path fusion, head units.

Batch normalization here runs in frozen-inference form with statistics
folded to mean 0 / variance 1 at construction, so a block's learned
state is exactly its conv weights plus one affine pair per normalized
layer.  Convolutions followed by a norm carry no bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .attention import LsamParams, lsam_forward
from .rng import Lcg64
from .tensor import ConfigError, Tensor


@dataclass
class ConvBn:
    """Convolution + frozen batchnorm, optionally relu-activated."""

    weight: Tensor
    gamma: Tensor
    beta: Tensor
    stride: int = 1
    padding: int = 0
    groups: int = 1
    act: bool = True

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(
            x, self.weight, stride=self.stride, padding=self.padding, groups=self.groups
        )
        c = self.weight.shape[0]
        dtype = self.weight.dtype
        y = ops.batchnorm_inference(
            y, ops.zeros(c, dtype), ops.ones(c, dtype), self.gamma, self.beta
        )
        return ops.relu(y) if self.act else y

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bn_gamma", self.gamma
        yield f"{prefix}.bn_beta", self.beta


def conv_bn(
    cin: int,
    cout: int,
    kernel: int,
    rng: Lcg64,
    stride: int = 1,
    groups: int = 1,
    act: bool = True,
    dtype=np.float32,
) -> ConvBn:
    if cin % groups or cout % groups:
        raise ConfigError(
            f"channel counts in={cin}, out={cout} are not divisible by groups={groups}"
        )
    fan_in = (cin // groups) * kernel * kernel
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform((cout, cin // groups, kernel, kernel), -bound, bound).astype(dtype))
    return ConvBn(
        weight=w,
        gamma=ops.ones(cout, dtype),
        beta=ops.zeros(cout, dtype),
        stride=stride,
        padding=kernel // 2,
        groups=groups,
        act=act,
    )


@dataclass
class PlainConv:
    """Bare 1x1 convolution with bias (head output projections)."""

    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def plain_conv1x1(cin: int, cout: int, rng: Lcg64, dtype=np.float32) -> PlainConv:
    bound = 1.0 / np.sqrt(cin)
    w = Tensor(rng.uniform((cout, cin, 1, 1), -bound, bound).astype(dtype))
    return PlainConv(weight=w, bias=ops.zeros(cout, dtype))


# --------------------------------------------------------------------------
# attention shuffle block
# --------------------------------------------------------------------------


@dataclass
class AsbParams:
    """Shuffle block with an attention-tailed residual branch.

    Stride 1 splits the input in half: one half passes through unchanged,
    the other through pointwise -> depthwise x2 -> pointwise -> attention.
    Stride 2 feeds the whole input to both branches (the identity branch
    gains a strided depthwise + pointwise pair, the residual branch strides
    its second depthwise conv) and concatenation sets the output width.
    """

    stride: int
    res_pw_in: ConvBn
    res_dw1: ConvBn
    res_dw2: ConvBn
    res_pw_out: ConvBn
    attn: LsamParams
    id_dw: ConvBn | None = None
    id_pw: ConvBn | None = None

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.res_pw_in.named_tensors(f"{prefix}.res_pw_in")
        yield from self.res_dw1.named_tensors(f"{prefix}.res_dw1")
        yield from self.res_dw2.named_tensors(f"{prefix}.res_dw2")
        yield from self.res_pw_out.named_tensors(f"{prefix}.res_pw_out")
        yield from self.attn.named_tensors(f"{prefix}.attn")
        if self.id_dw is not None:
            yield from self.id_dw.named_tensors(f"{prefix}.id_dw")
        if self.id_pw is not None:
            yield from self.id_pw.named_tensors(f"{prefix}.id_pw")


def asb_params(
    cin: int,
    cout: int,
    stride: int,
    reduction: int,
    rng: Lcg64,
    dtype=np.float32,
) -> AsbParams:
    if stride not in (1, 2):
        raise ConfigError(f"block stride must be 1 or 2, got {stride}")
    if stride == 1:
        if cin != cout:
            raise ConfigError(f"stride-1 block requires in == out, got {cin} -> {cout}")
        if cin % 2:
            raise ConfigError(f"stride-1 block requires even channels, got {cin}")
        branch = cin // 2
        res_in = branch
    else:
        if cout % 2:
            raise ConfigError(f"stride-2 block requires even output channels, got {cout}")
        branch = cout // 2
        res_in = cin
    return AsbParams(
        stride=stride,
        res_pw_in=conv_bn(res_in, branch, 1, rng, dtype=dtype),
        res_dw1=conv_bn(branch, branch, 3, rng, groups=branch, dtype=dtype),
        res_dw2=conv_bn(branch, branch, 3, rng, stride=stride, groups=branch, dtype=dtype),
        res_pw_out=conv_bn(branch, branch, 1, rng, act=False, dtype=dtype),
        attn=LsamParams.init(branch, reduction, rng, dtype=dtype),
        id_dw=(
            conv_bn(cin, cin, 3, rng, stride=2, groups=cin, dtype=dtype)
            if stride == 2
            else None
        ),
        id_pw=(
            conv_bn(cin, branch, 1, rng, act=False, dtype=dtype) if stride == 2 else None
        ),
    )


def asb_forward(x: Tensor, p: AsbParams) -> Tensor:
    if p.stride == 1:
        keep, res = ops.channel_split(x)
    else:
        keep = p.id_pw(p.id_dw(x))
        res = x
    res = p.res_pw_in(res)
    res = p.res_dw1(res)
    res = p.res_dw2(res)
    res = p.res_pw_out(res)
    res = lsam_forward(res, p.attn)
    return ops.channel_shuffle(ops.concat([keep, res], axis=1), 2)


# --------------------------------------------------------------------------
# bi-directional path fusion
# --------------------------------------------------------------------------


@dataclass
class BifmParams:
    """Cross-resolution exchange between the two backbone paths.

    The high-to-low lane downsamples with one strided depthwise conv per
    factor-2 step and matches channels with a pointwise conv; the
    low-to-high lane matches channels pointwise and upsamples bilinearly.
    Both lanes fuse by addition.
    """

    down_dws: list[ConvBn]
    down_pw: ConvBn
    up_pw: ConvBn

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, dw in enumerate(self.down_dws):
            yield from dw.named_tensors(f"{prefix}.down_dw{i}")
        yield from self.down_pw.named_tensors(f"{prefix}.down_pw")
        yield from self.up_pw.named_tensors(f"{prefix}.up_pw")


def bifm_params(
    c_high: int, c_low: int, ratio: int, rng: Lcg64, dtype=np.float32
) -> BifmParams:
    if ratio not in (2, 4):
        raise ConfigError(f"fusion resolution ratio must be 2 or 4, got {ratio}")
    steps = 1 if ratio == 2 else 2
    return BifmParams(
        down_dws=[
            conv_bn(c_high, c_high, 3, rng, stride=2, groups=c_high, act=False, dtype=dtype)
            for _ in range(steps)
        ],
        down_pw=conv_bn(c_high, c_low, 1, rng, act=False, dtype=dtype),
        up_pw=conv_bn(c_low, c_high, 1, rng, act=False, dtype=dtype),
    )


def bifm_forward(x_high: Tensor, x_low: Tensor, p: BifmParams) -> tuple[Tensor, Tensor]:
    hh, hw = x_high.shape[2], x_high.shape[3]
    lh, lw = x_low.shape[2], x_low.shape[3]
    if lh == 0 or hh % lh or hw % lw or hh // lh != hw // lw:
        raise ConfigError(
            f"spatial sizes {hh}x{hw} and {lh}x{lw} are not an integer pyramid ratio"
        )
    ratio = hh // lh
    if ratio != 2 ** len(p.down_dws):
        raise ConfigError(
            f"resolution ratio {ratio} does not match configured lane depth "
            f"{len(p.down_dws)}"
        )
    down = x_high
    for dw in p.down_dws:
        down = dw(down)
    down = p.down_pw(down)
    up = ops.bilinear_resize(p.up_pw(x_low), hh, hw)
    return ops.add(x_high, up), ops.add(x_low, down)


# --------------------------------------------------------------------------
# plain separable units
# --------------------------------------------------------------------------


@dataclass
class ConvBlockParams:
    dw: ConvBn
    pw: ConvBn

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.dw.named_tensors(f"{prefix}.dw")
        yield from self.pw.named_tensors(f"{prefix}.pw")


def convblock_params(cin: int, cout: int, rng: Lcg64, dtype=np.float32) -> ConvBlockParams:
    return ConvBlockParams(
        dw=conv_bn(cin, cin, 3, rng, groups=cin, dtype=dtype),
        pw=conv_bn(cin, cout, 1, rng, dtype=dtype),
    )


def convblock_forward(x: Tensor, p: ConvBlockParams) -> Tensor:
    return p.pw(p.dw(x))


@dataclass
class BottleneckParams:
    reduce_pw: ConvBn
    dw: ConvBn
    restore_pw: ConvBn

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.reduce_pw.named_tensors(f"{prefix}.reduce_pw")
        yield from self.dw.named_tensors(f"{prefix}.dw")
        yield from self.restore_pw.named_tensors(f"{prefix}.restore_pw")


def bottleneck_params(channels: int, rng: Lcg64, dtype=np.float32) -> BottleneckParams:
    if channels % 2:
        raise ConfigError(f"bottleneck requires even channels, got {channels}")
    mid = channels // 2
    return BottleneckParams(
        reduce_pw=conv_bn(channels, mid, 1, rng, dtype=dtype),
        dw=conv_bn(mid, mid, 3, rng, groups=mid, dtype=dtype),
        restore_pw=conv_bn(mid, channels, 1, rng, dtype=dtype),
    )


def bottleneck_forward(x: Tensor, p: BottleneckParams) -> Tensor:
    return p.restore_pw(p.dw(p.reduce_pw(x)))


@dataclass
class StemParams:
    """Two stride-2 stages: a standard 3x3 conv then a downsampling block."""

    conv: ConvBn
    down: AsbParams

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.conv.named_tensors(f"{prefix}.conv")
        yield from self.down.named_tensors(f"{prefix}.down")


def stem_params(
    c_first: int, c_out: int, reduction: int, rng: Lcg64, dtype=np.float32
) -> StemParams:
    return StemParams(
        conv=conv_bn(3, c_first, 3, rng, stride=2, dtype=dtype),
        down=asb_params(c_first, c_out, 2, reduction, rng, dtype=dtype),
    )


def stem_forward(x: Tensor, p: StemParams) -> Tensor:
    return asb_forward(p.conv(x), p.down)
