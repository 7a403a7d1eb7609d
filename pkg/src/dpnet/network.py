"""Whole-network assembly: configuration, build, forward, serialization.

The backbone runs a shared trunk at 1/8 resolution, then two parallel
paths: a high-resolution path that stays at 1/8 and a low-resolution
path that steps down to 1/16 and 1/32.  After each low-path stage the
two paths exchange features through a bi-directional fusion unit.  The
pyramid unifies channels with 1x1 convs, then chains cross-attention
top-down and bottom-up, each followed by a bottleneck.  Each head level
is two separable conv blocks and parallel 1x1 classification and box
projections.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import ops
from .attention import BOTTOM_UP, TOP_DOWN, LcamParams, lcam_forward
from .blocks import (
    AsbParams,
    BifmParams,
    BottleneckParams,
    ConvBlockParams,
    ConvBn,
    PlainConv,
    StemParams,
    asb_forward,
    asb_params,
    bifm_forward,
    bifm_params,
    bottleneck_forward,
    bottleneck_params,
    conv_bn,
    convblock_forward,
    convblock_params,
    plain_conv1x1,
    stem_forward,
    stem_params,
)
from .rng import Lcg64
from .tensor import ConfigError, FormatError, ShapeError, Tensor

_WEIGHTS_MAGIC = b"DPNW"
_WEIGHTS_VERSION = 1


@dataclass
class DpnetConfig:
    """Architecture hyperparameters.

    Stage depths count whole blocks including the stride-2 entry block of
    each downsampling stage.  They are exposed so the parameter/compute
    budget can be tuned without code changes; the defaults land the
    320-input model near 2.3M parameters and 1.1G multiply-accumulates.
    """

    input_size: int = 320
    stem_channels: tuple[int, int] = (32, 64)
    shared_width: int = 128
    shared_blocks: int = 4
    hrp_blocks: int = 16
    lrp_stage1_width: int = 256
    lrp_stage1_blocks: int = 14
    lrp_stage2_width: int = 512
    lrp_stage2_blocks: int = 4
    fpn_channels: int = 128
    reduction: int = 8
    head_width: int = 128
    head_blocks: int = 2
    num_classes: int = 80

    def validate(self) -> None:
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input_size {self.input_size} must be a positive multiple of 32")
        if self.reduction < 1:
            raise ConfigError(f"reduction {self.reduction} must be positive")
        if len(self.stem_channels) != 2:
            raise ConfigError("stem_channels must list exactly two widths")
        widths = {
            "stem_channels[1]": self.stem_channels[1],
            "shared_width": self.shared_width,
            "lrp_stage1_width": self.lrp_stage1_width,
            "lrp_stage2_width": self.lrp_stage2_width,
            "fpn_channels": self.fpn_channels,
        }
        for name, w in widths.items():
            if w % 2:
                raise ConfigError(f"{name}={w} must be even")
            if w % self.reduction:
                raise ConfigError(f"{name}={w} is not divisible by reduction {self.reduction}")
            if (w // 2) % self.reduction:
                raise ConfigError(
                    f"{name}={w}: branch width {w // 2} is not divisible by "
                    f"reduction {self.reduction}"
                )
        depths = {
            "shared_blocks": self.shared_blocks,
            "hrp_blocks": self.hrp_blocks,
            "lrp_stage1_blocks": self.lrp_stage1_blocks,
            "lrp_stage2_blocks": self.lrp_stage2_blocks,
            "head_blocks": self.head_blocks,
        }
        for name, d in depths.items():
            if d < 1:
                raise ConfigError(f"{name}={d} must be at least 1")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes {self.num_classes} must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "DpnetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "stem_channels" in data:
            data = dict(data, stem_channels=tuple(data["stem_channels"]))
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "DpnetConfig":
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise FormatError(f"config file is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise FormatError("config file must contain a JSON object")
        return cls.from_dict(data)

    def to_json(self, path) -> None:
        data = asdict(self)
        data["stem_channels"] = list(self.stem_channels)
        with open(path, "w") as f:
            json.dump(data, f, indent=2)
            f.write("\n")


@dataclass
class FpnLink:
    attn: LcamParams
    bneck: BottleneckParams

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.attn.named_tensors(f"{prefix}.attn")
        yield from self.bneck.named_tensors(f"{prefix}.bneck")


@dataclass
class HeadParams:
    blocks: list[ConvBlockParams]
    cls: PlainConv
    reg: PlainConv

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, b in enumerate(self.blocks):
            yield from b.named_tensors(f"{prefix}.block{i}")
        yield from self.cls.named_tensors(f"{prefix}.cls")
        yield from self.reg.named_tensors(f"{prefix}.reg")


@dataclass
class Model:
    config: DpnetConfig
    stem: StemParams
    shared: list[AsbParams]
    hrp: list[AsbParams]
    lrp1: list[AsbParams]
    lrp2: list[AsbParams]
    bifm1: BifmParams
    bifm2: BifmParams
    laterals: list[ConvBn]
    td_links: list[FpnLink] = field(default_factory=list)  # [td for level 2, td for level 1]
    bu_links: list[FpnLink] = field(default_factory=list)  # [bu for level 2, bu for level 3]
    heads: list[HeadParams] = field(default_factory=list)

    def weights(self) -> Iterator[tuple[str, Tensor]]:
        """All parameters as (hierarchical name, tensor), in build order."""
        yield from self.stem.named_tensors("stem")
        for i, b in enumerate(self.shared):
            yield from b.named_tensors(f"shared.{i}")
        for i, b in enumerate(self.hrp):
            yield from b.named_tensors(f"hrp.{i}")
        for i, b in enumerate(self.lrp1):
            yield from b.named_tensors(f"lrp1.{i}")
        for i, b in enumerate(self.lrp2):
            yield from b.named_tensors(f"lrp2.{i}")
        yield from self.bifm1.named_tensors("bifm1")
        yield from self.bifm2.named_tensors("bifm2")
        for i, lat in enumerate(self.laterals):
            yield from lat.named_tensors(f"fpn.lateral{i + 1}")
        yield from self.td_links[0].named_tensors("fpn.td2")
        yield from self.td_links[1].named_tensors("fpn.td1")
        yield from self.bu_links[0].named_tensors("fpn.bu2")
        yield from self.bu_links[1].named_tensors("fpn.bu3")
        for i, h in enumerate(self.heads):
            yield from h.named_tensors(f"head.{i}")

    def num_params(self) -> int:
        return sum(t.size for _, t in self.weights())


def build(config: DpnetConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Construct a model with all parameters drawn deterministically from ``seed``."""
    config.validate()
    rng = Lcg64(seed)
    r = config.reduction
    c_stem0, c_stem1 = config.stem_channels
    c_shared = config.shared_width
    c1w, c2w, c3w = config.shared_width, config.lrp_stage1_width, config.lrp_stage2_width

    stem = stem_params(c_stem0, c_stem1, r, rng, dtype=dtype)

    def stage(cin: int, cout: int, depth: int) -> list[AsbParams]:
        blocks = [asb_params(cin, cout, 2, r, rng, dtype=dtype)]
        blocks += [asb_params(cout, cout, 1, r, rng, dtype=dtype) for _ in range(depth - 1)]
        return blocks

    shared = stage(c_stem1, c_shared, config.shared_blocks)
    hrp = [asb_params(c1w, c1w, 1, r, rng, dtype=dtype) for _ in range(config.hrp_blocks)]
    lrp1 = stage(c_shared, c2w, config.lrp_stage1_blocks)
    lrp2 = stage(c2w, c3w, config.lrp_stage2_blocks)
    bifm1 = bifm_params(c1w, c2w, 2, rng, dtype=dtype)
    bifm2 = bifm_params(c1w, c3w, 4, rng, dtype=dtype)

    cf = config.fpn_channels
    laterals = [conv_bn(cw, cf, 1, rng, act=False, dtype=dtype) for cw in (c1w, c2w, c3w)]
    td_links = [
        FpnLink(
            LcamParams.init(cf, r, rng, TOP_DOWN, dtype=dtype),
            bottleneck_params(cf, rng, dtype=dtype),
        )
        for _ in range(2)
    ]
    bu_links = [
        FpnLink(
            LcamParams.init(cf, r, rng, BOTTOM_UP, dtype=dtype),
            bottleneck_params(cf, rng, dtype=dtype),
        )
        for _ in range(2)
    ]

    heads = []
    for _ in range(3):
        tower = []
        cin = cf
        for _ in range(config.head_blocks):
            tower.append(convblock_params(cin, config.head_width, rng, dtype=dtype))
            cin = config.head_width
        heads.append(
            HeadParams(
                blocks=tower,
                cls=plain_conv1x1(cin, config.num_classes, rng, dtype=dtype),
                reg=plain_conv1x1(cin, 4, rng, dtype=dtype),
            )
        )

    return Model(
        config=config,
        stem=stem,
        shared=shared,
        hrp=hrp,
        lrp1=lrp1,
        lrp2=lrp2,
        bifm1=bifm1,
        bifm2=bifm2,
        laterals=laterals,
        td_links=td_links,
        bu_links=bu_links,
        heads=heads,
    )


def forward(model: Model, image: Tensor) -> dict[str, Tensor]:
    """Run the full network; returns backbone, pyramid, and head tensors.

    Accepts any square input whose side is a multiple of 32; feature
    resolutions scale accordingly (1/8, 1/16, 1/32 of the input).
    """
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected an N x 3 x S x S image, got {image.shape}")
    s = image.shape[2]
    if image.shape[3] != s:
        raise ShapeError(f"expected a square image, got {image.shape}")
    if s % 32:
        raise ShapeError(f"input side {s} must be a multiple of 32")

    x = stem_forward(image, model.stem)
    for b in model.shared:
        x = asb_forward(x, b)

    pre = len(model.hrp) // 2
    high = x
    for b in model.hrp[:pre]:
        high = asb_forward(high, b)
    low = x
    for b in model.lrp1:
        low = asb_forward(low, b)
    high, low = bifm_forward(high, low, model.bifm1)
    c2 = low
    for b in model.hrp[pre:]:
        high = asb_forward(high, b)
    low2 = low
    for b in model.lrp2:
        low2 = asb_forward(low2, b)
    high, low2 = bifm_forward(high, low2, model.bifm2)
    c1, c3 = high, low2

    m1 = model.laterals[0](c1)
    m2 = model.laterals[1](c2)
    m3 = model.laterals[2](c3)

    t3 = m3
    t2 = bottleneck_forward(lcam_forward(m2, t3, model.td_links[0].attn), model.td_links[0].bneck)
    t1 = bottleneck_forward(lcam_forward(m1, t2, model.td_links[1].attn), model.td_links[1].bneck)
    f1 = t1
    f2 = bottleneck_forward(lcam_forward(f1, t2, model.bu_links[0].attn), model.bu_links[0].bneck)
    f3 = bottleneck_forward(lcam_forward(f2, t3, model.bu_links[1].attn), model.bu_links[1].bneck)

    outputs = {
        "C1": c1,
        "C2": c2,
        "C3": c3,
        "M1": m1,
        "M2": m2,
        "M3": m3,
        "F1": f1,
        "F2": f2,
        "F3": f3,
    }
    for i, feat in enumerate((f1, f2, f3), start=1):
        t = feat
        for cb in model.heads[i - 1].blocks:
            t = convblock_forward(t, cb)
        outputs[f"cls{i}"] = model.heads[i - 1].cls(t)
        outputs[f"reg{i}"] = model.heads[i - 1].reg(t)
    return outputs


# --------------------------------------------------------------------------
# weight serialization
#
# little-endian: magic "DPNW", u32 version=1, u32 tensor count; per tensor:
# u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 ndim,
# u32 dims[ndim], raw row-major data.
# --------------------------------------------------------------------------

_DT_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DT_FROM_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_weights(model: Model, path) -> None:
    entries = list(model.weights())
    names = [n for n, _ in entries]
    if len(names) != len(set(names)):
        raise ConfigError("duplicate parameter names in model")
    with open(path, "wb") as f:
        f.write(_WEIGHTS_MAGIC)
        f.write(struct.pack("<II", _WEIGHTS_VERSION, len(entries)))
        for name, t in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", _DT_CODES[t.dtype], t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t.data.astype(t.dtype.newbyteorder("<"))).tobytes())


def load_weights(model: Model, path) -> None:
    """Replace all model parameters from a weight file.

    The file must contain exactly the model's parameter set; any missing,
    extra, or shape-mismatched tensor aborts the load before any parameter
    is touched.
    """
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12 or buf[:4] != _WEIGHTS_MAGIC:
        raise FormatError("weight file: bad or missing magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _WEIGHTS_VERSION:
        raise FormatError(f"weight file: unsupported version {version}")
    off = 12
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            if len(buf) < off + nlen:
                raise struct.error("name truncated")
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            if code not in _DT_FROM_CODE:
                raise FormatError(f"weight file: unknown dtype code {code} for {name!r}")
            dtype = _DT_FROM_CODE[code]
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            nbytes = n * dtype.itemsize
            if len(buf) < off + nbytes:
                raise struct.error("payload truncated")
            arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(dims)
            off += nbytes
        except struct.error:
            raise FormatError("weight file truncated") from None
        if name in loaded:
            raise FormatError(f"weight file: duplicate tensor {name!r}")
        loaded[name] = arr.astype(dtype.newbyteorder("="))
    if off != len(buf):
        raise FormatError("weight file: trailing bytes after last tensor")

    entries = list(model.weights())
    model_names = {n for n, _ in entries}
    missing = model_names - set(loaded)
    extra = set(loaded) - model_names
    if missing:
        raise FormatError(f"weight file missing tensor {sorted(missing)[0]!r}")
    if extra:
        raise FormatError(f"weight file has unexpected tensor {sorted(extra)[0]!r}")
    for name, t in entries:
        arr = loaded[name]
        if tuple(arr.shape) != t.shape:
            raise FormatError(
                f"weight {name!r}: file shape {tuple(arr.shape)} != model shape {t.shape}"
            )
        if arr.dtype != t.dtype:
            raise FormatError(
                f"weight {name!r}: file dtype {arr.dtype.name} != model dtype {t.dtype.name}"
            )
    # Validation complete; now commit.
    for name, t in entries:
        t.data = np.ascontiguousarray(loaded[name])
