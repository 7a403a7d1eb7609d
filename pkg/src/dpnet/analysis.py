"""Closed-form parameter and multiply-accumulate accounting.

Counts are derived symbolically from the configuration, layer by layer,
never by building tensors, so they serve as an independent check of the
constructed model (and vice versa).

Conventions:
  - one MAC = one multiply-accumulate; a conv costs
    Hout*Wout*kh*kw*(Cin/groups)*Cout, a matmul M*K*N costs M*K*N.
    Attention score/correlation products are counted as matmuls.
  - "FLOPs" figures in the lightweight-detection literature follow this
    MAC convention; the rendered table also shows 2x MACs for the
    multiply-and-add-counted-separately convention.
  - softmax, sigmoid, batchnorm, layernorm, resampling, and fusion
    arithmetic are tallied separately in an ``aux`` column at one op per
    produced element (four per bilinear output); they are well under 1%
    of the total.

Row names match the model's parameter name prefixes (one row per
weight-holding unit), so reports can be cross-checked against the
weight store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .network import DpnetConfig
from .tensor import ConfigError


@dataclass
class Row:
    name: str
    params: int
    macs: int
    aux: int = 0


@dataclass
class CostReport:
    rows: list[Row] = field(default_factory=list)
    input_size: int = 0

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_aux(self) -> int:
        return sum(r.aux for r in self.rows)

    def render(self) -> str:
        name_w = max([len(r.name) for r in self.rows] + [len("TOTAL"), 5])
        header = f"{'layer':<{name_w}}  {'params':>12}  {'MACs':>14}  {'2xMACs':>14}  {'aux':>12}"
        sep = "-" * len(header)
        lines = [header, sep]
        for r in self.rows:
            lines.append(
                f"{r.name:<{name_w}}  {r.params:>12}  {r.macs:>14}  {2 * r.macs:>14}  {r.aux:>12}"
            )
        lines.append(sep)
        lines.append(
            f"{'TOTAL':<{name_w}}  {self.total_params:>12}  {self.total_macs:>14}  "
            f"{2 * self.total_macs:>14}  {self.total_aux:>12}"
        )
        lines.append(
            f"totals @ {self.input_size}x{self.input_size}: "
            f"{self.total_params / 1e6:.3f} M params, "
            f"{self.total_macs / 1e9:.3f} G MACs "
            f"({2 * self.total_macs / 1e9:.3f} G with multiplies and adds counted apart)"
        )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "rows": [
                {"name": r.name, "params": r.params, "macs": r.macs, "aux": r.aux}
                for r in self.rows
            ],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_aux": self.total_aux,
        }


# --------------------------------------------------------------------------
# per-layer closed forms
# --------------------------------------------------------------------------


def conv_params(cin: int, cout: int, kernel: int, groups: int = 1, bias: bool = False) -> int:
    return kernel * kernel * (cin // groups) * cout + (cout if bias else 0)


def conv_macs(
    cin: int, cout: int, kernel: int, out_h: int, out_w: int, groups: int = 1
) -> int:
    return out_h * out_w * kernel * kernel * (cin // groups) * cout


def matmul_macs(m: int, k: int, n: int) -> int:
    return m * k * n


def bn_params(channels: int) -> int:
    # Affine pair only; statistics are folded at build time.
    return 2 * channels


def ln_params(channels: int) -> int:
    return 2 * channels


def lsam_params(channels: int, reduction: int) -> int:
    cr = channels // reduction
    proj = 3 * channels * cr + channels + cr * channels
    return proj + ln_params(channels)


def lsam_mac_terms(channels: int, reduction: int, positions: int) -> dict[str, int]:
    """Named matmul terms of single-input attention at one feature size."""
    cr = channels // reduction
    return {
        "spatial_query_proj": matmul_macs(positions, channels, cr),
        "spatial_key_proj": matmul_macs(positions, channels, cr),
        "spatial_scores": matmul_macs(positions, cr, 1),
        "channel_query_proj": matmul_macs(positions, channels, 1),
        "channel_key_proj": matmul_macs(positions, channels, cr),
        "channel_corr": matmul_macs(1, positions, cr),
        "channel_out_proj": matmul_macs(1, cr, channels),
    }


def lsam_macs(channels: int, reduction: int, positions: int) -> int:
    return sum(lsam_mac_terms(channels, reduction, positions).values())


def lsam_aux(channels: int, reduction: int, positions: int) -> int:
    cr = channels // reduction
    pooled = positions * cr  # query pooling
    softmaxes = cr + positions
    norms = channels
    sigmoids = positions + channels
    reweight = 3 * positions * channels
    return pooled + softmaxes + norms + sigmoids + reweight


def lcam_params(channels: int, reduction: int) -> int:
    cr = channels // reduction
    convs = 9 * channels * cr + cr + 9 * channels + 1  # 3x3 query convs with bias
    projs = 2 * channels * cr + cr * channels
    return convs + projs + ln_params(channels)


def lcam_mac_terms(channels: int, reduction: int, positions: int) -> dict[str, int]:
    cr = channels // reduction
    return {
        "spatial_query_conv": conv_macs(channels, cr, 3, 1, positions),
        "channel_query_conv": conv_macs(channels, 1, 3, 1, positions),
        "spatial_key_proj": matmul_macs(positions, channels, cr),
        "channel_key_proj": matmul_macs(positions, channels, cr),
        "spatial_scores": matmul_macs(positions, cr, 1),
        "channel_corr": matmul_macs(1, positions, cr),
        "channel_out_proj": matmul_macs(1, cr, channels),
    }


def lcam_macs(channels: int, reduction: int, positions: int) -> int:
    return sum(lcam_mac_terms(channels, reduction, positions).values())


def lcam_aux(channels: int, reduction: int, positions: int) -> int:
    cr = channels // reduction
    resize = 4 * channels * positions  # query input resampled onto the value grid
    pooled = positions * cr
    softmaxes = cr + positions
    norms = channels
    sigmoids = positions + channels
    reweight = 4 * positions * channels  # two products, two additions (residual)
    return resize + pooled + softmaxes + norms + sigmoids + reweight


# --------------------------------------------------------------------------
# architecture walk
# --------------------------------------------------------------------------


class _Walk:
    def __init__(self):
        self.rows: list[Row] = []

    def convbn(
        self,
        name: str,
        cin: int,
        cout: int,
        kernel: int,
        out_h: int,
        out_w: int,
        groups: int = 1,
        act: bool = True,
    ) -> None:
        params = conv_params(cin, cout, kernel, groups) + bn_params(cout)
        macs = conv_macs(cin, cout, kernel, out_h, out_w, groups)
        aux = out_h * out_w * cout * (2 if act else 1)  # bn (+ relu)
        self.rows.append(Row(name, params, macs, aux))

    def plain_conv(self, name: str, cin: int, cout: int, out_h: int, out_w: int) -> None:
        self.rows.append(
            Row(name, conv_params(cin, cout, 1, bias=True), conv_macs(cin, cout, 1, out_h, out_w))
        )

    def lsam(self, name: str, channels: int, reduction: int, positions: int) -> None:
        self.rows.append(
            Row(
                name,
                lsam_params(channels, reduction),
                lsam_macs(channels, reduction, positions),
                lsam_aux(channels, reduction, positions),
            )
        )

    def lcam(self, name: str, channels: int, reduction: int, positions: int) -> None:
        self.rows.append(
            Row(
                name,
                lcam_params(channels, reduction),
                lcam_macs(channels, reduction, positions),
                lcam_aux(channels, reduction, positions),
            )
        )

    def asb(
        self,
        name: str,
        cin: int,
        cout: int,
        stride: int,
        reduction: int,
        h: int,
        w: int,
    ) -> tuple[int, int]:
        if stride == 1:
            branch, res_in, oh, ow = cin // 2, cin // 2, h, w
        else:
            branch, res_in, oh, ow = cout // 2, cin, h // 2, w // 2
        self.convbn(f"{name}.res_pw_in", res_in, branch, 1, h, w)
        self.convbn(f"{name}.res_dw1", branch, branch, 3, h, w, groups=branch)
        self.convbn(f"{name}.res_dw2", branch, branch, 3, oh, ow, groups=branch)
        self.convbn(f"{name}.res_pw_out", branch, branch, 1, oh, ow, act=False)
        self.lsam(f"{name}.attn", branch, reduction, oh * ow)
        if stride == 2:
            self.convbn(f"{name}.id_dw", cin, cin, 3, oh, ow, groups=cin)
            self.convbn(f"{name}.id_pw", cin, branch, 1, oh, ow, act=False)
        return oh, ow

    def bottleneck(self, name: str, channels: int, h: int, w: int) -> None:
        mid = channels // 2
        self.convbn(f"{name}.reduce_pw", channels, mid, 1, h, w)
        self.convbn(f"{name}.dw", mid, mid, 3, h, w, groups=mid)
        self.convbn(f"{name}.restore_pw", mid, channels, 1, h, w)

    def convblock(self, name: str, cin: int, cout: int, h: int, w: int) -> None:
        self.convbn(f"{name}.dw", cin, cin, 3, h, w, groups=cin)
        self.convbn(f"{name}.pw", cin, cout, 1, h, w)


def model_cost(config: DpnetConfig, input_size: int | None = None) -> CostReport:
    """Per-unit cost rows for the assembled network at one input size."""
    config.validate()
    s = config.input_size if input_size is None else input_size
    if s < 32 or s % 32:
        raise ConfigError(f"input size {s} must be a positive multiple of 32")
    r = config.reduction
    walk = _Walk()

    c_stem0, c_stem1 = config.stem_channels
    walk.convbn("stem.conv", 3, c_stem0, 3, s // 2, s // 2)
    walk.asb("stem.down", c_stem0, c_stem1, 2, r, s // 2, s // 2)

    p8, p16, p32 = s // 8, s // 16, s // 32
    c1w, c2w, c3w = config.shared_width, config.lrp_stage1_width, config.lrp_stage2_width

    def stage(prefix: str, cin: int, cout: int, depth: int, h: int) -> None:
        walk.asb(f"{prefix}.0", cin, cout, 2, r, h, h)
        for i in range(1, depth):
            walk.asb(f"{prefix}.{i}", cout, cout, 1, r, h // 2, h // 2)

    stage("shared", c_stem1, c1w, config.shared_blocks, s // 4)
    for i in range(config.hrp_blocks):
        walk.asb(f"hrp.{i}", c1w, c1w, 1, r, p8, p8)
    stage("lrp1", c1w, c2w, config.lrp_stage1_blocks, p8)
    stage("lrp2", c2w, c3w, config.lrp_stage2_blocks, p16)

    # path fusion: lanes run at the destination resolution
    walk.convbn("bifm1.down_dw0", c1w, c1w, 3, p16, p16, groups=c1w, act=False)
    walk.convbn("bifm1.down_pw", c1w, c2w, 1, p16, p16, act=False)
    walk.convbn("bifm1.up_pw", c2w, c1w, 1, p16, p16, act=False)
    walk.rows[-1].aux += 4 * c1w * p8 * p8 + p8 * p8 * c1w + p16 * p16 * c2w
    walk.convbn("bifm2.down_dw0", c1w, c1w, 3, p16, p16, groups=c1w, act=False)
    walk.convbn("bifm2.down_dw1", c1w, c1w, 3, p32, p32, groups=c1w, act=False)
    walk.convbn("bifm2.down_pw", c1w, c3w, 1, p32, p32, act=False)
    walk.convbn("bifm2.up_pw", c3w, c1w, 1, p32, p32, act=False)
    walk.rows[-1].aux += 4 * c1w * p8 * p8 + p8 * p8 * c1w + p32 * p32 * c3w

    cf = config.fpn_channels
    walk.convbn("fpn.lateral1", c1w, cf, 1, p8, p8, act=False)
    walk.convbn("fpn.lateral2", c2w, cf, 1, p16, p16, act=False)
    walk.convbn("fpn.lateral3", c3w, cf, 1, p32, p32, act=False)
    walk.lcam("fpn.td2.attn", cf, r, p16 * p16)
    walk.bottleneck("fpn.td2.bneck", cf, p16, p16)
    walk.lcam("fpn.td1.attn", cf, r, p8 * p8)
    walk.bottleneck("fpn.td1.bneck", cf, p8, p8)
    walk.lcam("fpn.bu2.attn", cf, r, p16 * p16)
    walk.bottleneck("fpn.bu2.bneck", cf, p16, p16)
    walk.lcam("fpn.bu3.attn", cf, r, p32 * p32)
    walk.bottleneck("fpn.bu3.bneck", cf, p32, p32)

    for level, p in enumerate((p8, p16, p32)):
        cin = cf
        for j in range(config.head_blocks):
            walk.convblock(f"head.{level}.block{j}", cin, config.head_width, p, p)
            cin = config.head_width
        walk.plain_conv(f"head.{level}.cls", cin, config.num_classes, p, p)
        walk.plain_conv(f"head.{level}.reg", cin, 4, p, p)

    return CostReport(rows=walk.rows, input_size=s)


def count_params(config: DpnetConfig) -> int:
    """Total learned scalar count of the configured model."""
    return model_cost(config).total_params


def count_macs(config: DpnetConfig, input_size: int | None = None) -> int:
    """Total multiply-accumulates of one forward pass at the given size."""
    return model_cost(config, input_size).total_macs


def render_summary(report: CostReport) -> str:
    return report.render()
