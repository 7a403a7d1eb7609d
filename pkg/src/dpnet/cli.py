"""Command-line frontend: summarize, forward, gradcheck, bench.

Exit codes: 0 success, 1 check failure (gradient check over tolerance),
2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, detect, ops
from .attention import (
    BOTTOM_UP,
    TOP_DOWN,
    LcamParams,
    LsamParams,
    lcam_forward,
    lsam_forward,
)
from .blocks import asb_forward, asb_params
from .detect import ciou_loss_tensor
from .gradcheck import grad_check
from .network import DpnetConfig, build, forward, load_weights
from .rng import Lcg64
from .tensor import ConfigError, FormatError, ShapeError, Tensor, save_tensor


def read_ppm(path) -> Tensor:
    """Read a binary (P6) PPM with maxval 255 into a 1 x 3 x H x W tensor in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()

    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(buf):
            ch = buf[pos : pos + 1]
            if ch == b"#":
                while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("image file: unexpected end of header")
        return buf[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise FormatError(f"image file: magic {magic!r} is not binary PPM (P6)")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError:
        raise FormatError("image file: non-numeric header field") from None
    if width < 1 or height < 1:
        raise FormatError(f"image file: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"image file: maxval {maxval} unsupported, expected 255")
    pos += 1  # exactly one whitespace byte between header and raster
    need = 3 * width * height
    raster = buf[pos : pos + need]
    if len(raster) != need:
        raise FormatError(
            f"image file: raster has {len(raster)} bytes, expected {need}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    chw = arr.transpose(2, 0, 1).astype(np.float32) / 255.0
    return Tensor(chw[np.newaxis])


def _load_config(path: str | None) -> DpnetConfig:
    if path is None:
        cfg = DpnetConfig()
        cfg.validate()
        return cfg
    return DpnetConfig.from_json(path)


def _random_image(size: int, seed: int) -> Tensor:
    rng = Lcg64(seed)
    return Tensor(rng.uniform((1, 3, size, size), 0.0, 1.0).astype(np.float32))


def cmd_summarize(args) -> int:
    cfg = _load_config(args.config)
    report = analysis.model_cost(cfg, args.input_size)
    if args.json:
        import json

        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.render())
    return 0


def cmd_forward(args) -> int:
    cfg = _load_config(args.config)
    model = build(cfg, seed=args.seed)
    if args.weights is not None:
        load_weights(model, args.weights)

    if args.input is not None:
        image = read_ppm(args.input)
        side = image.shape[2]
        if image.shape[2] != cfg.input_size or image.shape[3] != cfg.input_size:
            raise ShapeError(
                f"image is {image.shape[3]}x{side}, config expects "
                f"{cfg.input_size}x{cfg.input_size} (resize before passing it in)"
            )
    else:
        image = _random_image(cfg.input_size, args.seed)

    outputs = forward(model, image)

    dump_dir = Path(args.dump_dir)
    dump_dir.mkdir(parents=True, exist_ok=True)
    for name, t in outputs.items():
        save_tensor(t, dump_dir / f"{name}.dpnt")
    for name, t in outputs.items():
        dims = "x".join(str(d) for d in t.shape)
        print(f"{name}: {dims} {t.dtype.name}")

    if args.detect:
        levels = [(outputs[f"cls{i}"], outputs[f"reg{i}"]) for i in (1, 2, 3)]
        dets = detect.decode(
            levels,
            strides=(8, 16, 32),
            score_threshold=args.score_threshold,
            image_size=cfg.input_size,
        )
        dets = detect.nms(dets, iou_threshold=args.nms_threshold)
        path = dump_dir / "detections.jsonl"
        path.write_text(detect.detections_to_jsonl(dets))
        print(f"detections: {len(dets)} -> {path}")
    return 0


def _gradcheck_case(module: str, seed: int):
    """Toy double-precision input/function pair for one checkable module."""
    rng = Lcg64(seed)

    if module == "lsam":
        p = LsamParams.init(8, 8, rng, dtype=np.float64)
        x = Tensor(rng.uniform((1, 8, 4, 4), -1.0, 1.0))
        return lambda t: lsam_forward(t, p), x
    if module in ("lcam-td", "lcam-bu"):
        direction = TOP_DOWN if module == "lcam-td" else BOTTOM_UP
        p = LcamParams.init(8, 8, rng, direction, dtype=np.float64)
        high = Tensor(rng.uniform((1, 8, 4, 4), -1.0, 1.0))
        low = Tensor(rng.uniform((1, 8, 2, 2), -1.0, 1.0))
        if module == "lcam-td":
            return lambda t: lcam_forward(t, low, p), high
        return lambda t: lcam_forward(high, t, p), low
    if module == "asb":
        p = asb_params(8, 8, 1, 4, rng, dtype=np.float64)
        x = Tensor(rng.uniform((1, 8, 4, 4), -1.0, 1.0))
        return lambda t: asb_forward(t, p), x
    if module == "ciou":
        vals = rng.uniform(8)
        pred = Tensor(
            np.array(
                [
                    10.0 + 20.0 * vals[0],
                    10.0 + 20.0 * vals[1],
                    40.0 + 20.0 * vals[2],
                    40.0 + 20.0 * vals[3],
                ]
            )
        )
        gt = Tensor(
            np.array(
                [
                    12.0 + 20.0 * vals[4],
                    12.0 + 20.0 * vals[5],
                    45.0 + 20.0 * vals[6],
                    45.0 + 20.0 * vals[7],
                ]
            )
        )
        alpha = detect.ciou_alpha(pred, gt)
        return lambda t: ciou_loss_tensor(t, gt, alpha=alpha), pred
    raise ConfigError(f"unknown gradcheck module {module!r}")


def cmd_gradcheck(args) -> int:
    f, x = _gradcheck_case(args.module, args.seed)
    report = grad_check(f, x, eps=args.eps, tol=args.tol, cotangent_seed=args.seed)
    print(f"{args.module}: {report.summary()}")
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    model = build(cfg, seed=args.seed)
    image = _random_image(cfg.input_size, args.seed)
    times = []
    for _ in range(args.iters):
        t0 = time.perf_counter()
        forward(model, image)
        times.append(time.perf_counter() - t0)
    mean = sum(times) / len(times)
    macs = analysis.count_macs(cfg)
    print(
        f"forward @ {cfg.input_size}x{cfg.input_size}: "
        f"mean {mean * 1e3:.1f} ms, min {min(times) * 1e3:.1f} ms over {args.iters} runs"
    )
    print(f"throughput: {macs / mean / 1e9:.3f} G MACs/s ({macs / 1e9:.3f} G per pass)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpnet",
        description="Dual-path detection network: cost summaries, forward dumps, "
        "gradient checks, and timing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sum = sub.add_parser("summarize", help="print the per-layer cost table")
    p_sum.add_argument("--config", help="JSON config path (default: built-in)")
    p_sum.add_argument("--input-size", type=int, default=None)
    p_sum.add_argument("--json", action="store_true", help="emit the report as JSON")
    p_sum.set_defaults(func=cmd_summarize)

    p_fwd = sub.add_parser("forward", help="run one forward pass and dump tensors")
    p_fwd.add_argument("--config", help="JSON config path (default: built-in)")
    wsrc = p_fwd.add_mutually_exclusive_group()
    wsrc.add_argument("--weights", help="load weights from a weight file")
    wsrc.add_argument(
        "--random-weights",
        action="store_true",
        help="seeded random initialization (default)",
    )
    isrc = p_fwd.add_mutually_exclusive_group()
    isrc.add_argument("--input", help="binary PPM (P6) image at the config input size")
    isrc.add_argument(
        "--random-input", action="store_true", help="seeded random image (default)"
    )
    p_fwd.add_argument("--seed", type=int, default=0)
    p_fwd.add_argument("--dump-dir", required=True, help="directory for tensor dumps")
    p_fwd.add_argument("--detect", action="store_true", help="also decode detections")
    p_fwd.add_argument("--score-threshold", type=float, default=0.05)
    p_fwd.add_argument("--nms-threshold", type=float, default=0.6)
    p_fwd.set_defaults(func=cmd_forward)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument(
        "--module",
        required=True,
        choices=["lsam", "lcam-td", "lcam-bu", "asb", "ciou"],
    )
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--eps", type=float, default=1e-5)
    p_gc.add_argument("--tol", type=float, default=1e-5)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="time forward passes")
    p_bench.add_argument("--config", help="JSON config path (default: built-in)")
    p_bench.add_argument("--iters", type=int, default=10)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "iters", 1) < 1:
        parser.error("--iters must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, ShapeError, FormatError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
