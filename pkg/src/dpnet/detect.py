"""Box geometry, regression loss, head decoding, and suppression."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ConfigError, ShapeError, Tensor


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel corner coordinates (x2 >= x1, y2 >= y1)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ConfigError(
                f"degenerate box corners ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self, dtype=np.float64) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=dtype)


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for a zero-area union."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def ciou_loss_tensor(pred: Tensor, gt: Tensor, alpha: float | None = None) -> Tensor:
    """Complete-IoU loss as a differentiable graph over corner coordinates.

    Adds a normalized center-distance term and an aspect-ratio term to
    1 - IoU; the aspect trade-off weight is treated as a constant during
    differentiation.  By default it is recomputed from the current inputs
    and detached; pass ``alpha`` to pin it (finite-difference checks must
    probe the pinned form, otherwise they measure the weight's variation).
    Uses the quadrant-aware arctangent so degenerate predicted boxes stay
    finite.
    """
    if pred.shape != (4,) or gt.shape != (4,):
        raise ShapeError(f"expected corner 4-vectors, got {pred.shape} and {gt.shape}")
    px1, py1, px2, py2 = (ops.slice_axis(pred, 0, i, i + 1) for i in range(4))
    gx1, gy1, gx2, gy2 = (ops.slice_axis(gt, 0, i, i + 1) for i in range(4))

    pw, ph = px2 - px1, py2 - py1
    gw, gh = gx2 - gx1, gy2 - gy1

    iw = ops.maximum(ops.minimum(px2, gx2) - ops.maximum(px1, gx1), 0.0)
    ih = ops.maximum(ops.minimum(py2, gy2) - ops.maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    overlap = inter / union

    enc_w = ops.maximum(px2, gx2) - ops.minimum(px1, gx1)
    enc_h = ops.maximum(py2, gy2) - ops.minimum(py1, gy1)
    diag2 = enc_w * enc_w + enc_h * enc_h

    dx = (px1 + px2) * 0.5 - (gx1 + gx2) * 0.5
    dy = (py1 + py2) * 0.5 - (gy1 + gy2) * 0.5
    center2 = dx * dx + dy * dy

    angle = ops.atan2(gw, gh) - ops.atan2(pw, ph)
    v = (4.0 / math.pi**2) * angle * angle
    if alpha is None:
        # Tiny epsilon keeps the 0/0 at exact overlap at zero.
        alpha_t = (v / ((1.0 - overlap) + v + 1e-12)).detach()
    else:
        alpha_t = Tensor(np.full((1,), alpha), dtype=pred.dtype)

    loss = (1.0 - overlap) + center2 / diag2 + alpha_t * v
    return ops.reshape(loss, ())


def ciou_alpha(pred: Tensor, gt: Tensor) -> float:
    """Aspect trade-off weight of the loss at the given boxes."""
    px1, py1, px2, py2 = (float(v) for v in pred.data)
    gx1, gy1, gx2, gy2 = (float(v) for v in gt.data)
    iw = max(min(px2, gx2) - max(px1, gx1), 0.0)
    ih = max(min(py2, gy2) - max(py1, gy1), 0.0)
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    overlap = inter / union
    v = (4.0 / math.pi**2) * (
        math.atan2(gx2 - gx1, gy2 - gy1) - math.atan2(px2 - px1, py2 - py1)
    ) ** 2
    return v / ((1.0 - overlap) + v + 1e-12)


def ciou_loss(pred: Box, gt: Box) -> float:
    """Complete-IoU loss between boxes; 0 iff the boxes are identical."""
    if gt.area <= 0.0:
        raise ConfigError("reference box must have positive area")
    out = ciou_loss_tensor(
        Tensor(pred.as_array(), dtype=np.float64), Tensor(gt.as_array(), dtype=np.float64)
    )
    return out.item()


def decode(
    head_outputs: list[tuple[Tensor, Tensor]],
    strides: tuple[int, ...] = (8, 16, 32),
    score_threshold: float = 0.05,
    image_size: int | None = None,
) -> list[Detection]:
    """Decode per-level (class logits, box offsets) into detections.

    Each cell (i, j) at stride s anchors a center ((j+0.5)s, (i+0.5)s); the
    four regression channels are left/top/right/bottom offsets in stride
    units, clamped non-negative, and boxes are clamped to the image.  The
    score is the highest per-class sigmoid; cells below the threshold drop.
    """
    if len(head_outputs) != len(strides):
        raise ShapeError(
            f"{len(head_outputs)} head levels but {len(strides)} strides"
        )
    dets: list[Detection] = []
    for (cls_t, reg_t), stride in zip(head_outputs, strides):
        cls = cls_t.data
        reg = reg_t.data
        if cls.ndim != 4 or reg.ndim != 4 or reg.shape[1] != 4:
            raise ShapeError(
                f"head level shapes {cls.shape} / {reg.shape} are not (N,K,H,W) / (N,4,H,W)"
            )
        if cls.shape[0] != 1 or reg.shape[0] != 1:
            raise ShapeError("decode expects a single image (N == 1)")
        h, w = cls.shape[2], cls.shape[3]
        bound = image_size if image_size is not None else max(h, w) * stride
        scores = 1.0 / (1.0 + np.exp(-cls[0].astype(np.float64)))
        best_cls = scores.argmax(axis=0)
        best_score = scores.max(axis=0)
        offsets = np.maximum(reg[0].astype(np.float64), 0.0) * stride
        for i in range(h):
            for j in range(w):
                score = float(best_score[i, j])
                if score < score_threshold:
                    continue
                cx = (j + 0.5) * stride
                cy = (i + 0.5) * stride
                x1 = min(max(cx - offsets[0, i, j], 0.0), bound)
                y1 = min(max(cy - offsets[1, i, j], 0.0), bound)
                x2 = min(max(cx + offsets[2, i, j], 0.0), bound)
                y2 = min(max(cy + offsets[3, i, j], 0.0), bound)
                dets.append(
                    Detection(Box(x1, y1, x2, y2), int(best_cls[i, j]), score)
                )
    return dets


def nms(dets: list[Detection], iou_threshold: float = 0.6) -> list[Detection]:
    """Greedy per-class suppression of overlapping lower-score detections.

    Candidates are visited by descending score, ties broken by lower class
    id and then earlier input position, so the result is deterministic.
    """
    order = sorted(
        range(len(dets)), key=lambda k: (-dets[k].score, dets[k].class_id, k)
    )
    kept: list[Detection] = []
    for k in order:
        cand = dets[k]
        if any(
            kept_det.class_id == cand.class_id
            and iou(kept_det.box, cand.box) > iou_threshold
            for kept_det in kept
        ):
            continue
        kept.append(cand)
    return kept


def detections_to_jsonl(dets: list[Detection]) -> str:
    lines = []
    for d in dets:
        lines.append(
            json.dumps(
                {
                    "box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
                    "class": d.class_id,
                    "score": d.score,
                }
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
