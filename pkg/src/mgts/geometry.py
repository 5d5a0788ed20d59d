"""Boxes, IoU, NMS, RoI expansion, cropping and bilinear resizing."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .diffcore import ContractError, DegenerateInputError

PAPER_GAMMA = 1.3
PAPER_INPUT_SIZE = (256, 128)
NMS_PROPOSAL_IOU = 0.7
NMS_FINAL_IOU = 0.45


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle ``[x1, x2) × [y1, y2)`` with optional score."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float | None = None

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateInputError(f"non-finite box {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise DegenerateInputError(f"box has non-positive extent: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def with_score(self, score: float | None) -> "Box":
        return replace(self, score=score)

    @classmethod
    def from_inclusive(cls, x1: int, y1: int, x2: int, y2: int, score=None) -> "Box":
        """Convert inclusive integer corners (x2, y2 on the last pixel)."""
        return cls(x1, y1, x2 + 1, y2 + 1, score)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(boxes: Sequence[Box], iou_thresh: float) -> list[Box]:
    """Greedy NMS; equal scores keep the lower input index first."""
    if not 0.0 < iou_thresh < 1.0:
        raise ContractError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    if any(b.score is None for b in boxes):
        raise ContractError("nms needs scored boxes")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[Box] = []
    for i in order:
        cand = boxes[i]
        if all(iou(cand, k) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


def expand_roi(b: Box, gamma: float, img_w: int, img_h: int) -> Box:
    """Scale width and height by ``gamma`` about the center, then clip.

    Coordinates are rounded outward to whole pixels so the result can be
    cropped directly.
    """
    if gamma < 1.0:
        raise ContractError(f"expand ratio must be >= 1, got {gamma}")
    cx, cy = (b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0
    hw, hh = b.width * gamma / 2.0, b.height * gamma / 2.0
    # small tolerance keeps exact products like 19.5 - 0.5 from drifting a pixel
    x1 = max(0, math.floor(cx - hw + 1e-9))
    y1 = max(0, math.floor(cy - hh + 1e-9))
    x2 = min(img_w, math.ceil(cx + hw - 1e-9))
    y2 = min(img_h, math.ceil(cy + hh - 1e-9))
    if x2 <= x1 or y2 <= y1:
        raise DegenerateInputError(f"expanded box {b.as_tuple()} vanishes after clipping")
    return Box(x1, y1, x2, y2, b.score)


def clip_box(b: Box, img_w: int, img_h: int) -> Box:
    """Snap to whole pixels (outward) and clip to the image."""
    return expand_roi(b, 1.0, img_w, img_h)


def crop(img: np.ndarray, b: Box) -> np.ndarray:
    """Copy of ``img[y1:y2, x1:x2]``; the box must be integral and in bounds."""
    h, w = img.shape[:2]
    coords = b.as_tuple()
    if any(c != int(c) for c in coords):
        raise ContractError(f"crop needs integer coordinates, got {coords}")
    x1, y1, x2, y2 = (int(c) for c in coords)
    if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
        raise ContractError(f"box {coords} outside image {w}x{h}")
    return img[y1:y2, x1:x2].copy()


def resize(patch: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an h×w or h×w×c array."""
    if out_h < 1 or out_w < 1:
        raise ContractError(f"output size must be positive, got {out_h}x{out_w}")
    src = np.asarray(patch, dtype=np.float64)
    h, w = src.shape[:2]
    if (h, w) == (out_h, out_w):
        return src.copy()

    def axis(n_src, n_dst):
        if n_dst == 1 or n_src == 1:
            pos = np.zeros(n_dst)
        else:
            pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_src - 1)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    # exact constants: interpolation of equal neighbours must not drift
    lo, hi = src.min(), src.max()
    return np.clip(out, lo, hi)
