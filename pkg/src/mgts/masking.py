"""Foreground separation inside an expanded RoI, and the box-mask fallback."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import ContractError
from .geometry import Box, crop, expand_roi


@dataclass
class MaskedPatch:
    patch: np.ndarray
    keep: np.ndarray  # bool h×w, True where pixels were retained
    dominant_instance: int | None
    fallback_used: bool
    roi: Box  # the expanded, clipped crop window
    source: np.ndarray = field(repr=False)  # unmasked crop

    def background(self) -> np.ndarray:
        """The crop with retained pixels zeroed (complement of ``patch``)."""
        return self.source * (~self.keep)[..., None]


def dominant_label(mask_crop: np.ndarray) -> int | None:
    """Most frequent non-zero label; ties go to the smallest label."""
    labels = mask_crop.reshape(-1).astype(np.int64)
    labels = labels[labels > 0]
    if labels.size == 0:
        return None
    counts = np.bincount(labels)
    # argmax returns the first (smallest) index among ties
    return int(np.argmax(counts))


def separate_foreground(b: Box, gamma: float, img: np.ndarray, mask: np.ndarray) -> MaskedPatch:
    if img.shape[:2] != mask.shape[:2]:
        raise ContractError(f"image {img.shape[:2]} and mask {mask.shape[:2]} differ in size")
    h, w = img.shape[:2]
    roi = expand_roi(b, gamma, w, h)
    img_crop = crop(img, roi)
    mask_crop = crop(mask, roi)
    k = dominant_label(mask_crop)
    if k is None:
        out = box_mask(b, gamma, img)
        out.fallback_used = True
        return out
    keep = mask_crop == k
    return MaskedPatch(
        patch=img_crop * keep[..., None],
        keep=keep,
        dominant_instance=k,
        fallback_used=False,
        roi=roi,
        source=img_crop,
    )


def box_mask(b: Box, gamma: float, img: np.ndarray) -> MaskedPatch:
    """Crop the expanded RoI and zero everything outside the original box."""
    h, w = img.shape[:2]
    roi = expand_roi(b, gamma, w, h)
    img_crop = crop(img, roi)
    inner = expand_roi(b, 1.0, w, h)
    keep = np.zeros(img_crop.shape[:2], dtype=bool)
    keep[
        int(inner.y1 - roi.y1) : int(inner.y2 - roi.y1),
        int(inner.x1 - roi.x1) : int(inner.x2 - roi.x1),
    ] = True
    return MaskedPatch(
        patch=img_crop * keep[..., None],
        keep=keep,
        dominant_instance=None,
        fallback_used=False,
        roi=roi,
        source=img_crop,
    )
