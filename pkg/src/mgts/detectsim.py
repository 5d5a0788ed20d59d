"""Stand-in pedestrian detector that perturbs ground-truth boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError, make_rng
from .geometry import Box

_K_DETECT = 11


@dataclass(frozen=True)
class DetectorNoiseCfg:
    """Noise model for simulated detections.

    ``jitter_sigma`` is the std of center and size offsets as a fraction of
    box width/height. Scores are uniform on ``tp_score`` for surviving
    ground-truth boxes and on ``fp_score`` for spurious ones.
    """

    jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    tp_score: tuple[float, float] = (0.6, 1.0)
    fp_score: tuple[float, float] = (0.05, 0.75)
    fp_size: tuple[float, float] = (0.35, 0.75)  # fp box height range, fraction of image height

    def __post_init__(self):
        if self.jitter_sigma < 0 or not np.isfinite(self.jitter_sigma):
            raise ContractError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        for name in ("miss_rate", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {v}")
        for name in ("tp_score", "fp_score"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ContractError(f"{name} must be a sub-range of [0, 1], got {(lo, hi)}")
        lo, hi = self.fp_size
        if not 0 < lo <= hi <= 1:
            raise ContractError(f"fp_size must satisfy 0 < lo <= hi <= 1, got {self.fp_size}")


def _jitter(box: Box, sigma: float, rng: np.random.Generator, img_w: int, img_h: int) -> Box | None:
    dx, dy, dw, dh = rng.normal(0.0, 1.0, 4) * sigma
    w, h = box.width, box.height
    cx = (box.x1 + box.x2) / 2 + dx * w
    cy = (box.y1 + box.y2) / 2 + dy * h
    w, h = w * np.exp(dw), h * np.exp(dh)
    x1, x2 = max(0.0, cx - w / 2), min(float(img_w), cx + w / 2)
    y1, y2 = max(0.0, cy - h / 2), min(float(img_h), cy + h / 2)
    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
        return None
    return Box(x1, y1, x2, y2)


def simulate_detections(scene, cfg: DetectorNoiseCfg, seed: int) -> list[Box]:
    """Scored boxes for one scene: kept GT boxes first, then false positives.

    A zero-noise config returns every GT box unchanged apart from its score.
    """
    rng = make_rng(seed, _K_DETECT)
    img_h, img_w = scene.image.shape[:2]
    out: list[Box] = []
    for ann in scene.annotations:
        # draw every variate unconditionally so one box's fate never shifts another's
        missed = rng.random() < cfg.miss_rate
        jittered = _jitter(ann.box, cfg.jitter_sigma, rng, img_w, img_h) if cfg.jitter_sigma > 0 else ann.box
        score = float(rng.uniform(*cfg.tp_score))
        if missed or jittered is None:
            continue
        out.append(jittered.with_score(score))
    for _ in range(int(rng.poisson(cfg.false_positive_rate))):
        h = rng.uniform(*cfg.fp_size) * img_h
        w = min(h * rng.uniform(0.35, 0.5), img_w)
        x1 = rng.uniform(0.0, img_w - w)
        y1 = rng.uniform(0.0, img_h - h)
        out.append(Box(x1, y1, x1 + w, y1 + h, float(rng.uniform(*cfg.fp_score))))
    return out


def simulate_dataset(scenes, cfg: DetectorNoiseCfg, seed: int) -> list[list[Box]]:
    """Detections for each scene; scene i uses sub-seed (seed, i)."""
    return [simulate_detections(s, cfg, int(make_rng(seed, _K_DETECT, i).integers(2**62))) for i, s in enumerate(scenes)]
