"""Fast cross-checks of library routines against brute-force references.

Used by ``python -m mgts selftest``; each check returns True on success.
"""

from __future__ import annotations

from collections import deque
from itertools import product

import numpy as np

from . import diffcore as dc
from .config import RunConfig, loads
from .evalkit import ap_oracle, interpolated_ap
from .geometry import Box, iou, nms
from .masking import dominant_label
from .oim import OimState, oim_probs, queue_push


def _check_primitive_gradients() -> bool:
    rng = np.random.default_rng(0)
    a = dc.Tensor(rng.normal(size=(3, 4)))
    b = dc.Tensor(rng.normal(size=(4, 2)))
    f = dc.Tensor(rng.normal(size=(2, 4, 4)))
    w = dc.Tensor(rng.uniform(0.1, 0.9, 2))
    checks = [
        dc.grad_check(lambda x, y: dc.total(dc.sigmoid(dc.matmul(x, y))), [a, b]),
        dc.grad_check(lambda x, s: dc.total(dc.l2_normalize(dc.global_average_pool(dc.channel_scale(x, s)))), [f, w]),
        dc.grad_check(lambda x: dc.total(dc.avg_pool_2x(x)), [f]),
    ]
    return max(checks) < 1e-4


def _check_nms() -> bool:
    rng = np.random.default_rng(1)
    for _ in range(50):
        boxes = []
        for _ in range(int(rng.integers(1, 7))):
            x, y = rng.integers(0, 20, 2)
            boxes.append(Box(int(x), int(y), int(x + rng.integers(2, 10)), int(y + rng.integers(2, 10)),
                             float(rng.integers(0, 4)) / 4))
        # reference: walk score order, keep a box unless a kept one overlaps it too much
        order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
        kept = []
        for i in order:
            if all(iou(boxes[i], boxes[j]) <= 0.5 for j in kept):
                kept.append(i)
        if nms(boxes, 0.5) != [boxes[i] for i in kept]:
            return False
    return True


def _check_average_precision() -> bool:
    for flags in product([False, True], repeat=6):
        hits = sum(flags)
        if hits == 1 and abs(interpolated_ap(list(flags), 1) - ap_oracle(list(flags), 1)) > 1e-12:
            return False
    return ap_oracle([True, False, True], 2) == (1.0 + 2 / 3) / 2


def _check_dominant_label() -> bool:
    rng = np.random.default_rng(2)
    for _ in range(200):
        m = rng.integers(0, 4, size=(5, 4))
        counts = {k: int((m == k).sum()) for k in range(1, 4) if (m == k).any()}
        want = min(counts, key=lambda k: (-counts[k], k)) if counts else None
        if dominant_label(m) != want:
            return False
    return True


def _check_queue() -> bool:
    rng = np.random.default_rng(3)
    s = OimState(2, 2, 5)
    ref = deque(maxlen=5)
    for _ in range(200):
        u = rng.normal(size=2)
        queue_push(s, u)
        ref.append(u.tolist())
    if s.queue_contents().tolist() != list(ref):
        return False
    return abs(oim_probs(np.array([1.0, 0.0]), s).sum() - 1.0) <= 1e-12


def _check_config_round_trip() -> bool:
    rc = RunConfig()
    return loads(rc.to_text()) == rc


CHECKS = {
    "primitive-gradients": _check_primitive_gradients,
    "nms": _check_nms,
    "average-precision": _check_average_precision,
    "dominant-label": _check_dominant_label,
    "oim-queue": _check_queue,
    "config-round-trip": _check_config_round_trip,
}


def run_selftest() -> tuple[list[str], int]:
    """Names of failing checks and the number of checks run."""
    failures = []
    for name, check in CHECKS.items():
        try:
            ok = check()
        except Exception:  # a crash is a failure, reported by name
            ok = False
        if not ok:
            failures.append(name)
    return failures, len(CHECKS)
