"""Detection and person-search metrics, sweeps, SE-weight statistics, reports."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffcore import ContractError, make_rng
from .geometry import NMS_FINAL_IOU, Box, iou, nms
from .reidnet import MgtsModel, describe, extract_patches

REPORT_SCHEMA = "mgts-report v1"
DETECTION_IOU = 0.5  # detection TP needs IoU strictly above this
SEARCH_IOU = 0.5  # search/CMC match needs IoU of at least this


class EvalConfigError(ValueError):
    pass


# ---------------------------------------------------------------- AP primitives


def ap_oracle(flags: Sequence[bool], num_positives: int) -> float:
    """Mean of the precision at each positive rank, over ``num_positives``."""
    if num_positives < 0:
        raise ContractError("num_positives must be >= 0")
    hits = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            total += hits / rank
    if hits > num_positives:
        raise ContractError(f"{hits} positive flags exceed num_positives={num_positives}")
    return total / num_positives if num_positives else 0.0


def interpolated_ap(flags: Sequence[bool], num_positives: int) -> float:
    """Area under the precision-recall curve with the monotone precision envelope."""
    if num_positives <= 0 or len(flags) == 0:
        return 0.0
    f = np.asarray(flags, dtype=bool)
    tp = np.cumsum(f)
    precision = tp / np.arange(1, len(f) + 1)
    recall = tp / num_positives
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


# ---------------------------------------------------------------- detection


def detection_ap_recall(dets: Sequence[Sequence[Box]], gts: Sequence[Sequence[Box]],
                        iou_thresh: float = DETECTION_IOU) -> tuple[float, float]:
    """Global ranking by score, greedy matching to the best unmatched GT per scene."""
    if len(dets) != len(gts):
        raise ContractError("detections and ground truth must cover the same scenes")
    entries = [(-b.score, s, i) for s, boxes in enumerate(dets) for i, b in enumerate(boxes)]
    entries.sort()
    used = [np.zeros(len(g), dtype=bool) for g in gts]
    flags = []
    for _, s, i in entries:
        best, best_j = iou_thresh, -1
        for j, g in enumerate(gts[s]):
            if used[s][j]:
                continue
            o = iou(dets[s][i], g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0:
            used[s][best_j] = True
        flags.append(best_j >= 0)
    n_gt = sum(len(g) for g in gts)
    recall = sum(int(u.sum()) for u in used) / n_gt if n_gt else 0.0
    return interpolated_ap(flags, n_gt), recall


def postprocess_detections(boxes: Sequence[Box], score_thresh: float = 0.5,
                           nms_thresh: float = NMS_FINAL_IOU, proposal_nms: float | None = None) -> list[Box]:
    """Optional loose suppression, then drop low-confidence boxes and suppress duplicates."""
    if proposal_nms is not None:
        boxes = nms(boxes, proposal_nms)
    return nms([b for b in boxes if b.score >= score_thresh], nms_thresh)


# ---------------------------------------------------------------- search


@dataclass
class GalleryScene:
    detections: list[Box]
    descriptors: np.ndarray  # len(detections) × d
    gt_boxes: list[Box]
    gt_ids: list[int | None]


@dataclass
class ProbeResult:
    ap: float | None  # None when the gallery holds no instance of the identity
    flags: list[bool]  # match flag per ranked detection
    num_positives: int


def rank_probe(probe_x: np.ndarray, identity: int, gallery: Sequence[GalleryScene],
               iou_thresh: float = SEARCH_IOU) -> ProbeResult:
    sims, keys = [], []
    for s, g in enumerate(gallery):
        if len(g.detections):
            sims.append(g.descriptors @ probe_x)
            keys += [(s, i) for i in range(len(g.detections))]
    sim = np.concatenate(sims) if sims else np.zeros(0)
    # descending similarity, ties by gallery position
    order = sorted(range(len(keys)), key=lambda j: (-sim[j], j))
    claimed = [np.zeros(len(g.gt_boxes), dtype=bool) for g in gallery]
    flags = []
    for j in order:
        s, i = keys[j]
        g = gallery[s]
        best, best_k = -1.0, -1
        for k, (gb, gid) in enumerate(zip(g.gt_boxes, g.gt_ids)):
            if gid != identity or claimed[s][k]:
                continue
            o = iou(g.detections[i], gb)
            if o >= iou_thresh and o > best:
                best, best_k = o, k
        if best_k >= 0:
            claimed[s][best_k] = True
        flags.append(best_k >= 0)
    n_pos = sum(gid == identity for g in gallery for gid in g.gt_ids)
    ap = ap_oracle(flags, n_pos) if n_pos else None
    return ProbeResult(ap, flags, n_pos)


def search_map(probes: Sequence[tuple[np.ndarray, int]], galleries: Sequence[Sequence[GalleryScene]],
               iou_thresh: float = SEARCH_IOU) -> tuple[float, list[ProbeResult]]:
    """mAP over probes; probes whose identity is absent from the gallery are skipped."""
    results = [rank_probe(x, ident, gal, iou_thresh) for (x, ident), gal in zip(probes, galleries)]
    aps = [r.ap for r in results if r.ap is not None]
    return (float(np.mean(aps)) if aps else 0.0), results


def cmc_topk(flags_per_probe: Sequence[Sequence[bool]], ks: Sequence[int]) -> dict[int, float]:
    n = len(flags_per_probe)
    first = []
    for flags in flags_per_probe:
        hit = next((r for r, f in enumerate(flags, start=1) if f), None)
        first.append(hit)
    return {k: (sum(1 for h in first if h is not None and h <= k) / n if n else 0.0) for k in ks}


def chance_map(results: Sequence[ProbeResult], n_perm: int = 200, seed: int = 0) -> float:
    """Monte-Carlo mAP of uniformly random rankings of the same detections."""
    rng = make_rng(seed, 0xC4A4CE)
    total = []
    for r in results:
        if r.ap is None:
            continue
        flags = np.asarray(r.flags, dtype=bool)
        total.append(np.mean([ap_oracle(rng.permutation(flags), r.num_positives) for _ in range(n_perm)]))
    return float(np.mean(total)) if total else 0.0


# ---------------------------------------------------------------- model-level evaluation


@dataclass
class EvalReport:
    search_map: float
    cmc: dict[int, float]
    probe_aps: list[float | None]
    gallery_size: int
    detection_ap: float = float("nan")
    detection_recall: float = float("nan")
    digest: str = ""
    results: list[ProbeResult] = field(default_factory=list, repr=False)

    @property
    def top1(self) -> float:
        return self.cmc.get(1, float("nan"))


class DescriptorCache:
    """Descriptors of boxes in test scenes for one frozen model."""

    def __init__(self, model: MgtsModel, dataset):
        self.model = model
        self.dataset = dataset
        self._store: dict[tuple, np.ndarray] = {}

    def get(self, scene_idx: int, box: Box) -> np.ndarray:
        key = (scene_idx, box.as_tuple())
        if key not in self._store:
            scene = self.dataset.test[scene_idx]
            patches = extract_patches(scene.image, scene.mask, box, self.model.cfg)
            self._store[key] = describe(self.model, patches)[0]
        return self._store[key]


def evaluate(model: MgtsModel, dataset, gallery_size: int, detections: Sequence[Sequence[Box]] | None = None,
             ks: Sequence[int] = (1, 5, 10), cache: DescriptorCache | None = None,
             score_thresh: float = 0.5, nms_thresh: float = NMS_FINAL_IOU,
             proposal_nms: float | None = None) -> EvalReport:
    """Person search over every probe at one gallery size.

    ``detections`` holds raw detector output per test scene; ``None`` uses
    the ground-truth boxes as detections.
    """
    if any(gallery_size not in g for g in dataset.galleries):
        raise EvalConfigError(f"dataset has no gallery subsets of size {gallery_size}")
    cache = cache or DescriptorCache(model, dataset)
    test = dataset.test
    if detections is None:
        kept = [[a.box.with_score(1.0) for a in s.annotations] for s in test]
        det_ap = det_recall = 1.0 if any(kept) else 0.0
    else:
        kept = [postprocess_detections(d, score_thresh, nms_thresh, proposal_nms) for d in detections]
        det_ap, det_recall = detection_ap_recall(kept, [[a.box for a in s.annotations] for s in test])
    scenes = []
    for s, scene in enumerate(test):
        desc = np.array([cache.get(s, b) for b in kept[s]]) if kept[s] else np.zeros((0, model.cfg.dim))
        scenes.append(GalleryScene(kept[s], desc, [a.box for a in scene.annotations],
                                   [a.identity for a in scene.annotations]))
    probes, galleries = [], []
    for p, (s, a) in enumerate(dataset.probes):
        ann = test[s].annotations[a]
        probes.append((cache.get(s, ann.box), ann.identity))
        galleries.append([scenes[g] for g in dataset.galleries[p][gallery_size]])
    mAP, results = search_map(probes, galleries)
    return EvalReport(
        search_map=mAP,
        cmc=cmc_topk([r.flags for r in results], ks),
        probe_aps=[r.ap for r in results],
        gallery_size=gallery_size,
        detection_ap=det_ap,
        detection_recall=det_recall,
        digest=model.cfg.digest().hex()[:16],
        results=results,
    )


def gallery_sweep(model: MgtsModel, dataset, sizes: Sequence[int], detections=None,
                  **kwargs) -> dict[int, EvalReport]:
    cache = DescriptorCache(model, dataset)
    return {n: evaluate(model, dataset, n, detections, cache=cache, **kwargs) for n in sizes}


# ---------------------------------------------------------------- SE statistics


@dataclass
class SeStats:
    avg_f: np.ndarray
    avg_o: np.ndarray
    n20f: np.ndarray
    histogram: np.ndarray  # counts for N20F = 0..top

    @property
    def frac_f_above_o(self) -> float:
        return float(np.mean(self.avg_f > self.avg_o))


def top_count_foreground(w: np.ndarray, c: int, top: int = 20) -> int:
    """How many of the ``top`` largest weights sit in channels ``[0, c)``.

    Equal weights rank by lower channel index.
    """
    order = np.lexsort((np.arange(len(w)), -np.asarray(w)))
    return int(np.sum(order[: min(top, len(w))] < c))


def se_weight_stats(weights: Sequence[np.ndarray], c: int, top: int = 20) -> SeStats:
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != 2 * c:
        raise ContractError(f"expected rows of {2 * c} weights, got {W.shape}")
    n20 = np.array([top_count_foreground(w, c, top) for w in W], dtype=np.int64)
    hist = np.bincount(n20, minlength=min(top, 2 * c) + 1)
    return SeStats(W[:, :c].mean(axis=1), W[:, c:].mean(axis=1), n20, hist)


def se_statistics(model: MgtsModel, patches: Sequence[dict[str, np.ndarray]], top: int = 20) -> SeStats:
    if model.variant != "two_stream_OFE":
        raise ContractError("SE statistics need the two-stream model")
    weights = [describe(model, p)[1] for p in patches]
    return se_weight_stats(weights, model.cfg.channels[-1], top)


# ---------------------------------------------------------------- reports


def _header(fh, kind: str, columns: Sequence[str]) -> csv.writer:
    fh.write(f"# {REPORT_SCHEMA} {kind}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    return w


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def write_probe_csv(report: EvalReport, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = _header(fh, "probes", ["probe", "gallery_size", "ap", "first_match_rank", "num_positives"])
        for p, r in enumerate(report.results):
            rank = next((i for i, f in enumerate(r.flags, start=1) if f), "")
            w.writerow([p, report.gallery_size, _num(r.ap), rank, r.num_positives])
        fh.write(f"# summary map={report.search_map!r} "
                 + " ".join(f"top{k}={v!r}" for k, v in sorted(report.cmc.items()))
                 + f" det_ap={report.detection_ap!r} det_recall={report.detection_recall!r}\n")


def write_table_csv(rows: Sequence[dict], path: str | os.PathLike, kind: str) -> None:
    if not rows:
        raise ContractError("no rows to write")
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = _header(fh, kind, cols)
        for row in rows:
            w.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c] for c in cols])


def write_line_svg(xs: Sequence[float], series: dict[str, Sequence[float]], path: str | os.PathLike,
                   title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    """Minimal standalone SVG line chart (y axis fixed to [0, 1])."""
    W, H, m = 480, 320, 50
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1.0

    def px(x):
        return m + (x - x0) / span * (W - 2 * m)

    def py(y):
        return H - m - y * (H - 2 * m)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{m}" y1="{H - m}" x2="{W - m}" y2="{H - m}" stroke="black"/>',
           f'<line x1="{m}" y1="{m}" x2="{m}" y2="{H - m}" stroke="black"/>',
           f'<text x="{W / 2}" y="{m / 2}" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" text-anchor="middle">{ylabel}</text>']
    for t in range(6):
        y = t / 5
        out.append(f'<text x="{m - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
    for x in xs:
        out.append(f'<text x="{px(x):.1f}" y="{H - m + 16}" text-anchor="middle">{x:g}</text>')
    for n, (name, ys) in enumerate(series.items()):
        color = palette[n % len(palette)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{W - m + 4}" y="{m + 14 * n}" fill="{color}">{name}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_histogram_svg(counts: Sequence[int], path: str | os.PathLike, title: str = "",
                        xlabel: str = "N20(F)") -> None:
    W, H, m = 480, 320, 50
    n = len(counts)
    top = max(max(counts), 1)
    bw = (W - 2 * m) / max(n, 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="{m / 2}" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>']
    for i, c in enumerate(counts):
        h = c / top * (H - 2 * m)
        out.append(f'<rect x="{m + i * bw:.1f}" y="{H - m - h:.1f}" width="{bw * 0.9:.1f}" height="{h:.1f}" fill="#1f77b4"/>')
        out.append(f'<text x="{m + (i + 0.45) * bw:.1f}" y="{H - m + 14}" text-anchor="middle">{i}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
