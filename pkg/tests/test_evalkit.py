import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgts.diffcore import ContractError
from mgts.evalkit import (
    GalleryScene,
    ProbeResult,
    ap_oracle,
    chance_map,
    cmc_topk,
    detection_ap_recall,
    interpolated_ap,
    rank_probe,
    search_map,
    se_weight_stats,
    top_count_foreground,
)
from mgts.geometry import Box, iou


# ---- oracles written independently of the library code


def brute_detection_ap(dets, gts, thresh=0.5):
    """Interpolated AP by taking, at each recall step, the best precision at or beyond it."""
    order = sorted(((b.score, -s, -i) for s, bs in enumerate(dets) for i, b in enumerate(bs)), reverse=True)
    taken = {s: set() for s in range(len(gts))}
    tp = []
    for _, ns, ni in order:
        s, i = -ns, -ni
        cands = [(iou(dets[s][i], g), -j) for j, g in enumerate(gts[s]) if j not in taken[s]]
        cands = [c for c in cands if c[0] > thresh]
        if cands:
            taken[s].add(-max(cands)[1])
        tp.append(bool(cands))
    n_gt = sum(len(g) for g in gts)
    if not n_gt or not tp:
        return 0.0, 0.0
    prec = [sum(tp[: r + 1]) / (r + 1) for r in range(len(tp))]
    ap = sum(max(prec[r:]) for r in range(len(tp)) if tp[r]) / n_gt
    return ap, sum(len(t) for t in taken.values()) / n_gt


def brute_search_ap(probe_x, identity, gallery, thresh=0.5):
    """Exhaustive matching: each detection scans every GT of the probe identity in its scene."""
    items = [(float(g.descriptors[i] @ probe_x), s, i) for s, g in enumerate(gallery) for i in range(len(g.detections))]
    # stable: equal similarity keeps gallery order
    items = [it for _, it in sorted(enumerate(items), key=lambda p: (-p[1][0], p[0]))]
    claimed = set()
    flags = []
    for _, s, i in items:
        g = gallery[s]
        options = [
            (iou(g.detections[i], gb), k)
            for k, (gb, gid) in enumerate(zip(g.gt_boxes, g.gt_ids))
            if gid == identity and (s, k) not in claimed and iou(g.detections[i], gb) >= thresh
        ]
        if options:
            best = max(options, key=lambda o: (o[0], -o[1]))
            claimed.add((s, best[1]))
        flags.append(bool(options))
    n_pos = sum(gid == identity for g in gallery for gid in g.gt_ids)
    hits = np.cumsum(flags)
    ap = sum(hits[r] / (r + 1) for r, f in enumerate(flags) if f) / n_pos if n_pos else None
    return ap, flags


def _rand_box(rng, w=40, h=40):
    x, y = rng.integers(0, w - 6), rng.integers(0, h - 10)
    return Box(int(x), int(y), int(x + rng.integers(4, 12)), int(y + rng.integers(8, 20)))


def _random_gallery(rng, n_scenes, dim=4):
    gallery = []
    for _ in range(n_scenes):
        gts = [_rand_box(rng) for _ in range(int(rng.integers(0, 4)))]
        ids = [int(rng.integers(1, 4)) if rng.random() < 0.8 else None for _ in gts]
        dets = []
        for g in gts:
            if rng.random() < 0.8:
                dets.append(Box(g.x1 + int(rng.integers(-2, 3)) % 3, g.y1, g.x2, g.y2))
        dets += [_rand_box(rng) for _ in range(int(rng.integers(0, 2)))]
        desc = rng.normal(size=(len(dets), dim))
        desc /= np.linalg.norm(desc, axis=1, keepdims=True) if len(dets) else 1
        gallery.append(GalleryScene(dets, desc, gts, ids))
    return gallery


# ---- ap_oracle and interpolated_ap


@pytest.mark.parametrize(
    "flags, n, expected",
    [([True, True, False], 2, 1.0), ([False, True], 1, 0.5), ([True, False, True], 2, 5 / 6), ([], 3, 0.0),
     ([False, False], 0, 0.0)],
)
def test_ap_oracle_examples(flags, n, expected):
    assert ap_oracle(flags, n) == pytest.approx(expected, abs=1e-15)


def test_ap_oracle_rejects_excess_positives():
    with pytest.raises(ContractError):
        ap_oracle([True, True], 1)


@given(st.lists(st.booleans(), max_size=20), st.integers(0, 5))
def test_single_positive_lists_agree(flags, extra):
    # with one positive the envelope changes nothing: both definitions coincide
    flags = flags[:]
    pos = [i for i, f in enumerate(flags) if f]
    for i in pos[1:]:
        flags[i] = False
    n = 1 + extra if pos else extra
    if n == 0:
        return
    assert abs(interpolated_ap(flags, n) - ap_oracle(flags, n)) <= 1e-12


# ---- detection AP


def test_detection_ap_examples():
    g = [Box(0, 0, 10, 10), Box(20, 0, 30, 10)]
    perfect = [[b.with_score(0.9) for b in g]]
    assert detection_ap_recall(perfect, [g]) == (1.0, 1.0)
    assert detection_ap_recall([[]], [g]) == (0.0, 0.0)
    dets = [[g[0].with_score(0.9), Box(50, 50, 60, 60, 0.8), g[1].with_score(0.7)]]
    ap, rec = detection_ap_recall(dets, [g])
    assert ap == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-12) and rec == 1.0


def test_detection_iou_must_exceed_half():
    g = Box(0, 0, 10, 10)
    half = Box(0, 0, 10, 20)  # IoU exactly 0.5
    assert iou(half, g) == 0.5
    assert detection_ap_recall([[half.with_score(1.0)]], [[g]]) == (0.0, 0.0)


@pytest.mark.parametrize("seed", range(200))
def test_detection_ap_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n_scenes = int(rng.integers(1, 4))
    gts = [[_rand_box(rng) for _ in range(int(rng.integers(0, 4)))] for _ in range(n_scenes)]
    dets = []
    budget = 20
    for g in gts:
        ds = []
        for b in g:
            if rng.random() < 0.7 and budget:
                ds.append(Box(b.x1 + int(rng.integers(0, 3)), b.y1, b.x2, b.y2, float(rng.random())))
                budget -= 1
        for _ in range(int(rng.integers(0, 3))):
            if budget:
                ds.append(_rand_box(rng).with_score(float(rng.random())))
                budget -= 1
        dets.append(ds)
    ap, rec = detection_ap_recall(dets, gts)
    bap, brec = brute_detection_ap(dets, gts)
    assert abs(ap - bap) <= 1e-12 and abs(rec - brec) <= 1e-12
    assert 0.0 <= ap <= 1.0


# ---- search


def test_search_single_correct_detection():
    b = Box(0, 0, 10, 20)
    g = GalleryScene([b], np.array([[1.0, 0.0]]), [b], [7])
    r = rank_probe(np.array([1.0, 0.0]), 7, [g])
    assert r.ap == 1.0 and r.flags == [True]


def test_search_match_at_rank_two():
    a, b = Box(0, 0, 10, 20), Box(20, 0, 30, 20)
    g = GalleryScene([a, b], np.array([[1.0, 0.0], [0.0, 1.0]]), [a, b], [3, 9])
    r = rank_probe(np.array([1.0, 0.0]), 9, [g])
    assert r.ap == 0.5 and r.flags == [False, True]
    assert cmc_topk([r.flags], [1, 2]) == {1: 0.0, 2: 1.0}


def test_search_one_detection_per_ground_truth():
    b = Box(0, 0, 10, 20)
    g = GalleryScene([b, b], np.array([[1.0, 0.0], [0.9, np.sqrt(0.19)]]), [b], [1])
    r = rank_probe(np.array([1.0, 0.0]), 1, [g])
    assert r.flags == [True, False] and r.ap == 1.0


def test_absent_identity_is_skipped():
    b = Box(0, 0, 10, 20)
    g = GalleryScene([b], np.array([[1.0, 0.0]]), [b], [2])
    m, results = search_map([(np.array([1.0, 0.0]), 5), (np.array([1.0, 0.0]), 2)], [[g], [g]])
    assert results[0].ap is None and m == 1.0


@pytest.mark.parametrize("seed", range(200))
def test_search_map_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    probes, galleries, expected = [], [], []
    for _ in range(5):
        gal = _random_gallery(rng, 10)
        while sum(len(g.detections) for g in gal) > 20:
            gal = gal[:-1]
        x = rng.normal(size=4)
        x /= np.linalg.norm(x)
        ident = int(rng.integers(1, 4))
        probes.append((x, ident))
        galleries.append(gal)
        ap, flags = brute_search_ap(x, ident, gal)
        expected.append((ap, flags))
    m, results = search_map(probes, galleries)
    for r, (ap, flags) in zip(results, expected):
        assert r.flags == flags
        assert (r.ap is None and ap is None) or abs(r.ap - ap) <= 1e-12
    aps = [a for a, _ in expected if a is not None]
    assert abs(m - (np.mean(aps) if aps else 0.0)) <= 1e-12
    ks = list(range(1, 22))
    cmc = cmc_topk([r.flags for r in results], ks)
    assert all(cmc[k] <= cmc[k + 1] for k in ks[:-1])
    brute_cmc = {k: np.mean([any(f[:k]) for _, f in expected]) for k in ks}
    assert all(abs(cmc[k] - brute_cmc[k]) <= 1e-12 for k in ks)


def test_cmc_examples():
    assert cmc_topk([[True], [True, False]], [1, 5]) == {1: 1.0, 5: 1.0}
    assert cmc_topk([], [1]) == {1: 0.0}


@given(st.lists(st.lists(st.booleans(), max_size=10), min_size=1, max_size=6))
def test_cmc_monotone_and_bounded(lists):
    ks = list(range(1, 12))
    c = cmc_topk(lists, ks)
    assert all(0.0 <= c[k] <= c[k + 1] <= 1.0 for k in ks[:-1])
    assert c[11] == np.mean([any(f) for f in lists])


def test_appending_low_non_matches_never_raises_ap():
    rng = np.random.default_rng(5)
    for _ in range(50):
        gal = _random_gallery(rng, 4)
        x = rng.normal(size=4)
        x /= np.linalg.norm(x)
        before = rank_probe(x, 1, gal)
        if before.ap is None:
            continue
        extra = Box(35, 35, 39, 39)
        far = -x  # lowest possible similarity
        g0 = gal[0]
        gal[0] = GalleryScene(g0.detections + [extra], np.vstack([g0.descriptors, far[None]]), g0.gt_boxes, g0.gt_ids)
        assert rank_probe(x, 1, gal).ap <= before.ap


def test_chance_map_of_perfect_ranking():
    r = ProbeResult(1.0, [True] + [False] * 9, 1)
    est = chance_map([r], n_perm=4000)
    exact = np.mean([1 / k for k in range(1, 11)])
    assert abs(est - exact) < 0.01


# ---- SE statistics


def test_uniform_weights_tie_rule():
    stats = se_weight_stats([np.full(64, 0.5)], 32)
    assert stats.avg_f[0] == stats.avg_o[0] and stats.n20f[0] == 20
    assert top_count_foreground(np.full(16, 0.5), 8) == 8


def test_hand_built_top_twenty():
    w = np.full(64, 0.1)
    w[:15] = 0.9
    w[32:37] = 0.8
    assert top_count_foreground(w, 32) == 15
    s = se_weight_stats([w], 32)
    assert s.histogram[15] == 1 and s.histogram.sum() == 1
    assert s.avg_f[0] > s.avg_o[0]


@pytest.mark.parametrize("seed", range(20))
def test_top_count_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    w = rng.integers(0, 5, 48) / 5.0  # many ties
    ranked = sorted(range(48), key=lambda i: (-w[i], i))[:20]
    assert top_count_foreground(w, 24) == sum(i < 24 for i in ranked)


def test_se_stats_shape_checked():
    with pytest.raises(ContractError):
        se_weight_stats([np.ones(10)], 4)


def test_random_descriptors_score_near_chance():
    rng = np.random.default_rng(11)
    probes, galleries = [], []
    for _ in range(300):
        gal = _random_gallery(rng, 6)
        x = rng.normal(size=4)
        probes.append((x / np.linalg.norm(x), int(rng.integers(1, 4))))
        galleries.append(gal)
    measured, results = search_map(probes, galleries)
    assert abs(measured - chance_map(results, n_perm=50, seed=1)) < 0.03
