import numpy as np
import pytest

from mgts.geometry import Box
from mgts.synthdata import (
    FORMAT_VERSION,
    Annotation,
    DatasetConfig,
    DatasetConfigError,
    DatasetFormatError,
    GenerationError,
    SceneConfig,
    figure_template,
    gen_dataset,
    gen_scene,
    identity_appearance,
    load_dataset,
    save_dataset,
)

SMALL = DatasetConfig(n_identities=8, n_scenes=40, n_probes=8, gallery_sizes=(6, 10))


@pytest.fixture(scope="module")
def desk():
    return gen_dataset(0)


@pytest.fixture(scope="module")
def small():
    return gen_dataset(3, SMALL)


def test_empty_scene():
    sc = gen_scene(1, SceneConfig(min_persons=0, max_persons=0))
    assert sc.annotations == [] and not sc.mask.any()


def test_scene_determinism():
    assert gen_scene(42) == gen_scene(42)
    assert gen_scene(42) != gen_scene(43)


def test_two_separate_people_pixel_counts():
    cfg = SceneConfig(occlusion_prob=0.0, accessory_prob=0.0)
    sc = gen_scene(7, cfg, people=[1, 2])
    labels = sorted(set(np.unique(sc.mask)) - {0})
    assert labels == [1, 2]
    for k, ann in enumerate(sc.annotations, start=1):
        x1, y1, x2, y2 = (int(v) for v in ann.box.as_tuple())
        area = int((figure_template(y2 - y1, x2 - x1) > 0).sum())
        assert (sc.mask == k).sum() == area


@pytest.mark.parametrize("seed", range(30))
def test_mask_annotation_consistency(seed):
    sc = gen_scene(seed, SceneConfig(occlusion_prob=0.6), people=[1, 2, None, 3])
    labels = set(np.unique(sc.mask).tolist()) - {0}
    assert labels == set(range(1, len(sc.annotations) + 1))
    for k, ann in enumerate(sc.annotations, start=1):
        x1, y1, x2, y2 = (int(v) for v in ann.box.as_tuple())
        inside = (sc.mask[y1:y2, x1:x2] == k).sum()
        assert inside >= 0.6 * (sc.mask == k).sum()


def test_unsatisfiable_placement():
    cfg = SceneConfig(width=20, height=40, min_persons=6, max_persons=6, occlusion_prob=0.0, max_retries=4)
    with pytest.raises(GenerationError):
        gen_scene(0, cfg)


def test_home_location_fixes_background_colours():
    cfg = SceneConfig(occlusion_prob=0.0, clutter=0, noise_level=0.0)
    a = gen_scene(10, cfg, people=[2], dataset_seed=0, location=2)
    b = gen_scene(11, cfg, people=[2], dataset_seed=0, location=2)
    c = gen_scene(11, cfg, people=[2], dataset_seed=0)
    # gradient endpoints sit in the top-left and bottom-right corners
    assert np.allclose(a.image[0, 0], b.image[0, 0]) and np.allclose(a.image[-1, -1], b.image[-1, -1])
    assert not np.allclose(b.image[0, 0], c.image[0, 0])


def test_location_groups_share_scenes():
    from mgts.synthdata import _assign_people

    cfg = DatasetConfig(n_identities=16, location_prob=1.0, location_size=4)
    ids = list(range(1, 9))
    people, locations = _assign_people(np.random.default_rng(0), 40, ids, cfg)
    for who, loc in zip(people, locations):
        members = [i for i in who if i is not None]
        group = set(range(loc, loc + 4))
        # a location scene fills from its group before anyone else
        assert all(i in group for i in members[:4])
    plain = _assign_people(np.random.default_rng(0), 40, ids, DatasetConfig(n_identities=16, location_prob=0.0))[1]
    assert plain == [None] * 40


@pytest.mark.parametrize("prob", [-0.1, 1.5])
def test_location_prob_is_validated(prob):
    with pytest.raises(DatasetConfigError, match="location_prob"):
        gen_dataset(0, DatasetConfig(location_prob=prob))


def test_identity_appearance_is_stable():
    assert np.array_equal(identity_appearance(5, 3), identity_appearance(5, 3))
    assert not np.array_equal(identity_appearance(5, 3), identity_appearance(5, 4))


def _figure_colors(scene, k):
    return scene.image[scene.mask == k].mean(axis=0)


def test_same_identity_looks_more_alike(desk):
    by_id = {}
    for sc in desk.train:
        for k, ann in enumerate(sc.annotations, start=1):
            if ann.identity is not None and (sc.mask == k).sum() > 50:
                by_id.setdefault(ann.identity, []).append(_figure_colors(sc, k))
    same, diff = [], []
    ids = sorted(by_id)
    for i in ids:
        v = by_id[i]
        same += [np.linalg.norm(v[a] - v[b]) for a in range(len(v)) for b in range(a + 1, len(v))]
        for j in ids:
            if j > i:
                diff += [np.linalg.norm(a - b) for a in v for b in by_id[j]]
    assert np.mean(same) < np.mean(diff)


def test_dataset_invariants(desk):
    cfg = desk.cfg
    train_ids = {a.identity for s in desk.train for a in s.annotations if a.identity is not None}
    assert train_ids == set(range(1, desk.num_train_ids + 1))
    counts = {}
    for part in (desk.train, desk.test):
        for s in part:
            for i in {a.identity for a in s.annotations if a.identity is not None}:
                counts[(id(part), i)] = counts.get((id(part), i), 0) + 1
    assert min(counts.values()) >= 2
    assert len(desk.probes) == cfg.n_probes
    for p, gal in enumerate(desk.galleries):
        assert sorted(gal) == list(cfg.gallery_sizes)
        ident = desk.probe_identity(p)
        s_probe = desk.probes[p][0]
        for size, members in gal.items():
            assert len(members) == len(set(members)) == size
            assert s_probe not in members
        smallest = gal[cfg.gallery_sizes[0]]
        assert any(a.identity == ident for m in smallest for a in desk.test[m].annotations)
        # galleries are nested
        for a, b in zip(cfg.gallery_sizes, cfg.gallery_sizes[1:]):
            assert set(gal[a]) <= set(gal[b])


def test_disjoint_identities(desk):
    n = desk.cfg.n_identities // 2
    test_ids = {a.identity for s in desk.test for a in s.annotations if a.identity is not None}
    assert test_ids and min(test_ids) > n


def test_dataset_determinism(small):
    assert gen_dataset(3, SMALL) == small


def test_too_many_probes():
    with pytest.raises(DatasetConfigError):
        gen_dataset(0, DatasetConfig(n_identities=8, n_scenes=40, n_probes=10_000, gallery_sizes=(6, 10)))


@pytest.mark.parametrize(
    "kwargs",
    [dict(test_fraction=1.0), dict(gallery_sizes=(20, 10)), dict(gallery_sizes=(2,)), dict(n_identities=1)],
)
def test_bad_config(kwargs):
    with pytest.raises(DatasetConfigError):
        gen_dataset(0, DatasetConfig(**kwargs))


def test_round_trip(small, tmp_path):
    save_dataset(small, tmp_path)
    assert load_dataset(tmp_path) == small
    save_dataset(load_dataset(tmp_path), tmp_path / "again")
    for name in ("manifest.txt", "annotations.txt", "splits.txt"):
        assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_truncated_annotations_named(small, tmp_path):
    save_dataset(small, tmp_path)
    path = tmp_path / "annotations.txt"
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(DatasetFormatError, match="annotations.txt"):
        load_dataset(tmp_path)


def test_malformed_line_reports_line_number(small, tmp_path):
    save_dataset(small, tmp_path)
    path = tmp_path / "annotations.txt"
    lines = path.read_text().splitlines()
    lines[2] = "train_0000 1 2 three 4 ?"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r"annotations.txt:3"):
        load_dataset(tmp_path)


def test_wrong_format_version(small, tmp_path):
    save_dataset(small, tmp_path)
    m = tmp_path / "manifest.txt"
    m.write_text(m.read_text().replace(FORMAT_VERSION, "MGTSDATA0"))
    with pytest.raises(DatasetFormatError, match="MGTSDATA1"):
        load_dataset(tmp_path)


def test_hand_written_fixture(tmp_path):
    """A one-scene dataset authored byte by byte."""
    (tmp_path / "scenes").mkdir()
    (tmp_path / "manifest.txt").write_text(
        "# hand-made\nformat MGTSDATA1\nseed 0\nnum_train_ids 1\n"
        "cfg n_identities=2\ncfg gallery_sizes=2\ncfg max_positive_scenes=1\n"
    )
    # 4 wide, 2 tall: a red person in columns 1-2, gray elsewhere
    gray, red = bytes([128, 128, 128]), bytes([255, 0, 0])
    row = gray + red + red + gray
    (tmp_path / "scenes" / "s0.ppm").write_bytes(b"P6\n# comment\n4 2\n255\n" + row + row)
    (tmp_path / "scenes" / "s0.pgm").write_bytes(b"P5\n4 2\n255\n" + bytes([0, 1, 1, 0]) * 2)
    (tmp_path / "annotations.txt").write_text("s0 1 0 3 2 1\n")
    (tmp_path / "splits.txt").write_text("scene train s0\n")
    ds = load_dataset(tmp_path)
    assert len(ds.train) == 1 and ds.test == [] and ds.probes == []
    sc = ds.train[0]
    assert sc.annotations == [Annotation(Box(1, 0, 3, 2), 1)]
    assert sc.image.shape == (2, 4, 3)
    assert sc.image[0, 1].tolist() == [1.0, 0.0, 0.0]
    assert sc.image[1, 0].tolist() == [128 / 255] * 3
    assert sc.mask.tolist() == [[0, 1, 1, 0], [0, 1, 1, 0]]
    assert ds.cfg.gallery_sizes == (2,) and ds.cfg.n_identities == 2


def test_unknown_config_key_rejected(small, tmp_path):
    save_dataset(small, tmp_path)
    m = tmp_path / "manifest.txt"
    m.write_text(m.read_text() + "cfg scene.colour=3\n")
    with pytest.raises(DatasetFormatError, match="colour"):
        load_dataset(tmp_path)
