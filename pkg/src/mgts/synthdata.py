"""Deterministic synthetic person-search scenes and dataset splits.

Each identity owns a fixed appearance (upper and lower clothing colors, head
color and a size scale) derived from the dataset seed. Scenes place a few
figures on a cluttered procedural background; figures drawn later occlude
earlier ones in both the image and the instance mask.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .diffcore import make_rng
from .geometry import Box, expand_roi
from .pnm import PnmError, read_pnm, write_ppm, write_pgm

FORMAT_VERSION = "MGTSDATA1"

# sub-stream keys for make_rng
_K_APPEARANCE, _K_SCENE, _K_LAYOUT, _K_PROBES, _K_LOCATION = 1, 2, 3, 4, 5


class GenerationError(RuntimeError):
    pass


class DatasetConfigError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 96
    min_persons: int = 2
    max_persons: int = 4
    person_height_min: int = 32
    person_height_max: int = 50
    occlusion_prob: float = 0.3
    noise_level: float = 0.03
    clutter: int = 8
    background_saturation: float = 0.2
    background_contrast: float = 1.0
    accessory_prob: float = 0.0
    dominance_ratio: float = 1.5  # 0 disables the context-majority check
    unlabeled_fraction: float = 0.25
    max_retries: int = 60


@dataclass(frozen=True)
class DatasetConfig:
    n_identities: int = 32
    n_scenes: int = 200
    test_fraction: float = 0.5
    n_probes: int = 48
    gallery_sizes: tuple[int, ...] = (10, 20, 40)
    max_positive_scenes: int = 3
    disjoint_identities: bool = True
    location_prob: float = 0.7  # chance a scene is shot at a group's home location
    location_size: int = 4  # identities sharing one home location
    scene: SceneConfig = field(default_factory=SceneConfig)


@dataclass
class Annotation:
    box: Box
    identity: int | None  # None marks an unlabeled person


@dataclass
class Scene:
    image: np.ndarray  # h×w×3 float64, values k/255
    mask: np.ndarray  # h×w uint8; label k is annotations[k-1]
    annotations: list[Annotation]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.image, other.image)
            and np.array_equal(self.mask, other.mask)
            and self.annotations == other.annotations
        )


@dataclass
class DatasetSplit:
    train: list[Scene]
    test: list[Scene]
    probes: list[tuple[int, int]]  # (test scene index, annotation index)
    galleries: list[dict[int, list[int]]]  # per probe: size -> test scene indices
    num_train_ids: int  # train identities are relabeled 1..num_train_ids
    seed: int = 0
    cfg: DatasetConfig = field(default_factory=DatasetConfig)

    def probe_identity(self, p: int) -> int:
        s, a = self.probes[p]
        return self.test[s].annotations[a].identity

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.train == other.train
            and self.test == other.test
            and self.probes == other.probes
            and self.galleries == other.galleries
            and self.num_train_ids == other.num_train_ids
            and self.seed == other.seed
            and self.cfg == other.cfg
        )


# ---------------------------------------------------------------- rendering


def identity_appearance(dataset_seed: int, identity: int) -> np.ndarray:
    """Appearance vector: upper rgb, lower rgb, head rgb, size scale, bag rgb."""
    rng = make_rng(dataset_seed, _K_APPEARANCE, identity)
    return _random_appearance(rng)


def _random_appearance(rng: np.random.Generator) -> np.ndarray:
    upper = rng.uniform(0.05, 0.95, 3)
    lower = rng.uniform(0.05, 0.95, 3)
    head = rng.uniform(0.2, 0.8, 3)
    scale = rng.uniform(0.85, 1.15)
    bag = rng.uniform(0.05, 0.95, 3)
    return np.concatenate([upper, lower, head, [scale], bag])


def figure_template(h: int, w: int) -> np.ndarray:
    """Part map of a standing figure filling an h×w box.

    0 = empty, 1 = head, 2 = torso, 3 = legs. The head is narrower than the
    box and there is a gap between the legs, so the box is never full.
    """
    part = np.zeros((h, w), dtype=np.int8)
    yy, xx = np.mgrid[0:h, 0:w]
    yc = (yy + 0.5) / h
    xc = (xx + 0.5) / w
    head_r = 0.11
    head = ((xc - 0.5) / 0.28) ** 2 + ((yc - head_r) / head_r) ** 2 <= 1.0
    torso = (yc >= 0.2) & (yc < 0.6) & (np.abs(xc - 0.5) <= 0.5 - 0.12 * (0.6 - yc) / 0.4)
    legs = (yc >= 0.6) & (np.abs(xc - 0.5) >= 0.07) & (np.abs(xc - 0.5) <= 0.42)
    part[legs] = 3
    part[torso] = 2
    part[head] = 1
    return part


def _render_background(rng: np.random.Generator, cfg: SceneConfig,
                       palette_rng: np.random.Generator | None = None) -> np.ndarray:
    """Gradient plus clutter shapes; colours come from ``palette_rng`` when given."""
    h, w = cfg.height, cfg.width
    colors = (palette_rng or rng).uniform(0.0, 1.0, (2 + cfg.clutter, 3))

    def muted(c):
        gray = c.mean()
        level = 0.5 + cfg.background_contrast * (gray - 0.5)
        return level + cfg.background_saturation * (c - gray)

    c0, c1 = muted(colors[:2])
    t = np.linspace(0.0, 1.0, w)[None, :, None]
    img = np.broadcast_to(c0 * (1 - t) + c1 * t, (h, w, 3)).copy()
    for color in colors[2:]:
        color = muted(color)
        bw, bh = rng.integers(6, max(7, w // 3)), rng.integers(6, max(7, h // 2))
        x0, y0 = rng.integers(0, w - bw + 1), rng.integers(0, h - bh + 1)
        if rng.random() < 0.5:
            img[y0 : y0 + bh, x0 : x0 + bw] = color
        else:
            yy, xx = np.mgrid[0:bh, 0:bw]
            ell = ((xx + 0.5 - bw / 2) / (bw / 2)) ** 2 + ((yy + 0.5 - bh / 2) / (bh / 2)) ** 2 <= 1
            img[y0 : y0 + bh, x0 : x0 + bw][ell] = color
    return img


def _draw_figure(img, mask, label, box, appearance, rng) -> None:
    x1, y1, x2, y2 = (int(v) for v in box.as_tuple())
    part = figure_template(y2 - y1, x2 - x1)
    brightness = rng.uniform(0.85, 1.15)
    jitter = rng.normal(0.0, 0.04, (3, 3))
    colors = np.clip(appearance[:9].reshape(3, 3) * brightness + jitter, 0.0, 1.0)
    region = img[y1:y2, x1:x2]
    mregion = mask[y1:y2, x1:x2]
    for k, color in zip((1, 2, 3), (colors[2], colors[0], colors[1])):
        sel = part == k
        region[sel] = color
        mregion[sel] = label


def _draw_accessory(img, mask, box, color, rng) -> None:
    """A carried bag hanging beside the figure, mostly outside its box.

    It is scenery, not part of any instance, so it is painted only on
    background pixels and stays out of the mask.
    """
    x1, y1, x2, y2 = (int(v) for v in box.as_tuple())
    w, h = x2 - x1, y2 - y1
    bw = max(2, int(round(0.3 * w)))
    inside = int(round(0.1 * w))
    bx1 = x2 - inside if rng.random() < 0.5 else x1 + inside - bw
    by1 = y1 + int(round(0.45 * h))
    by2 = by1 + max(2, int(round(0.22 * h)))
    H, W = mask.shape
    xs, ys = slice(max(bx1, 0), min(bx1 + bw, W)), slice(max(by1, 0), min(by2, H))
    free = mask[ys, xs] == 0
    img[ys, xs][free] = np.clip(color + rng.normal(0.0, 0.04, 3), 0.0, 1.0)


def _box_for(rng, cfg: SceneConfig, scale: float, placed: list[Box], occlude: bool) -> Box | None:
    h = int(round(rng.uniform(cfg.person_height_min, cfg.person_height_max) * scale))
    h = int(np.clip(h, 8, cfg.height))
    w = max(4, int(round(h * rng.uniform(0.38, 0.46))))
    if w > cfg.width:
        return None
    y1 = int(rng.integers(0, cfg.height - h + 1))
    if occlude and placed:
        ref = placed[int(rng.integers(len(placed)))]
        shift = int(round(ref.width * rng.uniform(0.45, 0.75))) * (1 if rng.random() < 0.5 else -1)
        x1 = int(np.clip(ref.x1 + shift, 0, cfg.width - w))
    else:
        x1 = int(rng.integers(0, cfg.width - w + 1))
    return Box(x1, y1, x1 + w, y1 + h)


def gen_scene(seed: int, cfg: SceneConfig = SceneConfig(), people: list[int | None] | None = None,
              dataset_seed: int | None = None, location: int | None = None) -> Scene:
    """Render one scene.

    ``people`` lists the identity of each figure in drawing order (``None``
    for unlabeled). When omitted, a random count of unlabeled figures is
    drawn from ``seed``. Labeled figures take their appearance from
    ``dataset_seed`` (defaults to ``seed``), and a ``location`` id
    fixes the background palette (clutter placement still varies).
    """
    rng = make_rng(seed, _K_SCENE)
    if people is None:
        n = int(rng.integers(cfg.min_persons, cfg.max_persons + 1))
        people = [None] * n
    app_seed = seed if dataset_seed is None else dataset_seed
    palette = None if location is None else make_rng(app_seed, _K_LOCATION, location)
    img = _render_background(rng, cfg, palette)
    mask = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    annotations: list[Annotation] = []
    placed: list[Box] = []
    for label, ident in enumerate(people, start=1):
        appearance = identity_appearance(app_seed, ident) if ident is not None else _random_appearance(rng)
        occlude = rng.random() < cfg.occlusion_prob
        for attempt in range(cfg.max_retries):
            # halfway through, try the other placement mode
            if attempt == cfg.max_retries // 2 and (cfg.occlusion_prob > 0 or occlude):
                occlude = not occlude
            box = _box_for(rng, cfg, appearance[9], placed, occlude)
            if box is None:
                continue
            if not occlude and any(_overlaps(box, p) for p in placed):
                continue
            trial_img, trial_mask = img.copy(), mask.copy()
            _draw_figure(trial_img, trial_mask, label, box, appearance, rng)
            if rng.random() < cfg.accessory_prob:
                _draw_accessory(trial_img, trial_mask, box, appearance[10:13], rng)
            if _visible_enough(trial_mask, label, placed) and _dominant_in_context(
                trial_mask, placed + [box], cfg.dominance_ratio
            ):
                img, mask = trial_img, trial_mask
                break
        else:
            raise GenerationError(f"could not place figure {label} after {cfg.max_retries} tries")
        placed.append(box)
        annotations.append(Annotation(box, ident))
    if cfg.noise_level > 0:
        img = img + rng.normal(0.0, cfg.noise_level, img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Scene(image=img, mask=mask, annotations=annotations)


def _overlaps(a: Box, b: Box) -> bool:
    return a.x1 < b.x2 and b.x1 < a.x2 and a.y1 < b.y2 and b.y1 < a.y2


def _dominant_in_context(mask: np.ndarray, boxes: list[Box], ratio: float) -> bool:
    """Each figure outnumbers every other figure inside its box grown by ``ratio``."""
    if ratio < 1.0:
        return True
    h, w = mask.shape
    for label, box in enumerate(boxes, start=1):
        r = expand_roi(box, ratio, w, h)
        counts = np.bincount(mask[int(r.y1):int(r.y2), int(r.x1):int(r.x2)].ravel(), minlength=len(boxes) + 1)
        counts[0] = 0
        own = counts[label]
        counts[label] = 0
        if own <= counts.max():
            return False
    return True


def _visible_enough(mask: np.ndarray, new_label: int, placed: list[Box], frac: float = 0.5) -> bool:
    """Every earlier figure keeps at least ``frac`` of its template pixels."""
    for label, box in enumerate(placed, start=1):
        x1, y1, x2, y2 = (int(v) for v in box.as_tuple())
        full = int((figure_template(y2 - y1, x2 - x1) > 0).sum())
        if (mask[y1:y2, x1:x2] == label).sum() < frac * full:
            return False
    return True


# ---------------------------------------------------------------- datasets


def validate_dataset_config(cfg: DatasetConfig) -> None:
    if cfg.n_identities < 2 or cfg.n_scenes < 4:
        raise DatasetConfigError("need at least 2 identities and 4 scenes")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise DatasetConfigError(f"test_fraction must lie in (0, 1), got {cfg.test_fraction}")
    if not cfg.gallery_sizes or sorted(cfg.gallery_sizes) != list(cfg.gallery_sizes):
        raise DatasetConfigError(f"gallery_sizes must be non-empty and ascending: {cfg.gallery_sizes}")
    if cfg.max_positive_scenes < 1 or cfg.gallery_sizes[0] <= cfg.max_positive_scenes:
        raise DatasetConfigError("smallest gallery must exceed max_positive_scenes")
    if not 0.0 <= cfg.location_prob <= 1.0:
        raise DatasetConfigError(f"location_prob must lie in [0, 1], got {cfg.location_prob}")
    if cfg.location_size < 1:
        raise DatasetConfigError(f"location_size must be positive, got {cfg.location_size}")
    sc = cfg.scene
    if not 0 <= sc.min_persons <= sc.max_persons or not 0.0 <= sc.unlabeled_fraction <= 1.0:
        raise DatasetConfigError("bad person count range or unlabeled fraction")


def _assign_people(rng, n_scenes: int, ids: list[int], cfg: DatasetConfig):
    """Per-scene identity lists and locations, balancing how often each identity appears.

    Identities are split into consecutive groups of ``location_size``; a group's
    location id is its first identity. A location scene draws its people from
    the group first and only then from everybody else.
    """
    sc = cfg.scene
    usage = {i: 0 for i in ids}
    groups = [ids[k : k + cfg.location_size] for k in range(0, len(ids), cfg.location_size)]
    scenes, locations = [], []
    for _ in range(n_scenes):
        n = int(rng.integers(sc.min_persons, sc.max_persons + 1))
        labeled = rng.random(n) >= sc.unlabeled_fraction
        pool = sorted(ids, key=lambda i: (usage[i], rng.random()))
        location = None
        if cfg.location_prob > 0 and rng.random() < cfg.location_prob:
            group = min(groups, key=lambda g: (sum(usage[i] for i in g), rng.random()))
            location = group[0]
            pool = [i for i in pool if i in group] + [i for i in pool if i not in group]
        people: list[int | None] = []
        take = iter(pool)
        for is_labeled in labeled:
            ident = next(take, None) if is_labeled else None
            if ident is not None:
                usage[ident] += 1
            people.append(ident)
        scenes.append(people)
        locations.append(location)
    short = [i for i, c in usage.items() if c < 2]
    if short:
        raise DatasetConfigError(f"identities {short[:5]} appear in fewer than 2 scenes; add scenes")
    return scenes, locations


def gen_dataset(seed: int, cfg: DatasetConfig = DatasetConfig()) -> DatasetSplit:
    validate_dataset_config(cfg)
    rng = make_rng(seed, _K_LAYOUT)
    n_test = int(round(cfg.n_scenes * cfg.test_fraction))
    n_train = cfg.n_scenes - n_test
    all_ids = list(range(1, cfg.n_identities + 1))
    if cfg.disjoint_identities:
        n_train_ids = cfg.n_identities // 2
        train_ids, test_ids = all_ids[:n_train_ids], all_ids[n_train_ids:]
    else:
        train_ids = test_ids = all_ids
    train_people, train_locs = _assign_people(rng, n_train, train_ids, cfg)
    test_people, test_locs = _assign_people(rng, n_test, test_ids, cfg)

    # train identities are relabeled to 1..L for the lookup table
    relabel = {g: i for i, g in enumerate(train_ids, start=1)}
    train = []
    for idx, people in enumerate(train_people):
        scene = gen_scene(_scene_seed(seed, 0, idx), cfg.scene, people, dataset_seed=seed,
                          location=train_locs[idx])
        for ann in scene.annotations:
            if ann.identity is not None:
                ann.identity = relabel[ann.identity]
        train.append(scene)
    test = [
        gen_scene(_scene_seed(seed, 1, idx), cfg.scene, people, dataset_seed=seed, location=test_locs[idx])
        for idx, people in enumerate(test_people)
    ]
    probes, galleries = _sample_probes(make_rng(seed, _K_PROBES), test, cfg)
    return DatasetSplit(train, test, probes, galleries, len(train_ids), seed, cfg)


def _scene_seed(seed: int, split: int, idx: int) -> int:
    return int(make_rng(seed, _K_SCENE, split, idx).integers(0, 2**63 - 1))


def _sample_probes(rng, test: list[Scene], cfg: DatasetConfig):
    candidates = [
        (s, a) for s, scene in enumerate(test) for a, ann in enumerate(scene.annotations)
        if ann.identity is not None
    ]
    if cfg.n_probes > len(candidates):
        raise DatasetConfigError(f"{cfg.n_probes} probes requested but only {len(candidates)} labeled test persons")
    scenes_of: dict[int, set[int]] = {}
    for s, a in candidates:
        scenes_of.setdefault(test[s].annotations[a].identity, set()).add(s)
    # round-robin over identities so every identity is probed before any repeats
    by_id: dict[int, list[tuple[int, int]]] = {}
    for c in candidates:
        by_id.setdefault(test[c[0]].annotations[c[1]].identity, []).append(c)
    queues = {i: [by_id[i][j] for j in rng.permutation(len(by_id[i]))] for i in sorted(by_id)}
    order = [i for i in rng.permutation(sorted(by_id))]
    probes: list[tuple[int, int]] = []
    while len(probes) < cfg.n_probes:
        for i in order:
            if queues[int(i)] and len(probes) < cfg.n_probes:
                probes.append(queues[int(i)].pop(0))
    galleries = []
    largest = cfg.gallery_sizes[-1]
    for s, a in probes:
        ident = test[s].annotations[a].identity
        pos = sorted(scenes_of[ident] - {s})
        pos = [pos[j] for j in rng.permutation(len(pos))][: cfg.max_positive_scenes]
        neg = [j for j in range(len(test)) if j not in scenes_of[ident]]
        if len(pos) + len(neg) < largest:
            raise DatasetConfigError(f"not enough test scenes for a gallery of {largest}")
        neg = [neg[j] for j in rng.permutation(len(neg))]
        galleries.append({n: sorted(pos + neg[: n - len(pos)]) for n in cfg.gallery_sizes})
    return probes, galleries


# ---------------------------------------------------------------- serialization


def config_to_items(cfg: DatasetConfig) -> list[tuple[str, str]]:
    items = []
    for f in fields(DatasetConfig):
        v = getattr(cfg, f.name)
        if f.name == "scene":
            items += [(f"scene.{k}", repr(x)) for k, x in asdict(v).items()]
        elif f.name == "gallery_sizes":
            items.append((f.name, ",".join(str(n) for n in v)))
        else:
            items.append((f.name, repr(v)))
    return items


def config_from_items(items: dict[str, str]) -> DatasetConfig:
    scene_kw, top_kw = {}, {}
    scene_types = {f.name: f.type for f in fields(SceneConfig)}
    top_types = {f.name: f.type for f in fields(DatasetConfig)}
    for key, raw in items.items():
        if key.startswith("scene."):
            name = key[len("scene."):]
            if name not in scene_types:
                raise DatasetConfigError(f"unknown key {key!r}")
            scene_kw[name] = _parse_scalar(scene_types[name], raw)
        elif key == "gallery_sizes":
            top_kw[key] = tuple(int(x) for x in raw.split(",") if x)
        elif key in top_types and key != "scene":
            top_kw[key] = _parse_scalar(top_types[key], raw)
        else:
            raise DatasetConfigError(f"unknown key {key!r}")
    return DatasetConfig(scene=SceneConfig(**scene_kw), **top_kw)


def _parse_scalar(typ, raw: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "bool":
        if raw not in ("True", "False"):
            raise DatasetConfigError(f"not a boolean: {raw!r}")
        return raw == "True"
    raise DatasetConfigError(f"unsupported field type {typ}")


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def save_dataset(split: DatasetSplit, directory: str | os.PathLike) -> None:
    root = Path(directory)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.txt", "w") as fh:
        fh.write(f"format {FORMAT_VERSION}\n")
        fh.write(f"seed {split.seed}\n")
        fh.write(f"num_train_ids {split.num_train_ids}\n")
        for k, v in config_to_items(split.cfg):
            fh.write(f"cfg {k}={v}\n")
    ann_lines, split_lines = [], []
    for part, scenes in (("train", split.train), ("test", split.test)):
        for idx, scene in enumerate(scenes):
            name = f"{part}_{idx:04d}"
            write_ppm(root / "scenes" / f"{name}.ppm", np.round(scene.image * 255.0).astype(np.uint8))
            write_pgm(root / "scenes" / f"{name}.pgm", scene.mask)
            split_lines.append(f"scene {part} {name}")
            for ann in scene.annotations:
                b = ann.box
                ident = "?" if ann.identity is None else str(ann.identity)
                ann_lines.append(f"{name} {_fmt(b.x1)} {_fmt(b.y1)} {_fmt(b.x2)} {_fmt(b.y2)} {ident}")
    for p, (s, a) in enumerate(split.probes):
        split_lines.append(f"probe {s} {a}")
    for p, gal in enumerate(split.galleries):
        for size, members in gal.items():
            split_lines.append(f"gallery {p} {size} " + " ".join(str(m) for m in members))
    (root / "annotations.txt").write_text("\n".join(ann_lines) + "\n")
    (root / "splits.txt").write_text("\n".join(split_lines) + "\n")


def _records(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    if text and not text.endswith("\n"):
        raise DatasetFormatError(f"{path}:{text.count(chr(10)) + 1}: truncated final record")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if line and not line.startswith("#"):
            yield lineno, line.split()


def load_dataset(directory: str | os.PathLike) -> DatasetSplit:
    root = Path(directory)
    manifest = root / "manifest.txt"
    seed, num_train_ids, version, cfg_items = None, None, None, {}
    for lineno, rec in _records(manifest):
        try:
            if rec[0] == "format":
                version = rec[1]
            elif rec[0] == "seed":
                seed = int(rec[1])
            elif rec[0] == "num_train_ids":
                num_train_ids = int(rec[1])
            elif rec[0] == "cfg":
                key, _, value = rec[1].partition("=")
                cfg_items[key] = value
            else:
                raise ValueError(f"unknown record {rec[0]!r}")
        except (IndexError, ValueError) as exc:
            raise DatasetFormatError(f"{manifest}:{lineno}: {exc}") from None
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{manifest}: expected format {FORMAT_VERSION}, found {version}")
    if seed is None or num_train_ids is None:
        raise DatasetFormatError(f"{manifest}: missing seed or num_train_ids")
    try:
        cfg = config_from_items(cfg_items)
    except (DatasetConfigError, ValueError) as exc:
        raise DatasetFormatError(f"{manifest}: {exc}") from None

    ann_path = root / "annotations.txt"
    anns: dict[str, list[Annotation]] = {}
    for lineno, rec in _records(ann_path):
        try:
            if len(rec) != 6:
                raise ValueError(f"expected 6 fields, found {len(rec)}")
            coords = [float(v) for v in rec[1:5]]
            ident = None if rec[5] == "?" else int(rec[5])
            anns.setdefault(rec[0], []).append(Annotation(Box(*coords), ident))
        except ValueError as exc:
            raise DatasetFormatError(f"{ann_path}:{lineno}: {exc}") from None

    split_path = root / "splits.txt"
    parts: dict[str, list[Scene]] = {"train": [], "test": []}
    probes, galleries = [], []
    for lineno, rec in _records(split_path):
        try:
            if rec[0] == "scene":
                part, name = rec[1], rec[2]
                if part not in parts:
                    raise ValueError(f"unknown split {part!r}")
                rgb = read_pnm(root / "scenes" / f"{name}.ppm")
                mask = read_pnm(root / "scenes" / f"{name}.pgm")
                if rgb.ndim != 3 or mask.ndim != 2 or rgb.shape[:2] != mask.shape:
                    raise ValueError(f"scene {name}: image/mask shape mismatch")
                parts[part].append(Scene(rgb.astype(np.float64) / 255.0, mask.copy(), anns.pop(name, [])))
            elif rec[0] == "probe":
                probes.append((int(rec[1]), int(rec[2])))
                galleries.append({})
            elif rec[0] == "gallery":
                p, size = int(rec[1]), int(rec[2])
                galleries[p][size] = [int(x) for x in rec[3:]]
            else:
                raise ValueError(f"unknown record {rec[0]!r}")
        except (IndexError, ValueError, PnmError, OSError) as exc:
            raise DatasetFormatError(f"{split_path}:{lineno}: {exc}") from None
    if anns:
        raise DatasetFormatError(f"{ann_path}: annotations for unknown scenes {sorted(anns)[:3]}")
    return DatasetSplit(parts["train"], parts["test"], probes, galleries, num_train_ids, seed, cfg)
