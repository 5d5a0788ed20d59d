"""Two-stream re-ID network with SE channel re-weighting and OIM training.

The encoders are deliberately tiny: each block is a 2×2 average pool, a
pointwise (1×1) linear map and a ReLU. The masked foreground patch goes
through ``f_net`` and the original patch through ``o_net``; their maps are
concatenated (foreground channels first), re-weighted by the SE block,
pooled, projected and L2-normalized.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor, make_rng
from .geometry import Box, iou, resize
from .masking import box_mask, separate_foreground
from .oim import OimState, lut_update, oim_loss, queue_push

# variant -> (visual components fed to each stream, uses expanded RoI)
VARIANTS: dict[str, tuple[tuple[str, ...], bool]] = {
    "single_O": (("O",), False),
    "single_F": (("F",), False),
    "single_B": (("B",), False),
    "single_OE": (("O",), True),
    "single_BE": (("B",), True),
    "two_stream_OFE": (("F", "O"), True),
}
VARIANT_LABELS = {
    "single_O": "O",
    "single_F": "F",
    "single_B": "B",
    "single_OE": "O+E",
    "single_BE": "B+E",
    "two_stream_OFE": "O+F+E",
}
MASK_MODES = ("instance", "box")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "two_stream_OFE"
    channels: tuple[int, ...] = (3, 8, 16, 32)
    dim: int = 32
    reduction: int = 4
    input_h: int = 32
    input_w: int = 16
    gamma: float = 1.3
    mask_mode: str = "instance"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.mask_mode not in MASK_MODES:
            raise ContractError(f"unknown mask mode {self.mask_mode!r}")
        if self.channels[0] != 3 or any(c < 1 for c in self.channels):
            raise ContractError(f"channel plan must start at 3: {self.channels}")
        if self.dim < 2 or self.gamma < 1.0:
            raise ContractError("dim must be >= 2 and gamma >= 1")
        if self.se_channels % self.reduction:
            raise ContractError(f"reduction {self.reduction} must divide {self.se_channels}")

    @property
    def streams(self) -> tuple[str, ...]:
        return VARIANTS[self.variant][0]

    @property
    def expand(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.expand else 1.0

    @property
    def se_channels(self) -> int:
        return self.channels[-1] * len(VARIANTS[self.variant][0])

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key not in types:
                raise ContractError(f"unknown model config key {key!r}")
            typ = types[key]
            if key == "channels":
                kw[key] = tuple(int(x) for x in raw.split(","))
            elif typ == "int":
                kw[key] = int(raw)
            elif typ == "float":
                kw[key] = float(raw)
            else:
                kw[key] = raw
        return cls(**kw)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()


def _glorot(rng, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, (fan_out, fan_in))


class MgtsModel:
    """Parameters live in ``params`` (ordered name -> Tensor)."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        rng = make_rng(seed, 0x4D475453)
        self.params: dict[str, Tensor] = {}
        enc_names = ["f_net", "o_net"] if len(cfg.streams) == 2 else ["net"]
        for name in enc_names:
            for i, (cin, cout) in enumerate(zip(cfg.channels[:-1], cfg.channels[1:])):
                self._add(f"{name}.{i}.W", _glorot(rng, cout, cin))
                self._add(f"{name}.{i}.b", np.zeros(cout))
        C = cfg.se_channels
        hid = C // cfg.reduction
        self._add("se.W1", _glorot(rng, hid, C))
        self._add("se.b1", np.zeros(hid))
        self._add("se.W2", _glorot(rng, C, hid))
        self._add("se.b2", np.zeros(C))
        # stored 2c×d, applied as f·W
        self._add("proj.W", _glorot(rng, C, cfg.dim))
        self.encoders = enc_names

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ContractError(f"parameter names differ: {sorted(set(arrays) ^ set(self.params))}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ContractError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)
            self.params[k].grad = np.zeros_like(self.params[k].data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None


# ---------------------------------------------------------------- forward pieces


PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def standardize(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) - PIXEL_MEAN) / PIXEL_STD


def _to_chw(patch) -> Tensor:
    """Model-ready h×w×3 patch to a 3×h×w tensor."""
    if isinstance(patch, Tensor):
        return patch
    return Tensor(np.ascontiguousarray(np.asarray(patch, dtype=np.float64).transpose(2, 0, 1)))


def encoder_forward(model: MgtsModel, name: str, x: Tensor) -> Tensor:
    p = model.params
    for i in range(len(model.cfg.channels) - 1):
        x = dc.avg_pool_2x(x)
        c, h, w = x.shape
        y = dc.matmul(p[f"{name}.{i}.W"], dc.reshape(x, (c, h * w)))
        y = dc.add_bias(y, p[f"{name}.{i}.b"])
        x = dc.relu(dc.reshape(y, (y.shape[0], h, w)))
    return x


def seblock_forward(f: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> tuple[Tensor, Tensor]:
    """Channel weights ``sigmoid(W2 relu(W1 gap(f) + b1) + b2)`` and the re-weighted map."""
    C = f.shape[0]
    if W1.shape[1] != C or W2.shape[0] != C:
        raise dc.DimensionError(f"SE weights {W1.shape}/{W2.shape} do not match {C} channels")
    s = dc.reshape(dc.global_average_pool(f), (C, 1))
    z = dc.reshape(dc.matmul(W1, s), (W1.shape[0],))
    z = dc.relu(dc.add(z, b1))
    z = dc.reshape(dc.matmul(W2, dc.reshape(z, (W2.shape[1], 1))), (C,))
    w = dc.sigmoid(dc.add(z, b2))
    return dc.channel_scale(f, w), w


def _head(model: MgtsModel, fmap: Tensor) -> tuple[Tensor, Tensor]:
    p = model.params
    fprime, w = seblock_forward(fmap, p["se.W1"], p["se.b1"], p["se.W2"], p["se.b2"])
    g = dc.global_average_pool(fprime)
    proj = dc.matmul(dc.reshape(g, (1, g.shape[0])), p["proj.W"])
    x = dc.l2_normalize(dc.reshape(proj, (proj.shape[1],)))
    return x, w


def mgts_forward(model: MgtsModel, masked_patch, original_patch) -> tuple[Tensor, Tensor]:
    """Two-stream descriptor and the SE weight vector (foreground channels first)."""
    if model.variant != "two_stream_OFE":
        raise ContractError(f"mgts_forward needs the two-stream variant, model is {model.variant}")
    ff = encoder_forward(model, "f_net", _to_chw(masked_patch))
    fo = encoder_forward(model, "o_net", _to_chw(original_patch))
    return _head(model, dc.concat_channels(ff, fo))


def variant_forward(model: MgtsModel, patch_O=None, patch_F=None, patch_B=None) -> Tensor:
    return variant_forward_with_weights(model, patch_O, patch_F, patch_B)[0]


def variant_forward_with_weights(model: MgtsModel, patch_O=None, patch_F=None, patch_B=None):
    given = {"O": patch_O, "F": patch_F, "B": patch_B}
    streams = model.cfg.streams
    for s in streams:
        if given[s] is None:
            raise ContractError(f"variant {model.variant} needs patch {s}")
    if len(streams) == 2:
        return mgts_forward(model, given["F"], given["O"])
    return _head(model, encoder_forward(model, "net", _to_chw(given[streams[0]])))


# ---------------------------------------------------------------- patches


def extract_patches(img: np.ndarray, mask: np.ndarray | None, box: Box, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Standardized O, F and B patches for one RoI at the model input size.

    The crop is standardized first so that masked-out pixels sit at zero,
    the mean color; masking happens before resizing.
    """
    gamma = cfg.effective_gamma
    if cfg.mask_mode == "box" or mask is None:
        mp = box_mask(box, gamma, img)
    else:
        mp = separate_foreground(box, gamma, img, mask)
    size = (cfg.input_h, cfg.input_w)
    src = standardize(mp.source)
    keep = mp.keep[..., None]
    return {
        "O": resize(src, *size),
        "F": resize(src * keep, *size),
        "B": resize(src * ~keep, *size),
    }


def describe(model: MgtsModel, patches: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Descriptor and SE weights without recording gradients."""
    flags = [p.requires_grad for p in model.params.values()]
    for p in model.params.values():
        p.requires_grad = False
    try:
        x, w = variant_forward_with_weights(model, patches.get("O"), patches.get("F"), patches.get("B"))
    finally:
        for p, f in zip(model.params.values(), flags):
            p.requires_grad = f
    return x.data.copy(), w.data.copy()


# ---------------------------------------------------------------- training


class TrainingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.006
    lr_decay_epoch: int = 22
    lr_decay: float = 0.1
    seed: int = 0
    box_source: str = "gt"  # "detected": train on simulated detections matched to ground truth

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.lr_decay < 0:
            raise TrainingConfigError("epochs and lr must be >= 0 and batch_size >= 1")
        if self.box_source not in ("gt", "detected"):
            raise TrainingConfigError(f"box_source must be 'gt' or 'detected', got {self.box_source!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * (self.lr_decay if epoch >= self.lr_decay_epoch else 1.0)


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)


def training_samples(scenes, cfg: ModelConfig, boxes=None,
                     match_iou: float = 0.5) -> list[tuple[dict[str, np.ndarray], int | None]]:
    """(patches, label) pairs for training.

    By default every ground-truth person is one sample. With ``boxes`` (one
    list of detections per scene) each detection takes the identity of its
    best-overlapping person when that overlap reaches ``match_iou``;
    detections on unlabeled persons stay unlabeled and detections on
    nobody are dropped.
    """
    samples = []
    for s, scene in enumerate(scenes):
        if boxes is None:
            pairs = [(ann.box, ann.identity) for ann in scene.annotations]
        else:
            pairs = []
            for b in boxes[s]:
                best = max(scene.annotations, key=lambda a: iou(b, a.box), default=None)
                if best is not None and iou(b, best.box) >= match_iou:
                    pairs.append((b, best.identity))
        for b, label in pairs:
            samples.append((extract_patches(scene.image, scene.mask, b, cfg), label))
    return samples


def train(model: MgtsModel, dataset, oim_state: OimState, hyper: TrainConfig = TrainConfig(),
          samples=None) -> TrainLog:
    """SGD on ground-truth boxes of ``dataset.train`` with the OIM loss.

    ``samples`` may carry precomputed ``training_samples`` output.
    """
    if samples is None:
        samples = training_samples(dataset.train, model.cfg)
    if not any(label is not None for _, label in samples):
        raise TrainingConfigError("training set has no labeled persons")
    model.set_requires_grad(True)
    log = TrainLog()
    params = model.parameters()
    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        order = make_rng(hyper.seed, 0x7EA1, epoch).permutation(len(samples))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            batch = [samples[i] for i in order[start : start + hyper.batch_size]]
            n_lab = sum(label is not None for _, label in batch)
            pending = []
            for patches, label in batch:
                x, _ = variant_forward_with_weights(model, patches.get("O"), patches.get("F"), patches.get("B"))
                if label is not None:
                    loss = oim_loss(x, label, oim_state)
                    losses.append(float(loss.data))
                    dc.scale(loss, 1.0 / n_lab).backward()
                pending.append((x.data.copy(), label))
            dc.sgd_step(params, lr)
            for xv, label in pending:
                if label is None:
                    queue_push(oim_state, xv)
                else:
                    lut_update(oim_state, xv, label)
        log.epoch_loss.append(float(np.mean(losses)) if losses else 0.0)
        log.epoch_lr.append(lr)
    return log


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MGTSCKPT"
CKPT_VERSION = 1
_KIND_F64, _KIND_I64, _KIND_TEXT = 0, 1, 2


class CheckpointError(ValueError):
    pass


def _block(name: str, kind: int, payload: bytes, shape: tuple[int, ...] = ()) -> bytes:
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", kind, len(shape))
    head += b"".join(struct.pack("<Q", d) for d in shape)
    return head + struct.pack("<Q", len(payload)) + payload


def _array_block(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype.kind in "iu":
        return _block(name, _KIND_I64, arr.astype("<i8").tobytes(), arr.shape)
    return _block(name, _KIND_F64, np.asarray(arr, dtype="<f8").tobytes(), arr.shape)


def checkpoint_bytes(model: MgtsModel, state: OimState | None) -> bytes:
    blocks = [_block("config", _KIND_TEXT, model.cfg.to_text().encode())]
    blocks += [_array_block(f"param/{k}", v.data) for k, v in model.params.items()]
    if state is not None:
        blocks += [
            _array_block("oim/lut", state.lut),
            _array_block("oim/queue", state.queue),
            _array_block("oim/ring", np.array([state.head, state.count], dtype=np.int64)),
            _array_block("oim/scalars", np.array([state.tau, state.eta])),
        ]
    body = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION) + model.cfg.digest()
    body += struct.pack("<I", len(blocks)) + b"".join(blocks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: MgtsModel, oim_state: OimState | None, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, oim_state))


def load_checkpoint(path) -> tuple[MgtsModel, OimState | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data: bytes) -> tuple[MgtsModel, OimState | None]:
    if len(data) < 8 + 4 + 32 + 4 + 32 or data[:8] != CKPT_MAGIC:
        raise CheckpointError("magic: not an MGTS checkpoint")
    body, checksum = data[:-32], data[-32:]
    (version,) = struct.unpack_from("<I", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"version: expected {CKPT_VERSION}, found {version}")
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError("checksum: payload does not match its SHA-256")
    digest = data[12:44]
    (n_blocks,) = struct.unpack_from("<I", data, 44)
    pos = 48
    blocks: dict[str, object] = {}
    try:
        for _ in range(n_blocks):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode()
            pos += nlen
            kind, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from("<" + "Q" * ndim, body, pos)
            pos += 8 * ndim
            (size,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            payload = body[pos : pos + size]
            pos += size
            if kind == _KIND_TEXT:
                blocks[name] = payload.decode()
            elif kind == _KIND_F64:
                blocks[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
            elif kind == _KIND_I64:
                blocks[name] = np.frombuffer(payload, dtype="<i8").reshape(shape).astype(np.int64)
            else:
                raise CheckpointError(f"{name}: unknown block kind {kind}")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"blocks: {exc}") from None
    if pos != len(body):
        raise CheckpointError("blocks: trailing bytes after last block")
    if "config" not in blocks:
        raise CheckpointError("config: block missing")
    cfg = ModelConfig.from_text(blocks["config"])
    if cfg.digest() != digest:
        raise CheckpointError("config digest: does not match the stored config")
    model = MgtsModel(cfg)
    model.load_arrays({k[len("param/"):]: v for k, v in blocks.items() if k.startswith("param/")})
    state = None
    if "oim/lut" in blocks:
        state = OimState.__new__(OimState)
        state.lut = blocks["oim/lut"]
        state.queue = blocks["oim/queue"]
        state.head, state.count = (int(v) for v in blocks["oim/ring"])
        state.tau, state.eta = (float(v) for v in blocks["oim/scalars"])
    return model, state


def parameters_equal(a: MgtsModel, b: MgtsModel) -> bool:
    return a.cfg == b.cfg and all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
