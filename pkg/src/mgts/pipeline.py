"""End-to-end steps driven by a :class:`RunConfig`: data, training, evaluation."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .detectsim import simulate_dataset
from .diffcore import make_rng
from .evalkit import DescriptorCache, EvalReport, SeStats, evaluate, se_statistics
from .oim import OimState
from .reidnet import MgtsModel, TrainLog, train, training_samples
from .synthdata import DatasetSplit, gen_dataset

# sub-stream keys for per-run seeds
_K_TRAIN_DETECT, _K_TEST_DETECT = 21, 22


def build_dataset(rc: RunConfig) -> DatasetSplit:
    return gen_dataset(rc.seed, rc.data)


def _sub_seed(seed: int, key: int) -> int:
    return int(make_rng(seed, key).integers(2**31))


@dataclass
class TrainedModel:
    model: MgtsModel
    oim_state: OimState
    log: TrainLog


def train_model(rc: RunConfig, dataset: DatasetSplit) -> TrainedModel:
    model = MgtsModel(rc.model, rc.seed)
    state = OimState(dataset.num_train_ids, rc.model.dim, rc.oim.queue_size, tau=rc.oim.tau, eta=rc.oim.eta)
    boxes = None
    if rc.train.box_source == "detected":
        boxes = simulate_dataset(dataset.train, rc.detector, _sub_seed(rc.seed, _K_TRAIN_DETECT))
    samples = training_samples(dataset.train, rc.model, boxes)
    log = train(model, dataset, state, rc.train_config(), samples=samples)
    return TrainedModel(model, state, log)


def gallery_detections(rc: RunConfig, dataset: DatasetSplit):
    """Raw simulated detections for the test scenes, or None for ground-truth boxes."""
    if not rc.eval.use_detector:
        return None
    return simulate_dataset(dataset.test, rc.detector, _sub_seed(rc.seed, _K_TEST_DETECT))


def evaluate_sizes(rc: RunConfig, model: MgtsModel, dataset: DatasetSplit,
                   sizes=None) -> dict[int, EvalReport]:
    dets = gallery_detections(rc, dataset)
    cache = DescriptorCache(model, dataset)
    return {
        n: evaluate(model, dataset, n, dets, ks=rc.eval.cmc_ks, cache=cache, score_thresh=rc.eval.score_thresh,
                    nms_thresh=rc.eval.nms_final, proposal_nms=rc.eval.nms_proposal)
        for n in (sizes or rc.eval.gallery_sizes)
    }


def se_inspection(model: MgtsModel, dataset: DatasetSplit) -> SeStats:
    return se_statistics(model, [p for p, _ in training_samples(dataset.train, model.cfg)])
