"""Two-phase training loop and its batch samplers.

Phase one (warmup) trains the embedding with the within-camera triplet
loss alone while the person buffer accumulates per-class features.
Phase two rebuilds the cross-camera affinity once per epoch and adds the
soft-label objectives: cross-entropy against soft labels through the
classifier head (mode "C"), the weighted triplet loss over soft
positives (mode "D"), or both ("C+D"), traded off by lam.

Everything is driven by two seeded generators (one for initialization,
one for batch draws) in a fixed consumption order, so a run is bitwise
reproducible from its config.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Callable

import numpy as np

from .affinity import AffinityMatrix, build_affinity, soft_label_rows, affinity_quality_map
from .buffer import PersonBuffer, new_buffer, update_person
from .data import Dataset
from .errors import ConfigError, ContractError, SelectionError, TrainingError
from .losses import (
    TripletBatch,
    intra_triplet_loss,
    random_triplet_loss,
    select_hardest_negative,
    select_positives,
    softmax_probs,
    weighted_cross_entropy,
    weighted_triplet_loss,
)
from .model import (
    ClassifierHead,
    EmbeddingModel,
    Optimizer,
    OptimizerState,
    backward,
    forward_batch,
    head_backward,
    head_forward,
    init_head,
    init_model,
    sgd_step,
)

INTER_MODES = ("C", "D", "C+D")
WEIGHTING_MODES = ("AW", "W")
MINING_MODES = ("hard", "random")
POSITIVE_SAMPLING_MODES = ("random", "nearest")

TRAINLOG_FORMAT = "crosscam-trainlog"
TRAINLOG_VERSION = "v1"

# Canonical per-epoch columns; wall time is kept out on purpose so the
# serialized log is bitwise reproducible across machines.
TRAINLOG_COLUMNS = (
    "epoch",
    "intra_loss",
    "inter_loss",
    "affinity_map",
    "val_map",
    "val_rank1",
    "skipped_anchors",
    "degenerate_rows",
)


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters, with the defaults used throughout.

    n_p persons x n_k images form one single-camera triplet batch.
    epochs is the total schedule length, warmup_epochs the intra-only
    prefix; both learning rates drop by decay_factor at decay_epoch.
    lam weighs the cross-camera objective selected by inter_mode.
    """

    n_p: int = 32
    n_k: int = 4
    margin: float = 0.3
    lam: float = 1.0
    k: int = 6
    epochs: int = 300
    warmup_epochs: int = 100
    decay_epoch: int = 200
    decay_factor: float = 0.1
    learning_rate_pretrained: float = 0.1
    learning_rate_new: float = 0.01
    momentum: float = 0.9
    class_batch_total: int = 64
    inter_mode: str = "C+D"
    weighting_mode: str = "AW"
    mining_mode: str = "hard"
    mask_same_camera: bool = True
    positive_sampling: str = "random"
    hidden_dim: int = 64
    embed_dim: int = 32
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_p, self.n_k) < 2:
            raise ConfigError("n_p and n_k must be >= 2 for triplet batches")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.warmup_epochs > self.epochs:
            raise ConfigError(
                f"warmup_epochs ({self.warmup_epochs}) must not exceed epochs ({self.epochs})"
            )
        if self.decay_epoch < 1:
            raise ConfigError("decay_epoch must be >= 1")
        if self.decay_factor <= 0:
            raise ConfigError("decay_factor must be > 0")
        if self.inter_mode not in INTER_MODES:
            raise ConfigError(f"inter_mode must be one of {INTER_MODES}, got {self.inter_mode!r}")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise ConfigError(
                f"weighting_mode must be one of {WEIGHTING_MODES}, got {self.weighting_mode!r}"
            )
        if self.mining_mode not in MINING_MODES:
            raise ConfigError(f"mining_mode must be one of {MINING_MODES}, got {self.mining_mode!r}")
        if self.positive_sampling not in POSITIVE_SAMPLING_MODES:
            raise ConfigError(
                f"positive_sampling must be one of {POSITIVE_SAMPLING_MODES}, "
                f"got {self.positive_sampling!r}"
            )
        if self.class_batch_total < 1:
            raise ConfigError("class_batch_total must be >= 1")
        if min(self.hidden_dim, self.embed_dim) < 1:
            raise ConfigError("model dimensions must be >= 1")
        if self.learning_rate_pretrained <= 0 or self.learning_rate_new <= 0:
            raise ConfigError("learning rates must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must be in [0, 1)")

    def optimizer(self) -> Optimizer:
        return Optimizer(
            learning_rate_pretrained=self.learning_rate_pretrained,
            learning_rate_new=self.learning_rate_new,
            momentum=self.momentum,
            decay_epoch=self.decay_epoch,
            decay_factor=self.decay_factor,
        )


@dataclass
class EpochRecord:
    epoch: int
    intra_loss: float
    inter_loss: float
    affinity_map: float | None
    val_map: float | None
    val_rank1: float | None
    skipped_anchors: int
    degenerate_rows: int
    wall_time: float = 0.0  # informational only, not serialized canonically


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @staticmethod
    def _cell(value: float | int | None) -> str:
        if value is None:
            return ""
        if isinstance(value, int):
            return str(value)
        return repr(float(value))

    def to_csv(self) -> str:
        lines = [",".join(TRAINLOG_COLUMNS)]
        for r in self.records:
            lines.append(",".join(self._cell(getattr(r, c)) for c in TRAINLOG_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "format": TRAINLOG_FORMAT,
            "version": TRAINLOG_VERSION,
            "columns": list(TRAINLOG_COLUMNS),
            "records": [{c: getattr(r, c) for c in TRAINLOG_COLUMNS} for r in self.records],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "TrainLog":
        payload = json.loads(text)
        if payload.get("format") != TRAINLOG_FORMAT:
            raise ContractError("not a training log payload")
        if payload.get("version") != TRAINLOG_VERSION:
            raise ContractError(f"unsupported training log version {payload.get('version')!r}")
        records = []
        for rec in payload["records"]:
            records.append(EpochRecord(**{c: rec[c] for c in TRAINLOG_COLUMNS}))
        return TrainLog(records)

    def timing_csv(self) -> str:
        lines = ["epoch,wall_time_s"]
        for r in self.records:
            lines.append(f"{r.epoch},{repr(float(r.wall_time))}")
        return "\n".join(lines) + "\n"


@dataclass
class PKBatch:
    """Indices of one single-camera batch: n_p persons x n_k sample slots."""

    sample_indices: np.ndarray  # (n_p, n_k) into the dataset
    classes: np.ndarray  # (n_p,)
    camera_id: int


def pk_sampler(
    dataset: Dataset, camera_id: int, n_p: int, n_k: int, rng: np.random.Generator
) -> PKBatch:
    """Draw n_p persons of one camera, n_k samples each.

    Persons are drawn without replacement; when the camera has fewer than
    n_p persons, every person is included once and the remainder is drawn
    with replacement.  Samples per person are drawn without replacement,
    falling back to replacement when the person has fewer than n_k.
    """
    if not (0 <= camera_id < dataset.n_cameras):
        raise ContractError(f"camera_id {camera_id} out of range")
    lo = dataset.index.offsets[camera_id]
    hi = dataset.index.offsets[camera_id + 1]
    persons = np.arange(lo, hi, dtype=np.int64)
    if persons.size < 2:
        raise ContractError(
            f"camera {camera_id} has {persons.size} persons; intra-camera triplets need >= 2"
        )
    if persons.size >= n_p:
        chosen = rng.choice(persons, size=n_p, replace=False)
    else:
        extra = rng.choice(persons, size=n_p - persons.size, replace=True)
        chosen = np.concatenate([rng.permutation(persons), extra])
    picks = np.zeros((n_p, n_k), dtype=np.int64)
    for r, cls in enumerate(chosen):
        idxs = dataset.indices_of_class(int(cls))
        if idxs.size >= n_k:
            picks[r] = rng.choice(idxs, size=n_k, replace=False)
        else:
            picks[r] = rng.choice(idxs, size=n_k, replace=True)
    return PKBatch(sample_indices=picks, classes=chosen.astype(np.int64), camera_id=camera_id)


def classification_sampler(
    dataset: Dataset, rng: np.random.Generator, batch_total: int = 64
) -> np.ndarray:
    """Camera-balanced sample draw: floor(batch_total / n_cameras) per camera.

    Returns dataset sample indices in camera order.  Rejected outright
    when the per-camera share floors to zero or a camera is empty.
    """
    quota = batch_total // dataset.n_cameras
    if quota < 1:
        raise ConfigError(
            f"classification batch of {batch_total} across {dataset.n_cameras} cameras "
            "leaves zero samples per camera"
        )
    parts = []
    for cam in range(dataset.n_cameras):
        idx = dataset.indices_of_camera(cam)
        if idx.size == 0:
            raise ContractError(f"camera {cam} has no samples; camera-balanced batch impossible")
        if idx.size >= quota:
            parts.append(rng.choice(idx, size=quota, replace=False))
        else:
            parts.append(rng.choice(idx, size=quota, replace=True))
    return np.concatenate(parts)


@dataclass
class TrainResult:
    model: EmbeddingModel
    head: ClassifierHead
    buffer: PersonBuffer
    log: TrainLog
    optimizer: Optimizer
    opt_state: OptimizerState
    affinity_builds: int
    final_affinity: AffinityMatrix | None
    excluded_cameras: tuple[int, ...] = ()  # cameras with < 2 persons, skipped by intra sampling


def _merge_grads(dst: dict[str, np.ndarray], src: dict[str, np.ndarray]) -> None:
    for name, g in src.items():
        if name in dst:
            dst[name] = dst[name] + g
        else:
            dst[name] = g


EpochCallback = Callable[[int, "TrainResult"], None]


def train(
    dataset: Dataset,
    config: TrainConfig,
    query: Dataset | None = None,
    gallery: Dataset | None = None,
    epoch_callback: EpochCallback | None = None,
) -> TrainResult:
    """Run the full schedule on a training dataset.

    When query and gallery are given, retrieval metrics are computed
    after every epoch and logged.  epoch_callback, when given, observes
    the in-progress result after each epoch (used for checkpointing).
    """
    # Imported here: the evaluation module's ablation harness imports train.
    from .evaluation import evaluate

    config.validate()
    if dataset.split != "train":
        raise ContractError(f"training expects the train split, got {dataset.split!r}")
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")

    C = dataset.index.total
    joint_epochs = config.epochs > config.warmup_epochs
    inter_active = joint_epochs and config.lam > 0.0
    use_c = inter_active and config.inter_mode in ("C", "C+D")
    use_d = inter_active and config.inter_mode in ("D", "C+D")
    if use_c:
        if config.class_batch_total // dataset.n_cameras < 1:
            raise ConfigError(
                f"class_batch_total={config.class_batch_total} with "
                f"{dataset.n_cameras} cameras floors to zero samples per camera"
            )
        for cam in range(dataset.n_cameras):
            if dataset.indices_of_camera(cam).size == 0:
                raise ContractError(f"camera {cam} is empty; classification sampling impossible")

    eligible_cams = [c for c in range(dataset.n_cameras) if dataset.index.counts[c] >= 2]
    excluded_cams = tuple(c for c in range(dataset.n_cameras) if c not in eligible_cams)
    if not eligible_cams:
        raise ContractError("no camera has >= 2 persons; intra-camera triplets impossible")

    ss = np.random.SeedSequence(config.seed)
    init_seed, train_seed = ss.spawn(2)
    rng_init = np.random.default_rng(init_seed)
    rng = np.random.default_rng(train_seed)

    model = init_model(dataset.d_in, config.hidden_dim, config.embed_dim, rng_init)
    head = init_head(config.embed_dim, C, rng_init)
    optimizer = config.optimizer()
    optimizer.validate()
    state = OptimizerState()
    buf = new_buffer(config.embed_dim, C)

    batch_size = config.n_p * config.n_k
    iters_per_epoch = math.ceil(len(dataset) / batch_size)
    truth_cls = dataset.truth_of_class_array() if dataset.has_full_truth() else None

    log = TrainLog()
    affinity_builds = 0
    aff: AffinityMatrix | None = None
    result = TrainResult(model, head, buf, log, optimizer, state, 0, None, excluded_cams)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        joint = epoch > config.warmup_epochs
        rows = None
        affinity_map_value: float | None = None
        degenerate_rows = 0
        if joint:
            aff = build_affinity(
                buf, dataset.index, config.k,
                epoch=epoch, mask_same_camera=config.mask_same_camera,
            )
            affinity_builds += 1
            rows = soft_label_rows(aff)
            degenerate_rows = sum(1 for r in rows if r.degenerate)
            if truth_cls is not None:
                affinity_map_value = affinity_quality_map(aff, truth_cls)

        intra_sum = 0.0
        intra_anchors = 0
        inter_sum = 0.0
        inter_terms = 0
        skipped = 0
        for it in range(iters_per_epoch):
            cam = eligible_cams[it % len(eligible_cams)]
            pk = pk_sampler(dataset, cam, config.n_p, config.n_k, rng)
            flat_idx = pk.sample_indices.reshape(-1)
            X = dataset.features[flat_idx]
            E = forward_batch(model, X)
            tb = TripletBatch(E.reshape(config.n_p, config.n_k, -1), pk.classes, cam)
            if config.mining_mode == "hard":
                lv = intra_triplet_loss(tb, config.margin)
            else:
                lv = random_triplet_loss(tb, config.margin, rng)
            if not np.isfinite(lv.loss):
                raise TrainingError(f"non-finite intra loss at epoch {epoch}, iteration {it}")
            dE = lv.grads["embeddings"].reshape(batch_size, -1) / batch_size
            grads = backward(model, X, dE)
            intra_sum += lv.loss
            intra_anchors += batch_size

            if use_c and joint:
                cls_idx = classification_sampler(dataset, rng, config.class_batch_total)
                Xc = dataset.features[cls_idx]
                Vc = forward_batch(model, Xc)
                scores = head_forward(head, Vc)
                probs = softmax_probs(scores)
                dS = np.zeros_like(scores)
                contributing = 0
                loss_c = 0.0
                for b, sample_i in enumerate(cls_idx):
                    z = int(dataset.class_ids[sample_i])
                    row = rows[z]
                    if row.degenerate:
                        skipped += 1
                        continue
                    wce = weighted_cross_entropy(probs[b], row)
                    loss_c += wce.loss
                    dS[b] = wce.grads["scores"]
                    contributing += 1
                if contributing:
                    if not np.isfinite(loss_c):
                        raise TrainingError(
                            f"non-finite soft cross-entropy at epoch {epoch}, iteration {it}"
                        )
                    dS *= config.lam / contributing
                    head_grads, dVc = head_backward(head, Vc, dS)
                    _merge_grads(grads, backward(model, Xc, dVc))
                    _merge_grads(grads, head_grads)
                    inter_sum += loss_c
                    inter_terms += contributing

            if use_d and joint:
                flatE, flat_labels = tb.flat()
                entries: list[tuple[int, float]] = []
                anchors: list[tuple[int, int, int]] = []  # (anchor row, entry base, negative row)
                for a in range(flatE.shape[0]):
                    z = int(flat_labels[a])
                    try:
                        sel = select_positives(
                            z, aff, dataset, config.n_k, rng,
                            weighting_mode=config.weighting_mode,
                            positive_sampling=config.positive_sampling,
                        )
                        neg = select_hardest_negative(flatE[a], flatE, flat_labels, z)
                    except SelectionError:
                        skipped += 1
                        continue
                    anchors.append((a, len(entries), neg))
                    entries.extend(sel)
                if anchors:
                    pos_idx = np.array([e[0] for e in entries], dtype=np.int64)
                    pos_w = np.array([e[1] for e in entries])
                    Xp = dataset.features[pos_idx]
                    Vp = forward_batch(model, Xp)
                    dVp = np.zeros_like(Vp)
                    dE_extra = np.zeros_like(flatE)
                    loss_d = 0.0
                    for a, base, neg in anchors:
                        wtl = weighted_triplet_loss(
                            flatE[a],
                            Vp[base:base + config.n_k],
                            pos_w[base:base + config.n_k],
                            flatE[neg],
                            config.margin,
                        )
                        loss_d += wtl.loss
                        dE_extra[a] += wtl.grads["anchor"]
                        dVp[base:base + config.n_k] += wtl.grads["positives"]
                        dE_extra[neg] += wtl.grads["negative"]
                    if not np.isfinite(loss_d):
                        raise TrainingError(
                            f"non-finite weighted triplet loss at epoch {epoch}, iteration {it}"
                        )
                    scale = config.lam / len(anchors)
                    _merge_grads(grads, backward(model, X, dE_extra * scale))
                    _merge_grads(grads, backward(model, Xp, dVp * scale))
                    inter_sum += loss_d
                    inter_terms += len(anchors)

            sgd_step(model, head, grads, optimizer, state, epoch)

            # Buffer updates use this batch's pre-update embeddings, one
            # call per distinct person in order of first appearance.
            groups: dict[int, list[int]] = {}
            for r, cls in enumerate(pk.classes):
                groups.setdefault(int(cls), []).append(r)
            for cls, rows_of in groups.items():
                feats = tb.embeddings[rows_of].reshape(-1, tb.embeddings.shape[2])
                update_person(buf, cls, feats)
            buf.t += 1

        val_map = val_rank1 = None
        if query is not None and gallery is not None:
            res = evaluate(model, query, gallery)
            val_map = res.map
            val_rank1 = res.cmc[1]

        record = EpochRecord(
            epoch=epoch,
            intra_loss=intra_sum / max(intra_anchors, 1),
            inter_loss=(inter_sum / inter_terms) if inter_terms else 0.0,
            affinity_map=affinity_map_value,
            val_map=val_map,
            val_rank1=val_rank1,
            skipped_anchors=skipped,
            degenerate_rows=degenerate_rows,
            wall_time=time.perf_counter() - t0,
        )
        log.records.append(record)
        result.affinity_builds = affinity_builds
        result.final_affinity = aff
        if epoch_callback is not None:
            epoch_callback(epoch, result)

    result.affinity_builds = affinity_builds
    result.final_affinity = aff
    return result


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    base = base or TrainConfig()
    known = set(asdict(base))
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    cfg = replace(base, **values)
    cfg.validate()
    return cfg
