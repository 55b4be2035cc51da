"""Objective functions and their hand-derived gradients.

Three losses live here: the within-camera triplet loss with hardest
positive/negative mining, cross-entropy against a soft-label
distribution, and the weighted triplet loss that pulls an anchor toward
several soft positives at once.  All distances are raw Euclidean; no
embedding normalization happens anywhere.

Gradient conventions: the hinge subgradient at exactly zero is zero, and
the gradient of a distance at coinciding points is the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityMatrix, SoftLabelRow
from .data import Dataset
from .errors import ContractError, SelectionError

LOG_FLOOR = 1e-12


@dataclass
class TripletBatch:
    """Single-camera block of embeddings: n_persons x n_images x d."""

    embeddings: np.ndarray  # (n_persons, n_images, d)
    classes: np.ndarray  # (n_persons,) class index per row
    camera_id: int

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 3:
            raise ContractError(f"embeddings must be 3-d, got shape {self.embeddings.shape}")
        if self.classes.shape != (self.embeddings.shape[0],):
            raise ContractError("one class index per person row is required")

    @property
    def n_persons(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_images(self) -> int:
        return self.embeddings.shape[1]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """(n_persons * n_images, d) embeddings and per-sample class labels."""
        n_p, n_k, d = self.embeddings.shape
        return self.embeddings.reshape(n_p * n_k, d), np.repeat(self.classes, n_k)


@dataclass
class LossValue:
    """A scalar loss, gradients for each input group, and skip/clamp counters."""

    loss: float
    grads: dict[str, np.ndarray]
    counters: dict[str, int] = field(default_factory=dict)


def _pairwise_distances(E: np.ndarray) -> np.ndarray:
    sq = np.sum(E * E, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (E @ E.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _unit_difference(a: np.ndarray, b: np.ndarray, dist: float) -> np.ndarray:
    """d/da of ||a - b||; zero at coinciding points."""
    if dist <= 0.0:
        return np.zeros_like(a)
    return (a - b) / dist


def _unit_rows(diff: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Row-wise diff/dist with zero rows where dist is zero."""
    out = np.zeros_like(diff)
    np.divide(diff, dist[:, None], out=out, where=dist[:, None] > 0.0)
    return out


def _batch_triplet(
    batch: TripletBatch,
    margin: float,
    pos_pick: np.ndarray,
    neg_pick: np.ndarray,
    D: np.ndarray,
) -> LossValue:
    """Shared hinge accumulation once positives/negatives are chosen per anchor."""
    E, _ = batch.flat()
    n = E.shape[0]
    idx = np.arange(n)
    pos_d = D[idx, pos_pick]
    neg_d = D[idx, neg_pick]
    hinge = margin + pos_d - neg_d
    active = hinge > 0.0
    grad = np.zeros_like(E)
    if active.any():
        a_idx = idx[active]
        p_idx = pos_pick[active]
        n_idx = neg_pick[active]
        u_p = _unit_rows(E[a_idx] - E[p_idx], pos_d[active])
        u_n = _unit_rows(E[a_idx] - E[n_idx], neg_d[active])
        np.add.at(grad, a_idx, u_p - u_n)
        np.add.at(grad, p_idx, -u_p)
        np.add.at(grad, n_idx, u_n)
    return LossValue(
        loss=float(hinge[active].sum()) if active.any() else 0.0,
        grads={"embeddings": grad.reshape(batch.embeddings.shape)},
        counters={"active_triplets": int(active.sum()), "anchors": n},
    )


def _validate_triplet_batch(batch: TripletBatch) -> tuple[np.ndarray, np.ndarray]:
    if batch.n_persons < 2 or batch.n_images < 2:
        raise ContractError(
            f"triplet batch needs >= 2 persons and >= 2 images each, "
            f"got {batch.n_persons} x {batch.n_images}"
        )
    E, labels = batch.flat()
    if np.unique(labels).size < 2:
        raise ContractError("triplet batch contains a single distinct person")
    return E, labels


def intra_triplet_loss(batch: TripletBatch, margin: float) -> LossValue:
    """Sum over anchors of [margin + hardest_pos - hardest_neg]_+.

    Every embedding in the batch is an anchor.  The hardest positive is
    the farthest same-person embedding (the anchor itself included, which
    can never win unless all positives coincide); the hardest negative is
    the nearest different-person embedding.  Index ties resolve to the
    first occurrence in batch order.
    """
    E, labels = _validate_triplet_batch(batch)
    D = _pairwise_distances(E)
    same = labels[:, None] == labels[None, :]
    pos_d = np.where(same, D, -np.inf)
    neg_d = np.where(same, np.inf, D)
    pos_pick = np.argmax(pos_d, axis=1)
    neg_pick = np.argmin(neg_d, axis=1)
    return _batch_triplet(batch, margin, pos_pick, neg_pick, D)


def random_triplet_loss(batch: TripletBatch, margin: float, rng: np.random.Generator) -> LossValue:
    """Triplet hinge with uniformly random positive and negative per anchor.

    The positive is drawn among the anchor's other same-person
    embeddings, the negative among all different-person embeddings.
    Exists as the mining-strategy control; same gradient structure as the
    hard-mined loss.
    """
    E, labels = _validate_triplet_batch(batch)
    D = _pairwise_distances(E)
    n = E.shape[0]
    pos_pick = np.zeros(n, dtype=np.int64)
    neg_pick = np.zeros(n, dtype=np.int64)
    for a in range(n):
        pos = np.flatnonzero((labels == labels[a]))
        pos = pos[pos != a]
        neg = np.flatnonzero(labels != labels[a])
        pos_pick[a] = pos[rng.integers(pos.size)]
        neg_pick[a] = neg[rng.integers(neg.size)]
    return _batch_triplet(batch, margin, pos_pick, neg_pick, D)


def softmax_probs(scores: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, computed with max subtraction."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ContractError("softmax requires finite scores")
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(probs: np.ndarray, row: SoftLabelRow) -> LossValue:
    """-sum_c w(c) log p(c), with the gradient taken with respect to scores.

    Because the weights sum to one, the score gradient is the usual
    softmax identity probs - w.  Probabilities are clamped at LOG_FLOOR
    inside the log only; each clamp is counted.  The masked affinity
    gives the row's own class zero weight, so no mass ever lands on the
    sample's true class; own_class_zero_weight surfaces how often that
    happens.
    """
    if row.degenerate:
        raise ContractError("weighted cross-entropy is undefined for a degenerate row")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != row.weights.shape:
        raise ContractError(f"probs shape {probs.shape} != weights shape {row.weights.shape}")
    idx, w = row.nonzero()
    p = probs[idx]
    clamped = int(np.count_nonzero(p < LOG_FLOOR))
    loss = -float(np.sum(w * np.log(np.maximum(p, LOG_FLOOR))))
    return LossValue(
        loss=loss,
        grads={"scores": probs - row.weights},
        counters={
            "clamped_logs": clamped,
            "own_class_zero_weight": int(row.weights[row.class_index] == 0.0),
        },
    )


def select_positives(
    anchor_class: int,
    aff: AffinityMatrix,
    dataset: Dataset,
    n_k: int,
    rng: np.random.Generator,
    weighting_mode: str = "AW",
    positive_sampling: str = "random",
) -> list[tuple[int, float]]:
    """Choose n_k cross-camera positive samples and their weights for one anchor.

    Persons come from the nonzero entries of the anchor's affinity row:
    either a uniform draw without replacement ("random", falling back to
    replacement when fewer than n_k candidates exist) or the top
    affinities ("nearest", padded cyclically).  One uniformly random
    sample of each drawn person is used.  Weights are 1/n_k in mode
    "AW", or the drawn affinities renormalized to sum 1 in mode "W".

    Returns (dataset sample index, weight) pairs; raises SelectionError
    on a degenerate row so the caller can skip the anchor.
    """
    if n_k < 1:
        raise ContractError("n_k must be >= 1")
    if weighting_mode not in ("AW", "W"):
        raise ContractError(f"unknown weighting_mode {weighting_mode!r}")
    if positive_sampling not in ("random", "nearest"):
        raise ContractError(f"unknown positive_sampling {positive_sampling!r}")
    row = aff.A[anchor_class]
    nz = np.flatnonzero(row > 0.0)
    if nz.size == 0:
        raise SelectionError(f"soft-label row of class {anchor_class} is degenerate")

    if positive_sampling == "nearest":
        order = nz[np.argsort(-row[nz], kind="stable")]
        drawn = np.array([order[i % order.size] for i in range(n_k)], dtype=np.int64)
    elif nz.size >= n_k:
        drawn = rng.choice(nz, size=n_k, replace=False)
    else:
        drawn = rng.choice(nz, size=n_k, replace=True)

    if weighting_mode == "AW":
        weights = np.full(n_k, 1.0 / n_k)
    else:
        a_vals = row[drawn]
        weights = a_vals / a_vals.sum()

    out = []
    for person, w in zip(drawn, weights):
        candidates = dataset.indices_of_class(int(person))
        if candidates.size == 0:
            raise SelectionError(f"class {int(person)} has no samples in the dataset")
        pick = int(candidates[rng.integers(candidates.size)])
        out.append((pick, float(w)))
    return out


def select_hardest_negative(
    anchor_embedding: np.ndarray,
    batch_embeddings: np.ndarray,
    batch_classes: np.ndarray,
    anchor_class: int,
) -> int:
    """Index of the nearest embedding whose person differs from the anchor's.

    The batch is expected to be single-camera, so the result is the
    hardest same-camera negative.  Ties resolve to the lowest index.
    """
    batch_embeddings = np.asarray(batch_embeddings, dtype=np.float64)
    batch_classes = np.asarray(batch_classes)
    if batch_embeddings.ndim != 2 or batch_classes.shape != (batch_embeddings.shape[0],):
        raise ContractError("batch embeddings and classes are inconsistent")
    eligible = np.flatnonzero(batch_classes != anchor_class)
    if eligible.size == 0:
        raise SelectionError(f"no same-camera negative available for class {anchor_class}")
    diffs = batch_embeddings[eligible] - anchor_embedding[None, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=1))
    return int(eligible[np.argmin(dists)])


def weighted_triplet_loss(
    anchor: np.ndarray,
    positives: np.ndarray,
    weights: np.ndarray,
    negative: np.ndarray,
    margin: float,
) -> LossValue:
    """[sum_i w_i ||a - p_i|| - ||a - n|| + margin]_+ with full gradients.

    Weights must sum to 1 (tolerance 1e-9).  Gradients cover the anchor,
    every positive (scaled by its weight), and the negative; all are zero
    when the hinge is inactive.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    negative = np.asarray(negative, dtype=np.float64)
    if positives.ndim != 2 or positives.shape[1] != anchor.shape[0]:
        raise ContractError(f"positives shape {positives.shape} incompatible with anchor")
    if weights.shape != (positives.shape[0],):
        raise ContractError("one weight per positive is required")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ContractError(f"positive weights must sum to 1, got {weights.sum()!r}")
    if negative.shape != anchor.shape:
        raise ContractError("negative embedding has wrong shape")

    diffs = positives - anchor[None, :]
    pos_d = np.sqrt(np.sum(diffs * diffs, axis=1))
    neg_d = float(np.linalg.norm(anchor - negative))
    hinge = float(np.sum(weights * pos_d) - neg_d + margin)
    g_anchor = np.zeros_like(anchor)
    g_pos = np.zeros_like(positives)
    g_neg = np.zeros_like(negative)
    active = hinge > 0.0
    if active:
        u_n = _unit_difference(anchor, negative, neg_d)
        for i in range(positives.shape[0]):
            u_p = _unit_difference(anchor, positives[i], float(pos_d[i]))
            g_anchor += weights[i] * u_p
            g_pos[i] = -weights[i] * u_p
        g_anchor -= u_n
        g_neg = u_n
    return LossValue(
        loss=max(hinge, 0.0),
        grads={"anchor": g_anchor, "positives": g_pos, "negative": g_neg},
        counters={"active": int(active)},
    )
