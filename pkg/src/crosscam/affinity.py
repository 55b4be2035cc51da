"""Cross-camera affinity graph over person-level features.

Given the buffer of per-person feature averages, build a C x C matrix of
Gaussian similarities restricted to pairs from different cameras, keep
only each row's k nearest candidates, and normalize rows into soft-label
weight vectors.  The bandwidth sigma^2 is the mean squared distance over
the candidate pairs, computed before exponentiation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .buffer import PersonBuffer
from .data import PersonIndex
from .errors import AffinityError, ContractError


@dataclass
class AffinityMatrix:
    A: np.ndarray  # (C, C), nonnegative, row-sparse
    sigma_sq: float
    k: int
    epoch_built: int
    camera_of_class: np.ndarray  # (C,), camera id per class index
    masked: bool  # whether same-camera pairs were excluded

    @property
    def n_classes(self) -> int:
        return self.A.shape[0]


@dataclass
class SoftLabelRow:
    """Normalized affinity row: a distribution over candidate persons.

    A row is degenerate when its affinity mass is zero; degenerate rows
    carry no weights and must be skipped by consumers.
    """

    class_index: int
    weights: np.ndarray  # (C,), sums to 1 unless degenerate
    degenerate: bool

    def nonzero(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.weights)
        return idx, self.weights[idx]


def build_affinity(
    buf: PersonBuffer,
    index: PersonIndex,
    k: int,
    epoch: int = 0,
    mask_same_camera: bool = True,
) -> AffinityMatrix:
    """Masked k-NN Gaussian affinity over buffer columns.

    Candidates of row i are persons from other cameras (with
    mask_same_camera=False: all persons except i itself).  Each row keeps
    its k smallest-distance candidates, ties broken toward the lower
    class index, and maps them through exp(-dist^2 / sigma^2).
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    if index.total != buf.n_classes:
        raise ContractError(
            f"index covers {index.total} classes but buffer has {buf.n_classes} columns"
        )
    missing = buf.uninitialized_classes()
    if missing:
        raise AffinityError(
            f"cannot build affinity: {len(missing)} uninitialized buffer columns "
            f"(class indices {missing[:10]}{'...' if len(missing) > 10 else ''})"
        )
    cameras = index.camera_of_class_array()
    C = index.total
    if index.n_cameras < 2 or np.unique(cameras).size < 2:
        raise AffinityError(
            "cross-camera affinity undefined: all persons belong to a single camera"
        )

    # Squared Euclidean distances between buffer columns.
    feats = buf.P.T  # (C, d)
    sq = np.sum(feats * feats, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.maximum(d2, 0.0, out=d2)

    if mask_same_camera:
        candidate = cameras[:, None] != cameras[None, :]
    else:
        candidate = ~np.eye(C, dtype=bool)
    if not candidate.any():
        raise AffinityError("no candidate pairs: every person shares a camera with every other")

    sigma_sq = float(d2[candidate].mean())

    A = np.zeros((C, C))
    if sigma_sq == 0.0:
        warnings.warn(
            "all candidate pairs are identical (sigma^2 = 0); affinity entries set to 1",
            RuntimeWarning,
            stacklevel=2,
        )
    for i in range(C):
        cand = np.flatnonzero(candidate[i])
        if cand.size == 0:
            continue  # row stays zero; soft_label_rows will mark it degenerate
        keep = cand[np.argsort(d2[i, cand], kind="stable")[:k]]
        if sigma_sq == 0.0:
            A[i, keep] = 1.0
        else:
            A[i, keep] = np.exp(-d2[i, keep] / sigma_sq)
    return AffinityMatrix(
        A=A, sigma_sq=sigma_sq, k=int(k), epoch_built=int(epoch),
        camera_of_class=cameras, masked=bool(mask_same_camera),
    )


def soft_label_rows(aff: AffinityMatrix) -> list[SoftLabelRow]:
    """Normalize each affinity row to sum 1; zero-sum rows become degenerate."""
    rows = []
    for i in range(aff.n_classes):
        row = aff.A[i]
        total = row.sum()
        if total <= 0.0:
            rows.append(SoftLabelRow(i, np.zeros_like(row), degenerate=True))
        else:
            rows.append(SoftLabelRow(i, row / total, degenerate=False))
    return rows


def affinity_quality_map(aff: AffinityMatrix, truth_of_class: np.ndarray) -> float:
    """How well affinity rows rank true cross-camera matches, as mean AP.

    Each row ranks the persons of other cameras by descending affinity
    (ties broken by class index); a candidate is relevant when it shares
    the row person's hidden identity.  Rows without any cross-camera true
    match are excluded from the mean.
    """
    truth = np.asarray(truth_of_class, dtype=np.int64)
    if truth.shape != (aff.n_classes,):
        raise ContractError(
            f"truth mapping has shape {truth.shape}, expected ({aff.n_classes},)"
        )
    cameras = aff.camera_of_class
    aps = []
    for i in range(aff.n_classes):
        cand = np.flatnonzero(cameras != cameras[i])
        if cand.size == 0:
            continue
        relevant = truth[cand] == truth[i]
        if truth[i] < 0 or not relevant.any():
            continue
        # Descending affinity, ties toward lower class index: sort by
        # (-a, class index) using a stable sort over the index-ordered list.
        order = np.argsort(-aff.A[i, cand], kind="stable")
        rel_sorted = relevant[order]
        hits = np.flatnonzero(rel_sorted)
        precisions = (np.arange(1, hits.size + 1)) / (hits + 1)
        aps.append(precisions.mean())
    if not aps:
        raise AffinityError("affinity quality undefined: no row has a cross-camera true match")
    return float(np.mean(aps))
