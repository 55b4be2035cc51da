"""Per-person running averages of embedding vectors.

Column i of P is the current feature of person (class) i.  The first
batch that contains a person seeds its column with the batch mean; every
later batch pulls the column halfway toward the new batch mean.  Columns
of persons absent from a batch are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class PersonBuffer:
    P: np.ndarray  # (d, n_classes), column per person
    initialized: np.ndarray  # (n_classes,) bool
    t: int = 0  # update-round counter, ticked by the trainer once per iteration

    @property
    def d(self) -> int:
        return self.P.shape[0]

    @property
    def n_classes(self) -> int:
        return self.P.shape[1]

    def uninitialized_classes(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~self.initialized)]


def new_buffer(d: int, n_classes: int) -> PersonBuffer:
    if d < 1 or n_classes < 1:
        raise ContractError("buffer needs d >= 1 and n_classes >= 1")
    return PersonBuffer(P=np.zeros((d, n_classes)), initialized=np.zeros(n_classes, dtype=bool))


def update_person(buf: PersonBuffer, class_index: int, batch_features: np.ndarray) -> None:
    """Pull one person's column toward the mean of its batch features.

    First touch sets the column to the batch mean outright; afterwards
    p <- (p + mean) / 2.
    """
    if not (0 <= class_index < buf.n_classes):
        raise ContractError(f"class index {class_index} out of range [0, {buf.n_classes})")
    feats = np.asarray(batch_features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[0] == 0:
        raise ContractError("batch_features must be nonempty")
    if feats.shape[1] != buf.d:
        raise ContractError(f"feature length {feats.shape[1]} != buffer dimension {buf.d}")
    mean = feats.mean(axis=0)
    if buf.initialized[class_index]:
        buf.P[:, class_index] = 0.5 * (buf.P[:, class_index] + mean)
    else:
        buf.P[:, class_index] = mean
        buf.initialized[class_index] = True
