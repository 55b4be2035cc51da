"""Independent reference implementations used to cross-check the package.

Everything here is written as plain Python loops straight from the
definitions, deliberately sharing no code with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def oracle_triplet_loss(embeddings, labels, margin: float) -> float:
    """Sum over anchors of [margin + max same-label dist - min other-label dist]_+."""
    n = len(embeddings)
    total = 0.0
    for a in range(n):
        pos = [dist(embeddings[a], embeddings[p])
               for p in range(n) if labels[p] == labels[a] and p != a]
        neg = [dist(embeddings[a], embeddings[q])
               for q in range(n) if labels[q] != labels[a]]
        total += max(0.0, margin + max(pos) - min(neg))
    return total


def oracle_hardest_negative(anchor, batch, classes, anchor_class) -> int:
    best = None
    best_d = None
    for i in range(len(batch)):
        if classes[i] == anchor_class:
            continue
        d = dist(anchor, batch[i])
        if best_d is None or d < best_d:
            best, best_d = i, d
    if best is None:
        raise ValueError("no eligible negative")
    return best


def oracle_affinity(columns, cameras, k: int, mask_same_camera: bool = True):
    """(A, sigma_sq) built by exhaustive enumeration and explicit sorting."""
    C = len(columns)
    cand_pairs = []
    for i in range(C):
        for j in range(C):
            if mask_same_camera:
                ok = cameras[i] != cameras[j]
            else:
                ok = i != j
            if ok:
                cand_pairs.append((i, j, dist(columns[i], columns[j]) ** 2))
    if not cand_pairs:
        raise ValueError("no candidate pairs")
    sigma_sq = sum(d for _, _, d in cand_pairs) / len(cand_pairs)
    A = np.zeros((C, C))
    for i in range(C):
        row = sorted((d, j) for a, j, d in cand_pairs if a == i)
        for d, j in row[:k]:
            A[i, j] = 1.0 if sigma_sq == 0.0 else math.exp(-d / sigma_sq)
    return A, sigma_sq


def oracle_average_precision(relevant_in_rank_order) -> float:
    hits = 0
    precision_sum = 0.0
    for rank, rel in enumerate(relevant_in_rank_order, start=1):
        if rel:
            hits += 1
            precision_sum += hits / rank
    if hits == 0:
        raise ValueError("no relevant item")
    return precision_sum / hits


def oracle_retrieval(query_embeddings, query_truth, query_cams,
                     gallery_embeddings, gallery_truth, gallery_cams):
    """(mAP, {k: rank-k}) for k in 1/5/10/20 by definition-level loops."""
    aps = []
    first_hits = []
    for qi in range(len(query_embeddings)):
        ranked = []
        for gi in range(len(gallery_embeddings)):
            same_id = gallery_truth[gi] == query_truth[qi]
            if same_id and gallery_cams[gi] == query_cams[qi]:
                continue  # junk: same identity seen by the same camera
            d = dist(query_embeddings[qi], gallery_embeddings[gi])
            ranked.append((d, gi, same_id))
        ranked.sort(key=lambda t: (t[0], t[1]))
        rels = [r[2] for r in ranked]
        if not any(rels):
            continue
        aps.append(oracle_average_precision(rels))
        first_hits.append(rels.index(True))
    if not aps:
        raise ValueError("all queries skipped")
    cmc = {k: sum(1 for h in first_hits if h < k) / len(aps) for k in (1, 5, 10, 20)}
    return sum(aps) / len(aps), cmc


def finite_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


def finite_difference_at(f, x: np.ndarray, coords, eps: float = 1e-5) -> np.ndarray:
    """Central differences at selected flat coordinates only."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(len(coords))
    for n, i in enumerate(coords):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        out[n] = (f(xp) - f(xm)) / (2.0 * eps)
    return out


def relative_error(a: float, b: float, floor: float = 1e-5) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
