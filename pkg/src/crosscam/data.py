"""Multi-camera datasets with intra-camera labels.

A dataset is a collection of feature vectors, each tagged with the camera
that produced it and a person label that is only unique within that
camera.  A hidden global identity is carried alongside for evaluation of
synthetic data; the trainer never reads it.

The synthetic generator produces clusters in a latent space and pushes
them through per-camera affine distortions, so the same person looks
systematically different under different cameras.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError, FormatError, VersionError

DATASET_FORMAT = "crosscam-dataset"
DATASET_VERSION = "v1"

SPLITS = ("train", "query", "gallery")


@dataclass(frozen=True)
class Sample:
    """One observation: a feature vector from one camera.

    truth_identity is the hidden global identity (None when unknown); it
    exists so synthetic experiments can be scored, and is never used as a
    training signal.
    """

    raw_feature: np.ndarray
    camera_id: int
    local_person_id: int
    truth_identity: int | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.camera_id == other.camera_id
            and self.local_person_id == other.local_person_id
            and self.truth_identity == other.truth_identity
            and self.raw_feature.shape == other.raw_feature.shape
            and bool(np.all(self.raw_feature == other.raw_feature))
        )


class PersonIndex:
    """Bijection between (camera_id, local_person_id) pairs and flat class indices.

    Camera i's persons occupy the contiguous index block
    [sum(counts[:i]), sum(counts[:i+1])), in local-id order, so the whole
    table is determined by the per-camera person counts.
    """

    def __init__(self, counts: tuple[int, ...]):
        if any(c < 0 for c in counts):
            raise ContractError(f"negative person count in {counts}")
        self.counts = tuple(int(c) for c in counts)
        self.offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.counts)]))
        self.total = self.offsets[-1]

    @property
    def n_cameras(self) -> int:
        return len(self.counts)

    def class_of(self, camera_id: int, local_person_id: int) -> int:
        if not (0 <= camera_id < len(self.counts)):
            raise ContractError(f"camera_id {camera_id} out of range [0, {len(self.counts)})")
        if not (0 <= local_person_id < self.counts[camera_id]):
            raise ContractError(
                f"local_person_id {local_person_id} out of range for camera "
                f"{camera_id} with {self.counts[camera_id]} persons"
            )
        return self.offsets[camera_id] + local_person_id

    def camera_of(self, class_index: int) -> int:
        if not (0 <= class_index < self.total):
            raise ContractError(f"class index {class_index} out of range [0, {self.total})")
        return int(np.searchsorted(self.offsets, class_index, side="right") - 1)

    def local_of(self, class_index: int) -> tuple[int, int]:
        cam = self.camera_of(class_index)
        return cam, class_index - self.offsets[cam]

    def camera_of_class_array(self) -> np.ndarray:
        """Camera id of every class index, shape (total,)."""
        return np.repeat(np.arange(len(self.counts), dtype=np.int64), self.counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PersonIndex):
            return NotImplemented
        return self.counts == other.counts

    def __repr__(self) -> str:
        return f"PersonIndex(counts={self.counts})"


class Dataset:
    """Immutable container of samples plus the person index resolving them.

    Storage is columnar (one array per field) for fast batched access;
    the `samples` property materializes per-sample views on demand.
    """

    def __init__(
        self,
        features: np.ndarray,
        camera_ids: np.ndarray,
        local_ids: np.ndarray,
        truth: np.ndarray,
        n_cameras: int,
        split: str,
    ):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ContractError(f"features must be 2-d, got shape {features.shape}")
        n = features.shape[0]
        camera_ids = np.asarray(camera_ids, dtype=np.int64)
        local_ids = np.asarray(local_ids, dtype=np.int64)
        truth = np.asarray(truth, dtype=np.int64)
        if camera_ids.shape != (n,) or local_ids.shape != (n,) or truth.shape != (n,):
            raise ContractError("per-sample arrays must all have one entry per sample")
        if split not in SPLITS:
            raise ContractError(f"split must be one of {SPLITS}, got {split!r}")
        if n > 0 and (camera_ids.min() < 0 or camera_ids.max() >= n_cameras):
            raise ContractError("camera_id out of range")

        self.features = features
        self.camera_ids = camera_ids
        self.local_ids = local_ids
        self.truth = truth  # -1 encodes "unknown"
        self.n_cameras = int(n_cameras)
        self.d_in = int(features.shape[1])
        self.split = split
        self.index = self._build_index()
        self._check_truth_purity()
        self.class_ids = self._resolve_classes()
        self._by_class: list[np.ndarray] | None = None
        self.features.setflags(write=False)
        self.camera_ids.setflags(write=False)
        self.local_ids.setflags(write=False)
        self.truth.setflags(write=False)

    def _build_index(self) -> PersonIndex:
        counts = []
        for cam in range(self.n_cameras):
            locals_here = self.local_ids[self.camera_ids == cam]
            if locals_here.size == 0:
                counts.append(0)
                continue
            uniq = np.unique(locals_here)
            want = np.arange(uniq.size)
            if uniq.min() < 0 or not np.array_equal(uniq, want):
                raise ContractError(
                    f"camera {cam}: local person ids must be exactly 0..{uniq.size - 1}, "
                    f"got {uniq.tolist()[:8]}..."
                )
            counts.append(int(uniq.size))
        return PersonIndex(tuple(counts))

    def _check_truth_purity(self) -> None:
        seen: dict[tuple[int, int], int] = {}
        for cam, loc, t in zip(self.camera_ids, self.local_ids, self.truth):
            key = (int(cam), int(loc))
            if t == -1:
                continue
            if key in seen and seen[key] != int(t):
                raise ContractError(
                    f"person {key} has inconsistent truth identities {seen[key]} and {int(t)}"
                )
            seen.setdefault(key, int(t))

    def _resolve_classes(self) -> np.ndarray:
        offs = np.asarray(self.index.offsets[:-1], dtype=np.int64)
        out = offs[self.camera_ids] + self.local_ids if len(self) else np.zeros(0, dtype=np.int64)
        return out

    def __len__(self) -> int:
        return self.features.shape[0]

    def sample(self, i: int) -> Sample:
        t = int(self.truth[i])
        return Sample(
            raw_feature=self.features[i],
            camera_id=int(self.camera_ids[i]),
            local_person_id=int(self.local_ids[i]),
            truth_identity=None if t == -1 else t,
        )

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def indices_of_class(self, class_index: int) -> np.ndarray:
        """Sample indices of one person, in file order."""
        if self._by_class is None:
            by: list[list[int]] = [[] for _ in range(self.index.total)]
            for i, c in enumerate(self.class_ids):
                by[int(c)].append(i)
            self._by_class = [np.asarray(ix, dtype=np.int64) for ix in by]
        return self._by_class[class_index]

    def indices_of_camera(self, camera_id: int) -> np.ndarray:
        return np.flatnonzero(self.camera_ids == camera_id)

    def has_full_truth(self) -> bool:
        return bool(np.all(self.truth >= 0)) if len(self) else True

    def truth_of_class_array(self) -> np.ndarray:
        """Truth identity per class index (-1 where unknown), shape (C,)."""
        out = np.full(self.index.total, -1, dtype=np.int64)
        out[self.class_ids] = self.truth
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.split == other.split
            and self.n_cameras == other.n_cameras
            and self.d_in == other.d_in
            and self.features.shape == other.features.shape
            and bool(np.all(self.features == other.features))
            and bool(np.all(self.camera_ids == other.camera_ids))
            and bool(np.all(self.local_ids == other.local_ids))
            and bool(np.all(self.truth == other.truth))
        )

    def __repr__(self) -> str:
        return (
            f"Dataset(split={self.split!r}, n={len(self)}, d_in={self.d_in}, "
            f"n_cameras={self.n_cameras}, C={self.index.total})"
        )


def dataset_from_samples(samples: list[Sample], n_cameras: int, d_in: int, split: str) -> Dataset:
    n = len(samples)
    features = np.zeros((n, d_in), dtype=np.float64)
    cams = np.zeros(n, dtype=np.int64)
    locs = np.zeros(n, dtype=np.int64)
    truth = np.full(n, -1, dtype=np.int64)
    for i, s in enumerate(samples):
        f = np.asarray(s.raw_feature, dtype=np.float64)
        if f.shape != (d_in,):
            raise ContractError(f"sample {i}: feature length {f.shape} != declared d_in {d_in}")
        features[i] = f
        cams[i] = s.camera_id
        locs[i] = s.local_person_id
        truth[i] = -1 if s.truth_identity is None else s.truth_identity
    return Dataset(features, cams, locs, truth, n_cameras, split)


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic corpus generator.

    n_identities counts training identities; a disjoint held-out pool of
    max(10, n_identities // 4) identities is generated for query/gallery.
    camera_transform_scale controls how far each camera's affine map
    deviates from a shared base projection (0 means all cameras agree),
    noise_sigma is per-sample isotropic noise.
    """

    n_identities: int = 200
    n_cameras: int = 4
    d_latent: int = 4
    d_in: int = 32
    images_per_person: int = 6
    camera_appearance_prob: float = 0.6
    camera_transform_scale: float = 0.4
    noise_sigma: float = 0.35
    seed: int = 0

    def validate(self) -> None:
        if self.n_identities < 1:
            raise ContractError("n_identities must be >= 1")
        if self.n_cameras < 2:
            raise ContractError("n_cameras must be >= 2: cross-camera learning is undefined")
        if self.images_per_person < 2:
            raise ContractError("images_per_person must be >= 2: no positive pairs otherwise")
        if self.d_latent < 1 or self.d_in < 1:
            raise ContractError("d_latent and d_in must be >= 1")
        if not (0.0 <= self.camera_appearance_prob <= 1.0):
            raise ContractError("camera_appearance_prob must be in [0, 1]")
        if self.camera_transform_scale < 0 or self.noise_sigma < 0:
            raise ContractError("camera_transform_scale and noise_sigma must be >= 0")


def _draw_cameras(rng: np.random.Generator, n_cameras: int, prob: float, minimum: int) -> np.ndarray:
    """Bernoulli camera subset with at least `minimum` members, resampling as needed."""
    for _ in range(200):
        mask = rng.random(n_cameras) < prob
        if mask.sum() >= minimum:
            return mask
    # Probability too small to hit the minimum by chance: force a uniform choice.
    forced = rng.choice(n_cameras, size=minimum, replace=False)
    mask = np.zeros(n_cameras, dtype=bool)
    mask[forced] = True
    return mask


def generate_synthetic(spec: SynthSpec) -> dict[str, Dataset]:
    """Generate {train, query, gallery} datasets with hidden cross-camera truth.

    Each identity g gets a latent vector z_g; a sample of g under camera j
    is A_j @ z_g + b_j + noise, where A_j and b_j deviate from a shared
    base projection by camera_transform_scale.  Held-out identities (the
    query/gallery pool) are forced to appear under at least two cameras so
    every query has a cross-camera match.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))

    base = rng.standard_normal((spec.d_in, spec.d_latent)) / np.sqrt(spec.d_latent)
    cam_A = []
    cam_b = []
    for _ in range(spec.n_cameras):
        d_a = rng.standard_normal((spec.d_in, spec.d_latent)) / np.sqrt(spec.d_latent)
        d_b = rng.standard_normal(spec.d_in)
        cam_A.append(base + spec.camera_transform_scale * d_a)
        cam_b.append(spec.camera_transform_scale * d_b)

    n_eval = max(10, spec.n_identities // 4)
    latents = rng.standard_normal((spec.n_identities + n_eval, spec.d_latent))

    def emit(identity: int, cam: int) -> np.ndarray:
        mean = cam_A[cam] @ latents[identity] + cam_b[cam]
        noise = rng.standard_normal((spec.images_per_person, spec.d_in))
        return mean[None, :] + spec.noise_sigma * noise

    # Train identities: 0..G-1, each under >= 1 camera.
    train_samples: list[Sample] = []
    next_local = [0] * spec.n_cameras
    for g in range(spec.n_identities):
        mask = _draw_cameras(rng, spec.n_cameras, spec.camera_appearance_prob, minimum=1)
        for cam in np.flatnonzero(mask):
            cam = int(cam)
            local = next_local[cam]
            next_local[cam] += 1
            for row in emit(g, cam):
                train_samples.append(Sample(row, cam, local, g))

    # Held-out identities: G..G+n_eval-1, each under >= 2 cameras so that
    # one query per (identity, camera) always has a cross-camera match in
    # the gallery remainder.
    query_samples: list[Sample] = []
    gallery_samples: list[Sample] = []
    q_local = [0] * spec.n_cameras
    g_local = [0] * spec.n_cameras
    for g in range(spec.n_identities, spec.n_identities + n_eval):
        mask = _draw_cameras(rng, spec.n_cameras, spec.camera_appearance_prob, minimum=2)
        for cam in np.flatnonzero(mask):
            cam = int(cam)
            rows = emit(g, cam)
            query_samples.append(Sample(rows[0], cam, q_local[cam], g))
            q_local[cam] += 1
            gl = g_local[cam]
            g_local[cam] += 1
            for row in rows[1:]:
                gallery_samples.append(Sample(row, cam, gl, g))

    return {
        "train": dataset_from_samples(train_samples, spec.n_cameras, spec.d_in, "train"),
        "query": dataset_from_samples(query_samples, spec.n_cameras, spec.d_in, "query"),
        "gallery": dataset_from_samples(gallery_samples, spec.n_cameras, spec.d_in, "gallery"),
    }


def _format_float(x: float) -> str:
    return repr(float(x))


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write a dataset as self-describing text, atomically."""
    lines = [
        f"{DATASET_FORMAT} {DATASET_VERSION}",
        f"split {ds.split}",
        f"n_cameras {ds.n_cameras}",
        f"d_in {ds.d_in}",
        f"n_samples {len(ds)}",
    ]
    for i in range(len(ds)):
        t = int(ds.truth[i])
        fields = [
            str(int(ds.camera_ids[i])),
            str(int(ds.local_ids[i])),
            "-" if t == -1 else str(t),
        ]
        fields.extend(_format_float(v) for v in ds.features[i])
        lines.append(" ".join(fields))
    lines.append("end")
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_text_atomic(path: str | os.PathLike, content: str) -> None:
    """Write to a temp file in the same directory, then rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _expect_header(path: str, lines: list[str], lineno: int, key: str) -> str:
    if lineno >= len(lines):
        raise FormatError(path, lineno + 1, f"missing '{key}' header line")
    parts = lines[lineno].split(maxsplit=1)
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(path, lineno + 1, f"expected '{key} <value>', got {lines[lineno]!r}")
    return parts[1]


def load_dataset(path: str | os.PathLike) -> Dataset:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise FormatError(path, None, f"cannot read file: {e}") from e
    lines = text.splitlines()
    if not lines:
        raise FormatError(path, 1, "empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != DATASET_FORMAT:
        raise FormatError(path, 1, f"not a {DATASET_FORMAT} file: {lines[0]!r}")
    if head[1] != DATASET_VERSION:
        raise VersionError(path, 1, f"unsupported version {head[1]!r}, expected {DATASET_VERSION}")

    split = _expect_header(path, lines, 1, "split")
    if split not in SPLITS:
        raise FormatError(path, 2, f"unknown split {split!r}")
    try:
        n_cameras = int(_expect_header(path, lines, 2, "n_cameras"))
        d_in = int(_expect_header(path, lines, 3, "d_in"))
        n_samples = int(_expect_header(path, lines, 4, "n_samples"))
    except ValueError as e:
        raise FormatError(path, 3, f"non-integer header value: {e}") from e
    if n_cameras < 0 or d_in < 0 or n_samples < 0:
        raise FormatError(path, 3, "negative header value")

    first_record = 5
    features = np.zeros((n_samples, d_in), dtype=np.float64)
    cams = np.zeros(n_samples, dtype=np.int64)
    locs = np.zeros(n_samples, dtype=np.int64)
    truth = np.full(n_samples, -1, dtype=np.int64)
    for r in range(n_samples):
        lineno = first_record + r
        if lineno >= len(lines):
            raise FormatError(path, lineno + 1, f"truncated: expected record {r} of {n_samples}")
        parts = lines[lineno].split()
        if len(parts) != 3 + d_in:
            raise FormatError(
                path, lineno + 1,
                f"record {r}: expected {3 + d_in} fields, got {len(parts)}",
            )
        try:
            cams[r] = int(parts[0])
            locs[r] = int(parts[1])
            truth[r] = -1 if parts[2] == "-" else int(parts[2])
            features[r] = [float(v) for v in parts[3:]]
        except ValueError as e:
            raise FormatError(path, lineno + 1, f"record {r}: {e}") from e

    endline = first_record + n_samples
    if endline >= len(lines) or lines[endline] != "end":
        raise FormatError(path, endline + 1, "missing 'end' marker (truncated file?)")

    try:
        return Dataset(features, cams, locs, truth, n_cameras, split)
    except ContractError as e:
        raise FormatError(path, None, f"inconsistent dataset: {e}") from e
