"""Ordinal image datasets: synthetic generator, folder ingestion, and the
subsampling protocols used by the experiment sweeps.

Every sampling operation here is a pure function of (dataset, parameters,
seed) and only ever selects existing samples; nothing is fabricated or
mutated in place.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import DataError, ShapeError

# Per-operation RNG stream tags so different ops never share a stream
# even when called with the same seed.
_STREAM_GENERATE = 10
_STREAM_FEW_SHOT = 11
_STREAM_SHIFT = 12
_STREAM_KFOLD = 13
_STREAM_SPLIT = 14


@dataclass(frozen=True)
class OrdinalSample:
    """One labeled image: integer rank index plus its numeric label value."""

    image: np.ndarray
    rank_index: int
    rank_value: float
    path: str | None = None


@dataclass(frozen=True)
class DatasetSpec:
    """Shape of an ordinal dataset: M ranks with strictly increasing label
    values, a per-class sample count, and split fractions summing to one."""

    num_ranks: int
    label_values: tuple[float, ...]
    counts: tuple[int, ...]
    split: tuple[float, float, float] = (0.8, 0.0, 0.2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "label_values", tuple(float(x) for x in self.label_values))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.num_ranks < 2:
            raise DataError("need at least two ranks")
        if len(self.label_values) != self.num_ranks:
            raise DataError(
                f"expected {self.num_ranks} label values, got {len(self.label_values)}"
            )
        if any(b <= a for a, b in zip(self.label_values, self.label_values[1:])):
            raise DataError("label_values must be strictly increasing")
        if len(self.counts) != self.num_ranks or any(c < 1 for c in self.counts):
            raise DataError("counts must list >= 1 samples for each rank")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise DataError("split must be three non-negative fractions")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {sum(self.split)}")


@dataclass(frozen=True)
class OrdinalDataset:
    """Immutable sample collection. label_values carries the full rank set
    even when subsampling empties a class."""

    images: np.ndarray
    rank_indices: np.ndarray
    label_values: tuple[float, ...]
    paths: tuple[str, ...] | None = None
    augment_flip: bool = False

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        idx = np.asarray(self.rank_indices, dtype=np.int64)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "rank_indices", idx)
        object.__setattr__(self, "label_values", tuple(float(x) for x in self.label_values))
        if images.ndim != 4:
            raise ShapeError(f"images must be (N, H, W, C), got shape {images.shape}")
        if idx.shape != (images.shape[0],):
            raise ShapeError("one rank index per image required")
        m = len(self.label_values)
        if m < 2:
            raise DataError("need at least two ranks")
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise DataError(f"rank indices must lie in [0, {m})")
        if self.paths is not None and len(self.paths) != images.shape[0]:
            raise DataError("one path per image required")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_ranks(self) -> int:
        return len(self.label_values)

    @property
    def rank_values(self) -> np.ndarray:
        return np.asarray(self.label_values)[self.rank_indices]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.rank_indices, minlength=self.num_ranks)

    def sample(self, i: int) -> OrdinalSample:
        return OrdinalSample(
            image=self.images[i],
            rank_index=int(self.rank_indices[i]),
            rank_value=self.label_values[self.rank_indices[i]],
            path=None if self.paths is None else self.paths[i],
        )

    def subset(self, indices: np.ndarray) -> "OrdinalDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            images=self.images[indices],
            rank_indices=self.rank_indices[indices],
            paths=None if self.paths is None else tuple(self.paths[i] for i in indices),
        )


def generate_synthetic(
    spec: DatasetSpec,
    noise_sigma: float = 0.0,
    seed: int = 0,
    height: int = 32,
    width: int = 32,
) -> OrdinalDataset:
    """Render each rank as a horizontal bar filled proportionally to the
    latent t = rank_index / (M - 1), plus i.i.d. Gaussian pixel noise.

    The fill is continuous (a fractional last column), so total bar mass is
    exactly thickness * t * width and strictly increasing in rank.
    """
    if noise_sigma < 0:
        raise DataError("noise_sigma must be non-negative")
    m = spec.num_ranks
    rng = np.random.default_rng([int(seed), _STREAM_GENERATE])
    band = max(1, height // 4)
    top = (height - band) // 2

    n_total = sum(spec.counts)
    images = np.zeros((n_total, height, width, 1), dtype=np.float64)
    labels = np.zeros(n_total, dtype=np.int64)
    pos = 0
    for rank in range(m):
        t = rank / (m - 1)
        bar = np.zeros((height, width))
        full = int(math.floor(t * width))
        frac = t * width - full
        bar[top : top + band, :full] = 1.0
        if frac > 0 and full < width:
            bar[top : top + band, full] = frac
        for _ in range(spec.counts[rank]):
            img = bar.copy()
            if noise_sigma > 0:
                img = img + rng.normal(0.0, noise_sigma, size=bar.shape)
            images[pos, :, :, 0] = img
            labels[pos] = rank
            pos += 1
    return OrdinalDataset(images=images, rank_indices=labels, label_values=spec.label_values)


def few_shot_subsample(dataset: OrdinalDataset, k: int, seed: int = 0) -> OrdinalDataset:
    """Keep min(k, n_c) uniformly chosen samples per class."""
    if k < 1:
        raise DataError("k must be >= 1")
    rng = np.random.default_rng([int(seed), _STREAM_FEW_SHOT])
    keep: list[np.ndarray] = []
    for c in range(dataset.num_ranks):
        members = np.flatnonzero(dataset.rank_indices == c)
        if members.size <= k:
            keep.append(members)
        else:
            keep.append(rng.choice(members, size=k, replace=False))
    order = np.sort(np.concatenate(keep))
    return dataset.subset(order)


def distribution_shift_subsample(
    dataset: OrdinalDataset,
    re_cls: int,
    re_smp_percent: float,
    seed: int = 0,
) -> OrdinalDataset:
    """Pick re_cls classes uniformly and discard re_smp_percent of each
    chosen class's samples; every other class is untouched.

    Retention per chosen class is ceil((1 - p/100) * n_c), evaluated in
    exact rational arithmetic so percentage boundaries never wobble.
    """
    m = dataset.num_ranks
    if not 0 <= re_cls <= m:
        raise DataError(f"re_cls must be in [0, {m}]")
    if not 0 <= re_smp_percent <= 100:
        raise DataError("re_smp_percent must be in [0, 100]")
    if re_cls == 0:
        return dataset.subset(np.arange(len(dataset)))
    rng = np.random.default_rng([int(seed), _STREAM_SHIFT])
    chosen = set(rng.choice(m, size=re_cls, replace=False).tolist())
    retain_frac = 1 - Fraction(re_smp_percent) / 100
    keep: list[np.ndarray] = []
    for c in range(m):
        members = np.flatnonzero(dataset.rank_indices == c)
        if c not in chosen or members.size == 0:
            keep.append(members)
            continue
        n_keep = int(math.ceil(retain_frac * members.size))
        keep.append(rng.choice(members, size=n_keep, replace=False))
    order = np.sort(np.concatenate(keep))
    return dataset.subset(order)


def kfold_split(
    dataset: OrdinalDataset, k: int, fold_index: int, seed: int = 0
) -> tuple[OrdinalDataset, OrdinalDataset]:
    """Stratified k-fold partition: per class, a seeded shuffle dealt
    round-robin into folds, so per-class fold sizes differ by at most one.
    Returns (train, test) with fold ``fold_index`` as test."""
    if k < 2:
        raise DataError("k must be >= 2")
    if not 0 <= fold_index < k:
        raise DataError(f"fold_index must be in [0, {k})")
    rng = np.random.default_rng([int(seed), _STREAM_KFOLD])
    test_parts: list[np.ndarray] = []
    for c in range(dataset.num_ranks):
        members = np.flatnonzero(dataset.rank_indices == c)
        rng.shuffle(members)
        test_parts.append(members[fold_index::k])
    test_idx = np.sort(np.concatenate(test_parts))
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)


def stratified_split(
    dataset: OrdinalDataset,
    fractions: tuple[float, float, float] = (0.8, 0.0, 0.2),
    seed: int = 0,
) -> tuple[OrdinalDataset, OrdinalDataset, OrdinalDataset]:
    """Per-class seeded shuffle cut at cumulative fraction boundaries.
    Returns (train, val, test); the three parts partition the dataset."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DataError("fractions must be three non-negative values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng([int(seed), _STREAM_SPLIT])
    parts: tuple[list[np.ndarray], ...] = ([], [], [])
    for c in range(dataset.num_ranks):
        members = np.flatnonzero(dataset.rank_indices == c)
        rng.shuffle(members)
        n = members.size
        b1 = int(math.floor(fractions[0] * n))
        b2 = int(math.floor((fractions[0] + fractions[1]) * n))
        parts[0].append(members[:b1])
        parts[1].append(members[b1:b2])
        parts[2].append(members[b2:])
    out = tuple(dataset.subset(np.sort(np.concatenate(p))) for p in parts)
    return out[0], out[1], out[2]


def load_image_folder(
    root: str,
    spec: DatasetSpec,
    labels_file: str | None = None,
    image_size: int = 224,
    augment_flip: bool = False,
) -> OrdinalDataset:
    """Read a labels CSV (header ``path,rank_value``) and the images it
    references, resized to image_size squared. Duplicate path rows are all
    retained. Rank values must appear in the spec's label map."""
    from PIL import Image

    labels_path = labels_file or os.path.join(root, "labels.csv")
    if not os.path.isfile(labels_path):
        raise DataError(f"labels file not found: {labels_path}")
    value_to_rank = {v: i for i, v in enumerate(spec.label_values)}

    images: list[np.ndarray] = []
    ranks: list[int] = []
    paths: list[str] = []
    with open(labels_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "rank_value"]:
            raise DataError(f"{labels_path}: expected header 'path,rank_value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise DataError(f"{labels_path}:{lineno}: expected 'path,rank_value'")
            rel, raw_value = row[0].strip(), row[1].strip()
            try:
                value = float(raw_value)
            except ValueError as exc:
                raise DataError(f"{labels_path}:{lineno}: bad rank value {raw_value!r}") from exc
            if value not in value_to_rank:
                raise DataError(
                    f"{labels_path}:{lineno}: rank value {value} not in declared labels"
                )
            img_path = os.path.join(root, rel)
            if not os.path.isfile(img_path):
                raise DataError(f"{labels_path}:{lineno}: missing image {img_path}")
            with Image.open(img_path) as im:
                im = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
                images.append(np.asarray(im, dtype=np.float64) / 255.0)
            ranks.append(value_to_rank[value])
            paths.append(rel)
    if not images:
        raise DataError(f"{labels_path}: no samples")
    return OrdinalDataset(
        images=np.stack(images),
        rank_indices=np.array(ranks, dtype=np.int64),
        label_values=spec.label_values,
        paths=tuple(paths),
        augment_flip=augment_flip,
    )


def save_image_folder(dataset: OrdinalDataset, root: str) -> None:
    """Write samples as PNGs plus a labels CSV in the ingestion layout."""
    from PIL import Image

    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    rows = []
    for i in range(len(dataset)):
        img = np.clip(dataset.images[i], 0.0, 1.0)
        arr = (img * 255.0).round().astype(np.uint8)
        if arr.shape[2] == 1:
            pil = Image.fromarray(arr[:, :, 0], mode="L")
        else:
            pil = Image.fromarray(arr, mode="RGB")
        rel = os.path.join("images", f"sample_{i:05d}.png")
        pil.save(os.path.join(root, rel))
        rows.append((rel, dataset.label_values[dataset.rank_indices[i]]))
    with open(os.path.join(root, "labels.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "rank_value"])
        for rel, value in rows:
            writer.writerow([rel, f"{value:g}"])
