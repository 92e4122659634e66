"""Multi-label image datasets: synthetic generation with controllable
heterogeneity, and a binary on-disk interchange format.

The synthetic generator plants one smoothed template image per class; a
sample's image is the sum of the templates of its positive classes plus
noise, passed through its group's drift transform. Labels are drawn from
per-group class-prevalence vectors. Three knobs control heterogeneity:
``label_alpha`` (Dirichlet concentration of per-group prevalences; None for
identical groups), ``drift_strength`` (per-group channel affine plus a fixed
spatial pattern), and ``quantity_exponent`` (power-law group sizes).

On disk a dataset is a directory holding ``manifest.csv`` (columns id,
tensor_file, labels, group; labels are semicolon-separated class indices),
``classes.json`` (the class-name list), and one tensor file per sample:
magic ``FMTD``, u8 rank, u32 little-endian dims, then a row-major
little-endian float32 payload.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

TENSOR_MAGIC = b"FMTD"


@dataclass
class SynthSpec:
    n_groups: int
    n_classes: int
    samples_per_group: int
    image_size: int
    channels: int = 3
    label_alpha: float | None = None
    drift_strength: float = 0.0
    quantity_exponent: float = 0.0
    mean_positives: float = 2.0
    noise_scale: float = 0.5
    structure_seed: int | None = None

    def validate(self) -> None:
        if self.n_groups < 1:
            raise ConfigError("n_groups must be >= 1")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")
        if self.samples_per_group < 1:
            raise ConfigError("samples_per_group must be >= 1")
        if self.image_size < 1 or self.channels < 1:
            raise ConfigError("image_size and channels must be >= 1")
        if not (0.0 < self.mean_positives <= self.n_classes):
            raise ConfigError(
                f"mean_positives must lie in (0, {self.n_classes}]")
        if self.label_alpha is not None and not math.isinf(self.label_alpha) \
                and self.label_alpha <= 0:
            raise ConfigError("label_alpha must be positive, inf, or None")
        if self.drift_strength < 0 or self.quantity_exponent < 0:
            raise ConfigError("drift_strength and quantity_exponent must be >= 0")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")


class MultiLabelDataset:
    """Images (N, C, H, W) float32, binary labels (N, P), per-sample group tags."""

    def __init__(self, images: np.ndarray, labels: np.ndarray,
                 groups: list[str], class_names: list[str]):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.uint8)
        if images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {images.shape}")
        if labels.ndim != 2 or labels.shape[0] != images.shape[0]:
            raise DataError(f"labels must be (N, P) aligned with images, got {labels.shape}")
        if labels.shape[1] != len(class_names):
            raise DataError("labels width must equal the number of class names")
        if len(groups) != images.shape[0]:
            raise DataError("groups must have one tag per sample")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError("labels must be binary")
        if images.shape[0] and not np.all(labels.sum(axis=1) >= 1):
            raise DataError("every sample needs at least one positive label")
        self.images = images
        self.labels = labels
        self.groups = list(groups)
        self.class_names = list(class_names)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "MultiLabelDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultiLabelDataset(self.images[idx], self.labels[idx],
                                 [self.groups[i] for i in idx], self.class_names)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiLabelDataset):
            return NotImplemented
        return (np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels)
                and self.groups == other.groups
                and self.class_names == other.class_names)


def _smooth(a: np.ndarray, passes: int = 2) -> np.ndarray:
    """Cheap separable box blur over the trailing two axes."""
    for _ in range(passes):
        p = np.pad(a, [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
        a = (p[..., :-2, 1:-1] + p[..., 2:, 1:-1] + p[..., 1:-1, :-2]
             + p[..., 1:-1, 2:] + p[..., 1:-1, 1:-1]) / 5.0
    return a


def _group_sizes(spec: SynthSpec) -> list[int]:
    """Power-law sizes summing exactly to n_groups * samples_per_group."""
    g = spec.n_groups
    total = g * spec.samples_per_group
    w = np.array([(i + 1.0) ** (-spec.quantity_exponent) for i in range(g)])
    exact = w / w.sum() * total
    sizes = np.maximum(1, np.floor(exact).astype(int))
    remainder = total - sizes.sum()
    if remainder > 0:
        order = np.argsort(-(exact - np.floor(exact)), kind="stable")
        for i in range(remainder):
            sizes[order[i % g]] += 1
    elif remainder < 0:
        order = np.argsort(exact - np.floor(exact), kind="stable")
        k = 0
        while remainder < 0:
            j = order[k % g]
            if sizes[j] > 1:
                sizes[j] -= 1
                remainder += 1
            k += 1
    return [int(s) for s in sizes]


def synth_generate(spec: SynthSpec, seed: int) -> MultiLabelDataset:
    """Build a deterministic synthetic dataset.

    Structural randomness (class templates, group prevalences, drift
    transforms) comes from ``structure_seed`` (defaulting to ``seed``), so
    two calls sharing a structure_seed but differing in seed draw different
    samples from the same underlying population — the train/test recipe.
    """
    spec.validate()
    sseed = spec.structure_seed if spec.structure_seed is not None else seed
    s_rng = np.random.default_rng(np.random.SeedSequence([0x5EED, sseed]))
    p, c, hw = spec.n_classes, spec.channels, spec.image_size

    templates = np.stack([_smooth(s_rng.standard_normal((c, hw, hw)))
                          for _ in range(p)])
    templates /= np.sqrt((templates ** 2).mean(axis=(1, 2, 3), keepdims=True))

    iid = spec.label_alpha is None or math.isinf(spec.label_alpha)
    base = spec.mean_positives / p
    prevalences = []
    for _ in range(spec.n_groups):
        if iid:
            prev = np.full(p, base)
        else:
            prev = s_rng.dirichlet(np.full(p, spec.label_alpha)) * spec.mean_positives
        prevalences.append(np.clip(prev, 0.02, 0.9))

    drifts = []
    for _ in range(spec.n_groups):
        scale = 1.0 + spec.drift_strength * 0.3 * s_rng.standard_normal(c)
        shift = spec.drift_strength * 0.3 * s_rng.standard_normal(c)
        pattern = spec.drift_strength * 0.4 * _smooth(s_rng.standard_normal((c, hw, hw)))
        drifts.append((scale, shift, pattern))

    sizes = _group_sizes(spec)
    rng = np.random.default_rng(np.random.SeedSequence([0xDA7A, sseed, seed]))
    images, labels, groups = [], [], []
    for g in range(spec.n_groups):
        prev = prevalences[g]
        scale, shift, pattern = drifts[g]
        name = f"group{g}"
        for _ in range(sizes[g]):
            y = (rng.random(p) < prev).astype(np.uint8)
            tries = 0
            while y.sum() == 0 and tries < 100:
                y = (rng.random(p) < prev).astype(np.uint8)
                tries += 1
            if y.sum() == 0:
                y[int(np.argmax(prev))] = 1
            img = templates[y.astype(bool)].sum(axis=0)
            img = img + spec.noise_scale * rng.standard_normal((c, hw, hw))
            img = img * scale[:, None, None] + shift[:, None, None] + pattern
            images.append(img.astype(np.float32))
            labels.append(y)
            groups.append(name)
    return MultiLabelDataset(np.stack(images), np.stack(labels), groups,
                             [f"class{i}" for i in range(p)])


def train_test_pair(spec: SynthSpec, seed: int, *, test_samples_per_group: int) \
        -> tuple[MultiLabelDataset, MultiLabelDataset]:
    """Two disjoint draws from the same synthetic population."""
    base = replace(spec, structure_seed=spec.structure_seed
                   if spec.structure_seed is not None else seed)
    train = synth_generate(base, 2 * seed + 1)
    test_spec = replace(base, samples_per_group=test_samples_per_group,
                        quantity_exponent=0.0)
    test = synth_generate(test_spec, 2 * seed + 2)
    return train, test


# ---------------------------------------------------------------------------
# on-disk format

def save_tensor(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<B", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: bad magic; not a tensor file")
    try:
        (rank,) = struct.unpack_from("<B", blob, 4)
        shape = struct.unpack_from(f"<{rank}I", blob, 5)
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = blob[5 + 4 * rank:]
        if len(payload) != 4 * n:
            raise DataError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    except struct.error as e:
        raise DataError(f"{path}: malformed header ({e})") from e


def save_dataset(dataset: MultiLabelDataset, out_dir) -> None:
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "classes.json", "w") as f:
        json.dump({"class_names": dataset.class_names}, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "tensor_file", "labels", "group"])
        for i in range(len(dataset)):
            sid = f"s{i:06d}"
            fname = f"{sid}.fmtd"
            save_tensor(out / fname, dataset.images[i])
            pos = ";".join(str(j) for j in np.flatnonzero(dataset.labels[i]))
            w.writerow([sid, fname, pos, dataset.groups[i]])


def load_dataset(manifest_path) -> MultiLabelDataset:
    """Read a dataset directory (or its manifest.csv path) back into memory."""
    from pathlib import Path
    mp = Path(manifest_path)
    if mp.is_dir():
        mp = mp / "manifest.csv"
    if not mp.is_file():
        raise DataError(f"{mp}: manifest not found")
    root = mp.parent
    classes_path = root / "classes.json"
    if not classes_path.is_file():
        raise DataError(f"{classes_path}: class-name sidecar not found")
    with open(classes_path) as f:
        class_names = json.load(f)["class_names"]
    p = len(class_names)

    images, labels, groups = [], [], []
    with open(mp, newline="") as f:
        reader = csv.DictReader(f)
        required = {"id", "tensor_file", "labels", "group"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{mp}: manifest must have columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{mp}:{lineno}"
            tf = root / row["tensor_file"]
            if not tf.is_file():
                raise DataError(f"{where}: tensor file {tf} missing")
            img = load_tensor(tf)
            if img.ndim != 3:
                raise DataError(f"{where}: expected a rank-3 image, got rank {img.ndim}")
            if images and img.shape != images[0].shape:
                raise DataError(
                    f"{where}: image dims {img.shape} differ from {images[0].shape}")
            raw = row["labels"].strip()
            if not raw:
                raise DataError(f"{where}: empty label list")
            y = np.zeros(p, dtype=np.uint8)
            for tok in raw.split(";"):
                try:
                    j = int(tok)
                except ValueError as e:
                    raise DataError(f"{where}: bad label token {tok!r}") from e
                if not 0 <= j < p:
                    raise DataError(f"{where}: label {j} outside [0, {p})")
                y[j] = 1
            images.append(img)
            labels.append(y)
            groups.append(row["group"])
    if not images:
        raise DataError(f"{mp}: manifest has no rows")
    return MultiLabelDataset(np.stack(images), np.stack(labels), groups, class_names)
