"""Client shard construction (random split and group split) and skew metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiLabelDataset
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.indices)


def partition_ds1(dataset: MultiLabelDataset, k: int, seed: int) -> list[ClientShard]:
    """Uniform random split into k near-equal shards (sizes differ by <= 1)."""
    n = len(dataset)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds dataset size {n}")
    rng = np.random.default_rng(np.random.SeedSequence([0xD51, seed]))
    perm = rng.permutation(n)
    return [ClientShard(i, tuple(int(j) for j in part))
            for i, part in enumerate(np.array_split(perm, k))]


def partition_ds2(dataset: MultiLabelDataset) -> list[ClientShard]:
    """One shard per distinct group tag, in sorted group order."""
    if any(not g for g in dataset.groups):
        raise DataError("every sample needs a non-empty group tag")
    names = sorted(set(dataset.groups))
    by_group = {name: [] for name in names}
    for i, g in enumerate(dataset.groups):
        by_group[g].append(i)
    return [ClientShard(i, tuple(by_group[name])) for i, name in enumerate(names)]


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with base-2 logarithm; range [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def _kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def gini_coefficient(sizes) -> float:
    """Mean absolute difference over twice the mean; 0 for equal sizes."""
    x = np.asarray(sizes, dtype=np.float64)
    n = x.size
    if n == 0 or x.sum() == 0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2.0 * n * n * x.mean()))


@dataclass
class SkewReport:
    label_marginals: np.ndarray      # (K, P) normalized per-client class distributions
    js_to_global: np.ndarray         # (K,)
    mean_js: float
    pairwise_js: np.ndarray          # (K, K)
    size_gini: float
    feature_shift: np.ndarray        # (K,) channel-mean displacement norms
    shard_sizes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "label_marginals": self.label_marginals.tolist(),
            "js_to_global": self.js_to_global.tolist(),
            "mean_js": self.mean_js,
            "pairwise_js": self.pairwise_js.tolist(),
            "size_gini": self.size_gini,
            "feature_shift": self.feature_shift.tolist(),
            "shard_sizes": list(self.shard_sizes),
        }


def skew_report(dataset: MultiLabelDataset, shards: list[ClientShard]) -> SkewReport:
    """Quantify label, quantity, and feature skew across shards."""
    n = len(dataset)
    seen: set[int] = set()
    for s in shards:
        if s.size == 0:
            raise DataError(f"client {s.client_id}: empty shard")
        idx = set(s.indices)
        if idx & seen:
            raise DataError("shards overlap")
        if not all(0 <= i < n for i in idx):
            raise DataError("shard index out of range")
        seen |= idx

    k = len(shards)
    p = dataset.n_classes
    marginals = np.zeros((k, p))
    feat = np.zeros((k, dataset.images.shape[1]))
    for i, s in enumerate(shards):
        idx = np.asarray(s.indices)
        counts = dataset.labels[idx].sum(axis=0).astype(np.float64)
        marginals[i] = counts / counts.sum()
        feat[i] = dataset.images[idx].mean(axis=(0, 2, 3))
    global_marginal = marginals.mean(axis=0)
    global_feat = feat.mean(axis=0)

    js = np.array([js_divergence(marginals[i], global_marginal) for i in range(k)])
    pairwise = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            pairwise[i, j] = pairwise[j, i] = js_divergence(marginals[i], marginals[j])
    return SkewReport(
        label_marginals=marginals,
        js_to_global=js,
        mean_js=float(js.mean()),
        pairwise_js=pairwise,
        size_gini=gini_coefficient([s.size for s in shards]),
        feature_shift=np.linalg.norm(feat - global_feat, axis=1),
        shard_sizes=tuple(s.size for s in shards),
    )
