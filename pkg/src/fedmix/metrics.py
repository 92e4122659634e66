"""Multi-label F1 metrics over binary prediction/target matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class MetricsSummary:
    micro_f1: float
    macro_f1: float
    precision: np.ndarray        # (P,)
    recall: np.ndarray           # (P,)
    f1: np.ndarray               # (P,)
    support: np.ndarray          # (P,) positives per class in the target
    undefined_classes: tuple[int, ...]  # never predicted and never present

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "undefined_classes": list(self.undefined_classes),
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def f1_scores(pred: np.ndarray, target: np.ndarray) -> MetricsSummary:
    """Micro (pooled counts) and macro (unweighted class mean) F1.

    A class whose per-class denominator is zero scores 0 by convention and
    still counts in the macro mean; classes that are both never predicted
    and never present are additionally listed in ``undefined_classes``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 2:
        raise DimensionError(
            f"f1_scores: need matching N x P shapes, got {pred.shape} vs {target.shape}")
    for name, a in (("pred", pred), ("target", target)):
        if not np.all((a == 0) | (a == 1)):
            raise ContractError(f"f1_scores: {name} must be binary")
    pred = pred.astype(bool)
    target = target.astype(bool)

    tp = (pred & target).sum(axis=0).astype(np.int64)
    fp = (pred & ~target).sum(axis=0).astype(np.int64)
    fn = (~pred & target).sum(axis=0).astype(np.int64)

    tp_all, fp_all, fn_all = int(tp.sum()), int(fp.sum()), int(fn.sum())
    micro_den = 2 * tp_all + fp_all + fn_all
    micro = (2.0 * tp_all / micro_den) if micro_den > 0 else 0.0

    precision = _safe_div(tp.astype(np.float64), (tp + fp).astype(np.float64))
    recall = _safe_div(tp.astype(np.float64), (tp + fn).astype(np.float64))
    f1 = _safe_div(2.0 * tp.astype(np.float64), (2 * tp + fp + fn).astype(np.float64))
    undefined = tuple(int(i) for i in np.flatnonzero((tp + fp + fn) == 0))

    return MetricsSummary(
        micro_f1=float(micro),
        macro_f1=float(f1.mean()) if f1.size else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        support=target.sum(axis=0).astype(np.int64),
        undefined_classes=undefined,
    )
