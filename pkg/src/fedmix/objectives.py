"""Training objectives: multi-label BCE and the representation-contrastive
proximal term, plus their composition into the per-client local objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ContractError
from .tensor import Tensor, no_grad

_COS_EPS = 1e-12


@dataclass
class MoonConfig:
    tau: float = 0.5
    mu: float = 1.0
    form: str = "log"

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.form not in ("log", "literal"):
            raise ConfigError(f"form must be 'log' or 'literal', got {self.form!r}")


def bce_loss(logits: Tensor, targets: Tensor) -> Tensor:
    """Binary cross-entropy on logits: sum over classes, mean over the batch.

    Targets must be exactly 0 or 1. Predicted probabilities are clamped to
    [1e-7, 1 - 1e-7], bounding any single element's loss by about 16.118.
    """
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    td = targets.data
    if not np.all((td == 0.0) | (td == 1.0)):
        raise ContractError("bce_loss: targets must be binary (0 or 1)")
    elements = ops.bce_with_logits(logits, targets)
    return ops.reduce_mean(ops.reduce_sum(elements, axis=1))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity; 1-d inputs give a scalar, 2-d inputs act row-wise."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape or a.ndim not in (1, 2):
        raise ContractError(
            f"cosine_similarity: need matching 1-d or 2-d shapes, got {a.shape} vs {b.shape}")
    axis = a.ndim - 1
    norms_a = np.sqrt((a.data * a.data).sum(axis=axis))
    norms_b = np.sqrt((b.data * b.data).sum(axis=axis))
    if np.any(norms_a == 0) or np.any(norms_b == 0):
        raise ContractError("cosine_similarity: zero vector")
    dot = ops.reduce_sum(ops.mul(a, b), axis=axis)
    na = ops.sqrt(ops.reduce_sum(ops.mul(a, a), axis=axis))
    nb = ops.sqrt(ops.reduce_sum(ops.mul(b, b), axis=axis))
    return ops.div(dot, ops.add(ops.mul(na, nb), _COS_EPS))


def moon_contrastive(z_new: Tensor, z_prev: Tensor, z_glob: Tensor,
                     cfg: MoonConfig) -> Tensor:
    """Proximal term comparing the live representation against references.

    With s1 = S(z_new, z_glob)/tau and s2 = S(z_prev, z_glob)/tau:
    the log form returns -log(e^{s1} / (e^{s1} + e^{s2})) = softplus(s2 - s1),
    always positive; the literal form returns -e^{s1}/(e^{s1}+e^{s2})
    = -sigmoid(s1 - s2), always in (-1, 0). Both reductions are the
    max-subtracted stable evaluations of the softmax ratio. Batched inputs
    (N x D) are averaged over rows. Only z_new carries gradients; the
    references are expected to be detached by the caller.
    """
    cfg.validate()
    s1 = ops.div(cosine_similarity(z_new, z_glob), cfg.tau)
    s2 = ops.div(cosine_similarity(z_prev, z_glob), cfg.tau)
    if cfg.form == "log":
        per = ops.softplus(ops.sub(s2, s1))
    else:
        per = ops.mul(ops.sigmoid(ops.sub(s1, s2)), -1.0)
    return ops.reduce_mean(per) if per.ndim else per


def local_objective(batch_x: Tensor, batch_y: Tensor, model, global_model,
                    prev_local_model, algo: str, moon_cfg: MoonConfig | None) \
        -> tuple[Tensor, dict]:
    """Compose the per-client training loss for one mini-batch.

    fedavg: plain ``bce_loss``. moon: ``bce_loss + mu * contrastive`` where
    the reference representations come from the global and previous-local
    models, evaluated without gradient tracking. Returns the scalar loss and
    a float breakdown for logging.
    """
    if algo not in ("fedavg", "moon"):
        raise ConfigError(f"algo must be 'fedavg' or 'moon', got {algo!r}")
    logits, z_new = model(batch_x)
    task = bce_loss(logits, batch_y)
    if algo == "fedavg":
        return task, {"loss": float(task.data), "task_loss": float(task.data)}
    if moon_cfg is None:
        raise ConfigError("moon requires a MoonConfig")
    with no_grad():
        _, z_glob = global_model(batch_x)
        _, z_prev = prev_local_model(batch_x)
    con = moon_contrastive(z_new, Tensor(z_prev.data), Tensor(z_glob.data), moon_cfg)
    total = ops.add(task, ops.mul(con, moon_cfg.mu))
    return total, {"loss": float(total.data), "task_loss": float(task.data),
                   "contrastive": float(con.data)}
