"""Composable network modules on top of the tensor primitives.

Modules register parameters (trainable), buffers (non-trainable state such
as batch-norm running statistics), and child modules in construction order,
which fixes a deterministic naming and serialization order for the whole
tree. Weight tensors use seeded uniform fan-in initialization.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ContractError
from .tensor import Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Base class: ordered registry of params, buffers, and children."""

    def __init__(self):
        object.__setattr__(self, "_entries", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._entries[name] = ("module", value)
        elif isinstance(value, (list, tuple)) and value and all(
                isinstance(v, Module) for v in value):
            self._entries[name] = ("modules", list(value))
        object.__setattr__(self, name, value)

    def param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._entries[name] = ("param", t)
        object.__setattr__(self, name, t)
        return t

    def buffer(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=False)
        self._entries[name] = ("buffer", t)
        object.__setattr__(self, name, t)
        return t

    def _walk(self, prefix: str, kinds: tuple[str, ...]):
        for name, (kind, obj) in self._entries.items():
            full = f"{prefix}{name}"
            if kind in kinds:
                yield full, obj
            elif kind == "module":
                yield from obj._walk(f"{full}.", kinds)
            elif kind == "modules":
                for i, m in enumerate(obj):
                    yield from m._walk(f"{full}.{i}.", kinds)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors in construction order."""
        return list(self._walk("", ("param",)))

    def named_state(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors plus buffers, in construction order."""
        return list(self._walk("", ("param", "buffer")))

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def train(self, flag: bool = True) -> "Module":
        object.__setattr__(self, "training", flag)
        for _, (kind, obj) in self._entries.items():
            if kind == "module":
                obj.train(flag)
            elif kind == "modules":
                for m in obj:
                    m.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map on the last axis; leading axes are flattened and restored."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 *, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.param("weight", fan_in_uniform(rng, (in_features, out_features),
                                            in_features, dtype))
        self.has_bias = bias
        if bias:
            self.param("bias", np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ContractError(
                f"Linear: expected last dim {self.in_features}, got {x.shape}")
        lead = x.shape[:-1]
        flat = ops.reshape(x, (-1, self.in_features)) if x.ndim != 2 else x
        out = ops.matmul(flat, self.weight)
        if self.has_bias:
            out = ops.add(out, self.bias)
        if x.ndim != 2:
            out = ops.reshape(out, (*lead, self.out_features))
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size, rng,
                 *, stride=1, padding=0, groups: int = 1, bias: bool = True,
                 dtype=np.float64):
        super().__init__()
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = (in_channels // groups) * kh * kw
        self.param("weight", fan_in_uniform(
            rng, (out_channels, in_channels // groups, kh, kw), fan_in, dtype))
        self.has_bias = bias
        if bias:
            self.param("bias", np.zeros(out_channels, dtype=dtype))
        self.out_channels = out_channels

    def forward(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.weight, stride=self.stride,
                         padding=self.padding, groups=self.groups)
        if self.has_bias:
            out = ops.add(out, ops.reshape(self.bias, (1, self.out_channels, 1, 1)))
        return out


class BatchNorm(Module):
    """Per-channel batch normalization with running-statistic buffers."""

    def __init__(self, num_features: int, *, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.param("gamma", np.ones(num_features, dtype=dtype))
        self.param("beta", np.zeros(num_features, dtype=dtype))
        self.buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.buffer("running_var", np.ones(num_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta,
                              self.running_mean, self.running_var,
                              training=self.training,
                              momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    """Normalization over the last axis with learned affine."""

    def __init__(self, dim: int, *, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.param("gamma", np.ones(dim, dtype=dtype))
        self.param("beta", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, axes=-1, eps=self.eps)
