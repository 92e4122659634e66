"""Toy-scale image classifiers with a shared multi-label head.

Four architectures are built from one config type: an all-MLP mixer
(token-mixing and channel-mixing MLPs over patch tokens), a convolutional
mixer (depthwise + pointwise convolutions), a pooling mixer (parameter-free
average-pooling token mixer), and a small residual CNN. Every model's
``forward`` returns ``(logits, z)`` where ``z`` is the global-average-pooled
pre-head representation; the head applies no sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .nn import BatchNorm, Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

ARCHS = ("mlp_mixer", "conv_mixer", "pool_former", "resnet_s")


@dataclass
class ModelConfig:
    arch: str
    image_size: int
    num_classes: int
    input_channels: int = 3
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    token_mlp_dim: int | None = None     # mlp_mixer
    channel_mlp_dim: int | None = None   # mlp_mixer, pool_former
    kernel_size: int | None = None       # conv_mixer (odd)
    pool_size: int | None = None         # pool_former (odd)
    stage_widths: tuple[int, ...] | None = None  # resnet_s

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.image_size < 1 or self.input_channels < 1:
            raise ConfigError("image_size and input_channels must be >= 1")
        if self.arch != "resnet_s":
            if self.patch_size < 1 or self.image_size % self.patch_size != 0:
                raise ConfigError(
                    f"image_size {self.image_size} must be divisible by "
                    f"patch_size {self.patch_size}")
        if self.arch == "mlp_mixer":
            if not self.token_mlp_dim or not self.channel_mlp_dim:
                raise ConfigError("mlp_mixer needs token_mlp_dim and channel_mlp_dim")
        if self.arch == "conv_mixer":
            if not self.kernel_size or self.kernel_size % 2 == 0:
                raise ConfigError("conv_mixer needs an odd kernel_size")
        if self.arch == "pool_former":
            if not self.pool_size or self.pool_size % 2 == 0:
                raise ConfigError("pool_former needs an odd pool_size")
            if not self.channel_mlp_dim:
                raise ConfigError("pool_former needs channel_mlp_dim")
        if self.arch == "resnet_s":
            if not self.stage_widths or len(self.stage_widths) != self.depth:
                raise ConfigError("resnet_s needs stage_widths of length depth")
            if self.stage_widths[-1] != self.embed_dim:
                raise ConfigError("resnet_s embed_dim must equal the last stage width")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["stage_widths"] is not None:
            d["stage_widths"] = list(d["stage_widths"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("stage_widths") is not None:
            d["stage_widths"] = tuple(d["stage_widths"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


class _Mlp(Module):
    """Two-layer MLP with gelu, acting on the last axis."""

    def __init__(self, dim: int, hidden: int, rng, dtype):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class _MixerBlock(Module):
    def __init__(self, n_tokens: int, dim: int, token_hidden: int,
                 channel_hidden: int, rng, dtype):
        super().__init__()
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.token_mlp = _Mlp(n_tokens, token_hidden, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.channel_mlp = _Mlp(dim, channel_hidden, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        # x: (N, S, D); token mixing runs the MLP along the token axis.
        t = ops.transpose(self.norm1(x), (0, 2, 1))
        t = ops.transpose(self.token_mlp(t), (0, 2, 1))
        x = ops.add(x, t)
        return ops.add(x, self.channel_mlp(self.norm2(x)))


class _ChannelLayerNorm(Module):
    """Layer norm over the channel axis of an NxCxHxW map."""

    def __init__(self, dim: int, *, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.param("gamma", np.ones(dim, dtype=dtype))
        self.param("beta", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        g = ops.reshape(self.gamma, (1, self.dim, 1, 1))
        b = ops.reshape(self.beta, (1, self.dim, 1, 1))
        return ops.layer_norm(x, g, b, axes=1, eps=self.eps)


class _PoolFormerBlock(Module):
    def __init__(self, dim: int, pool_size: int, channel_hidden: int, rng, dtype):
        super().__init__()
        self.pool_size = pool_size
        self.norm1 = _ChannelLayerNorm(dim, dtype=dtype)
        self.norm2 = _ChannelLayerNorm(dim, dtype=dtype)
        self.pw1 = Conv2d(dim, channel_hidden, 1, rng, dtype=dtype)
        self.pw2 = Conv2d(channel_hidden, dim, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        t = self.norm1(x)
        pooled = ops.avg_pool2d(t, self.pool_size, stride=1,
                                padding=self.pool_size // 2)
        x = ops.add(x, ops.sub(pooled, t))
        t = self.norm2(x)
        return ops.add(x, self.pw2(ops.gelu(self.pw1(t))))


class _ConvMixerBlock(Module):
    def __init__(self, dim: int, kernel_size: int, rng, dtype):
        super().__init__()
        self.depthwise = Conv2d(dim, dim, kernel_size, rng,
                                padding=kernel_size // 2, groups=dim, dtype=dtype)
        self.bn1 = BatchNorm(dim, dtype=dtype)
        self.pointwise = Conv2d(dim, dim, 1, rng, dtype=dtype)
        self.bn2 = BatchNorm(dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.bn1(ops.gelu(self.depthwise(x))))
        return self.bn2(ops.gelu(self.pointwise(x)))


class _BasicBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1,
                            bias=False, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)
        self.projects = stride != 1 or in_ch != out_ch
        if self.projects:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride,
                               bias=False, dtype=dtype)
            self.proj_bn = BatchNorm(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = self.bn2(self.conv2(ops.gelu(self.bn1(self.conv1(x)))))
        short = self.proj_bn(self.proj(x)) if self.projects else x
        return ops.gelu(ops.add(out, short))


class Model(Module):
    """Shared shell: embedding, block stack, pooled representation, linear head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.input_channels or \
                x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise DimensionError(
                f"forward: expected (N, {cfg.input_channels}, {cfg.image_size}, "
                f"{cfg.image_size}), got {x.shape}")
        z = self.represent(x)
        return self.head(z), z

    def represent(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class MlpMixer(Model):
    def __init__(self, config: ModelConfig, rng, dtype):
        super().__init__(config)
        c = config
        self.n_tokens = (c.image_size // c.patch_size) ** 2
        self.patch_embed = Conv2d(c.input_channels, c.embed_dim, c.patch_size, rng,
                                  stride=c.patch_size, dtype=dtype)
        self.blocks = [
            _MixerBlock(self.n_tokens, c.embed_dim, c.token_mlp_dim,
                        c.channel_mlp_dim, rng, dtype)
            for _ in range(c.depth)]
        self.final_norm = LayerNorm(c.embed_dim, dtype=dtype)
        self.head = Linear(c.embed_dim, c.num_classes, rng, dtype=dtype)

    def represent(self, x: Tensor) -> Tensor:
        c = self.config
        x = self.patch_embed(x)
        n = x.shape[0]
        x = ops.reshape(x, (n, c.embed_dim, self.n_tokens))
        x = ops.transpose(x, (0, 2, 1))
        for blk in self.blocks:
            x = blk(x)
        return ops.reduce_mean(self.final_norm(x), axis=1)


class ConvMixer(Model):
    def __init__(self, config: ModelConfig, rng, dtype):
        super().__init__(config)
        c = config
        self.patch_embed = Conv2d(c.input_channels, c.embed_dim, c.patch_size, rng,
                                  stride=c.patch_size, dtype=dtype)
        self.embed_bn = BatchNorm(c.embed_dim, dtype=dtype)
        self.blocks = [_ConvMixerBlock(c.embed_dim, c.kernel_size, rng, dtype)
                       for _ in range(c.depth)]
        self.head = Linear(c.embed_dim, c.num_classes, rng, dtype=dtype)

    def represent(self, x: Tensor) -> Tensor:
        x = self.embed_bn(ops.gelu(self.patch_embed(x)))
        for blk in self.blocks:
            x = blk(x)
        return ops.global_avg_pool(x)


class PoolFormer(Model):
    def __init__(self, config: ModelConfig, rng, dtype):
        super().__init__(config)
        c = config
        self.patch_embed = Conv2d(c.input_channels, c.embed_dim, c.patch_size, rng,
                                  stride=c.patch_size, dtype=dtype)
        self.blocks = [_PoolFormerBlock(c.embed_dim, c.pool_size,
                                        c.channel_mlp_dim, rng, dtype)
                       for _ in range(c.depth)]
        self.final_norm = _ChannelLayerNorm(c.embed_dim, dtype=dtype)
        self.head = Linear(c.embed_dim, c.num_classes, rng, dtype=dtype)

    def represent(self, x: Tensor) -> Tensor:
        x = self.patch_embed(x)
        for blk in self.blocks:
            x = blk(x)
        return ops.global_avg_pool(self.final_norm(x))


class ResNetS(Model):
    def __init__(self, config: ModelConfig, rng, dtype):
        super().__init__(config)
        c = config
        w0 = c.stage_widths[0]
        self.stem = Conv2d(c.input_channels, w0, 3, rng, padding=1,
                           bias=False, dtype=dtype)
        self.stem_bn = BatchNorm(w0, dtype=dtype)
        blocks, in_ch = [], w0
        for w in c.stage_widths:
            stride = 2 if w != in_ch else 1
            blocks.append(_BasicBlock(in_ch, w, stride, rng, dtype))
            in_ch = w
        self.blocks = blocks
        self.head = Linear(c.embed_dim, c.num_classes, rng, dtype=dtype)

    def represent(self, x: Tensor) -> Tensor:
        x = ops.gelu(self.stem_bn(self.stem(x)))
        for blk in self.blocks:
            x = blk(x)
        return ops.global_avg_pool(x)


_BUILDERS = {
    "mlp_mixer": MlpMixer,
    "conv_mixer": ConvMixer,
    "pool_former": PoolFormer,
    "resnet_s": ResNetS,
}


def build_model(config: ModelConfig, seed: int, *, dtype=np.float64) -> Model:
    """Validate the config and build a seeded-initialized model."""
    config.validate()
    rng = np.random.default_rng(seed)
    return _BUILDERS[config.arch](config, rng, np.dtype(dtype))


def toy_config(arch: str, *, image_size: int = 16, num_classes: int = 6,
               input_channels: int = 3) -> ModelConfig:
    """Desk-scale preset for each architecture, roughly 100k parameters."""
    common = dict(image_size=image_size, num_classes=num_classes,
                  input_channels=input_channels)
    if arch == "mlp_mixer":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=64, depth=5,
                           token_mlp_dim=32, channel_mlp_dim=128, **common)
    if arch == "conv_mixer":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=96, depth=7,
                           kernel_size=5, **common)
    if arch == "pool_former":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=64, depth=6,
                           pool_size=3, channel_mlp_dim=128, **common)
    if arch == "resnet_s":
        return ModelConfig(arch=arch, depth=4, embed_dim=64,
                           stage_widths=(16, 32, 48, 64), patch_size=1, **common)
    raise ConfigError(f"unknown arch {arch!r}; expected one of {ARCHS}")


def tiny_config(arch: str, *, image_size: int = 8, num_classes: int = 3,
                input_channels: int = 2) -> ModelConfig:
    """Minimal configs used by gradient checks and unit tests."""
    common = dict(image_size=image_size, num_classes=num_classes,
                  input_channels=input_channels)
    if arch == "mlp_mixer":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=6, depth=1,
                           token_mlp_dim=5, channel_mlp_dim=7, **common)
    if arch == "conv_mixer":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=6, depth=1,
                           kernel_size=3, **common)
    if arch == "pool_former":
        return ModelConfig(arch=arch, patch_size=4, embed_dim=6, depth=1,
                           pool_size=3, channel_mlp_dim=7, **common)
    if arch == "resnet_s":
        return ModelConfig(arch=arch, depth=2, embed_dim=8,
                           stage_widths=(4, 8), patch_size=1, **common)
    raise ConfigError(f"unknown arch {arch!r}; expected one of {ARCHS}")
