"""Architecture construction: shapes, determinism, and exact parameter counts.

The parameter counts below are derived by hand from the layer arithmetic and
frozen; a change in any architecture's layout will move them.
"""
import numpy as np
import pytest

from fedmix.errors import ConfigError, DimensionError
from fedmix.models import (
    ARCHS,
    ModelConfig,
    build_model,
    tiny_config,
    toy_config,
)
from fedmix.params import ParamSet, count_params
from fedmix.tensor import Tensor

# hand-derived totals for the toy presets (parameters plus norm buffers):
#   mlp_mixer : embed 3*64*16+64 | 5 blocks of 2 LN(128) + token MLP
#               (16*32+32 + 32*16+16) + channel MLP (64*128+128 + 128*64+64)
#               | final LN 128 | head 64*6+6            -> 93,174
#   conv_mixer: embed 3*96*16+96 | embed BN 4*96 | 7 blocks of depthwise
#               96*25+96 + BN + pointwise 96*96+96 + BN | head 96*6+6
#                                                        -> 93,702
#   pool_former: embed 3136 | 6 blocks of 2 chanLN(128) + 64*128+128
#               + 128*64+64 | final chanLN 128 | head 390 -> 104,646
#   resnet_s  : stem 3*16*9 + BN | stages 16-16, 16-32, 32-48, 48-64 with
#               3x3+BN pairs and 1x1+BN projections | head 390 -> 125,366
TOY_COUNTS = {
    "mlp_mixer": 93_174,
    "conv_mixer": 93_702,
    "pool_former": 104_646,
    "resnet_s": 125_366,
}


def test_toy_param_counts_are_frozen():
    for arch, expect in TOY_COUNTS.items():
        model = build_model(toy_config(arch), seed=0)
        assert count_params(ParamSet.from_model(model)) == expect, arch


def test_tiny_mlp_mixer_count_by_hand():
    # patch embed 2*6*16+6 = 198; one block: LN 12 + token MLP over 4 tokens
    # (4*5+5 + 5*4+4 = 49) + LN 12 + channel MLP (6*7+7 + 7*6+6 = 97) = 170;
    # final LN 12; head 6*3+3 = 21; total 401
    model = build_model(tiny_config("mlp_mixer"), seed=0)
    assert count_params(ParamSet.from_model(model)) == 401


def test_forward_shapes_and_finite():
    rng = np.random.default_rng(0)
    for arch in ARCHS:
        cfg = tiny_config(arch)
        model = build_model(cfg, seed=1)
        model.eval()
        x = Tensor(rng.standard_normal(
            (3, cfg.input_channels, cfg.image_size, cfg.image_size)))
        logits, z = model.forward(x)
        assert logits.shape == (3, cfg.num_classes), arch
        assert z.ndim == 2 and z.shape[0] == 3, arch
        assert np.isfinite(logits.data).all() and np.isfinite(z.data).all(), arch


def test_z_feeds_linear_head():
    cfg = tiny_config("mlp_mixer")
    model = build_model(cfg, seed=2)
    model.eval()
    x = Tensor(np.random.default_rng(1).standard_normal(
        (2, cfg.input_channels, cfg.image_size, cfg.image_size)))
    logits, z = model.forward(x)
    manual = z.data @ model.head.weight.data + model.head.bias.data
    assert np.allclose(logits.data, manual, atol=1e-12)


def test_forward_validates_input_shape():
    cfg = tiny_config("conv_mixer")
    model = build_model(cfg, seed=0)
    with pytest.raises(DimensionError):
        model.forward(Tensor(np.zeros((2, cfg.input_channels + 1,
                                       cfg.image_size, cfg.image_size))))
    with pytest.raises(DimensionError):
        model.forward(Tensor(np.zeros((cfg.input_channels, cfg.image_size,
                                       cfg.image_size))))


def test_build_is_deterministic_per_seed():
    cfg = tiny_config("resnet_s")
    a = dict(build_model(cfg, seed=7).named_state())
    b = dict(build_model(cfg, seed=7).named_state())
    c = dict(build_model(cfg, seed=8).named_state())
    assert a.keys() == b.keys() == c.keys()
    for name in a:
        assert np.array_equal(a[name].data, b[name].data), name
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


def test_archs_differ_in_structure():
    names = {arch: set(dict(build_model(tiny_config(arch), seed=0)
                            .named_state())) for arch in ARCHS}
    assert names["mlp_mixer"] != names["conv_mixer"]
    assert any("running_mean" in n for n in names["conv_mixer"])
    assert not any("running_mean" in n for n in names["pool_former"])


def test_dtype_request_is_honored():
    model = build_model(tiny_config("pool_former"), seed=0, dtype=np.float32)
    assert all(t.data.dtype == np.float32 for _, t in model.named_state())


def test_train_eval_switch_controls_batch_stats():
    cfg = tiny_config("conv_mixer")
    model = build_model(cfg, seed=3)
    x = Tensor(np.random.default_rng(2).standard_normal(
        (4, cfg.input_channels, cfg.image_size, cfg.image_size)))
    before = model.embed_bn.running_mean.data.copy()
    model.eval()
    model.forward(x)
    assert np.array_equal(model.embed_bn.running_mean.data, before)
    model.train()
    model.forward(x)
    assert not np.array_equal(model.embed_bn.running_mean.data, before)


def test_config_roundtrip():
    cfg = toy_config("resnet_s")
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_rejects_unknown_fields():
    d = toy_config("mlp_mixer").to_dict()
    d["dropout"] = 0.5
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(d)


def test_config_validation_rules():
    with pytest.raises(ConfigError):
        build_model(ModelConfig(arch="vit", image_size=16, num_classes=3), 0)
    with pytest.raises(ConfigError):  # patch must divide image
        toy_config("mlp_mixer", image_size=18).validate()
    bad_kernel = toy_config("conv_mixer")
    bad_kernel.kernel_size = 4
    with pytest.raises(ConfigError):
        bad_kernel.validate()
    bad_pool = toy_config("pool_former")
    bad_pool.pool_size = 2
    with pytest.raises(ConfigError):
        bad_pool.validate()
    bad_widths = toy_config("resnet_s")
    bad_widths.stage_widths = (16, 32)
    with pytest.raises(ConfigError):
        bad_widths.validate()
    bad_head = toy_config("resnet_s")
    bad_head.embed_dim = 32
    with pytest.raises(ConfigError):
        bad_head.validate()


def test_toy_configs_are_within_scale_band():
    for arch in ARCHS:
        n = TOY_COUNTS[arch]
        assert 80_000 <= n <= 130_000, arch
