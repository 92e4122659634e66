"""The finite-difference checker itself: it must pass correct gradients and,
just as importantly, flag wrong ones."""
import numpy as np

from fedmix import Tensor, ops
from fedmix.gradcheck import (
    CHECK_SEEDS,
    MODEL_TOL,
    PRIMITIVE_CASES,
    PRIMITIVE_TOL,
    check_gradients,
    check_model_gradients,
    run_primitive_checks,
)
from fedmix.models import build_model, tiny_config
from fedmix.objectives import bce_loss


def test_detects_correct_gradient():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    res = check_gradients(lambda t: (t * t).sum(), [x], name="square")
    assert res.passed
    assert res.max_rel_err < 1e-7
    assert res.n_coords == 3


def test_flags_deliberately_wrong_gradient():
    def bad_double(t):
        # forward doubles, but the backward rule claims a factor of 1.9
        return ops._result(t.data * 2.0, (t,), lambda g: (g * 1.9,), "bad")

    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    res = check_gradients(lambda t: bad_double(t).sum(), [x], name="bad")
    assert not res.passed
    assert res.max_rel_err > 1e-2


def test_nonscalar_outputs_use_seeded_projection():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    r1 = check_gradients(lambda t: t * 2.0, [x], name="proj")
    x.zero_grad()
    r2 = check_gradients(lambda t: t * 2.0, [x], name="proj")
    assert r1.passed and r1.max_rel_err == r2.max_rel_err


def test_skips_inputs_without_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))
    res = check_gradients(lambda a, b: (a * b).sum(), [x, c], name="mixed")
    assert res.passed
    assert res.n_coords == 3  # only x's coordinates


def test_max_coords_subsamples():
    x = Tensor(np.ones(50), requires_grad=True)
    res = check_gradients(lambda t: (t * t).sum(), [x], max_coords=5, name="sub")
    assert res.n_coords == 5


def test_every_primitive_case_passes():
    results = run_primitive_checks()
    ops_covered = {name for name, _ in PRIMITIVE_CASES}
    assert len(results) == len(PRIMITIVE_CASES) * len(CHECK_SEEDS)
    assert {"add", "matmul", "conv2d", "conv2d_1x1", "layer_norm", "batch_norm",
            "gelu", "bce_with_logits"} <= ops_covered
    failures = [str(r) for r in results if not r.passed]
    assert not failures, "\n".join(failures)
    assert all(r.threshold == PRIMITIVE_TOL for r in results)


def test_one_model_spot_check_passes():
    cfg = tiny_config("mlp_mixer")
    model = build_model(cfg, seed=0)
    model.train()
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, cfg.input_channels, cfg.image_size,
                                    cfg.image_size)))
    y = Tensor((rng.random((2, cfg.num_classes)) < 0.5).astype(np.float64))

    def loss_fn():
        logits, _ = model.forward(x)
        return bce_loss(logits, y)

    res = check_model_gradients(loss_fn, list(model.named_parameters()),
                                coords_per_param=2, name="mlp_mixer tiny")
    assert res.passed
    assert res.threshold == MODEL_TOL


def test_model_check_flags_corrupted_backward():
    cfg = tiny_config("mlp_mixer")
    model = build_model(cfg, seed=0)
    model.train()
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, cfg.input_channels, cfg.image_size,
                                    cfg.image_size)))
    y = Tensor((rng.random((2, cfg.num_classes)) < 0.5).astype(np.float64))
    victim = dict(model.named_parameters())["head.weight"]

    def loss_fn():
        logits, _ = model.forward(x)
        loss = bce_loss(logits, y)
        # poison the loss with a term whose gradient never reaches the tape
        return loss + Tensor(float(victim.data.sum()))

    res = check_model_gradients(loss_fn, [("head.weight", victim)],
                                coords_per_param=4, name="poisoned")
    assert not res.passed
