"""Finite-difference verification of analytic gradients.

Central differences with step ``eps`` are compared against backpropagated
gradients coordinate by coordinate; the error measure is
``|a - n| / max(1, |a|, |n|)``. Checks run in float64. Non-scalar outputs
are reduced to a scalar through a fixed seeded weighted sum so every output
coordinate participates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, no_grad

EPS_DEFAULT = 1e-6
PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4
CHECK_SEEDS = (0, 1, 2)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_coords: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"{status:4s} {self.name}: max rel err {self.max_rel_err:.3e} "
                f"over {self.n_coords} coords (threshold {self.threshold:.0e})")


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], *,
                    eps: float = EPS_DEFAULT, threshold: float = PRIMITIVE_TOL,
                    max_coords: int | None = None, rng: np.random.Generator | None = None,
                    name: str = "fn") -> CheckResult:
    """Compare analytic and central-difference gradients of ``fn``.

    ``fn`` maps the given tensors to a tensor of any shape. Inputs with
    ``requires_grad`` are checked on every coordinate, or on ``max_coords``
    seeded-random coordinates each when set.
    """
    rng = rng if rng is not None else np.random.default_rng(20240501)
    probe = fn(*inputs)
    weights = rng.standard_normal(probe.shape) if probe.size != 1 else None

    def scalar() -> float:
        out = fn(*inputs)
        if weights is None:
            return float(out.data.reshape(()))
        return float((out.data * weights).sum())

    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    loss = out if weights is None else (out * Tensor(weights)).sum()
    loss.backward()

    max_err = 0.0
    n_checked = 0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = rng.choice(flat.size, size=max_coords, replace=False)
        with no_grad():
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                fp = scalar()
                flat[i] = orig - eps
                fm = scalar()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * eps)
                max_err = max(max_err, _rel_err(float(analytic.reshape(-1)[i]), numeric))
                n_checked += 1
    return CheckResult(name, max_err, n_checked, threshold)


# ---------------------------------------------------------------------------
# primitive case registry: each op gets three seeded (shape, configuration)
# cases spanning broadcasting, grouping, stride, and padding variants.

def _randn(rng, shape, *, positive=False, away_from_zero=False, scale=1.0):
    x = rng.standard_normal(shape) * scale
    if positive:
        x = np.abs(x) + 0.5
    if away_from_zero:
        x = np.sign(x) * (np.abs(x) + 0.5)
    return x


def _t(rng, shape, **kw) -> Tensor:
    return Tensor(_randn(rng, shape, **kw), requires_grad=True)


def _binary_cases(op):
    shapes = [((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((5, 1), (1, 6))]

    def build(i, rng, denom_safe=False):
        sa, sb = shapes[i]
        a = _t(rng, sa)
        b = Tensor(_randn(rng, sb, away_from_zero=denom_safe), requires_grad=True)
        return op, (a, b)

    return build


def _case_registry():
    reg: list[tuple[str, Callable]] = []

    for nm, op in (("add", ops.add), ("sub", ops.sub), ("mul", ops.mul)):
        reg.append((nm, lambda i, rng, op=op: _binary_cases(op)(i, rng)))
    reg.append(("div", lambda i, rng: _binary_cases(ops.div)(i, rng, denom_safe=True)))

    def matmul_case(i, rng):
        dims = [(3, 4, 5), (1, 6, 1), (7, 2, 3)][i]
        m, k, n = dims
        return ops.matmul, (_t(rng, (m, k)), _t(rng, (k, n)))
    reg.append(("matmul", matmul_case))

    def conv_case(i, rng):
        cfg = [((2, 3, 5, 5), (4, 3, 3, 3), 1, 1, 1),
               ((1, 4, 6, 6), (4, 1, 3, 3), 1, 1, 4),
               ((2, 4, 7, 7), (6, 2, 3, 3), 2, 1, 2)][i]
        xs, ks, s, p, g = cfg
        fn = lambda x, k: ops.conv2d(x, k, stride=s, padding=p, groups=g)
        return fn, (_t(rng, xs), _t(rng, ks))
    reg.append(("conv2d", conv_case))

    def conv1x1_case(i, rng):
        cfg = [((2, 3, 4, 4), (5, 3, 1, 1), 1),
               ((2, 4, 5, 5), (6, 4, 1, 1), 2),
               ((1, 2, 3, 3), (2, 2, 1, 1), 1)][i]
        xs, ks, s = cfg
        fn = lambda x, k: ops.conv2d(x, k, stride=s)
        return fn, (_t(rng, xs), _t(rng, ks))
    reg.append(("conv2d_1x1", conv1x1_case))

    def pool_case(i, rng):
        cfg = [((2, 3, 6, 6), 2, 2, 0), ((1, 2, 5, 5), 3, 1, 1), ((2, 1, 4, 4), 2, 1, 1)][i]
        xs, k, s, p = cfg
        fn = lambda x: ops.avg_pool2d(x, k, stride=s, padding=p)
        return fn, (_t(rng, xs),)
    reg.append(("avg_pool2d", pool_case))

    def gap_case(i, rng):
        xs = [(2, 3, 4, 4), (1, 5, 2, 3), (3, 2, 6, 6)][i]
        return ops.global_avg_pool, (_t(rng, xs),)
    reg.append(("global_avg_pool", gap_case))

    def ln_case(i, rng):
        xs = [(2, 5, 8), (4, 6), (3, 2, 4)][i]
        d = xs[-1]
        fn = lambda x, g, b: ops.layer_norm(x, g, b, axes=-1)
        return fn, (_t(rng, xs), _t(rng, (d,)), _t(rng, (d,)))
    reg.append(("layer_norm", ln_case))

    def bn_case(i, rng):
        if i == 0:
            xs, training = (5, 3), True
        elif i == 1:
            xs, training = (2, 3, 4, 4), True
        else:
            xs, training = (2, 3, 4, 4), False
        c = xs[1]
        rm = Tensor(_randn(rng, (c,)), requires_grad=False)
        rv = Tensor(_randn(rng, (c,), positive=True), requires_grad=False)
        fn = lambda x, g, b: ops.batch_norm(x, g, b, rm, rv, training=training)
        return fn, (_t(rng, xs), _t(rng, (c,)), _t(rng, (c,)))
    reg.append(("batch_norm", bn_case))

    for nm, op in (("gelu", ops.gelu), ("sigmoid", ops.sigmoid), ("softplus", ops.softplus)):
        def unary_case(i, rng, op=op):
            xs = [(4, 5), (7,), (2, 3, 2)][i]
            return op, (_t(rng, xs),)
        reg.append((nm, unary_case))

    def sqrt_case(i, rng):
        xs = [(4, 5), (7,), (2, 3, 2)][i]
        return ops.sqrt, (_t(rng, xs, positive=True),)
    reg.append(("sqrt", sqrt_case))

    def reshape_case(i, rng):
        src, dst = [((2, 3, 4), (4, 6)), ((6,), (2, 3)), ((4, 4), (2, 2, 4))][i]
        fn = lambda x: ops.reshape(x, dst)
        return fn, (_t(rng, src),)
    reg.append(("reshape", reshape_case))

    def transpose_case(i, rng):
        src, axes = [((2, 3, 4), (2, 0, 1)), ((3, 5), None), ((2, 3, 4, 5), (0, 2, 3, 1))][i]
        fn = lambda x: ops.transpose(x, axes)
        return fn, (_t(rng, src),)
    reg.append(("transpose", transpose_case))

    def rsum_case(i, rng):
        src, ax, kd = [((3, 4), None, False), ((2, 3, 4), 1, True), ((2, 3, 4), (0, 2), False)][i]
        fn = lambda x: ops.reduce_sum(x, axis=ax, keepdims=kd)
        return fn, (_t(rng, src),)
    reg.append(("reduce_sum", rsum_case))

    def rmean_case(i, rng):
        src, ax, kd = [((3, 4), None, False), ((2, 3, 4), 1, True), ((2, 3, 4), (0, 2), False)][i]
        fn = lambda x: ops.reduce_mean(x, axis=ax, keepdims=kd)
        return fn, (_t(rng, src),)
    reg.append(("reduce_mean", rmean_case))

    def bce_case(i, rng):
        xs = [(4, 6), (3, 3), (8, 2)][i]
        logits = Tensor(_randn(rng, xs, scale=2.0), requires_grad=True)
        targets = Tensor((rng.random(xs) < 0.4).astype(np.float64), requires_grad=False)
        return ops.bce_with_logits, (logits, targets)
    reg.append(("bce_with_logits", bce_case))

    return reg


PRIMITIVE_CASES = _case_registry()


def run_primitive_checks(*, eps: float = EPS_DEFAULT,
                         threshold: float = PRIMITIVE_TOL) -> list[CheckResult]:
    """Run all primitive cases across the standard seeds."""
    results = []
    for name, build in PRIMITIVE_CASES:
        for i, seed in enumerate(CHECK_SEEDS):
            rng = np.random.default_rng(1000 + 97 * seed + i)
            fn, inputs = build(i, rng)
            results.append(check_gradients(
                fn, inputs, eps=eps, threshold=threshold,
                rng=np.random.default_rng(seed),
                name=f"{name}[case {i}, seed {seed}]"))
    return results


def run_model_checks(*, eps: float = EPS_DEFAULT, threshold: float = MODEL_TOL,
                     coords_per_param: int = 3) -> list[CheckResult]:
    """Finite-difference spot checks of every architecture's training loss,
    with and without the contrastive proximal term, across the standard
    seeds. Models run in training mode so batch-stat normalization backward
    paths are exercised; contrastive reference models are perturbed copies
    in eval mode."""
    from .models import ARCHS, build_model, tiny_config
    from .objectives import MoonConfig, local_objective

    results = []
    for arch in ARCHS:
        cfg = tiny_config(arch)
        for algo in ("fedavg", "moon"):
            for seed in CHECK_SEEDS:
                rng = np.random.default_rng(7000 + 13 * seed)
                model = build_model(cfg, seed)
                g_model = p_model = None
                moon_cfg = None
                if algo == "moon":
                    g_model = build_model(cfg, seed + 100)
                    g_model.eval()
                    p_model = build_model(cfg, seed + 200)
                    p_model.eval()
                    moon_cfg = MoonConfig(tau=0.5, mu=1.0, form="log")
                x = Tensor(rng.standard_normal(
                    (2, cfg.input_channels, cfg.image_size, cfg.image_size)))
                y = (rng.random((2, cfg.num_classes)) < 0.5).astype(np.float64)
                y[y.sum(axis=1) == 0, 0] = 1.0
                y = Tensor(y)

                def loss_fn(model=model, g=g_model, p=p_model, x=x, y=y,
                            algo=algo, mc=moon_cfg):
                    return local_objective(x, y, model, g, p, algo, mc)[0]

                results.append(check_model_gradients(
                    loss_fn, model.named_parameters(), eps=eps,
                    threshold=threshold, coords_per_param=coords_per_param,
                    rng=np.random.default_rng(seed),
                    name=f"{arch}+{algo}[seed {seed}]"))
    return results


def check_model_gradients(loss_fn: Callable[[], Tensor],
                          params: Sequence[tuple[str, Tensor]], *,
                          eps: float = EPS_DEFAULT, threshold: float = MODEL_TOL,
                          coords_per_param: int = 3,
                          rng: np.random.Generator | None = None,
                          name: str = "model") -> CheckResult:
    """Spot-check a scalar model loss against finite differences.

    Each parameter tensor contributes ``coords_per_param`` seeded-random
    coordinates. ``loss_fn`` must be a pure re-evaluation closure: repeated
    calls on the same parameter values return the same scalar.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for _, t in params:
        t.zero_grad()
    loss_fn().backward()
    grads = {nm: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for nm, t in params}

    max_err = 0.0
    n_checked = 0
    with no_grad():
        for nm, t in params:
            flat = t.data.reshape(-1)
            k = min(coords_per_param, flat.size)
            idxs = rng.choice(flat.size, size=k, replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(loss_fn().data)
                flat[i] = orig - eps
                fm = float(loss_fn().data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * eps)
                analytic = float(grads[nm].reshape(-1)[i])
                max_err = max(max_err, _rel_err(analytic, numeric))
                n_checked += 1
    return CheckResult(name, max_err, n_checked, threshold)
