import math

import numpy as np
import pytest

from malite.errors import InvalidConfig, NumericalError, ShapeError
from malite.net import (
    BottleneckSpec,
    MaliteMNClassifier,
    NetConfig,
    TrainConfig,
    TrainState,
    build_malite_mn,
    lr_at,
    train_step,
)
from malite.net import ops
from malite.net.model import Bottleneck

from oracles import numerical_grad, rel_error

TINY = NetConfig(stem_channels=4, blocks=((4, 1), (8, 2), (8, 1), (8, 2), (8, 1), (8, 1),
                                          (8, 1), (8, 1)),
                 head_channels=16, n_classes=3, expansion=2)


def rnd(seed, *shape):
    return np.random.default_rng(seed).normal(size=shape)


# -- forward contracts ---------------------------------------------------------


def test_conv_identity_and_shapes():
    x = rnd(0, 2, 5, 7, 3)
    y, _ = ops.conv2d(x, np.eye(3).reshape(1, 1, 3, 3))
    assert np.array_equal(y, x)
    y, _ = ops.conv2d(np.zeros((1, 256, 256, 1)), np.zeros((3, 3, 1, 16)), 2)
    assert y.shape == (1, 128, 128, 16)
    with pytest.raises(ShapeError):
        ops.conv2d(x, np.zeros((3, 3, 4, 2)))


def test_conv_is_linear():
    x1, x2, w = rnd(1, 1, 6, 6, 2), rnd(2, 1, 6, 6, 2), rnd(3, 3, 3, 2, 4)
    a = ops.conv2d(2 * x1 + x2, w, 2)[0]
    b = 2 * ops.conv2d(x1, w, 2)[0] + ops.conv2d(x2, w, 2)[0]
    assert np.allclose(a, b)


def test_depthwise_identity_and_shapes():
    x = rnd(4, 1, 9, 9, 5)
    w = np.zeros((3, 3, 5))
    w[1, 1] = 1
    assert np.array_equal(ops.depthwise_conv(x, w)[0], x)
    y, _ = ops.depthwise_conv(np.zeros((1, 64, 64, 96)), np.zeros((3, 3, 96)), 2)
    assert y.shape == (1, 32, 32, 96)
    with pytest.raises(ShapeError):
        ops.depthwise_conv(x, np.zeros((3, 3, 4)))


def test_batch_norm_modes():
    x = rnd(5, 4, 3, 3, 6) * 3 + 2
    c = 6
    y, _ = ops.batch_norm(x, np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), train=False)
    assert np.allclose(y, x / math.sqrt(1 + 1e-5))
    gamma, beta = np.linspace(0.5, 2, c), np.linspace(-1, 1, c)
    rm, rv = np.zeros(c), np.ones(c)
    y, _ = ops.batch_norm(x, gamma, beta, rm, rv, train=True)
    assert np.allclose(y.mean(axis=(0, 1, 2)), beta, atol=1e-5)
    assert np.allclose(y.var(axis=(0, 1, 2)), gamma ** 2, atol=1e-4)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 1, 2)))
    with pytest.raises(ShapeError):
        ops.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, train=False)


def test_bottleneck_shapes_and_residual():
    rng = np.random.default_rng(0)
    same = Bottleneck.create("b", rng, BottleneckSpec(24, 24, 1, 6))
    x = rng.normal(size=(1, 64, 64, 24)).astype(np.float32)
    y = same.forward(x)
    assert y.shape == (1, 64, 64, 24)
    path = same.project.forward(same.dw.forward(same.expand.forward(x)))
    assert np.allclose(y - path, x, atol=1e-5)
    down = Bottleneck.create("d", rng, BottleneckSpec(24, 32, 2, 6))
    assert not down.spec.residual
    assert down.forward(x).shape == (1, 32, 32, 32)
    with pytest.raises(ShapeError):
        down.forward(x[..., :8])


def test_zeroed_projection_makes_identity():
    rng = np.random.default_rng(1)
    b = Bottleneck.create("b", rng, BottleneckSpec(8, 8, 1, 6))
    b.project.gamma[:] = 0
    x = rng.normal(size=(2, 7, 7, 8)).astype(np.float32)
    assert np.array_equal(b.forward(x), x)


@pytest.mark.parametrize("x, x_out, s, t, hw", [
    (4, 4, 1, 1, 8), (4, 6, 2, 2, 8), (3, 5, 2, 6, 7), (6, 6, 1, 3, 5),
])
def test_bottleneck_shape_contract(x, x_out, s, t, hw):
    b = Bottleneck.create("b", np.random.default_rng(2), BottleneckSpec(x, x_out, s, t))
    out = b.forward(np.zeros((1, hw, hw, x), np.float32))
    assert out.shape == (1, -(-hw // s), -(-hw // s), x_out)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        NetConfig(blocks=((8, 1),) * 7)
    with pytest.raises(InvalidConfig):
        BottleneckSpec(4, 4, 3, 6)
    with pytest.raises(InvalidConfig):
        build_malite_mn({"n_classes": 3})
    specs = NetConfig().bottlenecks()
    assert len(specs) == 8 and specs[0].t == 1 and all(s.t == 6 for s in specs[1:])
    assert NetConfig.from_dict(NetConfig().to_dict()) == NetConfig()


def test_default_network_logits_and_softmax():
    model = build_malite_mn()
    x = np.random.default_rng(0).random((1, 256, 256, 1)).astype(np.float32)
    logits = model.forward(x)
    assert logits.shape == (1, 10)
    p = model.predict_proba(x)
    assert abs(p.sum() - 1) < 1e-6


def test_softmax_class_relabeling():
    z = rnd(6, 4, 5)
    perm = np.array([3, 0, 4, 1, 2])
    assert np.allclose(ops.softmax(z)[:, perm], ops.softmax(z[:, perm]))
    assert np.allclose(ops.softmax(z).sum(axis=1), 1)


# -- gradient checks (float64) -------------------------------------------------


def check_op(forward, backward, inputs, seed):
    """Compare analytic input/param gradients of ``sum(R * forward())``."""
    out, cache = forward()
    R = np.random.default_rng(seed + 1000).normal(size=out.shape)
    grads = backward(R, cache)
    for arr, g in zip(inputs, grads):
        num = numerical_grad(lambda: float((R * forward()[0]).sum()), arr)
        assert rel_error(g, num) < 1e-3


@pytest.mark.parametrize("seed, shape, cout, stride, k", [
    (0, (1, 5, 5, 2), 3, 1, 3), (1, (2, 6, 6, 1), 2, 2, 3), (2, (1, 7, 4, 3), 2, 2, 3),
    (3, (1, 4, 4, 2), 2, 1, 1), (4, (2, 5, 6, 2), 1, 2, 3),
])
def test_conv_gradients(seed, shape, cout, stride, k):
    x = rnd(seed, *shape)
    w = rnd(seed + 10, k, k, shape[-1], cout)
    check_op(lambda: ops.conv2d(x, w, stride), ops.conv2d_backward, [x, w], seed)


@pytest.mark.parametrize("seed, shape, stride", [
    (0, (1, 5, 5, 2), 1), (1, (2, 6, 6, 3), 2), (2, (1, 7, 4, 1), 2), (3, (1, 4, 4, 2), 1),
    (4, (2, 5, 6, 2), 2),
])
def test_depthwise_gradients(seed, shape, stride):
    x = rnd(seed, *shape)
    w = rnd(seed + 10, 3, 3, shape[-1])
    check_op(lambda: ops.depthwise_conv(x, w, stride), ops.depthwise_conv_backward,
             [x, w], seed)


@pytest.mark.parametrize("seed, shape", [
    (0, (4, 2, 2, 3)), (1, (2, 3, 3, 2)), (2, (3, 1, 1, 4)), (3, (1, 4, 5, 2)), (4, (5, 2, 1, 1)),
])
def test_batch_norm_gradients(seed, shape):
    c = shape[-1]
    x = rnd(seed, *shape) * 2 + 1
    gamma = rnd(seed + 1, c) + 1.5
    beta = rnd(seed + 2, c)

    def forward():
        return ops.batch_norm(x, gamma, beta, np.zeros(c), np.ones(c), train=True)

    check_op(forward, ops.batch_norm_backward, [x, gamma, beta], seed)


@pytest.mark.parametrize("seed, x, x_out, s, t", [
    (0, 3, 3, 1, 2), (1, 2, 4, 2, 3), (2, 4, 4, 1, 1), (3, 2, 3, 1, 6), (4, 3, 2, 2, 2),
])
def test_bottleneck_gradients(seed, x, x_out, s, t):
    block = Bottleneck.create("b", np.random.default_rng(seed),
                              BottleneckSpec(x, x_out, s, t), dtype=np.float64)
    inp = rnd(seed, 2, 5, 5, x)
    out = block.forward(inp, train=True)
    R = rnd(seed + 7, *out.shape)
    dx = block.backward(R)

    def loss():
        return float((R * block.forward(inp, train=True)).sum())

    assert rel_error(dx, numerical_grad(loss, inp)) < 1e-3
    for _, layer in block.parts():
        analytic = dict(layer.grads)
        for name in ("weight", "gamma", "beta"):
            num = numerical_grad(loss, getattr(layer, name))
            assert rel_error(analytic[name], num) < 1e-3


@pytest.mark.parametrize("seed, n, cin, k", [(0, 3, 4, 3), (1, 5, 2, 2), (2, 1, 6, 4),
                                              (3, 4, 3, 5), (4, 2, 5, 10)])
def test_dense_softmax_cross_entropy_gradients(seed, n, cin, k):
    x = rnd(seed, n, cin)
    w = rnd(seed + 1, cin, k)
    b = rnd(seed + 2, k)
    labels = np.random.default_rng(seed).integers(0, k, n)

    def loss():
        return ops.softmax_cross_entropy(ops.dense(x, w, b)[0], labels)[0]

    logits, cache = ops.dense(x, w, b)
    _, dlogits = ops.softmax_cross_entropy(logits, labels)
    dx, dw, db = ops.dense_backward(dlogits, cache)
    for analytic, arr in ((dx, x), (dw, w), (db, b)):
        assert rel_error(analytic, numerical_grad(loss, arr)) < 1e-3


def test_whole_network_gradient_spot_check():
    model = build_malite_mn(TINY, seed=3, dtype=np.float64)
    x = np.random.default_rng(3).random((2, 16, 16, 1))
    y = np.array([0, 2])

    def loss():
        return ops.softmax_cross_entropy(model.forward(x, train=True), y)[0]

    _, dlogits = ops.softmax_cross_entropy(model.forward(x, train=True), y)
    model.backward(dlogits)
    grads = model.named_grads()
    params = model.named_parameters()
    for name in ("stem.weight", "blocks.3.dw.weight", "head.gamma", "fc.bias"):
        assert rel_error(grads[name], numerical_grad(loss, params[name])) < 1e-3


# -- training ------------------------------------------------------------------


def test_lr_schedule_endpoints():
    cfg = TrainConfig(warmup_steps=100)
    total = 1000
    assert lr_at(0, total, cfg) == pytest.approx(1e-4 / 100)
    assert lr_at(99, total, cfg) == pytest.approx(1e-4)
    assert lr_at(100, total, cfg) == pytest.approx(1e-4)
    assert abs(lr_at(total - 1, total, cfg) - 5e-5) < 1e-9
    lrs = [lr_at(s, total, cfg) for s in range(100, total)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(InvalidConfig):
        TrainConfig(lr_start=1e-5, lr_end=1e-4)


def test_overfit_one_sample():
    steps, warmup = 40, 5
    monotone = 0
    for seed in range(10):
        model = build_malite_mn(TINY, seed=seed)
        rng = np.random.default_rng(seed)
        x = rng.random((1, 32, 32, 1)).astype(np.float32)
        y = np.array([seed % 3])
        cfg = TrainConfig(lr_start=1e-3, lr_end=5e-4, warmup_steps=warmup, epochs=1,
                          batch_size=1, seed=seed)
        state = TrainState(cfg, steps)
        losses = [train_step(model, (x, y), state) for _ in range(steps)]
        after = losses[warmup:]
        monotone += all(b < a for a, b in zip(after, after[1:]))
    assert monotone >= 9


def test_non_finite_loss_raises():
    model = build_malite_mn(TINY, seed=0)
    x = np.full((2, 16, 16, 1), np.nan, np.float32)
    state = TrainState(TrainConfig(), 10)
    with pytest.raises(NumericalError):
        train_step(model, (x, np.array([0, 1])), state)


# -- prediction ----------------------------------------------------------------


def test_predict_batch_independence():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 256, (12, 16, 16), dtype=np.uint8)
    est = MaliteMNClassifier.from_model(build_malite_mn(TINY, seed=1), ["a", "b", "c"])
    full = est.predict_proba(X, batch_size=12)
    parts = np.concatenate([est.predict_proba(X[i:i + 5], batch_size=5)
                            for i in range(0, 12, 5)])
    assert np.allclose(full, parts, atol=1e-6)
    dup = est.predict_proba(np.stack([X[0], X[0]]))
    assert np.array_equal(dup[0], dup[1])
    assert set(est.predict(X)) <= {"a", "b", "c"}


def test_single_sample_oracle():
    from oracles import MulCounter, naive_network_forward

    cfg = NetConfig(stem_channels=2, blocks=((2, 1), (3, 2), (3, 1), (3, 1), (3, 1),
                                             (3, 1), (3, 1), (4, 2)),
                    head_channels=4, n_classes=2, expansion=2)
    model = build_malite_mn(cfg, seed=5)
    # non-trivial running statistics so infer-mode BN is exercised
    for _, layer in model.leaves()[:-1]:
        layer.running_mean[:] = np.linspace(-0.1, 0.1, layer.running_mean.size)
        layer.running_var[:] = np.linspace(0.5, 1.5, layer.running_var.size)
    tensors = {k: v.astype(np.float64) for k, v in model.named_tensors().items()}
    rng = np.random.default_rng(5)
    X = rng.random((50, 6, 6, 1)).astype(np.float32)
    got = model.forward(X)
    for i in range(50):
        ref = naive_network_forward(tensors, cfg, X[i].astype(np.float64), MulCounter())
        assert np.allclose(got[i], ref, atol=1e-4)


def test_estimator_fit_smoke():
    rng = np.random.default_rng(0)
    X = np.concatenate([np.full((6, 16, 16), 200, np.uint8),
                        rng.integers(0, 256, (6, 16, 16), dtype=np.uint8)])
    y = np.array(["c"] * 6 + ["r"] * 6)
    est = MaliteMNClassifier(config=TINY, epochs=2, batch_size=4, warmup_steps=1)
    est.fit(X, y)
    assert list(est.classes_) == ["c", "r"]
    assert est.model_.config.n_classes == 2
    assert len(est.loss_curve_) == 2
    with pytest.raises(ShapeError):
        est.fit(X, y[:3])
