import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eepose.errors import EmptyCloud, FormatError, NonFiniteLoss, ShapeMismatch
from eepose.scorenet import (TINY, Batch, NetConfig, adam_init, adam_step, backward, dense_backward,
                             dense_forward, encode_cloud, forward_score, init_params, load_params, save_params,
                             zero_grads)
from fdcheck import fd_max_rel_error


def random_params(cfg=TINY, seed=0):
    p = init_params(cfg, seed, zero_heads=False)
    rng = np.random.default_rng(seed + 1)
    for k, v in p.tensors.items():
        if k.endswith(".b"):
            v[:] = rng.normal(0, 0.1, v.shape)
    return p


def test_default_layout():
    p = init_params()
    t = p.tensors
    assert t["enc.0.w"].shape == (64, 3) and t["enc.2.w"].shape == (256, 128)
    assert t["glob.w"].shape == (256, 256)
    assert t["time.w"].shape == (64, 64)
    assert t["pose.0.w"].shape == (64, 12) and t["pose.1.w"].shape == (64, 64)
    assert t["trunk.0.w"].shape == (256, 384)
    for h in ("rx", "ry", "s", "t"):
        assert t[f"head.{h}.w"].shape == (3, 256)
        assert not t[f"head.{h}.w"].any()


def test_encoder_permutation_invariance():
    p = random_params()
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(50, 3))
    ref = encode_cloud(p, cloud)
    for _ in range(100):
        assert np.array_equal(encode_cloud(p, cloud[rng.permutation(50)]), ref)


def test_encoder_repeated_point():
    p = random_params()
    pt = np.array([[0.3, -0.2, 0.5]])
    one = encode_cloud(p, pt)
    for n in (2, 17, 300):
        # different row counts may take different BLAS kernels, hence not bit-exact
        np.testing.assert_allclose(encode_cloud(p, np.repeat(pt, n, axis=0)), one, rtol=1e-13, atol=1e-13)
    with pytest.raises(EmptyCloud):
        encode_cloud(p, np.zeros((0, 3)))


def test_encoder_zero_weights_propagate_biases():
    p = init_params(TINY)
    for k in p.tensors:
        if k.startswith(("enc.", "glob.")):
            p.tensors[k][:] = 0.0
    p.tensors["enc.2.b"][:] = np.arange(8) - 3.0
    p.tensors["glob.b"][:] = 0.5
    p.tensors["glob.w"][:] = 1.0
    # per-point output relu(b) = [0,0,0,0,1,2,3,4]; global: relu(sum + 0.5) = 10.5
    np.testing.assert_allclose(encode_cloud(p, np.random.default_rng(0).normal(size=(9, 3))), np.full(8, 10.5))


def test_forward_zero_heads_and_purity():
    p = init_params(NetConfig(), 3)
    rng = np.random.default_rng(1)
    cloud = rng.normal(size=(64, 3))
    out = forward_score(p, rng.normal(size=12), 0.4, cloud)
    assert out.shape == (12,) and not out.any()
    q = random_params()
    a = forward_score(q, np.arange(12.0), 0.3, cloud)
    b = forward_score(q, np.arange(12.0), 0.3, cloud)
    assert a.shape == (12,) and np.array_equal(a, b)


def test_dense_linear_hand_gradient():
    rng = np.random.default_rng(0)
    w, x, y = rng.normal(size=(4, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 4))
    out = dense_forward(x, w, np.zeros(4), relu=False)
    # loss = 0.5 |Wx - y|^2  ->  dL/dW = (Wx - y) x^T, dL/dx = W^T (Wx - y)
    dw, db, dx = dense_backward(x, w, out, out - y, relu=False)
    np.testing.assert_allclose(dw, np.outer(w @ x[0] - y[0], x[0]), atol=1e-10)
    np.testing.assert_allclose(dx[0], w.T @ (w @ x[0] - y[0]), atol=1e-10)
    np.testing.assert_allclose(db, (w @ x[0] - y[0]), atol=1e-10)


def _batch(seed=0, n_points=16, rows=3):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(2, n_points, 3)), np.array([0, 1, 1][:rows]), rng.normal(size=(rows, 12)),
                 rng.uniform(0.01, 1, rows))


def test_backward_constant_loss_zero_grads():
    p = random_params()
    loss, grads = backward(p, _batch(), lambda s: (3.0, np.zeros_like(s)))
    assert loss == 3.0
    assert all(not g.any() for g in grads.values())


def test_backward_matches_finite_differences():
    p = random_params(seed=4)
    b = _batch(5)
    target = np.random.default_rng(6).normal(size=(3, 12))

    def lg(params):
        return backward(params, b, lambda s: (float(np.sum((s - target) ** 2)), 2 * (s - target)))

    worst, n = fd_max_rel_error(p, lg)
    assert n == p.n_params
    assert worst < 1e-4


def test_backward_nonfinite():
    with pytest.raises(NonFiniteLoss):
        backward(random_params(), _batch(), lambda s: (float("nan"), np.zeros_like(s)))


def test_adam_examples():
    p = init_params(TINY)
    st = adam_init(p)
    p2, st2 = adam_step(st, p, zero_grads(p))
    assert st2.step == 1
    assert all(np.array_equal(p2.tensors[k], p.tensors[k]) for k in p.tensors)
    g = {k: np.full_like(v, 0.1) for k, v in p.tensors.items()}
    p3, _ = adam_step(st, p, g)
    delta = p3.tensors["enc.0.b"] - p.tensors["enc.0.b"]
    np.testing.assert_allclose(delta, -1e-3 * 0.1 / (0.1 + 1e-8), rtol=1e-12)
    assert delta[0] == pytest.approx(-9.999e-4, abs=1e-7)


def test_adam_decreases_quadratic():
    p = init_params(TINY)
    p.tensors["enc.0.b"][:] = 1.0

    def loss(q):
        return float(np.sum(q.tensors["enc.0.b"] ** 2))

    st = adam_init(p, lr=0.05)
    values = [loss(p)]
    for _ in range(2):
        g = zero_grads(p)
        g["enc.0.b"] = 2 * p.tensors["enc.0.b"]
        p, st = adam_step(st, p, g)
        values.append(loss(p))
    assert values[0] > values[1] > values[2]


def test_adam_shape_mismatch():
    p = init_params(TINY)
    g = zero_grads(p)
    g["enc.0.w"] = np.zeros((2, 2))
    with pytest.raises(ShapeMismatch):
        adam_step(adam_init(p), p, g)
    g = zero_grads(p)
    del g["glob.b"]
    with pytest.raises(ShapeMismatch):
        adam_step(adam_init(p), p, g)


@given(st.integers(0, 1000))
def test_save_load_round_trip(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("m") / "m.teep"
    p = random_params(seed=seed)
    p.meta["trans_scale"] = 0.07
    save_params(p, path)
    q = load_params(path)
    assert q.config == p.config and q.meta == p.meta
    for k in p.tensors:
        assert q.tensors[k].tobytes() == p.tensors[k].tobytes()


def test_load_format_errors(tmp_path):
    path = tmp_path / "m.teep"
    save_params(init_params(TINY), path)
    data = path.read_bytes()
    (tmp_path / "trunc").write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_params(tmp_path / "trunc")
    (tmp_path / "ver").write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(FormatError, match="version 2 unsupported.*1"):
        load_params(tmp_path / "ver")
    (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_params(tmp_path / "magic")
    (tmp_path / "trail").write_bytes(data + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_params(tmp_path / "trail")
    with pytest.raises(OSError):
        load_params(tmp_path / "absent.teep")


def test_init_determinism():
    a, b = init_params(TINY, 9), init_params(TINY, 9)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
