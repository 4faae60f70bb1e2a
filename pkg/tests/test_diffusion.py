import numpy as np
import pytest
from hypothesis import given, strategies as st

import eepose.diffusion as dif
from eepose.diffusion import (ModelFrame, SampleConfig, SdeSchedule, TrainConfig, TrainingSet, dsm_loss,
                              estimate_pose, initial_states, integrate_ode, model_frame, perturb, principal_frame,
                              rotate_examples, sample_ode, sigma_of_t, train)
from eepose.errors import NonFiniteLoss, NonFiniteState
from eepose.geometry import Pose, SymmetryFlags, axis_angle, geodesic_angle, random_rotation, rot6d_to_matrix
from eepose.scorenet import TINY, NetConfig, init_params
from fdcheck import fd_max_rel_error

SCHED = SdeSchedule()
SMALL_NET = NetConfig(point_widths=(16, 32, 32), global_width=32, time_freqs=8, time_width=16,
                      pose_widths=(16, 16), trunk_widths=(64, 64))


def test_schedule_examples():
    assert sigma_of_t(SCHED, 1.0) == pytest.approx(5.0)
    assert sigma_of_t(SCHED, 0.0) == pytest.approx(0.01)
    assert sigma_of_t(SCHED, 0.5) == pytest.approx(np.sqrt(0.05))
    ts = np.linspace(SCHED.eps, 1, 100)
    assert np.all(np.diff(sigma_of_t(SCHED, ts)) > 0)
    with pytest.raises(ValueError):
        SdeSchedule(1.0, 0.5)


def test_perturb_examples():
    p0 = np.arange(12.0)
    assert np.array_equal(perturb(p0, 0.7, SCHED, z=np.zeros(12)), p0)
    rng = np.random.default_rng(0)
    d = perturb(np.zeros((100000 // 12 + 1, 12)), 0.6, SCHED, rng)
    assert d.std() == pytest.approx(sigma_of_t(SCHED, 0.6), rel=0.01)
    near = perturb(np.tile(p0, (1000, 1)), SCHED.eps, SCHED, rng)
    assert np.abs(near - p0).max() <= 6 * SCHED.sigma_min


def _data(n=2, n_points=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 12)), rng.normal(size=(n, n_points, 3))


@given(st.integers(0, 2**32 - 1))
def test_oracle_score_gives_zero_loss(seed):
    poses, clouds = _data(seed=seed % 1000)

    def oracle(pt, t, idx):
        return (poses[idx] - pt) / sigma_of_t(SCHED, t)[:, None] ** 2

    assert dsm_loss(None, poses, clouds, SCHED, np.random.default_rng(seed), draws=4, score_fn=oracle) <= 1e-10


def test_zero_score_loss_expectation_is_dimension():
    poses, clouds = _data()
    loss = dsm_loss(None, poses, clouds, SCHED, np.random.default_rng(1), draws=20000,
                    score_fn=lambda pt, t, idx: np.zeros_like(pt))
    assert loss == pytest.approx(12.0, rel=0.02)
    # the zero-head network is the same zero score
    net = dsm_loss(init_params(TINY), poses, clouds, SCHED, np.random.default_rng(1), draws=20000)
    assert net == pytest.approx(loss, rel=1e-12)


def test_dsm_loss_gradient_finite_differences():
    p = init_params(TINY, 2, zero_heads=False)
    poses, clouds = _data(n_points=16, seed=3)

    def lg(params):
        return dsm_loss(params, poses, clouds, SCHED, np.random.default_rng(7), draws=2, with_grad=True)

    worst, n = fd_max_rel_error(p, lg)
    assert n == p.n_params and worst < 1e-4


def _single(seed=0, n_points=128):
    rng = np.random.default_rng(seed)
    cloud = rng.normal(scale=0.02, size=(n_points, 3)) + [0.1, 0.0, 0.5]
    cloud[:, 2] *= 3
    return TrainingSet.from_examples([cloud], [Pose(random_rotation(rng), [0.1, 0.01, 0.52])], [[0, 0, 1]], 0.05)


def test_train_zero_epochs_and_determinism():
    p = init_params(SMALL_NET, 0)
    data = _single()
    q, hist = train(p, data, TrainConfig(epochs=0))
    assert hist == [] and all(np.array_equal(q.tensors[k], p.tensors[k]) for k in p.tensors)
    cfg = TrainConfig(epochs=5, batch_size=1, draws=4, seed=3)
    _, h1 = train(p, data, cfg)
    _, h2 = train(p, data, cfg)
    assert h1 == h2


def test_train_single_sample_loss_drops():
    # small-noise rows need many steps to fit, so 200 single-step epochs reach about 30%
    p = init_params(NetConfig(), 0)
    _, hist = train(p, _single(), TrainConfig(epochs=200, batch_size=1, draws=256, augment=False, lr=3e-3,
                                              lr_final=3e-5))
    assert hist[-1] < 0.4 * hist[0]


def test_train_reports_nonfinite_location():
    p = init_params(TINY, 0)
    p.tensors["head.t.b"][:] = np.nan
    with pytest.raises(NonFiniteLoss, match="epoch 0, batch 0"):
        train(p, _single(), TrainConfig(epochs=1, batch_size=1))


def test_zero_network_flow_is_identity():
    p = init_params(TINY, 0)
    cloud = np.random.default_rng(0).normal(size=(32, 3))
    init = np.random.default_rng(1).standard_normal(12) * 5.0
    out = sample_ode(p, cloud, SampleConfig(k=1, ode_steps=50), init=init)
    assert out.tobytes() == init.tobytes()


def test_single_euler_step_hand_value():
    s0 = np.linspace(-1, 1, 12)
    p_init = np.ones((1, 12))
    out = integrate_ode(lambda p, t: np.broadcast_to(s0, p.shape), p_init, SCHED, 1)
    dt = SCHED.eps - 1.0
    # drift at t = 1 is -sigma_max^2 * ln(sigma_max / sigma_min) * s0
    expected = 1.0 + dt * (-(25.0 * np.log(500.0)) * s0)
    np.testing.assert_allclose(out[0], expected, rtol=1e-14)


def test_integrate_nonfinite_state():
    with pytest.raises(NonFiniteState):
        integrate_ode(lambda p, t: np.full_like(p, np.inf), np.zeros((1, 12)), SCHED, 3)


def test_euler_first_order_convergence():
    mu, s0 = 0.7, 0.3

    def score(p, t):
        return -(p - mu) / (s0**2 + sigma_of_t(SCHED, t) ** 2)

    p1 = np.full((1, 12), 2.0)
    ref = integrate_ode(score, p1, SCHED, 20000)
    errs = [np.abs(integrate_ode(score, p1, SCHED, n) - ref).max() for n in (200, 400, 800)]
    for a, b in zip(errs, errs[1:]):
        assert 1.5 <= a / b <= 2.5


def test_initial_states_streams():
    a = initial_states(4, SCHED, 3)
    b = initial_states(6, SCHED, 3)
    assert np.array_equal(a, b[:4])
    assert a.std() == pytest.approx(5.0, rel=0.5)


@pytest.mark.parametrize("principal", [False, True])
def test_model_frame_round_trip(principal):
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(50, 3)) * [0.01, 0.02, 0.05] + 1.0
    pose = Pose(random_rotation(rng), [0.9, 1.1, 1.0])
    frame = ModelFrame.fit(cloud, 0.05, principal)
    mc = frame.cloud(cloud)
    np.testing.assert_allclose(mc.mean(axis=0), 0, atol=1e-12)
    back = frame.decode(frame.encode(pose, [1, 0, 0]))
    np.testing.assert_allclose(back.t, pose.trans, atol=1e-12)
    np.testing.assert_allclose(rot6d_to_matrix(back.rx, back.ry), pose.rot, atol=1e-12)
    assert back.flags() == SymmetryFlags(x=True)


@given(st.integers(0, 2**32 - 1))
def test_principal_frame_is_rotation_equivariant(seed):
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(200, 3)) * [1.0, 0.5, 0.2]
    cloud = cloud - cloud.mean(axis=0)
    Q = principal_frame(cloud)
    np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-12)
    assert np.linalg.det(Q) == pytest.approx(1.0)
    R = random_rotation(rng)
    # the canonical coordinates do not depend on the camera orientation
    np.testing.assert_allclose((cloud @ R.T) @ principal_frame(cloud @ R.T), cloud @ Q, atol=1e-8)


def test_rotate_examples_consistent():
    rng = np.random.default_rng(1)
    data = _single(n_points=20)
    R = random_rotation(rng)
    clouds, poses = rotate_examples(data.clouds, data.poses, R[None])
    np.testing.assert_allclose(clouds[0], data.clouds[0] @ R.T, atol=1e-12)
    np.testing.assert_allclose(rot6d_to_matrix(poses[0, :3], poses[0, 3:6]),
                               R @ rot6d_to_matrix(data.poses[0, :3], data.poses[0, 3:6]), atol=1e-12)
    np.testing.assert_array_equal(poses[0, 6:9], data.poses[0, 6:9])


def _fixed_candidates(monkeypatch, cand):
    monkeypatch.setattr(dif, "integrate_ode", lambda score, p0, schedule, steps: np.tile(cand, (len(p0), 1)))


def test_estimate_identical_candidates_and_flags(monkeypatch):
    p = init_params(TINY)
    cloud = np.random.default_rng(0).normal(size=(40, 3))
    R = random_rotation(np.random.default_rng(2))
    cand = np.concatenate([R[:, 0], R[:, 1], [0.9, 0.1, 0.8], [1.0, -2.0, 0.5]])
    _fixed_candidates(monkeypatch, cand)
    est = estimate_pose(p, cloud, SampleConfig(k=7, ode_steps=3))
    assert est.flags == SymmetryFlags(True, False, True)
    np.testing.assert_allclose(est.pose.rot, R, atol=1e-12)
    np.testing.assert_allclose(est.pose.trans, cloud.mean(axis=0) + 0.05 * np.array([1.0, -2.0, 0.5]), atol=1e-12)


def test_estimate_k1_equals_single_sample():
    p = init_params(SMALL_NET, 0, zero_heads=False)
    for k in p.tensors:
        if k.startswith("head."):
            p.tensors[k] *= 0.01
    p.meta["principal_frame"] = 1.0
    cloud = np.random.default_rng(0).normal(scale=0.03, size=(40, 3))
    cfg = SampleConfig(k=1, ode_steps=20, seed=5)
    est = estimate_pose(p, cloud, cfg)
    frame = model_frame(p, cloud)
    single = sample_ode(p, frame.cloud(cloud), cfg, init=initial_states(1, SdeSchedule(), 5)[0])
    np.testing.assert_allclose(est.candidates[0], single, rtol=1e-12, atol=1e-12)
    dec = frame.decode(single)
    np.testing.assert_allclose(est.pose.rot, rot6d_to_matrix(dec.rx, dec.ry), atol=1e-12)
    again = estimate_pose(p, cloud, cfg)
    assert np.array_equal(again.pose.rot, est.pose.rot)


def test_estimate_refinement(monkeypatch):
    R = random_rotation(np.random.default_rng(4))
    cand = np.concatenate([R[:, 0], R[:, 1], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    _fixed_candidates(monkeypatch, cand)
    ref = random_rotation(np.random.default_rng(5))
    p = init_params(TINY)
    cloud = np.zeros((5, 3))
    plain = estimate_pose(p, cloud, SampleConfig(k=2, ode_steps=1))
    refined = estimate_pose(p, cloud, SampleConfig(k=2, ode_steps=1), refine_reference=ref)
    assert geodesic_angle(refined.pose.rot, ref) <= geodesic_angle(plain.pose.rot, ref)
    np.testing.assert_allclose(refined.pose.rot[:, 2], plain.pose.rot[:, 2], atol=1e-12)


def test_canonical_spin_collapses_symmetric_targets():
    rng = np.random.default_rng(8)
    cloud = rng.normal(size=(60, 3)) * [0.01, 0.01, 0.04]
    base = Pose(random_rotation(rng), [0.0, 0.0, 0.02])
    spun = Pose(base.rot @ axis_angle([0, 0, 1], 1.3), base.trans)
    for principal in (False, True):
        a = TrainingSet.from_examples([cloud, cloud], [base, spun], [[0, 0, 1]] * 2, 0.05, principal, True)
        np.testing.assert_allclose(a.poses[0], a.poses[1], atol=1e-7)
        # the body z axis itself is untouched
        frame = ModelFrame.fit(cloud, 0.05, principal)
        np.testing.assert_allclose(rot6d_to_matrix(a.poses[0, :3], a.poses[0, 3:6])[:, 2],
                                   frame.rot.T @ base.rot[:, 2], atol=1e-12)
    plain = TrainingSet.from_examples([cloud, cloud], [base, spun], [[0, 0, 0]] * 2, 0.05, True, True)
    assert np.abs(plain.poses[0] - plain.poses[1]).max() > 0.1
