"""Variance-exploding score diffusion over 12D pose vectors.

Model space: each observed cloud is centred on its centroid, optionally
rotated into its principal-axis frame, and divided by ``trans_scale``; the
pose is expressed in the same frame (see :class:`ModelFrame`). Everything the
sampler and the loss see lives in that space; :func:`estimate_pose` maps back
to meters in the camera frame.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, NonFiniteLoss, NonFiniteState
from .geometry import (Pose, PoseVec12, SymmetryFlags, matrix_to_rot6d, mean_pool_poses, random_rotation,
                       refine_symmetric_axis, rot6d_to_matrix)
from .scorenet import (Batch, ScoreNetParams, adam_init, adam_step, backward, encode_clouds,
                       score_from_features)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SdeSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 5.0
    eps: float = 1e-3

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if not (0 < self.eps < 1):
            raise ValueError("eps must be in (0, 1)")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min))

    @classmethod
    def from_params(cls, params: ScoreNetParams) -> "SdeSchedule":
        m = params.meta
        return cls(m["sigma_min"], m["sigma_max"], m["eps"])

    def meta(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max, "eps": self.eps}


def sigma_of_t(schedule: SdeSchedule, t):
    return schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** np.asarray(t, float)


def perturb(p0, t, schedule: SdeSchedule, rng: np.random.Generator | None = None, z=None):
    """Draw ``p(t) ~ N(p0, sigma(t)^2 I)``; pass ``z`` to fix the noise."""
    p0 = np.asarray(p0, float)
    if z is None:
        z = rng.standard_normal(p0.shape)
    sig = np.asarray(sigma_of_t(schedule, t), float)
    if sig.ndim and p0.ndim > 1:
        sig = sig.reshape(-1, *([1] * (p0.ndim - 1)))
    return p0 + sig * z


# -- model-space encoding ------------------------------------------------------

def principal_frame(centered) -> np.ndarray:
    """Right-handed principal-axis frame of a centred cloud (columns = axes).

    Axes are sorted by decreasing variance; the first two get the sign that
    makes their third moment positive, the third is their cross product.
    """
    c = np.asarray(centered, float).reshape(-1, 3)
    _, vecs = np.linalg.eigh(c.T @ c)
    vecs = vecs[:, ::-1]
    for i in range(2):
        if np.sum((c @ vecs[:, i]) ** 3) < 0:
            vecs[:, i] = -vecs[:, i]
    vecs[:, 2] = np.cross(vecs[:, 0], vecs[:, 1])
    return vecs


@dataclass(frozen=True)
class ModelFrame:
    """Camera <-> model-space map for one observed cloud.

    Model coordinates are ``rot.T @ (x - centroid) / scale``; ``rot`` is the
    identity unless the principal-axis frame is requested.
    """

    centroid: np.ndarray
    rot: np.ndarray
    scale: float

    @classmethod
    def fit(cls, cloud, scale: float, principal: bool = False) -> "ModelFrame":
        cloud = np.asarray(cloud, float).reshape(-1, 3)
        c = cloud.mean(axis=0)
        rot = principal_frame(cloud - c) if principal else np.eye(3)
        return cls(c, rot, float(scale))

    def cloud(self, cloud) -> np.ndarray:
        return (np.asarray(cloud, float).reshape(-1, 3) - self.centroid) @ self.rot / self.scale

    def encode(self, pose: Pose, s) -> np.ndarray:
        rx, ry = matrix_to_rot6d(self.rot.T @ pose.rot)
        t = self.rot.T @ (pose.trans - self.centroid) / self.scale
        return np.concatenate([rx, ry, np.asarray(s, float).reshape(3), t])

    def decode(self, vec) -> PoseVec12:
        """Model-space 12-vector -> camera-frame :class:`PoseVec12` (s clipped to [0, 1])."""
        v = np.asarray(vec, float).reshape(12)
        return PoseVec12(self.rot @ v[0:3], self.rot @ v[3:6], np.clip(v[6:9], 0.0, 1.0),
                         self.centroid + self.scale * (self.rot @ v[9:12]))


def model_frame(params: ScoreNetParams, cloud) -> ModelFrame:
    return ModelFrame.fit(cloud, params.meta["trans_scale"], bool(params.meta.get("principal_frame", 0.0)))


# -- training --------------------------------------------------------------------

@dataclass
class TrainingSet:
    clouds: np.ndarray  # (M, N, 3) model space
    poses: np.ndarray  # (M, 12) model space

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_examples(cls, clouds: Sequence, poses: Sequence[Pose], s: Sequence, trans_scale: float,
                      principal: bool = False, canonical_spin: bool = False) -> "TrainingSet":
        """Model-space training pairs.

        With ``canonical_spin`` the unobservable spin about each flagged axis
        is fixed by turning the target toward the model-frame axes, so a
        symmetric target is a single pose instead of a ring.
        """
        cs, ps = [], []
        for cloud, pose, sv in zip(clouds, poses, s):
            frame = ModelFrame.fit(cloud, trans_scale, principal)
            cs.append(frame.cloud(cloud))
            vec = frame.encode(pose, sv)
            flags = SymmetryFlags.from_scores(sv)
            if canonical_spin and flags.count:
                rot = refine_symmetric_axis(Pose(rot6d_to_matrix(vec[:3], vec[3:6])), flags, np.eye(3)).rot
                vec[:3], vec[3:6] = matrix_to_rot6d(rot)
            ps.append(vec)
        if not cs:
            raise EmptyInput("training set is empty")
        return cls(np.stack(cs), np.stack(ps))


def rotate_examples(clouds, poses, rots):
    """Apply one rotation per example about the cloud centroid (model-space origin)."""
    clouds = np.einsum("mij,mnj->mni", rots, clouds)
    out = poses.copy()
    for sl in (slice(0, 3), slice(3, 6), slice(9, 12)):
        out[:, sl] = np.einsum("mij,mj->mi", rots, poses[:, sl])
    return clouds, out


def dsm_loss(params: ScoreNetParams, poses, clouds, schedule: SdeSchedule, rng: np.random.Generator,
             draws: int = 1, score_fn: Callable | None = None, with_grad: bool = False):
    """Denoising score-matching loss with lambda(t) = sigma(t)^2.

    Each of the ``C`` clouds (with target pose ``poses[c]``) gets ``draws``
    independent ``(t, z)`` pairs; the per-row loss is ``|sigma * score + z|^2``
    and the result is the mean over rows. ``score_fn(pt, t, cloud_index)``
    replaces the network when given.
    """
    poses = np.asarray(poses, float).reshape(-1, 12)
    if len(poses) == 0:
        raise EmptyInput("empty batch")
    idx = np.repeat(np.arange(len(poses)), draws)
    r = len(idx)
    t = rng.uniform(schedule.eps, 1.0, size=r)
    z = rng.standard_normal((r, 12))
    sig = sigma_of_t(schedule, t)
    pt = poses[idx] + sig[:, None] * z

    def loss_fn(score):
        resid = sig[:, None] * score + z
        loss = float(np.sum(resid * resid) / r)
        return loss, 2.0 * resid * sig[:, None] / r

    if score_fn is not None:
        loss, _ = loss_fn(score_fn(pt, t, idx))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss}")
        return loss
    batch = Batch(np.asarray(clouds, float), idx, pt, t)
    loss, grads = backward(params, batch, loss_fn)
    return (loss, grads) if with_grad else loss


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    schedule: SdeSchedule = field(default_factory=SdeSchedule)
    draws: int = 8  # noise draws per cloud per step
    augment: bool = True  # random rotation about the cloud centroid
    lr_final: float | None = None  # cosine decay target; None keeps lr constant
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0 or self.draws <= 0:
            raise ValueError("epochs >= 0, batch_size > 0, lr > 0, draws > 0 required")


def train(params: ScoreNetParams, data: TrainingSet, config: TrainConfig,
          callback: Callable[[int, float], None] | None = None):
    """Minibatch Adam on the DSM loss. Returns ``(params, per-epoch mean loss)``."""
    if len(data) == 0:
        raise EmptyInput("training set is empty")
    params = params.copy()
    params.meta.update(config.schedule.meta())
    rng = np.random.default_rng(config.seed)
    state = adam_init(params, config.lr)
    n = len(data)
    steps_per_epoch = -(-n // config.batch_size)
    total = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    history = []
    step = 0
    for epoch in range(config.epochs):
        if step >= total:
            break
        perm = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            if step >= total:
                break
            sel = perm[b * config.batch_size:(b + 1) * config.batch_size]
            clouds, poses = data.clouds[sel], data.poses[sel]
            if config.augment:
                rots = np.stack([random_rotation(rng) for _ in sel])
                clouds, poses = rotate_examples(clouds, poses, rots)
            try:
                loss, grads = dsm_loss(params, poses, clouds, config.schedule, rng, config.draws, with_grad=True)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"epoch {epoch}, batch {b}: {exc}") from exc
            lr = config.lr
            if config.lr_final is not None and total > 1:
                lr = config.lr_final + 0.5 * (config.lr - config.lr_final) * (1 + np.cos(np.pi * step / (total - 1)))
            params, state = adam_step(state, params, grads, lr)
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, history[-1])
    return params, history


# -- sampling ----------------------------------------------------------------------

@dataclass
class SampleConfig:
    k: int = 50
    ode_steps: int = 500
    seed: int = 0
    schedule: SdeSchedule | None = None  # None: use the one stored with the model

    def __post_init__(self):
        if self.k < 1 or self.ode_steps < 1:
            raise ValueError("k >= 1 and ode_steps >= 1 required")


def initial_states(k: int, schedule: SdeSchedule, seed: int) -> np.ndarray:
    """``p(1) ~ N(0, sigma_max^2 I)``; candidate ``i`` uses its own stream ``(seed, i)``."""
    return np.stack([np.random.default_rng([seed, i]).standard_normal(12) for i in range(k)]) * schedule.sigma_max


def integrate_ode(score, p_init, schedule: SdeSchedule, steps: int) -> np.ndarray:
    """Explicit Euler on dp/dt = -sigma(t) sigma'(t) score(p, t) from t = 1 down to eps."""
    ts = np.linspace(1.0, schedule.eps, steps + 1)
    p = np.array(p_init, dtype=float)
    for k in range(steps):
        t = ts[k]
        dt = ts[k + 1] - ts[k]
        sig = sigma_of_t(schedule, t)
        drift = -(sig * sig * schedule.log_ratio) * score(p, t)
        p = p + dt * drift
        if not np.all(np.isfinite(p)):
            raise NonFiniteState(f"non-finite state at step {k} (t = {t:.4g})")
    return p


def _network_score(params, feats, cloud_index):
    rows = feats[cloud_index]

    def score(p, t):
        out, _ = score_from_features(params, rows, p, t)
        return out

    return score


def sample_ode(params: ScoreNetParams, cloud, config: SampleConfig, rng: np.random.Generator | None = None,
               init=None) -> np.ndarray:
    """One model-space candidate for a preprocessed cloud.

    ``init`` fixes ``p(1)``; otherwise it is drawn from ``rng``.
    """
    schedule = config.schedule or SdeSchedule.from_params(params)
    if init is None:
        init = rng.standard_normal(12) * schedule.sigma_max
    feats, _ = encode_clouds(params, np.asarray(cloud, float)[None])
    score = _network_score(params, feats, np.zeros(1, dtype=int))
    return integrate_ode(score, np.asarray(init, float).reshape(1, 12), schedule, config.ode_steps)[0]


@dataclass
class Estimate:
    pose: Pose
    flags: SymmetryFlags
    pooled: PoseVec12  # camera frame, s clipped
    candidates: np.ndarray  # (K, 12) model space


def estimate_poses(params: ScoreNetParams, clouds: Sequence, config: SampleConfig,
                   refine_reference=None, chunk: int = 64) -> list[Estimate]:
    """K-candidate ODE sampling + mean pooling for each raw (meters) cloud."""
    schedule = config.schedule or SdeSchedule.from_params(params)
    init = initial_states(config.k, schedule, config.seed)
    out = []
    for start in range(0, len(clouds), chunk):
        part = clouds[start:start + chunk]
        frames = [model_frame(params, c) for c in part]
        feats, _ = encode_clouds(params, np.stack([f.cloud(c) for f, c in zip(frames, part)]))
        idx = np.repeat(np.arange(len(part)), config.k)
        p0 = np.tile(init, (len(part), 1))
        final = integrate_ode(_network_score(params, feats, idx), p0, schedule, config.ode_steps)
        for j, frame in enumerate(frames):
            cand = final[j * config.k:(j + 1) * config.k]
            pooled = frame.decode(mean_pool_poses(cand).to_array())
            pose = Pose(rot6d_to_matrix(pooled.rx, pooled.ry), pooled.t)
            flags = SymmetryFlags.from_scores(pooled.s)
            if refine_reference is not None and flags.count:
                pose = refine_symmetric_axis(pose, flags, refine_reference)
            out.append(Estimate(pose, flags, pooled, cand))
    return out


def estimate_pose(params: ScoreNetParams, cloud, config: SampleConfig, refine_reference=None) -> Estimate:
    return estimate_poses(params, [cloud], config, refine_reference)[0]
