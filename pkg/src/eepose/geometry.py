"""Rigid poses, the 6D rotation encoding and the 12D symmetry-aware pose vector.

Rotations are plain ``(3, 3)`` float arrays. Symmetry axes are expressed in
the end-effector's own (body) frame, so a symmetry rotation composes on the
right: ``R @ axis_angle(a, theta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInput, EmptyInput

_TINY = 1e-12
AXES = np.eye(3)


class SymmetryFlags(NamedTuple):
    x: bool = False
    y: bool = False
    z: bool = False

    @classmethod
    def from_scores(cls, s, threshold: float = 0.5) -> "SymmetryFlags":
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return cls(*(bool(v > threshold) for v in s))

    def as_vector(self) -> np.ndarray:
        return np.array([float(v) for v in self])

    @property
    def count(self) -> int:
        return sum(bool(v) for v in self)


@dataclass(frozen=True)
class Pose:
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=float).reshape(3, 3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.trans)):
            raise DegenerateInput("pose translation must be finite")

    def apply(self, points) -> np.ndarray:
        """Map ``(N, 3)`` points from the local frame into the parent frame."""
        return np.asarray(points, dtype=float) @ self.rot.T + self.trans

    def inverse(self) -> "Pose":
        return Pose(self.rot.T, -self.rot.T @ self.trans)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rot @ other.rot, self.rot @ other.trans + self.trans)


@dataclass(frozen=True)
class PoseVec12:
    """Flat ``[rx | ry | s | t]`` pose vector."""

    rx: np.ndarray
    ry: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("rx", "ry", "s", "t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    @classmethod
    def from_array(cls, v) -> "PoseVec12":
        v = np.asarray(v, dtype=float).reshape(12)
        return cls(v[0:3], v[3:6], v[6:9], v[9:12])

    @classmethod
    def from_pose(cls, pose: Pose, s=(0.0, 0.0, 0.0)) -> "PoseVec12":
        rx, ry = matrix_to_rot6d(pose.rot)
        return cls(rx, ry, s, pose.trans)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.rx, self.ry, self.s, self.t])

    def to_pose(self) -> Pose:
        return Pose(rot6d_to_matrix(self.rx, self.ry), self.t)

    def flags(self) -> SymmetryFlags:
        return SymmetryFlags.from_scores(self.s)


def rot6d_to_matrix(rx, ry) -> np.ndarray:
    """Gram-Schmidt the two 3-vectors into the first two columns of a rotation."""
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    nx = np.linalg.norm(rx)
    if nx < _TINY:
        raise DegenerateInput(f"|rx| = {nx:.3g} is too small to normalize")
    c1 = rx / nx
    u = ry - np.dot(ry, c1) * c1
    nu = np.linalg.norm(u)
    if nu < _TINY:
        raise DegenerateInput("ry is parallel to rx")
    c2 = u / nu
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def rot6d_to_matrix_batch(rx, ry) -> np.ndarray:
    """Vectorized :func:`rot6d_to_matrix` over leading axes; ``(..., 3)`` -> ``(..., 3, 3)``."""
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    nx = np.linalg.norm(rx, axis=-1, keepdims=True)
    if np.any(nx < _TINY):
        raise DegenerateInput("rx too small to normalize")
    c1 = rx / nx
    u = ry - np.sum(ry * c1, axis=-1, keepdims=True) * c1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu < _TINY):
        raise DegenerateInput("ry is parallel to rx")
    c2 = u / nu
    return np.stack([c1, c2, np.cross(c1, c2)], axis=-1)


def matrix_to_rot6d(r) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    return r[:, 0].copy(), r[:, 1].copy()


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=float).reshape(3)
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise DegenerateInput(f"axis must be unit length, got |axis| = {np.linalg.norm(a):.12g}")
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def geodesic_angle(r1, r2) -> float:
    c = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation: Gram-Schmidt of a Gaussian 6D draw."""
    while True:
        g = rng.standard_normal(6)
        try:
            return rot6d_to_matrix(g[:3], g[3:])
        except DegenerateInput:  # pragma: no cover - measure zero
            continue


def mean_pool_poses(candidates: Sequence[PoseVec12] | np.ndarray) -> PoseVec12:
    """Component-wise mean of 12D pose vectors (no projection to SO(3) here)."""
    if isinstance(candidates, np.ndarray):
        arr = candidates.reshape(-1, 12)
    else:
        arr = np.array([c.to_array() if isinstance(c, PoseVec12) else np.asarray(c, float) for c in candidates])
    if arr.size == 0:
        raise EmptyInput("no pose candidates to pool")
    # canonical row order keeps the float sum independent of candidate order
    order = np.lexsort(arr.T[::-1])
    return PoseVec12.from_array(arr[order].mean(axis=0))


def _best_angle(base: np.ndarray, axis: np.ndarray, reference: np.ndarray) -> float:
    # maximize trace(ref^T base Rot(a, th)); same argmin as the geodesic angle
    # but smooth at the optimum
    def score(th):
        return np.trace(reference.T @ base @ axis_angle(axis, th))

    grid = np.linspace(-np.pi, np.pi, 360, endpoint=False)
    vals = np.array([score(th) for th in grid])
    th0 = grid[int(np.argmax(vals))]
    step = 2 * np.pi / 360
    lo, hi = th0 - step, th0 + step
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = score(c), score(d)
    while hi - lo > 1e-8:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = score(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = score(d)
    return 0.5 * (lo + hi)


def refine_symmetric_axis(pred: Pose, flags: SymmetryFlags, reference) -> Pose:
    """Spin ``pred`` about each flagged body axis to best agree with ``reference``.

    Flagged axes are visited once in x, y, z order.
    """
    reference = np.asarray(reference, dtype=float)
    rot = pred.rot
    changed = False
    for i, flagged in enumerate(flags):
        if not flagged:
            continue
        th = _best_angle(rot, AXES[i], reference)
        cand = rot @ axis_angle(AXES[i], th)
        if geodesic_angle(cand, reference) <= geodesic_angle(rot, reference):
            rot = cand
            changed = True
    if not changed:
        return pred
    return Pose(rot, pred.trans)


def pose_to_json(pose: Pose, s=(0.0, 0.0, 0.0)) -> dict:
    return {
        "rot": [float(v) for v in pose.rot.reshape(9)],
        "t": [float(v) for v in pose.trans],
        "s": [float(v) for v in np.asarray(s, dtype=float).reshape(3)],
    }


def pose_from_json(obj: dict) -> tuple[Pose, np.ndarray]:
    rot = np.asarray(obj["rot"], dtype=float).reshape(3, 3)
    t = np.asarray(obj["t"], dtype=float).reshape(3)
    s = np.asarray(obj.get("s", (0.0, 0.0, 0.0)), dtype=float).reshape(3)
    return Pose(rot, t), s
