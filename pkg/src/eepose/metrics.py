"""Point-cloud distances, symmetry-aware pose error and precision tables."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import EmptyCloud, EmptyInput, InsufficientData, NonConvergence, SizeMismatch, TooLarge
from .geometry import AXES, Pose, SymmetryFlags, geodesic_angle

EMD_EXACT_MAX = 512
CENTERINGS = ("object_centric", "ee_centric")
METRICS = ("CD", "HD", "EMD")


def _cloud(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyCloud("point cloud is empty")
    return p


def _nn_dists(p1, p2):
    d = cdist(p1, p2)
    return d.min(axis=1), d.min(axis=0)


def chamfer(p1, p2) -> float:
    """Symmetric mean nearest-neighbour distance (unsquared)."""
    a, b = _nn_dists(_cloud(p1), _cloud(p2))
    return 0.5 * (a.mean() + b.mean())


def hausdorff(p1, p2) -> float:
    a, b = _nn_dists(_cloud(p1), _cloud(p2))
    return float(max(a.max(), b.max()))


def emd_exact(p1, p2) -> float:
    """Uniform-weight EMD on equal-size clouds via an exact assignment."""
    p1, p2 = _cloud(p1), _cloud(p2)
    if len(p1) != len(p2):
        raise SizeMismatch(f"EMD needs equal sizes, got {len(p1)} and {len(p2)}")
    if len(p1) > EMD_EXACT_MAX:
        raise TooLarge(f"exact EMD limited to n <= {EMD_EXACT_MAX}, got {len(p1)}")
    c = cdist(p1, p2)
    rows, cols = linear_sum_assignment(c)
    return float(c[rows, cols].sum() / len(p1))


def sinkhorn_plan(a, b, cost, reg: float, iters: int = 50000, tol: float = 1e-6,
                  reg_start: float | None = None) -> np.ndarray:
    """Entropic OT plan with log-domain absorption and reg annealing.

    Scalings ``u, v`` live in the kernel domain and are folded into the dual
    potentials whenever they grow large, so tiny ``reg`` does not overflow.
    Raises NonConvergence if the largest absolute marginal violation exceeds
    ``tol``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if reg <= 0:
        raise ValueError("reg must be positive")
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    if reg_start is None:
        reg_start = max(reg, float(cost.max()) / 4.0)
    regs = [reg]
    while regs[-1] * 2 < reg_start:
        regs.append(regs[-1] * 2)
    regs = regs[::-1]

    err = np.inf
    used = 0
    for k, eps in enumerate(regs):
        last = k == len(regs) - 1
        kern = np.exp((f[:, None] + g[None, :] - cost) / eps)
        u = np.ones_like(a)
        v = np.ones_like(b)
        budget = iters - used if last else max(200, iters // (4 * len(regs)))
        for it in range(budget):
            u = a / (kern @ v)
            v = b / (kern.T @ u)
            if np.abs(u).max() > 1e50 or np.abs(v).max() > 1e50:
                f += eps * np.log(u)
                g += eps * np.log(v)
                kern = np.exp((f[:, None] + g[None, :] - cost) / eps)
                u = np.ones_like(a)
                v = np.ones_like(b)
            if it % 20 == 19:
                plan = u[:, None] * kern * v[None, :]
                err = np.abs(plan.sum(axis=1) - a).max()
                if err < (tol if last else tol * 1e2):
                    break
        used += it + 1
        f += eps * np.log(u)
        g += eps * np.log(v)
    plan = np.exp((f[:, None] + g[None, :] - cost) / regs[-1])
    err = max(np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max())
    if not np.isfinite(err) or err > tol:
        raise NonConvergence(f"Sinkhorn marginal violation {err:.3g} > {tol:g} after {used} iterations")
    return plan


def emd_sinkhorn(p1, p2, reg: float = 0.005, iters: int = 50000, tol: float = 1e-6) -> float:
    """Transport cost <P, C> of the entropic plan between uniform clouds."""
    p1, p2 = _cloud(p1), _cloud(p2)
    c = cdist(p1, p2)
    plan = sinkhorn_plan(np.full(len(p1), 1.0 / len(p1)), np.full(len(p2), 1.0 / len(p2)), c, reg, iters, tol)
    return float((plan * c).sum())


def emd(p1, p2) -> float:
    p1, p2 = _cloud(p1), _cloud(p2)
    if len(p1) == len(p2) and len(p1) <= EMD_EXACT_MAX:
        return emd_exact(p1, p2)
    return emd_sinkhorn(p1, p2)


# -- pose errors ------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdSpec:
    rot_deg: float
    trans_m: float

    def __post_init__(self):
        if not (self.rot_deg > 0 and self.trans_m > 0):
            raise ValueError("thresholds must be strictly positive")

    @property
    def label(self) -> str:
        return f"{self.rot_deg:g}deg{self.trans_m * 100:g}cm"

    @classmethod
    def parse(cls, text: str) -> "ThresholdSpec":
        """Parse ``"5deg2cm"`` or ``"5,0.02"``."""
        text = text.strip()
        if "deg" in text:
            deg, rest = text.split("deg")
            return cls(float(deg), float(rest.replace("cm", "")) / 100.0)
        deg, m = text.split(",")
        return cls(float(deg), float(m))


DEFAULT_THRESHOLDS = (ThresholdSpec(5, 0.02), ThresholdSpec(5, 0.05), ThresholdSpec(10, 0.05))


@dataclass(frozen=True)
class PoseError:
    rot_err: float
    trans_err: float


def _axis_alignment(pred, gt, i) -> float:
    c = float(np.dot(np.asarray(pred)[:, i], np.asarray(gt)[:, i]))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_error_symaware(pred, gt, flags: SymmetryFlags) -> float:
    """Geodesic error, or axis-alignment error about a single symmetric axis.

    Two or more symmetric axes leave orientation unobservable, so the error is 0.
    """
    flagged = [i for i, f in enumerate(flags) if f]
    if not flagged:
        return geodesic_angle(pred, gt)
    if len(flagged) == 1:
        return _axis_alignment(pred, gt, flagged[0])
    return 0.0


def translation_error(pred: Pose, gt: Pose) -> float:
    return float(np.linalg.norm(pred.trans - gt.trans))


def map_at_thresholds(errors: Sequence[PoseError], thresholds: Sequence[ThresholdSpec] = DEFAULT_THRESHOLDS) -> dict[str, float]:
    """Fraction of samples strictly inside each (rotation, translation) margin."""
    if len(errors) == 0:
        raise EmptyInput("no pose errors to score")
    rot = np.array([e.rot_err for e in errors])
    tr = np.array([e.trans_err for e in errors])
    out = {}
    for th in thresholds:
        ok = (rot < np.deg2rad(th.rot_deg)) & (tr < th.trans_m)
        out[th.label] = float(ok.mean())
    return out


def format_map_row(name: str, values: dict[str, float], symmetric: str = "") -> str:
    cells = " ".join(f"{v:.3f}" for v in values.values())
    return f"{name:<18} {symmetric:<4} {cells}"


# -- Fig. 3 style consistency study ----------------------------------------

@dataclass
class ConsistencyReport:
    # (category, centering, metric) -> (mean, variance)
    stats: dict[tuple[str, str, str], tuple[float, float]] = field(default_factory=dict)
    n_clouds: dict[tuple[str, str], int] = field(default_factory=dict)

    def rows(self):
        for (cat, cen, met), (m, v) in sorted(self.stats.items()):
            yield cat, cen, met, m, v

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "centering", "metric", "mean", "variance"])
        for cat, cen, met, m, v in self.rows():
            w.writerow([cat, cen, met, f"{m:.9g}", f"{v:.9g}"])
        return buf.getvalue()

    def ee_more_consistent(self) -> dict[tuple[str, str, str], bool]:
        """Per (category, metric, stat): is the EE-centric value strictly lower?"""
        out = {}
        cats = sorted({k[0] for k in self.stats})
        for cat in cats:
            for met in METRICS:
                obj = self.stats[(cat, "object_centric", met)]
                ee = self.stats[(cat, "ee_centric", met)]
                out[(cat, met, "mean")] = ee[0] < obj[0]
                out[(cat, met, "variance")] = ee[1] < obj[1]
        return out


def _resample_to(p, n, rng):
    if len(p) == n:
        return p
    idx = rng.choice(len(p), size=n, replace=len(p) < n)
    return p[idx]


def consistency_report(dataset: Iterable[tuple[str, str, np.ndarray]], n_points: int = 256,
                       seed: int = 0) -> ConsistencyReport:
    """All-pairs CD/HD/EMD within each (category, centering) group.

    Clouds are expected in their canonical frame already. Each cloud is
    resampled to ``n_points`` so exact EMD stays tractable.
    """
    groups: dict[tuple[str, str], list[np.ndarray]] = defaultdict(list)
    for cat, cen, cloud in dataset:
        groups[(cat, cen)].append(_cloud(cloud))
    if not groups:
        raise InsufficientData("no clouds supplied")
    report = ConsistencyReport()
    for key in sorted(groups):
        clouds = groups[key]
        if len(clouds) < 2:
            raise InsufficientData(f"group {key} has {len(clouds)} cloud(s); need at least 2")
        rng = np.random.default_rng(seed)
        clouds = [_resample_to(c, n_points, rng) for c in clouds]
        vals = {m: [] for m in METRICS}
        for i, j in combinations(range(len(clouds)), 2):
            d = cdist(clouds[i], clouds[j])
            a, b = d.min(axis=1), d.min(axis=0)
            vals["CD"].append(0.5 * (a.mean() + b.mean()))
            vals["HD"].append(max(a.max(), b.max()))
            r, c = linear_sum_assignment(d)
            vals["EMD"].append(d[r, c].mean())
        for m in METRICS:
            arr = np.asarray(vals[m])
            report.stats[(key[0], key[1], m)] = (float(arr.mean()), float(arr.var()))
        report.n_clouds[key] = len(clouds)
    return report

