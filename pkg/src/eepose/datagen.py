"""Procedural tool end-effector dataset.

Tools are built from parametric surface primitives (cylinders, cones, disks,
boxes, an extruded C-ring), normalized to zero mean and unit bounding-box
diagonal, posed in a camera frame, cropped around each end-effector working
point, partially observed, cleaned and resampled.

Every scene uses its own generator seeded from ``(seed, tool, scene index,
attempt)`` so output does not depend on generation order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError, EmptyCloud, MissingInput
from .geometry import Pose, SymmetryFlags, pose_from_json, pose_to_json, random_rotation

FORMAT_VERSION = 1

HEAD, HANDLE, SHAFT = 1, 0, 2

# tool -> parameter -> (lo, hi), raw units before normalization
TOOL_PARAM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "hammer": {
        "handle_length": (0.26, 0.40),
        "handle_radius": (0.012, 0.020),
        "head_length": (0.09, 0.16),
        "head_radius": (0.015, 0.026),
        "grip_gap": (0.5, 1.5),  # grip point distance below the head, in grip crop radii
    },
    "screwdriver": {
        "handle_length": (0.08, 0.13),
        "handle_radius": (0.013, 0.024),
        "shaft_length": (0.07, 0.15),
        "shaft_radius": (0.003, 0.006),
        "tip_length": (0.008, 0.02),
    },
    "wrench": {
        "handle_length": (0.11, 0.20),
        "handle_width": (0.014, 0.024),
        "thickness": (0.005, 0.009),
        "ring_inner": (0.011, 0.019),
        "ring_width": (0.007, 0.013),
        "opening_deg": (50.0, 80.0),
    },
}

TOOL_EES = {
    "hammer": ("hammer_head", "hammer_grip"),
    "screwdriver": ("screwdriver_head",),
    "wrench": ("wrench_head",),
}

CATEGORIES = ("hammer_grip", "hammer_head", "screwdriver_head", "wrench_head")


@dataclass(frozen=True)
class CategorySpec:
    name: str
    tool: str
    ee_count_per_tool: int
    symmetry_gt: SymmetryFlags
    shape_param_ranges: dict


def default_categories(ranges=None) -> dict[str, CategorySpec]:
    ranges = ranges or TOOL_PARAM_RANGES
    sym = {
        "hammer_head": SymmetryFlags(z=True),
        # bare handle is z-symmetric; per-instance crops touching the head are not
        "hammer_grip": SymmetryFlags(z=True),
        "screwdriver_head": SymmetryFlags(z=True),
        "wrench_head": SymmetryFlags(),
    }
    out = {}
    for tool, ees in TOOL_EES.items():
        for name in ees:
            out[name] = CategorySpec(name, tool, len(ees), sym[name], dict(ranges[tool]))
    return dict(sorted(out.items()))


@dataclass
class ShapeParams:
    tool: str
    instance_id: str
    values: dict[str, float]  # normalized units (tool diagonal = 1)
    raw: dict[str, float]
    norm_scale: float  # raw -> normalized multiplier


@dataclass
class EEFrame:
    category: str
    pose: Pose  # EE frame in the normalized tool frame
    crop_radius: float
    symmetry: SymmetryFlags
    mask: np.ndarray  # boolean membership over the full tool cloud


@dataclass
class ToolShape:
    params: ShapeParams
    points: np.ndarray  # (M, 3) normalized tool surface
    labels: np.ndarray
    ees: list[EEFrame]


# -- surface primitives --------------------------------------------------------

def _basis(a):
    a = np.asarray(a, float)
    a = a / np.linalg.norm(a)
    h = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(a, h)
    e1 /= np.linalg.norm(e1)
    return a, e1, np.cross(a, e1)


class _Surface:
    def __init__(self):
        self.parts = []  # (area, sampler, label)

    def add(self, area, sampler, label):
        self.parts.append((float(area), sampler, label))

    def cylinder(self, p0, axis, length, radius, label, phi=(0.0, 2 * np.pi), frame=None):
        a, e1, e2 = _basis(axis) if frame is None else frame
        p0 = np.asarray(p0, float)

        def s(n, rng):
            u = rng.random(n) * length
            f = phi[0] + rng.random(n) * (phi[1] - phi[0])
            return p0 + np.outer(u, a) + radius * (np.outer(np.cos(f), e1) + np.outer(np.sin(f), e2))

        self.add(radius * (phi[1] - phi[0]) * length, s, label)

    def disk(self, c, normal, radius, label, inner=0.0, phi=(0.0, 2 * np.pi), frame=None):
        a, e1, e2 = _basis(normal) if frame is None else frame
        c = np.asarray(c, float)

        def s(n, rng):
            r = np.sqrt(inner**2 + rng.random(n) * (radius**2 - inner**2))
            f = phi[0] + rng.random(n) * (phi[1] - phi[0])
            return c + r[:, None] * (np.outer(np.cos(f), e1) + np.outer(np.sin(f), e2))

        self.add(0.5 * (phi[1] - phi[0]) * (radius**2 - inner**2), s, label)

    def cone(self, apex, axis, length, radius, label):
        # axis points from apex toward the base
        a, e1, e2 = _basis(axis)
        apex = np.asarray(apex, float)

        def s(n, rng):
            frac = np.sqrt(rng.random(n))
            f = rng.random(n) * 2 * np.pi
            rad = radius * frac
            return apex + np.outer(frac * length, a) + rad[:, None] * (np.outer(np.cos(f), e1) + np.outer(np.sin(f), e2))

        self.add(np.pi * radius * np.hypot(radius, length), s, label)

    def rect(self, corner, u, v, label):
        corner, u, v = (np.asarray(x, float) for x in (corner, u, v))

        def s(n, rng):
            return corner + np.outer(rng.random(n), u) + np.outer(rng.random(n), v)

        self.add(np.linalg.norm(np.cross(u, v)), s, label)

    def box(self, lo, hi, label):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        d = hi - lo
        ex, ey, ez = np.diag(d)
        for c, u, v in ((lo, ex, ey), (lo + ez, ex, ey), (lo, ex, ez), (lo + ey, ex, ez), (lo, ey, ez), (lo + ex, ey, ez)):
            self.rect(c, u, v, label)

    def sample(self, n, rng):
        areas = np.array([p[0] for p in self.parts])
        counts = rng.multinomial(n, areas / areas.sum())
        pts, labels = [], []
        for (_, sampler, label), k in zip(self.parts, counts):
            if k:
                pts.append(sampler(int(k), rng))
                labels.append(np.full(int(k), label))
        return np.concatenate(pts), np.concatenate(labels)


def _frame(x, y, z):
    return np.stack([x, y, z], axis=1).astype(float)


X, Y, Z = np.eye(3)


def _build_hammer(v, surf):
    L, rh, h, r = v["handle_length"], v["handle_radius"], v["head_length"], v["head_radius"]
    surf.cylinder([0, 0, 0], Y, L, rh, HANDLE)
    surf.disk([0, 0, 0], -Y, rh, HANDLE)
    hc = np.array([0.0, L + r, 0.0])
    surf.cylinder(hc - X * h / 2, X, h, r, HEAD)
    surf.disk(hc + X * h / 2, X, r, HEAD)
    surf.disk(hc - X * h / 2, -X, r, HEAD)
    head_rho = 0.9 * np.hypot(h / 2 - rh, r)
    grip_rho = 2.5 * rh
    grip = np.array([0.0, L - v["grip_gap"] * grip_rho, 0.0])
    return [
        ("hammer_head", hc + X * h / 2, _frame(Y, Z, X), head_rho),
        ("hammer_grip", grip, _frame(X, -Z, Y), grip_rho),
    ]


def _build_screwdriver(v, surf):
    Lh, Rh, Ls, rs, Lc = (v[k] for k in ("handle_length", "handle_radius", "shaft_length", "shaft_radius", "tip_length"))
    surf.cylinder([0, 0, 0], Y, Lh, Rh, HANDLE)
    surf.disk([0, 0, 0], -Y, Rh, HANDLE)
    surf.disk([0, Lh, 0], Y, Rh, HANDLE, inner=rs)
    surf.cylinder([0, Lh, 0], Y, Ls, rs, SHAFT)
    apex = np.array([0.0, Lh + Ls + Lc, 0.0])
    surf.cone(apex, -Y, Lc, rs, HEAD)
    rho = Lc + 0.6 * Ls
    return [("screwdriver_head", apex, _frame(X, -Z, Y), rho)]


def _build_wrench(v, surf):
    L, w, t = v["handle_length"], v["handle_width"], v["thickness"]
    ri = v["ring_inner"]
    ro = ri + v["ring_width"]
    half_gap = np.deg2rad(v["opening_deg"]) / 2
    surf.box([-w / 2, 0, -t / 2], [w / 2, L, t / 2], HANDLE)
    c = np.array([0.0, L + 0.8 * ro, 0.0])
    # C-ring: gap centred on +y
    phi = (np.pi / 2 + half_gap, np.pi / 2 + 2 * np.pi - half_gap)
    frame_up = (Z, X, Y)
    surf.disk(c + Z * t / 2, Z, ro, HEAD, inner=ri, phi=phi, frame=frame_up)
    surf.disk(c - Z * t / 2, Z, ro, HEAD, inner=ri, phi=phi, frame=frame_up)
    for rad in (ri, ro):
        surf.cylinder(c - Z * t / 2, Z, t, rad, HEAD, phi=phi, frame=frame_up)
    for f in phi:
        d = np.cos(f) * X + np.sin(f) * Y
        surf.rect(c + ri * d - Z * t / 2, (ro - ri) * d, Z * t, HEAD)
    return [("wrench_head", c, _frame(Z, X, Y), 1.15 * ro)]


_BUILDERS = {"hammer": _build_hammer, "screwdriver": _build_screwdriver, "wrench": _build_wrench}


def sample_shape(category: CategorySpec | str, rng: np.random.Generator, n_points: int = 20000,
                 instance_id: str = "") -> ToolShape:
    """Draw one tool instance, sample its surface and attach the EE frames."""
    if isinstance(category, str):
        category = default_categories()[category]
    tool = category.tool
    raw = {k: float(lo + (hi - lo) * rng.random()) for k, (lo, hi) in category.shape_param_ranges.items()}
    surf = _Surface()
    ee_defs = _BUILDERS[tool](raw, surf)
    pts, labels = surf.sample(n_points, rng)

    centroid = pts.mean(axis=0)
    pts = pts - centroid
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    pts = pts / diag
    # centroid of the rescaled cloud is exactly representable as ~0; re-centre
    pts = pts - pts.mean(axis=0)

    ees = []
    for name, origin, rot, rho in ee_defs:
        o = (np.asarray(origin) - centroid) / diag
        crop = rho / diag
        mask = np.linalg.norm(pts - o, axis=1) <= crop
        sym = default_categories()[name].symmetry_gt
        if name == "hammer_grip" and np.any(labels[mask] == HEAD):
            sym = SymmetryFlags()
        ees.append(EEFrame(name, Pose(rot, o), crop, sym, mask))

    values = {k: (val if k.endswith("_deg") or k == "grip_gap" else val / diag) for k, val in raw.items()}
    params = ShapeParams(tool, instance_id, values, raw, 1.0 / diag)
    return ToolShape(params, pts, labels, ees)


def sample_pose(rng: np.random.Generator, box: float = 0.3, z_offset: float = 0.1) -> Pose:
    """Uniform rotation, translation uniform in a cube plus an extra z offset."""
    rot = random_rotation(rng)
    t = rng.uniform(-box, box, size=3)
    t[2] += rng.uniform(-z_offset, z_offset)
    return Pose(rot, t)


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def render_partial(cloud, rng: np.random.Generator | None = None, *, view_dir=None,
                   occluder_center=None, occluder_radius=None) -> np.ndarray:
    """Keep the camera-facing half-space, then carve out a spherical occluder.

    Unspecified view direction, occluder centre (a random cloud point) and
    radius (uniform in [0.02, 0.08] m) are drawn from ``rng``. Output may be empty.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyCloud("render_partial needs a non-empty cloud")
    if view_dir is None:
        view_dir = random_unit(rng)
    if occluder_center is None:
        occluder_center = cloud[rng.integers(len(cloud))]
    if occluder_radius is None:
        occluder_radius = rng.uniform(0.02, 0.08)
    keep = (cloud - cloud.mean(axis=0)) @ np.asarray(view_dir, float) >= 0
    keep &= np.linalg.norm(cloud - np.asarray(occluder_center, float), axis=1) > occluder_radius
    return cloud[keep]


def clean_filter(ee_cloud, min_points: int = 50) -> bool:
    """True (keep) unless the cloud has fewer than ``min_points`` points."""
    return len(np.asarray(ee_cloud).reshape(-1, 3)) >= min_points


def resample_fixed(cloud, n: int = 1024, rng: np.random.Generator | None = None, jitter: float = 1e-4) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyCloud("cannot resample an empty cloud")
    rng = rng or np.random.default_rng(0)
    m = len(cloud)
    if m >= n:
        return cloud[rng.choice(m, size=n, replace=False)]
    # every original point once, the remainder drawn with replacement and jittered
    extra = rng.integers(m, size=n - m)
    out = np.concatenate([cloud, cloud[extra] + rng.normal(0.0, jitter, size=(n - m, 3))])
    return out[rng.permutation(n)]


# -- dataset -------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    samples_per_category: int = 500
    n_points: int = 1024
    full_cloud_points: int = 20000
    instances_per_tool: int = 15
    test_fraction: float = 0.2
    scale_range: tuple[float, float] = (0.18, 0.30)
    trans_box: float = 0.3
    z_offset: float = 0.1
    occluder_radius: tuple[float, float] = (0.02, 0.08)
    min_points: int = 50
    jitter: float = 1e-4
    max_attempts: int = 200
    tool_param_ranges: dict = field(default_factory=lambda: {k: dict(v) for k, v in TOOL_PARAM_RANGES.items()})

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"unknown config field '{k}'")
        cfg = cls()
        for k, v in d.items():
            if k == "tool_param_ranges":
                ranges = {t: dict(r) for t, r in cfg.tool_param_ranges.items()}
                if not isinstance(v, dict):
                    raise ConfigError("field 'tool_param_ranges' must be a mapping")
                for tool, params in v.items():
                    if tool not in ranges:
                        raise ConfigError(f"unknown tool in 'tool_param_ranges': '{tool}'")
                    for p, rng in params.items():
                        if p not in ranges[tool]:
                            raise ConfigError(f"unknown parameter 'tool_param_ranges.{tool}.{p}'")
                        ranges[tool][p] = tuple(rng)
                v = ranges
            elif isinstance(getattr(cfg, k), tuple):
                v = tuple(v)
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self):
        def bad(name, why):
            raise ConfigError(f"invalid config field '{name}': {why}")

        for name in ("samples_per_category", "n_points", "full_cloud_points", "instances_per_tool", "min_points", "max_attempts"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                bad(name, f"expected a positive integer, got {v!r}")
        if self.instances_per_tool < 2:
            bad("instances_per_tool", "need at least 2 instances for a train/test split")
        if not 0 < self.test_fraction < 1:
            bad("test_fraction", "must be in (0, 1)")
        for name in ("scale_range", "occluder_radius"):
            v = getattr(self, name)
            if len(v) != 2 or not (0 < v[0] <= v[1]):
                bad(name, f"expected [lo, hi] with 0 < lo <= hi, got {list(v)}")
        for name in ("trans_box", "z_offset", "jitter"):
            if not getattr(self, name) >= 0:
                bad(name, "must be non-negative")
        for tool, params in self.tool_param_ranges.items():
            for p, r in params.items():
                if len(r) != 2 or not (0 < r[0] <= r[1]):
                    bad(f"tool_param_ranges.{tool}.{p}", f"expected [lo, hi] with 0 < lo <= hi, got {list(r)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tool_param_ranges"] = {t: {p: list(r) for p, r in ps.items()} for t, ps in self.tool_param_ranges.items()}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def categories(self) -> dict[str, CategorySpec]:
        return default_categories(self.tool_param_ranges)


def _tool_index(tool):
    return list(TOOL_EES).index(tool)


def build_instances(cfg: GeneratorConfig, seed: int) -> dict[str, list[ToolShape]]:
    cats = cfg.categories()
    out = {}
    for tool, ees in TOOL_EES.items():
        ti = _tool_index(tool)
        shapes = []
        for i in range(cfg.instances_per_tool):
            rng = np.random.default_rng([seed, 1000 + ti, i])
            shapes.append(sample_shape(cats[ees[0]], rng, cfg.full_cloud_points, f"{tool}_{i:03d}"))
        out[tool] = shapes
    return out


def split_instances(cfg: GeneratorConfig, seed: int) -> dict[str, dict[str, list[str]]]:
    out = {}
    for tool in TOOL_EES:
        n = cfg.instances_per_tool
        n_test = min(n - 1, max(1, int(round(cfg.test_fraction * n))))
        perm = np.random.default_rng([seed, 2000 + _tool_index(tool)]).permutation(n)
        test = sorted(int(i) for i in perm[:n_test])
        train = sorted(int(i) for i in perm[n_test:])
        out[tool] = {"train": [f"{tool}_{i:03d}" for i in train], "test": [f"{tool}_{i:03d}" for i in test]}
    return out


@dataclass
class Scene:
    sample_id: str
    instance_id: str
    tool: str
    split: str
    scale: float
    object_pose: Pose
    ee_categories: list[str]
    ee_clouds: list[np.ndarray]
    ee_poses: list[Pose]
    ee_symmetry: list[SymmetryFlags]
    n_observed: list[int]
    attempts: int


def make_scene(cfg: GeneratorConfig, seed: int, tool: str, index: int, shapes: list[ToolShape],
               split_of: dict[str, str]) -> Scene:
    ti = _tool_index(tool)
    for attempt in range(cfg.max_attempts):
        rng = np.random.default_rng([seed, ti, index, attempt])
        shape = shapes[int(rng.integers(len(shapes)))]
        scale = rng.uniform(*cfg.scale_range)
        obj = sample_pose(rng, cfg.trans_box, cfg.z_offset)
        cam_pts = obj.apply(shape.points * scale)
        view = random_unit(rng)
        occ_c = cam_pts[rng.integers(len(cam_pts))]
        occ_r = rng.uniform(*cfg.occluder_radius)
        clouds, poses, counts = [], [], []
        ok = True
        for ee in shape.ees:
            crop = cam_pts[ee.mask]
            part = render_partial(crop, view_dir=view, occluder_center=occ_c, occluder_radius=occ_r) if len(crop) else crop
            counts.append(len(part))
            if not clean_filter(part, cfg.min_points):
                ok = False
                break
            clouds.append(part)
            poses.append(obj.compose(Pose(ee.pose.rot, ee.pose.trans * scale)))
        if not ok:
            continue
        clouds = [resample_fixed(c, cfg.n_points, rng, cfg.jitter) for c in clouds]
        sid = f"{tool}_{index:05d}"
        return Scene(sid, shape.params.instance_id, tool, split_of[shape.params.instance_id], float(scale), obj,
                     [e.category for e in shape.ees], clouds, poses, [e.symmetry for e in shape.ees], counts, attempt + 1)
    raise DataError(f"scene {tool}:{index} rejected {cfg.max_attempts} times by the cleaning filter")


def write_xyz(path, cloud):
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, np.asarray(cloud).reshape(-1, 3), fmt="%.6f", delimiter=" ", newline="\n")


def read_xyz(path) -> np.ndarray:
    return np.loadtxt(path, dtype=float, ndmin=2).reshape(-1, 3)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg: GeneratorConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def generate_dataset(config: GeneratorConfig | dict | None, seed: int, out_dir) -> dict:
    """Write ``manifest.json``, ``samples.jsonl`` and ``clouds/*.xyz`` under ``out_dir``."""
    cfg = config if isinstance(config, GeneratorConfig) else GeneratorConfig.from_dict(config or {})
    cfg.validate()
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    shapes = build_instances(cfg, seed)
    splits = split_instances(cfg, seed)
    split_of = {iid: s for tool in splits for s in ("train", "test") for iid in splits[tool][s]}

    index = []
    cloud_hash = hashlib.sha256()
    offset = 0
    with open(out / "samples.jsonl", "w", newline="\n") as fh:
        for tool in TOOL_EES:
            for i in range(cfg.samples_per_category):
                sc = make_scene(cfg, seed, tool, i, shapes[tool], split_of)
                ees = []
                for j, (cat, cloud, pose, sym, cnt) in enumerate(zip(sc.ee_categories, sc.ee_clouds, sc.ee_poses, sc.ee_symmetry, sc.n_observed)):
                    rel = f"clouds/{sc.sample_id}_{j}.xyz"
                    write_xyz(out / rel, cloud)
                    cloud_hash.update(_sha256(out / rel).encode())
                    s = sym.as_vector()
                    ees.append({"category": cat, "cloud": rel, "pose": pose_to_json(pose, s),
                                "s": [float(v) for v in s], "n_observed": int(cnt)})
                rec = {"sample_id": sc.sample_id, "instance_id": sc.instance_id, "category": tool,
                       "split": sc.split, "scale": sc.scale, "object_pose": pose_to_json(sc.object_pose), "ee": ees}
                line = json.dumps(rec, sort_keys=True) + "\n"
                fh.write(line)
                index.append({"sample_id": sc.sample_id, "offset": offset, "length": len(line.encode())})
                offset += len(line.encode())

    cats = cfg.categories()
    manifest = {
        "version": FORMAT_VERSION,
        "seed": int(seed),
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "categories": {n: {"tool": c.tool, "ee_count_per_tool": c.ee_count_per_tool,
                           "symmetry_gt": [bool(v) for v in c.symmetry_gt],
                           "shape_param_ranges": {p: list(r) for p, r in c.shape_param_ranges.items()}}
                       for n, c in cats.items()},
        "splits": splits,
        "samples": index,
        "checksums": {"samples.jsonl": _sha256(out / "samples.jsonl"), "clouds": cloud_hash.hexdigest()},
    }
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


# -- reading -------------------------------------------------------------------

@dataclass
class EEExample:
    sample_id: str
    instance_id: str
    category: str
    split: str
    cloud: np.ndarray
    pose: Pose
    s: np.ndarray
    object_pose: Pose
    n_observed: int

    @property
    def flags(self) -> SymmetryFlags:
        return SymmetryFlags.from_scores(self.s)


class Dataset:
    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.is_file():
            raise MissingInput(f"no manifest.json in {self.root}")
        with open(mpath) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("version") != FORMAT_VERSION:
            raise DataError(f"dataset version {self.manifest.get('version')} != {FORMAT_VERSION}")
        self.records = []
        with open(self.root / "samples.jsonl") as fh:
            for line in fh:
                if line.strip():
                    self.records.append(json.loads(line))

    def examples(self, split: str | None = None, category: str | None = None,
                 load: bool = True) -> Iterator[EEExample]:
        for rec in self.records:
            if split is not None and rec["split"] != split:
                continue
            obj, _ = pose_from_json(rec["object_pose"])
            for ee in rec["ee"]:
                if category is not None and ee["category"] != category:
                    continue
                pose, s = pose_from_json(ee["pose"])
                cloud = read_xyz(self.root / ee["cloud"]) if load else None
                yield EEExample(rec["sample_id"], rec["instance_id"], ee["category"], rec["split"], cloud,
                                pose, np.asarray(ee["s"], float), obj, int(ee["n_observed"]))

    def categories(self) -> list[str]:
        return sorted(self.manifest["categories"])


def load_config(path) -> GeneratorConfig:
    if path is None:
        return GeneratorConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return GeneratorConfig.from_dict(d)
