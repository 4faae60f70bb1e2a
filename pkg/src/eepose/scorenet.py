"""Score network in plain numpy (float64) with hand-written backprop.

Layout::

    cloud (N, 3) -> shared per-point MLP -> max over points -> dense  = cloud feature
    t            -> sinusoidal features  -> dense                      = time feature
    pose (12,)   -> dense -> dense                                     = pose feature
    [cloud | time | pose] -> trunk MLP -> four 3-vector heads (rx, ry, s, t)

The head output is divided by sigma(t), so zero heads give a zero score and
the heads only have to predict unit-scale noise.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyCloud, FormatError, NonFiniteLoss, ShapeMismatch

HEADS = ("rx", "ry", "s", "t")
MAGIC = b"TEEP"
FILE_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    point_widths: tuple[int, ...] = (64, 128, 256)
    global_width: int = 256
    time_freqs: int = 32
    time_width: int = 64
    pose_widths: tuple[int, ...] = (64, 64)
    trunk_widths: tuple[int, ...] = (256, 256)
    max_freq: float = 200.0

    @property
    def trunk_in(self) -> int:
        return self.global_width + self.time_width + self.pose_widths[-1]


TINY = NetConfig(point_widths=(8, 8, 8), global_width=8, time_freqs=4, time_width=8,
                 pose_widths=(8, 8), trunk_widths=(8, 8))


def _layer_shapes(cfg: NetConfig):
    shapes = []
    prev = 3
    for i, w in enumerate(cfg.point_widths):
        shapes.append((f"enc.{i}", w, prev))
        prev = w
    shapes.append(("glob", cfg.global_width, prev))
    shapes.append(("time", cfg.time_width, 2 * cfg.time_freqs))
    prev = 12
    for i, w in enumerate(cfg.pose_widths):
        shapes.append((f"pose.{i}", w, prev))
        prev = w
    prev = cfg.trunk_in
    for i, w in enumerate(cfg.trunk_widths):
        shapes.append((f"trunk.{i}", w, prev))
        prev = w
    for h in HEADS:
        shapes.append((f"head.{h}", 3, prev))
    return shapes


@dataclass
class ScoreNetParams:
    config: NetConfig
    tensors: dict[str, np.ndarray]
    # non-trainable values shipped with the model (noise schedule, translation scale)
    meta: dict[str, float] = field(default_factory=dict)

    def copy(self) -> "ScoreNetParams":
        return ScoreNetParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, dict(self.meta))

    def with_tensors(self, tensors) -> "ScoreNetParams":
        return ScoreNetParams(self.config, tensors, dict(self.meta))

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(cfg: NetConfig = NetConfig(), seed: int = 0, meta: dict | None = None,
                zero_heads: bool = True) -> ScoreNetParams:
    """Glorot-uniform weights, zero biases; heads zeroed so the initial score is 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, fan_out, fan_in in _layer_shapes(cfg):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        if zero_heads and name.startswith("head."):
            w = np.zeros_like(w)
        tensors[f"{name}.w"] = w
        tensors[f"{name}.b"] = np.zeros(fan_out)
    meta = {"sigma_min": 0.01, "sigma_max": 5.0, "eps": 1e-3, "trans_scale": 0.05, **(meta or {})}
    return ScoreNetParams(cfg, tensors, meta)


def _relu(x):
    return np.maximum(x, 0.0)


def dense_forward(x, w, b, relu=True):
    z = x @ w.T + b
    return _relu(z) if relu else z


def dense_backward(x, w, out, dout, relu=True):
    """Return ``(dW, db, dx)`` for ``out = act(x @ w.T + b)``."""
    dz = dout * (out > 0) if relu else dout
    dz2 = dz.reshape(-1, dz.shape[-1])
    dw = dz2.T @ x.reshape(-1, x.shape[-1])
    db = dz2.sum(axis=0)
    dx = dz @ w
    return dw, db, dx


def time_features(t, cfg: NetConfig) -> np.ndarray:
    freqs = np.geomspace(1.0, cfg.max_freq, cfg.time_freqs)
    arg = np.asarray(t, float).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


# -- cloud encoder -------------------------------------------------------------

@dataclass
class CloudCache:
    acts: list  # per-point activations, acts[0] is the input
    argmax: np.ndarray
    pooled: np.ndarray
    feat: np.ndarray


def encode_clouds(params: ScoreNetParams, clouds) -> tuple[np.ndarray, CloudCache]:
    """``(C, N, 3)`` -> ``(C, global_width)`` features plus the backward cache."""
    x = np.asarray(clouds, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] == 0:
        raise EmptyCloud("cannot encode an empty cloud")
    p = params.tensors
    acts = [x]
    for i in range(len(params.config.point_widths)):
        x = dense_forward(x, p[f"enc.{i}.w"], p[f"enc.{i}.b"])
        acts.append(x)
    argmax = x.argmax(axis=1)
    pooled = np.take_along_axis(x, argmax[:, None, :], axis=1)[:, 0, :]
    feat = dense_forward(pooled, p["glob.w"], p["glob.b"])
    return feat, CloudCache(acts, argmax, pooled, feat)


def encode_cloud(params: ScoreNetParams, cloud) -> np.ndarray:
    return encode_clouds(params, np.asarray(cloud, float)[None])[0][0]


def encode_backward(params: ScoreNetParams, cache: CloudCache, dfeat, grads: dict):
    p = params.tensors
    dw, db, dpooled = dense_backward(cache.pooled, p["glob.w"], cache.feat, dfeat)
    grads["glob.w"] += dw
    grads["glob.b"] += db
    last = cache.acts[-1]
    dx = np.zeros_like(last)
    np.put_along_axis(dx, cache.argmax[:, None, :], dpooled[:, None, :], axis=1)
    for i in reversed(range(len(params.config.point_widths))):
        dw, db, dx = dense_backward(cache.acts[i], p[f"enc.{i}.w"], cache.acts[i + 1], dx)
        grads[f"enc.{i}.w"] += dw
        grads[f"enc.{i}.b"] += db


# -- conditional score head ------------------------------------------------------

@dataclass
class HeadCache:
    feat_rows: np.ndarray
    tfeat: np.ndarray
    temb: np.ndarray
    pose_acts: list
    trunk_acts: list
    sigma: np.ndarray


def sigma_of(params: ScoreNetParams, t):
    m = params.meta
    return m["sigma_min"] * (m["sigma_max"] / m["sigma_min"]) ** np.asarray(t, float)


def score_from_features(params: ScoreNetParams, feat_rows, pose, t) -> tuple[np.ndarray, HeadCache]:
    """Score for ``B`` rows given their (already gathered) cloud features."""
    p = params.tensors
    cfg = params.config
    pose = np.asarray(pose, float).reshape(-1, 12)
    t = np.broadcast_to(np.asarray(t, float), (len(pose),))
    tfeat = time_features(t, cfg)
    temb = dense_forward(tfeat, p["time.w"], p["time.b"])
    pose_acts = [pose]
    x = pose
    for i in range(len(cfg.pose_widths)):
        x = dense_forward(x, p[f"pose.{i}.w"], p[f"pose.{i}.b"])
        pose_acts.append(x)
    x = np.concatenate([feat_rows, temb, x], axis=1)
    trunk_acts = [x]
    for i in range(len(cfg.trunk_widths)):
        x = dense_forward(x, p[f"trunk.{i}.w"], p[f"trunk.{i}.b"])
        trunk_acts.append(x)
    raw = np.concatenate([dense_forward(x, p[f"head.{h}.w"], p[f"head.{h}.b"], relu=False) for h in HEADS], axis=1)
    sigma = sigma_of(params, t)
    return raw / sigma[:, None], HeadCache(feat_rows, tfeat, temb, pose_acts, trunk_acts, sigma)


def score_backward(params: ScoreNetParams, cache: HeadCache, dscore, grads: dict) -> np.ndarray:
    """Accumulate head/trunk/time/pose grads; return d loss / d feat_rows."""
    p = params.tensors
    cfg = params.config
    draw = dscore / cache.sigma[:, None]
    h = cache.trunk_acts[-1]
    dh = np.zeros_like(h)
    for k, name in enumerate(HEADS):
        dw, db, dx = dense_backward(h, p[f"head.{name}.w"], None, draw[:, 3 * k:3 * k + 3], relu=False)
        grads[f"head.{name}.w"] += dw
        grads[f"head.{name}.b"] += db
        dh += dx
    for i in reversed(range(len(cfg.trunk_widths))):
        dw, db, dh = dense_backward(cache.trunk_acts[i], p[f"trunk.{i}.w"], cache.trunk_acts[i + 1], dh)
        grads[f"trunk.{i}.w"] += dw
        grads[f"trunk.{i}.b"] += db
    g = cfg.global_width
    dfeat, dtemb, dpose = dh[:, :g], dh[:, g:g + cfg.time_width], dh[:, g + cfg.time_width:]
    dw, db, _ = dense_backward(cache.tfeat, p["time.w"], cache.temb, dtemb)
    grads["time.w"] += dw
    grads["time.b"] += db
    for i in reversed(range(len(cfg.pose_widths))):
        dw, db, dpose = dense_backward(cache.pose_acts[i], p[f"pose.{i}.w"], cache.pose_acts[i + 1], dpose)
        grads[f"pose.{i}.w"] += dw
        grads[f"pose.{i}.b"] += db
    return dfeat


def forward_score(params: ScoreNetParams, pose_vec, t, cloud) -> np.ndarray:
    """Score estimate for one pose vector given a single (preprocessed) cloud."""
    feat = encode_cloud(params, cloud)
    pose_vec = np.asarray(pose_vec, float).reshape(-1, 12)
    out, _ = score_from_features(params, np.repeat(feat[None], len(pose_vec), axis=0), pose_vec, t)
    return out[0] if out.shape[0] == 1 else out


@dataclass
class Batch:
    clouds: np.ndarray  # (C, N, 3)
    cloud_index: np.ndarray  # (B,) row -> cloud
    pose: np.ndarray  # (B, 12) network input pose
    t: np.ndarray  # (B,)


def zero_grads(params: ScoreNetParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def backward(params: ScoreNetParams, batch: Batch, loss_fn):
    """Reverse-mode gradient of ``loss_fn(score) -> (loss, dloss/dscore)``."""
    feat, ccache = encode_clouds(params, batch.clouds)
    idx = np.asarray(batch.cloud_index)
    score, hcache = score_from_features(params, feat[idx], batch.pose, batch.t)
    loss, dscore = loss_fn(score)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    grads = zero_grads(params)
    dfeat_rows = score_backward(params, hcache, np.asarray(dscore, float), grads)
    dfeat = np.zeros_like(feat)
    np.add.at(dfeat, idx, dfeat_rows)
    encode_backward(params, ccache, dfeat, grads)
    return float(loss), grads


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ScoreNetParams, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    z = zero_grads(params)
    return AdamState(z, {k: v.copy() for k, v in z.items()}, 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: ScoreNetParams, grads: dict, lr: float | None = None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if set(grads) != set(params.tensors):
        raise ShapeMismatch("gradient names do not match parameters")
    lr = state.lr if lr is None else lr
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_t, new_m, new_v = {}, {}, {}
    for k, w in params.tensors.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{k}: grad {g.shape} vs param {w.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        new_t[k] = w - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    return params.with_tensors(new_t), replace(state, m=new_m, v=new_v, step=step)


# -- serialization -------------------------------------------------------------------

def save_params(params: ScoreNetParams, path) -> None:
    items = list(params.tensors.items())
    cfg = params.config
    meta = dict(params.meta, max_freq=cfg.max_freq)
    items += [(f"meta.{k}", np.asarray([float(v)])) for k, v in sorted(meta.items())]
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FILE_VERSION, len(items))
    for name, arr in items:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_params(path) -> ScoreNetParams:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated model file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a model file")
    version, count = struct.unpack("<II", take(8))
    if version != FILE_VERSION:
        raise FormatError(f"{path}: model file version {version} unsupported (supported: {FILE_VERSION})")
    tensors, meta = {}, {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
        if name.startswith("meta."):
            meta[name[5:]] = float(arr.reshape(-1)[0])
        else:
            tensors[name] = arr
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes after {count} tensors")
    return ScoreNetParams(_config_from_tensors(tensors, meta.pop("max_freq", 200.0)), tensors, meta)


def _config_from_tensors(t: dict, max_freq: float) -> NetConfig:
    try:
        enc = []
        i = 0
        while f"enc.{i}.w" in t:
            enc.append(t[f"enc.{i}.w"].shape[0])
            i += 1
        pose = []
        i = 0
        while f"pose.{i}.w" in t:
            pose.append(t[f"pose.{i}.w"].shape[0])
            i += 1
        trunk = []
        i = 0
        while f"trunk.{i}.w" in t:
            trunk.append(t[f"trunk.{i}.w"].shape[0])
            i += 1
        cfg = NetConfig(tuple(enc), t["glob.w"].shape[0], t["time.w"].shape[1] // 2, t["time.w"].shape[0],
                        tuple(pose), tuple(trunk), max_freq)
    except KeyError as exc:
        raise FormatError(f"model file is missing tensor {exc}") from exc
    for name, fan_out, fan_in in _layer_shapes(cfg):
        if t[f"{name}.w"].shape != (fan_out, fan_in):
            raise FormatError(f"tensor {name}.w has shape {t[f'{name}.w'].shape}, expected {(fan_out, fan_in)}")
    return cfg
