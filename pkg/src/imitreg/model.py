"""Multi-task displacement regressor.

Two architectures share the same training loop, loss and checkpoint format.

``flat``
    A fully connected ReLU trunk on the whole observation vector feeds two
    affine heads: one predicts the global translation of the source image,
    the other one displacement vector per landmark.

``corr``
    A fixed correlation layer (no parameters) turns each landmark's patch
    pair into a normalized cross-correlation volume over small shifts plus
    the refined location of its peak. A ReLU trunk shared by all landmarks
    embeds these features, the embeddings are mean-pooled into a context
    vector, and the heads read the per-landmark embedding, the context and
    the peak locations. The heads start with a unit skip from the pooled
    peak to their output, so an untrained network already predicts the
    translation found by correlation and training learns the residual.

Gradients are written out by hand (reverse mode) and optimized with Adam.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (ConfigError, ConfigMismatch, CorruptFile, CountMismatch, EmptyDataset,
                     InconsistentShapes, IoFailure, MissingFile, ShapeMismatch)
from .observation import ObsConfig, Observation

CHECKPOINT_VERSION = 1
ARCHS = ("flat", "corr")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 32
    w_translation: float = 0.5
    w_displacement: float = 0.5
    val_fraction: float = 0.1
    patience: Optional[int] = 10
    hidden: Tuple[int, ...] = (256, 128)
    seed: int = 0
    arch: str = "flat"
    max_shift: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        if self.max_shift < 0:
            raise ConfigError("max_shift must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.w_translation < 0 or self.w_displacement < 0 or \
                self.w_translation + self.w_displacement == 0:
            raise ConfigError("loss weights must be >= 0 and not both zero")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class CorrSpec:
    """Geometry of the fixed correlation layer.

    ``unit`` converts a shift measured in patch samples into model output
    units (pixels divided by the displacement scale), i.e. ``S / disp_scale``.
    """

    C: int
    K: int
    max_shift: int = 4
    unit: float = 1.0

    @property
    def radius(self) -> int:
        return min(self.C // 2, self.max_shift)

    @property
    def n_shifts(self) -> int:
        return (2 * self.radius + 1) ** 2

    @property
    def n_features(self) -> int:
        return 2 * self.n_shifts + 8

    @property
    def obs_len(self) -> int:
        return 2 * self.K * self.C * self.C + 2 * self.K


@dataclass
class ModelParams:
    """Trunk layers then the translation head then the displacement head.

    Each layer is a ``(W, b)`` pair with ``W`` of shape ``(fan_in, fan_out)``.
    For ``arch == "corr"`` the trunk acts on one landmark's features at a
    time and ``corr`` holds the correlation-layer geometry.
    """

    layers: List[Tuple[np.ndarray, np.ndarray]]
    n_trunk: int
    arch: str = "flat"
    corr: Optional[CorrSpec] = None

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        """Input width, trunk widths, then the two head output widths."""
        sizes = [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers[:self.n_trunk]]
        return tuple(sizes) + (self.layers[-2][0].shape[1], self.layers[-1][0].shape[1])

    @property
    def obs_len(self) -> int:
        return self.corr.obs_len if self.arch == "corr" else self.layers[0][0].shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.corr.K if self.arch == "corr" else self.layers[-1][0].shape[1] // 2

    def arrays(self) -> List[np.ndarray]:
        return [a for wb in self.layers for a in wb]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        it = iter(arrays)
        return ModelParams([(next(it), next(it)) for _ in self.layers], self.n_trunk,
                           self.arch, self.corr)

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass(frozen=True)
class Prediction:
    translation: np.ndarray    # (2,)
    displacements: np.ndarray  # (K, 2)


def init(obs_len: int, K: int, hidden: Sequence[int] = (256, 128), rng=None) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    if obs_len < 1 or K < 1:
        raise ConfigError("obs_len and K must be >= 1")
    rng = np.random.default_rng(rng)

    def layer(fan_in, fan_out):
        b = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-b, b, size=(fan_in, fan_out)), np.zeros(fan_out)

    layers, width = [], obs_len
    for h in hidden:
        layers.append(layer(width, int(h)))
        width = int(h)
    layers.append(layer(width, 2))
    layers.append(layer(width, 2 * K))
    return ModelParams(layers, len(hidden))


def init_corr(spec: CorrSpec, hidden: Sequence[int] = (128, 128), rng=None,
              skip: bool = True) -> ModelParams:
    """Glorot-uniform trunk weights and zero biases.

    With ``skip`` the head weights start at zero apart from a unit path from
    the pooled peak shift to the outputs; otherwise they are Glorot-uniform.

    The translation head reads ``[context (H), pooled peak (3)]`` and the
    displacement head reads ``[embedding (H), context (H), own peak (3),
    pooled peak (3)]``, where ``H`` is the last trunk width.
    """
    if spec.C < 1 or spec.K < 1:
        raise ConfigError("C and K must be >= 1")
    rng = np.random.default_rng(rng)

    def layer(fan_in, fan_out):
        b = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-b, b, size=(fan_in, fan_out)), np.zeros(fan_out)

    layers, width = [], spec.n_features
    for h in hidden:
        layers.append(layer(width, int(h)))
        width = int(h)
    wt, bt = layer(width + 3, 2)
    wd, bd = layer(2 * width + 6, 2)
    if skip:
        # residual start: heads output exactly the pooled peak shift
        wt[:] = 0.0
        wd[:] = 0.0
        wt[width:width + 2] = np.eye(2)
        wd[2 * width + 3:2 * width + 5] = np.eye(2)
    layers += [(wt, bt), (wd, bd)]
    return ModelParams(layers, len(hidden), "corr", spec)


# ---------------------------------------------------------------------------
# fixed correlation layer


def ncc_volume(src: np.ndarray, tgt: np.ndarray, radius: int) -> np.ndarray:
    """Normalized cross-correlation of patch pairs over integer shifts.

    ``src`` and ``tgt`` are ``(N, C, C)``. Entry ``(dy + r) * (2r + 1) + (dx + r)``
    compares ``src[y, x]`` with ``tgt[y + dy, x + dx]`` on their overlap, so a
    target that is the source moved by ``(dx, dy)`` peaks there. Overlaps with
    no variance score 0.
    """
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    C = src.shape[-1]
    out = np.empty((len(src), (2 * radius + 1) ** 2))
    j = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            a = src[:, max(0, -dy):C + min(0, -dy), max(0, -dx):C + min(0, -dx)]
            b = tgt[:, max(0, dy):C + min(0, dy), max(0, dx):C + min(0, dx)]
            a = a - a.mean(axis=(1, 2), keepdims=True)
            b = b - b.mean(axis=(1, 2), keepdims=True)
            num = np.sum(a * b, axis=(1, 2))
            den = np.sqrt(np.sum(a * a, axis=(1, 2)) * np.sum(b * b, axis=(1, 2)))
            out[:, j] = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
            j += 1
    return out


def refined_peak(vol: np.ndarray, radius: int) -> np.ndarray:
    """Sub-sample peak ``(dx, dy, value)`` of ``(N, (2r+1)^2)`` volumes.

    The integer argmax is refined by a 1D parabola through its neighbours
    along each axis, clamped to half a sample.
    """
    n = 2 * radius + 1
    v = np.asarray(vol, dtype=np.float64).reshape(-1, n, n)
    rows = np.arange(len(v))
    iy, ix = np.divmod(v.reshape(len(v), -1).argmax(axis=1), n)
    c = v[rows, iy, ix]

    def offset(lo, hi, ok):
        den = lo - 2.0 * c + hi
        ok = ok & (den < 0)
        o = np.where(ok, 0.5 * (lo - hi) / np.where(ok, den, -1.0), 0.0)
        return np.clip(o, -0.5, 0.5)

    ox = offset(v[rows, iy, np.maximum(ix - 1, 0)], v[rows, iy, np.minimum(ix + 1, n - 1)],
                (ix > 0) & (ix < n - 1))
    oy = offset(v[rows, np.maximum(iy - 1, 0), ix], v[rows, np.minimum(iy + 1, n - 1), ix],
                (iy > 0) & (iy < n - 1))
    return np.stack([ix - radius + ox, iy - radius + oy, c], axis=1)


def corr_features(x: np.ndarray, spec: CorrSpec) -> np.ndarray:
    """Per-landmark features ``(N, K, F)`` of serialized observations ``(N, obs_len)``.

    Layout per landmark: own volume, pooled (landmark-mean) volume, own peak
    ``(dx, dy, value)``, pooled peak, normalized point. Peak shifts are in
    output units.
    """
    x = np.asarray(x, dtype=np.float64)
    N, K, C, r = len(x), spec.K, spec.C, spec.radius
    patches = x[:, :2 * K * C * C].reshape(N, K, 2, C, C)
    points = x[:, 2 * K * C * C:].reshape(N, K, 2)
    vol = ncc_volume(patches[:, :, 0].reshape(-1, C, C), patches[:, :, 1].reshape(-1, C, C), r)
    vol = vol.reshape(N, K, -1)
    pooled = vol.mean(axis=1)
    scale = np.array([spec.unit, spec.unit, 1.0])
    pk = (refined_peak(vol.reshape(N * K, -1), r) * scale).reshape(N, K, 3)
    pp = refined_peak(pooled, r) * scale
    return np.concatenate([vol, np.broadcast_to(pooled[:, None], vol.shape), pk,
                           np.broadcast_to(pp[:, None], (N, K, 3)), points], axis=2)


def features(p: ModelParams, x: np.ndarray) -> np.ndarray:
    """Network input for a batch of observations: ``x`` itself for ``flat``."""
    return corr_features(x, p.corr) if p.arch == "corr" else x


def _as_batch(p: ModelParams, obs) -> np.ndarray:
    if isinstance(obs, Observation):
        obs = obs.to_vector()
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != p.obs_len:
        raise ShapeMismatch(f"observation length {x.shape[-1]} != model input {p.obs_len}")
    return x


def _trunk(p: ModelParams, h: np.ndarray):
    acts, pre = [h], []
    for w, b in p.layers[:p.n_trunk]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    return h, acts, pre


def _heads_input(f: np.ndarray, h: np.ndarray):
    """Head inputs of the ``corr`` network from features ``f`` and embeddings ``h``."""
    F = f.shape[2]
    pk, pp = f[:, :, F - 8:F - 5], f[:, :, F - 5:F - 2]
    g = h.mean(axis=1)
    zt = np.concatenate([g, pp[:, 0]], axis=1)
    zd = np.concatenate([h, np.broadcast_to(g[:, None], h.shape), pk, pp], axis=2)
    return zt, zd


def forward_features(p: ModelParams, f: np.ndarray):
    """Forward pass from precomputed :func:`features`.

    Returns ``(translation (N,2), displacements (N,K,2), cache)``.
    """
    (wt, bt), (wd, bd) = p.layers[-2], p.layers[-1]
    if p.arch == "corr":
        N, K, F = f.shape
        h, acts, pre = _trunk(p, f.reshape(N * K, F))
        h = h.reshape(N, K, -1)
        zt, zd = _heads_input(f, h)
        return zt @ wt + bt, zd @ wd + bd, (acts, pre, zt, zd)
    h, acts, pre = _trunk(p, f)
    t = h @ wt + bt
    d = (h @ wd + bd).reshape(len(f), -1, 2)
    return t, d, (acts, pre)


def forward_batch(p: ModelParams, x: np.ndarray):
    """Return ``(translation (N,2), displacements (N,K,2), cache)``."""
    return forward_features(p, features(p, x))


def forward(p: ModelParams, obs) -> Prediction:
    t, d, _ = forward_batch(p, _as_batch(p, obs))
    return Prediction(t[0], d[0])


def _check_demo(demo, K):
    demo = np.asarray(demo, dtype=np.float64)
    if demo.shape[-2:] != (K, 2):
        raise CountMismatch(f"demonstrator has shape {demo.shape}, expected (..., {K}, 2)")
    return demo


def batch_loss(t, d, demo, cfg: TrainConfig) -> float:
    """Mean over the batch of the weighted two-task squared error."""
    demo = _check_demo(demo, d.shape[1])
    et = t - demo.mean(axis=1)
    ed = d - demo
    per = cfg.w_translation * np.sum(et * et, axis=1) + \
        cfg.w_displacement * np.sum(ed * ed, axis=(1, 2)) / d.shape[1]
    return float(per.mean())


def loss(pred: Prediction, demo, cfg: TrainConfig = TrainConfig()) -> float:
    d = np.asarray(pred.displacements, dtype=np.float64)[None]
    return batch_loss(np.asarray(pred.translation, dtype=np.float64)[None], d,
                      _check_demo(demo, d.shape[1])[None], cfg)


def loss_and_grad(p: ModelParams, x, demo, cfg: TrainConfig, feats: Optional[np.ndarray] = None):
    """Batch-mean loss and its exact gradient w.r.t. ``p.arrays()``.

    ``feats`` may carry precomputed :func:`features` of ``x`` (``x`` is then
    only used for its batch size).
    """
    if feats is None:
        feats = features(p, _as_batch(p, x))
    n = len(feats)
    K = p.n_landmarks
    demo = _check_demo(demo, K).reshape(n, K, 2)
    t, d, cache = forward_features(p, feats)
    value = batch_loss(t, d, demo, cfg)
    gt = (2.0 * cfg.w_translation / n) * (t - demo.mean(axis=1))
    gd = (2.0 * cfg.w_displacement / (n * K)) * (d - demo)
    (wt, _), (wd, _) = p.layers[-2], p.layers[-1]
    grads = [None] * (2 * len(p.layers))
    if p.arch == "corr":
        acts, pre, zt, zd = cache
        H = zt.shape[1] - 3
        grads[-4], grads[-3] = zt.T @ gt, gt.sum(axis=0)
        grads[-2] = zd.reshape(n * K, -1).T @ gd.reshape(n * K, 2)
        grads[-1] = gd.sum(axis=(0, 1))
        gzd = gd @ wd.T
        gg = gt @ wt[:H].T + gzd[:, :, H:2 * H].sum(axis=1)
        gh = (gzd[:, :, :H] + gg[:, None, :] / K).reshape(n * K, H)
    else:
        acts, pre = cache
        gd = gd.reshape(n, 2 * K)
        h = acts[-1]
        grads[-4], grads[-3] = h.T @ gt, gt.sum(axis=0)
        grads[-2], grads[-1] = h.T @ gd, gd.sum(axis=0)
        gh = gt @ wt.T + gd @ wd.T
    for i in range(p.n_trunk - 1, -1, -1):
        gz = gh * (pre[i] > 0)
        grads[2 * i] = acts[i].T @ gz
        grads[2 * i + 1] = gz.sum(axis=0)
        if i:
            gh = gz @ p.layers[i][0].T
    return value, grads


def backward(p: ModelParams, obs, demo, cfg: TrainConfig = TrainConfig()) -> List[np.ndarray]:
    return loss_and_grad(p, obs, demo, cfg)[1]


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, p: ModelParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in p.arrays()], [np.zeros_like(a) for a in p.arrays()])


def adam_step(p: ModelParams, grads, state: AdamState, cfg: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.t + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_a, new_m, new_v = [], [], []
    for a, g, m, v in zip(p.arrays(), grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_a.append(a - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return p.with_arrays(new_a), AdamState(new_m, new_v, t)


def _stack(samples):
    """Accept a list of ``(obs, demo)`` samples or an already stacked ``(X, D)`` tuple."""
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray) \
            and samples[0].ndim == 2:
        x, d = samples
        if len(x) != len(d) or d.ndim != 3 or d.shape[2] != 2:
            raise InconsistentShapes(f"stacked samples disagree: X {x.shape}, D {d.shape}")
        return np.asarray(x, dtype=np.float64), np.asarray(d, dtype=np.float64)
    xs, ds = [], []
    for obs, demo in samples:
        xs.append(obs.to_vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64))
        ds.append(np.asarray(demo, dtype=np.float64))
    lens = {len(x) for x in xs}
    if len(lens) != 1 or len({d.shape for d in ds}) != 1:
        raise InconsistentShapes("all observations and demonstrators must share one shape")
    return np.stack(xs), np.stack(ds)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0


def init_for(cfg: TrainConfig, obs_len: int, K: int, rng=None, *, obs_cfg: Optional[ObsConfig] = None,
             disp_scale: float = 1.0) -> ModelParams:
    """Fresh parameters of the architecture selected by ``cfg.arch``."""
    if cfg.arch == "flat":
        return init(obs_len, K, cfg.hidden, rng)
    if obs_cfg is None:
        raise ConfigError("the corr architecture needs the observation geometry (obs_cfg)")
    spec = CorrSpec(obs_cfg.C, K, cfg.max_shift, obs_cfg.S / disp_scale)
    if spec.obs_len != obs_len:
        raise ShapeMismatch(f"observation length {obs_len} does not match C={obs_cfg.C}, K={K}")
    return init_corr(spec, cfg.hidden, rng)


def train(dataset, cfg: TrainConfig = TrainConfig(), val_dataset=None, *,
          disp_scale: float = 1.0, params: Optional[ModelParams] = None, log=None,
          obs_cfg: Optional[ObsConfig] = None):
    """Mini-batch Adam on ``(observation, displacements)`` samples.

    Without ``val_dataset`` a ``cfg.val_fraction`` share of the samples is held
    out. Demonstrators are divided by ``disp_scale`` before fitting. Entry 0 of
    the history is the loss before the first update. Returns the parameters
    with the lowest validation loss and the history. ``obs_cfg`` is required
    for ``cfg.arch == "corr"`` unless ``params`` is given.
    """
    if not dataset:
        raise EmptyDataset("training set is empty")
    x, demo = _stack(dataset)
    demo = demo / disp_scale
    rng = np.random.default_rng(cfg.seed)
    if val_dataset is None:
        n_val = int(round(cfg.val_fraction * len(x)))
        if len(x) >= 2:
            n_val = min(max(n_val, 1), len(x) - 1)
        else:
            n_val = 0
        order = rng.permutation(len(x))
        xv, dv = x[order[:n_val]], demo[order[:n_val]]
        x, demo = x[order[n_val:]], demo[order[n_val:]]
    elif len(val_dataset):
        xv, dv = _stack(val_dataset)
        dv = dv / disp_scale
    else:
        xv, dv = x[:0], demo[:0]
    if len(xv) and xv.shape[1] != x.shape[1]:
        raise InconsistentShapes("validation observations differ in length from training ones")
    K = demo.shape[1]
    if params is None:
        params = init_for(cfg, x.shape[1], K, rng, obs_cfg=obs_cfg, disp_scale=disp_scale)
    elif params.obs_len != x.shape[1] or params.n_landmarks != K:
        raise ShapeMismatch("initial parameters do not match the dataset")
    # the correlation layer is fixed, so its output is computed once
    fx = features(params, x)
    fv = features(params, xv) if len(xv) else None

    def evaluate(p):
        tl = batch_loss(*forward_features(p, fx)[:2], demo, cfg)
        vl = batch_loss(*forward_features(p, fv)[:2], dv, cfg) if fv is not None else tl
        return tl, vl

    hist = TrainHistory()
    tl, vl = evaluate(params)
    hist.train_loss.append(tl)
    hist.val_loss.append(vl)
    best, best_val, since = params, vl, 0
    state = AdamState.fresh(params)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            _, g = loss_and_grad(params, None, demo[idx], cfg, feats=fx[idx])
            params, state = adam_step(params, g, state, cfg)
        tl, vl = evaluate(params)
        hist.train_loss.append(tl)
        hist.val_loss.append(vl)
        if log is not None:
            log(epoch, tl, vl)
        if vl < best_val:
            best, best_val, since = params, vl, 0
            hist.best_epoch = epoch
        else:
            since += 1
            if cfg.patience is not None and since >= cfg.patience:
                break
    return best, hist


# ---------------------------------------------------------------------------
# trained model bundle + checkpoint files


@dataclass
class TrainedModel:
    """Parameters together with everything needed to apply them."""

    params: ModelParams
    obs_cfg: ObsConfig
    branch: str
    disp_scale: float
    gray_mode: str = "green"

    def predict(self, obs) -> Prediction:
        """Prediction in pixels."""
        pred = forward(self.params, obs)
        return Prediction(pred.translation * self.disp_scale, pred.displacements * self.disp_scale)

    def check_compatible(self, obs_cfg: Optional[ObsConfig] = None, K: Optional[int] = None,
                         branch: Optional[str] = None):
        if obs_cfg is not None and (obs_cfg.C, obs_cfg.S) != (self.obs_cfg.C, self.obs_cfg.S):
            raise ConfigMismatch(f"checkpoint was trained with C={self.obs_cfg.C}, S={self.obs_cfg.S}; "
                                 f"got C={obs_cfg.C}, S={obs_cfg.S}")
        if K is not None and K != self.params.n_landmarks:
            raise ConfigMismatch(f"checkpoint expects {self.params.n_landmarks} landmarks, got {K}")
        if branch is not None and str(branch) != self.branch:
            raise ConfigMismatch(f"checkpoint was trained on branch {self.branch!r}, got {branch!r}")


def save_checkpoint(model: TrainedModel, path, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` with a JSON ``meta`` record and the arrays ``p000, p001, ...``.

    ``extra`` (JSON-serializable) is stored under ``meta["extra"]``, e.g. the
    training configuration and loss history.
    """
    meta = {
        "format": "imitreg-checkpoint",
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(model.params.layer_sizes),
        "n_trunk": model.params.n_trunk,
        "arch": model.params.arch,
        "corr": None if model.params.corr is None else {
            "C": model.params.corr.C, "K": model.params.corr.K,
            "max_shift": model.params.corr.max_shift, "unit": model.params.corr.unit},
        "obs": {"C": model.obs_cfg.C, "S": model.obs_cfg.S, "fill": model.obs_cfg.fill},
        "branch": model.branch,
        "disp_scale": model.disp_scale,
        "gray_mode": model.gray_mode,
    }
    if extra is not None:
        meta["extra"] = extra
    arrays = {f"p{i:03d}": a for i, a in enumerate(model.params.arrays())}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> TrainedModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            names = sorted(k for k in z.files if k.startswith("p"))
            arrays = [z[k] for k in names]
    except FileNotFoundError as e:
        raise MissingFile(f"checkpoint not found: {path}") from e
    except (OSError, ValueError, KeyError) as e:
        raise CorruptFile(f"cannot read checkpoint {path}: {e}") from e
    if meta.get("format") != "imitreg-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CorruptFile(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    n_layers = meta["n_trunk"] + 2
    if len(arrays) != 2 * n_layers:
        raise CorruptFile(f"{path}: expected {2 * n_layers} arrays, found {len(arrays)}")
    corr = meta.get("corr")
    params = ModelParams([(arrays[2 * i], arrays[2 * i + 1]) for i in range(n_layers)], meta["n_trunk"],
                         meta.get("arch", "flat"), None if corr is None else CorrSpec(**corr))
    if list(params.layer_sizes) != meta["layer_sizes"]:
        raise CorruptFile(f"{path}: parameter shapes disagree with layer_sizes")
    obs = meta["obs"]
    return TrainedModel(params, ObsConfig(obs["C"], obs["S"], obs["fill"]), meta["branch"],
                        float(meta["disp_scale"]), meta.get("gray_mode", "green"))


def with_config(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
