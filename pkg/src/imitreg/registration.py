"""Transform fitting, TRE and the evaluation protocols.

The protocols share one expensive step, turning every pair into augmented,
preprocessed and encoded training samples. :func:`build_samples` does it
once per pair and encodes for several patch geometries at the same time, so
a hyperparameter sweep only pays for preprocessing once.
"""
from __future__ import annotations

import enum
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentConfig, augment_pair, demonstrator
from .core import Affine2D, ImagePair
from .errors import (CountMismatch, DatasetTooSmall, DataError, DegenerateConfiguration,
                     LeakageError)
from .imageops import Branch, PreprocessParams, preprocess
from .model import TrainConfig, TrainedModel, train
from .observation import ObsConfig, encode

RANK_TOL = 1e-12


class TransformModel(str, enum.Enum):
    TRANSLATION = "translation"
    SIMILARITY = "similarity"
    AFFINE = "affine"

    @property
    def min_points(self) -> int:
        return {"translation": 1, "similarity": 2, "affine": 3}[self.value]


def _pair_arrays(src, dst):
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise CountMismatch(f"point sets of shapes {src.shape} and {dst.shape} do not correspond")
    return src, dst


def fit_transform(src, dst, model=TransformModel.AFFINE) -> Affine2D:
    """Least-squares ``T`` minimizing ``sum ||T(src_i) - dst_i||^2`` within ``model``."""
    model = TransformModel(model)
    src, dst = _pair_arrays(src, dst)
    if len(src) < model.min_points:
        raise DegenerateConfiguration(f"{model.value} fit needs >= {model.min_points} points, got {len(src)}")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    if model is TransformModel.TRANSLATION:
        return Affine2D.translation(*(cd - cs))
    zs, zd = src - cs, dst - cd
    if model is TransformModel.SIMILARITY:
        # complex form: w = a z with a = s e^{i theta}; excludes reflections
        z = zs[:, 0] + 1j * zs[:, 1]
        w = zd[:, 0] + 1j * zd[:, 1]
        den = float(np.sum(np.abs(z) ** 2))
        if den <= RANK_TOL * max(1.0, float(np.max(np.abs(src))) ** 2):
            raise DegenerateConfiguration("similarity fit needs at least two distinct points")
        a = np.sum(np.conj(z) * w) / den
        lin = np.array([[a.real, -a.imag], [a.imag, a.real]])
    else:
        ss = math.sqrt(float(np.mean(np.sum(zs * zs, axis=1))))
        sd = math.sqrt(float(np.mean(np.sum(zd * zd, axis=1))))
        if ss < 1e-12:
            raise DegenerateConfiguration("affine fit needs non-coincident source points")
        if sd < 1e-300:
            sd = 1.0
        m = np.hstack([zs / ss, np.ones((len(src), 1))])
        g = m.T @ m
        ev = np.linalg.eigvalsh(g)
        if ev[0] <= RANK_TOL * ev[-1]:
            raise DegenerateConfiguration("affine fit needs non-collinear source points")
        sol = np.linalg.solve(g, m.T @ (zd / sd))  # (3, 2)
        lin = (sd / ss) * sol[:2].T
        # translation part of sol is ~0 because both sides are centred
        cd = cd + sd * sol[2]
    t = cd - lin @ cs
    return Affine2D(lin[0, 0], lin[0, 1], t[0], lin[1, 0], lin[1, 1], t[1])


def residual(t: Affine2D, src, dst) -> float:
    """Sum of squared distances ``||t(src_i) - dst_i||^2``."""
    src, dst = _pair_arrays(src, dst)
    e = t.apply(src) - dst
    return float(np.sum(e * e))


def tre(t: Affine2D, src, tgt):
    """Mean and per-point distance between ``t(src_i)`` and ``tgt_i``."""
    src, tgt = _pair_arrays(src, tgt)
    d = np.linalg.norm(t.apply(src) - tgt, axis=1)
    return float(d.mean()), d


def recovery_pct(tre_initial: float, tre_final: float) -> float:
    if tre_initial > 0:
        return 100.0 * (1.0 - tre_final / tre_initial)
    return float("nan")


# ---------------------------------------------------------------------------
# samples


def default_disp_scale(pair: ImagePair) -> float:
    return np.asarray(pair.source).shape[1] / 4.0


def _pair_seed(aug: AugmentConfig, pair_id: str) -> int:
    return int(aug.seed) * 1_000_003 + zlib.crc32(pair_id.encode())


def build_samples(pairs: Iterable[ImagePair], obs_cfgs: Sequence[ObsConfig], branch,
                  aug: AugmentConfig = AugmentConfig(),
                  pp: PreprocessParams = PreprocessParams()) -> Dict[ObsConfig, Dict[str, tuple]]:
    """Encode every pair plus ``aug.copies`` augmented copies.

    Returns ``{obs_cfg: {pair_id: (X, D)}}`` with ``X`` of shape
    ``(1 + copies, obs_len)`` and ``D`` the matching ``(1 + copies, K, 2)``
    demonstrators in pixels. Copy seeds derive from ``aug.seed`` and the pair
    id, so a pair gets the same copies whatever dataset it sits in.
    """
    obs_cfgs = list(obs_cfgs)
    out: Dict[ObsConfig, Dict[str, tuple]] = {c: {} for c in obs_cfgs}
    for pair in pairs:
        variants = [pair] + augment_pair(pair, aug, _pair_seed(aug, pair.id), gray_mode=pp.gray_mode)
        xs = {c: [] for c in obs_cfgs}
        ds = []
        for v in variants:
            s = preprocess(v.source, branch, pp)
            t = preprocess(v.target, branch, pp)
            for c in obs_cfgs:
                xs[c].append(encode(v, s, t, c).to_vector())
            ds.append(demonstrator(v))
        d = np.stack(ds)
        for c in obs_cfgs:
            out[c][pair.id] = (np.stack(xs[c]), d)
    return out


def _gather(samples: Dict[str, tuple], ids: Sequence[str]):
    if not ids:
        return None
    return (np.concatenate([samples[i][0] for i in ids]),
            np.concatenate([samples[i][1] for i in ids]))


# ---------------------------------------------------------------------------
# registration of one pair


@dataclass
class RegistrationResult:
    transform: Affine2D
    predicted_points: np.ndarray
    tre_initial: float
    tre_final: float
    tre_raw: float


def predict_points(model: TrainedModel, pair: ImagePair, pp: PreprocessParams = PreprocessParams()):
    s = preprocess(pair.source, model.branch, pp)
    t = preprocess(pair.target, model.branch, pp)
    obs = encode(pair, s, t, model.obs_cfg)
    return pair.source_landmarks + model.predict(obs).displacements


def register_pair(model: TrainedModel, pair: ImagePair, transform_model=TransformModel.AFFINE,
                  pp: PreprocessParams = PreprocessParams()) -> RegistrationResult:
    """Predict target landmarks, fit a transform, score it against ground truth."""
    model.check_compatible(K=pair.n_landmarks)
    predicted = predict_points(model, pair, pp)
    t = fit_transform(pair.source_landmarks, predicted, transform_model)
    t0, _ = tre(Affine2D.identity(), pair.source_landmarks, pair.target_landmarks)
    t1, _ = tre(t, pair.source_landmarks, pair.target_landmarks)
    raw = float(np.linalg.norm(predicted - pair.target_landmarks, axis=1).mean())
    return RegistrationResult(t, predicted, t0, t1, raw)


# ---------------------------------------------------------------------------
# reports

COLUMNS = ("id", "category", "C", "S", "branch", "tre_initial", "tre_final", "tre_raw", "recovery_pct")
STAT_COLUMNS = ("tre_initial", "tre_final", "tre_raw", "recovery_pct")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _json_num(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


@dataclass
class EvalReport:
    rows: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add(self, pair: ImagePair, obs_cfg: ObsConfig, branch, res: RegistrationResult):
        self.rows.append({
            "id": pair.id, "category": pair.category.value, "C": obs_cfg.C, "S": obs_cfg.S,
            "branch": Branch(branch).value, "tre_initial": res.tre_initial,
            "tre_final": res.tre_final, "tre_raw": res.tre_raw,
            "recovery_pct": recovery_pct(res.tre_initial, res.tre_final),
        })

    @property
    def per_category(self) -> Dict[str, dict]:
        """Mean and sample standard deviation (n-1) of each numeric column by category."""
        out = {}
        for cat in sorted({r["category"] for r in self.rows}):
            rows = [r for r in self.rows if r["category"] == cat]
            stats = {"n": len(rows)}
            for col in STAT_COLUMNS:
                v = np.array([r[col] for r in rows], dtype=np.float64)
                stats[col] = {"mean": float(v.mean()),
                              "std": float(v.std(ddof=1)) if len(v) > 1 else float("nan")}
            out[cat] = stats
        return out

    def mean(self, col: str = "recovery_pct") -> float:
        return float(np.mean([r[col] for r in self.rows]))

    def to_tsv(self) -> str:
        lines = ["\t".join(COLUMNS)]
        lines += ["\t".join(_fmt(r[c]) for c in COLUMNS) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        cats = {
            k: {c: (v if c == "n" else {s: _json_num(x) for s, x in v.items()}) for c, v in st.items()}
            for k, st in self.per_category.items()
        }
        return {
            "columns": list(COLUMNS),
            "config": self.config,
            "per_pair": [{c: _json_num(r[c]) for c in COLUMNS} for r in self.rows],
            "per_category": cats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = []
        for cat, st in self.per_category.items():
            lines.append(
                f"{cat:<10} n={st['n']:<4} TRE initial {st['tre_initial']['mean']:9.2f}"
                f"±{st['tre_initial']['std']:<8.2f} final {st['tre_final']['mean']:9.2f}"
                f"±{st['tre_final']['std']:<8.2f} recovery {st['recovery_pct']['mean']:6.1f}%"
            )
        return "\n".join(lines)


def config_snapshot(obs_cfg, branch, train_cfg, aug, transform_model, pp, **extra) -> dict:
    snap = {
        "obs": asdict(obs_cfg),
        "branch": Branch(branch).value,
        "train": asdict(train_cfg),
        "augment": asdict(aug),
        "transform_model": TransformModel(transform_model).value,
        "preprocess": json.loads(json.dumps(asdict(pp), default=str)),
    }
    snap["train"]["hidden"] = list(train_cfg.hidden)
    snap.update(extra)
    return json.loads(json.dumps(snap, default=lambda o: getattr(o, "value", str(o))))


# ---------------------------------------------------------------------------
# protocols


def split_train_val(ids: Sequence[str], val_fraction: float, rng) -> Tuple[List[str], List[str]]:
    ids = list(ids)
    if len(ids) < 2:
        return ids, []
    n_val = min(max(int(round(val_fraction * len(ids))), 1), len(ids) - 1)
    order = rng.permutation(len(ids))
    val = sorted(ids[i] for i in order[:n_val])
    tr = sorted(ids[i] for i in order[n_val:])
    return tr, val


def fold_split(ids: Sequence[str], test_id: str, val_fraction: float, rng):
    """Default leave-one-out split: drop ``test_id``, then split train/val."""
    return split_train_val([i for i in ids if i != test_id], val_fraction, rng)


def check_disjoint(test_ids: Iterable[str], train_ids: Iterable[str], val_ids: Iterable[str]):
    test = set(test_ids)
    leaked = test & (set(train_ids) | set(val_ids))
    if leaked:
        raise LeakageError(f"held-out pair(s) {sorted(leaked)} present in training/validation data")


def fit_model(samples: Dict[str, tuple], train_ids, val_ids, obs_cfg: ObsConfig, branch,
              train_cfg: TrainConfig, disp_scale: float, gray_mode="green", log=None):
    tr = _gather(samples, train_ids)
    if tr is None:
        raise DatasetTooSmall("no training pairs")
    val = _gather(samples, val_ids)
    params, hist = train(tr, train_cfg, val if val is not None else (), disp_scale=disp_scale, log=log,
                         obs_cfg=obs_cfg)
    return TrainedModel(params, obs_cfg, Branch(branch).value, disp_scale, getattr(gray_mode, "value", gray_mode)), hist


def _unique_ids(dataset):
    ids = [p.id for p in dataset]
    if len(set(ids)) != len(ids):
        raise DataError("pair ids must be unique")
    return ids


def holdout_evaluation(train_pairs: Sequence[ImagePair], test_pairs: Sequence[ImagePair],
                       obs_cfg: ObsConfig, branch, train_cfg: TrainConfig = TrainConfig(),
                       aug: AugmentConfig = AugmentConfig(),
                       transform_model=TransformModel.AFFINE,
                       pp: PreprocessParams = PreprocessParams(), samples=None,
                       log=None) -> EvalReport:
    """Train once on ``train_pairs`` (split train/val), evaluate on ``test_pairs``."""
    ids = _unique_ids(list(train_pairs) + list(test_pairs))
    if not train_pairs or not test_pairs:
        raise DatasetTooSmall("need at least one training and one test pair")
    if samples is None:
        samples = build_samples(train_pairs, [obs_cfg], branch, aug, pp)[obs_cfg]
    rng = np.random.default_rng(train_cfg.seed)
    tr, val = split_train_val([p.id for p in train_pairs], train_cfg.val_fraction, rng)
    check_disjoint([p.id for p in test_pairs], tr, val)
    model, hist = fit_model(samples, tr, val, obs_cfg, branch, train_cfg,
                            default_disp_scale(train_pairs[0]), pp.gray_mode, log)
    report = EvalReport(config=config_snapshot(obs_cfg, branch, train_cfg, aug, transform_model, pp,
                                               protocol="holdout", n_pairs=len(ids)))
    for pair in test_pairs:
        report.add(pair, obs_cfg, branch, register_pair(model, pair, transform_model, pp))
    return report


def leave_one_out(dataset: Sequence[ImagePair], obs_cfg: ObsConfig, branch,
                  train_cfg: TrainConfig = TrainConfig(), aug: AugmentConfig = AugmentConfig(),
                  transform_model=TransformModel.AFFINE, pp: PreprocessParams = PreprocessParams(),
                  samples=None, splitter: Callable = fold_split, log=None) -> EvalReport:
    """One fold per pair: train without it, register it, append a report row."""
    dataset = list(dataset)
    if len(dataset) < 2:
        raise DatasetTooSmall("leave-one-out needs at least 2 pairs")
    ids = _unique_ids(dataset)
    if samples is None:
        samples = build_samples(dataset, [obs_cfg], branch, aug, pp)[obs_cfg]
    report = EvalReport(config=config_snapshot(obs_cfg, branch, train_cfg, aug, transform_model, pp,
                                               protocol="leave-one-out", n_pairs=len(ids)))
    for fold, pair in enumerate(dataset):
        fold_cfg = replace(train_cfg, seed=train_cfg.seed * 1_000_003 + fold)
        rng = np.random.default_rng(fold_cfg.seed)
        tr, val = splitter(ids, pair.id, train_cfg.val_fraction, rng)
        check_disjoint([pair.id], tr, val)
        model, _ = fit_model(samples, tr, val, obs_cfg, branch, fold_cfg,
                             default_disp_scale(pair), pp.gray_mode)
        report.add(pair, obs_cfg, branch, register_pair(model, pair, transform_model, pp))
        if log is not None:
            r = report.rows[-1]
            log(f"fold {fold + 1}/{len(dataset)} {pair.id}: TRE {r['tre_initial']:.2f} -> "
                f"{r['tre_final']:.2f} ({r['recovery_pct']:.1f}%)")
    return report


def sweep_hyperparams(dataset: Sequence[ImagePair], C_values: Sequence[int], S_values: Sequence[float],
                      branch, train_cfg: TrainConfig = TrainConfig(),
                      aug: AugmentConfig = AugmentConfig(),
                      transform_model=TransformModel.AFFINE,
                      pp: PreprocessParams = PreprocessParams(), log=None,
                      test_pairs: Optional[Sequence[ImagePair]] = None) -> Dict[Tuple[int, float], EvalReport]:
    """One report per ``(C, S)``; preprocessing is shared across the grid.

    Uses leave-one-out over ``dataset``, or a single train/test split when
    ``test_pairs`` is given (``dataset`` then only trains).
    """
    if not C_values or not S_values:
        raise DataError("sweep grids must be non-empty")
    cfgs = [ObsConfig(C, S) for C in C_values for S in S_values]
    samples = build_samples(dataset, cfgs, branch, aug, pp)
    out = {}
    for c in cfgs:
        if test_pairs is None:
            out[(c.C, c.S)] = leave_one_out(dataset, c, branch, train_cfg, aug, transform_model, pp,
                                            samples=samples[c], log=log)
        else:
            out[(c.C, c.S)] = holdout_evaluation(dataset, test_pairs, c, branch, train_cfg, aug,
                                                 transform_model, pp, samples=samples[c])
        if log is not None:
            log(f"C={c.C} S={c.S:g}: mean recovery {out[(c.C, c.S)].mean():.1f}%")
    return out
