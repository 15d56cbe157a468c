"""Command-line interface.

Subcommands: ``synth``, ``preprocess``, ``train``, ``register`` and
``evaluate``. Every command accepts ``--seed``; outputs go below ``--out``,
which defaults to ``$IMITREG_OUT`` or ``./imitreg-out``.

Exit status: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files, shape problems), 4 numeric failure (singular or
degenerate geometry).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import AugmentConfig, SynthConfig, synth_dataset, warp_image
from .core import Affine2D, ImagePair
from .errors import ConfigError, DataError, IoFailure, NumericError
from .imageops import (Branch, GrayMode, PreprocessParams, downsample4,
                       frangi_vesselness, guided_filter, preprocess, standardize, to_gray)
from .io_fire import (ColumnOrder, Origin, load_dataset, load_image, load_points, save_image,
                      save_points, save_transform, write_pair)
from .model import TrainConfig, TrainedModel, load_checkpoint, save_checkpoint
from .observation import ObsConfig, encode
from .registration import (TransformModel, build_samples, check_disjoint, config_snapshot,
                           default_disp_scale, fit_model, fit_transform, split_train_val,
                           sweep_hyperparams)

log = logging.getLogger("imitreg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "IMITREG_OUT"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "imitreg-out"))


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands (callable from Python as well)


def cmd_synth(n_pairs: int, synth_cfg: SynthConfig, out_dir) -> Path:
    """Write ``n_pairs`` synthetic pairs in the FIRE layout plus ``manifest.json``."""
    if n_pairs < 0:
        raise ConfigError("n_pairs must be >= 0")
    out = Path(out_dir)
    for sub in ("Images", "Ground Truth"):
        try:
            (out / sub).mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create {out / sub}: {e}") from e
    pairs = synth_dataset(n_pairs, synth_cfg)
    for p in pairs:
        write_pair(p, out)
    manifest = {
        "generator": "imitreg synth",
        "version": __version__,
        "n_pairs": n_pairs,
        "ids": [p.id for p in pairs],
        "synth": json.loads(json.dumps(asdict(synth_cfg))),
    }
    _write_text(out / "manifest.json", _dumps(manifest))
    return out


def _debug_stages(img, params: PreprocessParams):
    """Intermediate images of the guided-Frangi branch, all in [-1, 1]."""
    g = standardize(to_gray(img, params.gray_mode))
    small = downsample4(g)
    guided = guided_filter(small, small, params.guided)
    vessel = frangi_vesselness(guided, params.frangi)
    return {"gray": g, "down4": standardize(small), "guided": standardize(guided),
            "vesselness": 2.0 * vessel - 1.0}


def cmd_preprocess(input_path, branch, params: PreprocessParams, out_path, debug: bool = False) -> dict:
    """Write the preprocessed image and return min/max/mean statistics."""
    img = load_image(input_path)
    out = preprocess(img, branch, params)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, out_path)
    if debug:
        for name, a in _debug_stages(img, params).items():
            save_image(a, out_path.with_name(f"{out_path.stem}.{name}.pgm"))
    return {"min": float(out.min()), "max": float(out.max()), "mean": float(out.mean()),
            "shape": list(out.shape)}


def _dataset_info(pairs) -> dict:
    h = hashlib.sha256()
    for p in pairs:
        h.update(p.id.encode())
        h.update(np.ascontiguousarray(p.source_landmarks).tobytes())
        h.update(np.ascontiguousarray(p.target_landmarks).tobytes())
    return {"n_pairs": len(pairs), "ids": [p.id for p in pairs], "landmarks_sha256": h.hexdigest()}


def cmd_train(dataset_dir, obs_cfg: ObsConfig, branch, train_cfg: TrainConfig, aug: AugmentConfig,
              out_checkpoint, pp: PreprocessParams = PreprocessParams(), layout_kw=None):
    """Train on every pair of a dataset (train/val split by pair) and write a checkpoint."""
    pairs = load_dataset(dataset_dir, **(layout_kw or {}))
    if not pairs:
        raise DataError(f"no pairs found in {dataset_dir}")
    samples = build_samples(pairs, [obs_cfg], branch, aug, pp)[obs_cfg]
    rng = np.random.default_rng(train_cfg.seed)
    tr, val = split_train_val([p.id for p in pairs], train_cfg.val_fraction, rng)
    check_disjoint([], tr, val)

    def progress(epoch, tl, vl):
        log.info("epoch %d train %.6g val %.6g", epoch, tl, vl)

    model, hist = fit_model(samples, tr, val, obs_cfg, branch, train_cfg,
                            default_disp_scale(pairs[0]), pp.gray_mode, progress)
    extra = {"train": config_snapshot(obs_cfg, branch, train_cfg, aug, TransformModel.AFFINE, pp,
                                      dataset=_dataset_info(pairs), train_ids=tr, val_ids=val),
             "history": {"train_loss": hist.train_loss, "val_loss": hist.val_loss,
                         "best_epoch": hist.best_epoch}}
    save_checkpoint(model, out_checkpoint, extra=extra)
    return model, hist


def _checkerboard(a, b, tile: int = 32) -> np.ndarray:
    yy, xx = np.indices(a.shape)
    return np.where(((yy // tile) + (xx // tile)) % 2 == 0, a, b)


def _patch_mosaic(patches) -> np.ndarray:
    """Source patches on the top row, target patches below, one column per landmark."""
    K, _, C, _ = patches.shape
    canvas = np.full((2 * C + 3, K * (C + 1) + 1), -1.0)
    for k in range(K):
        for side in range(2):
            y0 = 1 + side * (C + 1)
            x0 = 1 + k * (C + 1)
            canvas[y0:y0 + C, x0:x0 + C] = patches[k, side]
    return canvas


def cmd_register(checkpoint, source_img, target_img, source_points, out_dir,
                 transform_model=TransformModel.AFFINE, debug: bool = False) -> dict:
    """Predict target points, fit a transform and warp the source into target space.

    Writes ``transform.txt`` (``a11 a12 tx a21 a22 ty``), ``predicted_points.txt``
    (network output), ``transformed_points.txt`` (fitted transform applied to the
    source points) and ``warped.pgm``.
    """
    model: TrainedModel = load_checkpoint(checkpoint)
    pts = load_points(source_points)
    src_img = load_image(source_img)
    tgt_img = load_image(target_img)
    model.check_compatible(K=len(pts))
    pp = PreprocessParams(gray_mode=GrayMode(model.gray_mode))
    s = preprocess(src_img, model.branch, pp)
    t = preprocess(tgt_img, model.branch, pp)
    pair = ImagePair("query", s, t, pts, pts)
    obs = encode(pair, s, t, model.obs_cfg)
    predicted = pts + model.predict(obs).displacements
    transform = fit_transform(pts, predicted, transform_model)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_transform(transform, out / "transform.txt")
    save_points(predicted, out / "predicted_points.txt")
    save_points(transform.apply(pts), out / "transformed_points.txt")
    gs = standardize(to_gray(src_img, pp.gray_mode))
    gt = standardize(to_gray(tgt_img, pp.gray_mode))
    warped = warp_image(gs, transform, fill=-1.0, out_shape=gt.shape)
    save_image(warped, out / "warped.pgm")
    if debug:
        save_image(s, out / "debug_source_preprocessed.pgm")
        save_image(t, out / "debug_target_preprocessed.pgm")
        before = warp_image(gs, Affine2D.identity(), fill=-1.0, out_shape=gt.shape)
        save_image(_checkerboard(before, gt), out / "debug_checkerboard_before.pgm")
        save_image(_checkerboard(warped, gt), out / "debug_checkerboard_after.pgm")
        save_image(_patch_mosaic(obs.patches), out / "debug_patches.pgm")
    return {"transform": list(transform.params), "n_points": len(pts)}


def _report_name(C, S) -> str:
    return f"report_C{C}_S{S:g}"


def cmd_evaluate(dataset_dir, C_values: Sequence[int], S_values: Sequence[float], branch,
                 train_cfg: TrainConfig, aug: AugmentConfig, out_dir,
                 transform_model=TransformModel.AFFINE, pp: PreprocessParams = PreprocessParams(),
                 protocol: str = "loo", test_fraction: float = 0.2, layout_kw=None):
    """Run leave-one-out (or one train/test split) for every ``(C, S)`` and write reports.

    A single configuration writes ``report.tsv`` and ``report.json``; a grid
    writes one ``report_C<C>_S<S>`` pair per configuration plus ``sweep.tsv``.
    """
    pairs = load_dataset(dataset_dir, **(layout_kw or {}))
    if protocol not in ("loo", "holdout"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    out = Path(out_dir)
    extra = {"dataset": _dataset_info(pairs), "protocol": protocol}
    if protocol == "holdout":
        if not 0 < test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        n_test = min(max(int(round(test_fraction * len(pairs))), 1), len(pairs) - 1)
        train_pairs, test_pairs = pairs[:-n_test], pairs[-n_test:]
        extra["test_fraction"] = test_fraction
    else:
        train_pairs, test_pairs = pairs, None
    progress = lambda msg: log.info("%s", msg)  # noqa: E731
    reports = sweep_hyperparams(train_pairs, list(C_values), list(S_values), branch, train_cfg, aug,
                                transform_model, pp, progress, test_pairs=test_pairs)
    single = len(reports) == 1
    rows = ["C\tS\textent\tn\tmean_recovery_pct\tmean_tre_initial\tmean_tre_final"]
    for (C, S), rep in reports.items():
        rep.config.update(extra)
        name = "report" if single else _report_name(C, S)
        _write_text(out / f"{name}.tsv", rep.to_tsv())
        _write_text(out / f"{name}.json", rep.to_json())
        rows.append(f"{C}\t{S!r}\t{(C - 1) * S!r}\t{len(rep.rows)}\t{rep.mean()!r}\t"
                    f"{rep.mean('tre_initial')!r}\t{rep.mean('tre_final')!r}")
    if not single:
        _write_text(out / "sweep.tsv", "\n".join(rows) + "\n")
    return reports


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--out", type=Path, default=None,
                   help=f"output directory or file (default ${OUT_ENV} or ./imitreg-out)")
    p.add_argument("--debug", action="store_true", help="write intermediate debug images")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_layout(p):
    p.add_argument("--origin", choices=[o.value for o in Origin], default="zero",
                   help="landmark coordinate origin in ground-truth files")
    p.add_argument("--column-order", choices=[c.value for c in ColumnOrder], default="source-first",
                   help="which point comes first on each ground-truth row")


def _add_preprocess(p):
    p.add_argument("--branch", choices=[b.value for b in Branch], default="guided-frangi",
                   help="preprocessing operator (default guided-frangi)")
    p.add_argument("--gray-mode", choices=[g.value for g in GrayMode], default="green")


def _add_training(p):
    t = TrainConfig()
    a = AugmentConfig()
    g = p.add_argument_group("training")
    g.add_argument("--arch", choices=["flat", "corr"], default=t.arch, help="network architecture")
    g.add_argument("--hidden", type=int, nargs="*", default=list(t.hidden), help="trunk widths")
    g.add_argument("--epochs", type=int, default=t.epochs)
    g.add_argument("--batch-size", type=int, default=t.batch_size)
    g.add_argument("--lr", type=float, default=t.lr)
    g.add_argument("--patience", type=int, default=t.patience)
    g.add_argument("--w-translation", type=float, default=t.w_translation)
    g.add_argument("--w-displacement", type=float, default=t.w_displacement)
    g.add_argument("--val-fraction", type=float, default=t.val_fraction)
    g.add_argument("--max-shift", type=int, default=t.max_shift,
                   help="correlation search radius in samples (corr architecture)")
    g = p.add_argument_group("augmentation")
    g.add_argument("--copies", type=int, default=a.copies)
    g.add_argument("--aug-brightness", type=float, default=a.brightness)
    g.add_argument("--aug-contrast", type=float, nargs=2, default=list(a.contrast))
    g.add_argument("--aug-rot", type=float, default=a.rot_deg, help="rotation range in degrees")
    g.add_argument("--aug-scale", type=float, nargs=2, default=list(a.scale))
    g.add_argument("--aug-shear", type=float, default=a.shear)
    g.add_argument("--aug-trans", type=float, default=a.trans, help="translation range in pixels")


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       w_translation=args.w_translation, w_displacement=args.w_displacement,
                       val_fraction=args.val_fraction, patience=args.patience,
                       hidden=tuple(args.hidden), seed=args.seed, arch=args.arch,
                       max_shift=args.max_shift)


def _aug_cfg(args) -> AugmentConfig:
    return AugmentConfig(copies=args.copies, brightness=args.aug_brightness,
                         contrast=tuple(args.aug_contrast), rot_deg=args.aug_rot,
                         scale=tuple(args.aug_scale), shear=args.aug_shear, trans=args.aug_trans,
                         seed=args.seed)


def _layout_kw(args) -> dict:
    return {"coordinate_origin": Origin(args.origin), "column_order": ColumnOrder(args.column_order)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imitreg", description="Retinal image registration by imitating landmark displacements.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset in the FIRE layout")
    _add_common(s)
    d = SynthConfig()
    s.add_argument("--n-pairs", type=int, default=20)
    s.add_argument("--size", type=int, default=d.size)
    s.add_argument("--n-landmarks", type=int, default=d.n_landmarks)
    s.add_argument("--n-vessels", type=int, default=d.n_vessels)
    s.add_argument("--trans", type=float, default=d.trans, help="translation range in pixels")
    s.add_argument("--rot-deg", type=float, default=d.rot_deg)
    s.add_argument("--noise", type=float, default=d.noise)

    s = sub.add_parser("preprocess", help="apply a preprocessing branch to one image")
    _add_common(s)
    _add_preprocess(s)
    s.add_argument("input", type=Path)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    _add_common(s)
    _add_preprocess(s)
    _add_layout(s)
    _add_training(s)
    s.add_argument("dataset", type=Path)
    s.add_argument("--C", type=int, default=ObsConfig().C, help="patch side in samples")
    s.add_argument("--S", type=float, default=ObsConfig().S, help="sample spacing in pixels")

    s = sub.add_parser("register", help="register one image pair with a trained checkpoint")
    _add_common(s)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--source", type=Path, required=True)
    s.add_argument("--target", type=Path, required=True)
    s.add_argument("--points", type=Path, required=True, help="source landmarks, one 'x y' per line")
    s.add_argument("--transform-model", choices=[m.value for m in TransformModel], default="affine")

    s = sub.add_parser("evaluate", help="leave-one-out evaluation, optionally over a C x S grid")
    _add_common(s)
    _add_preprocess(s)
    _add_layout(s)
    _add_training(s)
    s.add_argument("dataset", type=Path)
    s.add_argument("--C", type=int, nargs="+", default=[ObsConfig().C])
    s.add_argument("--S", type=float, nargs="+", default=[ObsConfig().S])
    s.add_argument("--transform-model", choices=[m.value for m in TransformModel], default="affine")
    s.add_argument("--protocol", choices=["loo", "holdout"], default="loo")
    s.add_argument("--test-fraction", type=float, default=0.2, help="holdout share (holdout protocol)")
    return parser


def _run(args) -> None:
    out = args.out if args.out is not None else default_out_dir()
    if args.command == "synth":
        cfg = SynthConfig(size=args.size, n_landmarks=args.n_landmarks, n_vessels=args.n_vessels,
                          trans=args.trans, rot_deg=args.rot_deg, noise=args.noise, seed=args.seed)
        path = cmd_synth(args.n_pairs, cfg, out)
        print(f"wrote {args.n_pairs} synthetic pairs to {path}")
    elif args.command == "preprocess":
        pp = PreprocessParams(gray_mode=GrayMode(args.gray_mode))
        target = out if out.suffix else out / f"{args.input.stem}_{args.branch}.pgm"
        st = cmd_preprocess(args.input, args.branch, pp, target, args.debug)
        print(f"{target}: {st['shape'][1]}x{st['shape'][0]} min {st['min']:.4f} "
              f"max {st['max']:.4f} mean {st['mean']:.4f}")
    elif args.command == "train":
        target = out if out.suffix else out / "model.npz"
        target.parent.mkdir(parents=True, exist_ok=True)
        pp = PreprocessParams(gray_mode=GrayMode(args.gray_mode))
        _, hist = cmd_train(args.dataset, ObsConfig(args.C, args.S), args.branch, _train_cfg(args),
                            _aug_cfg(args), target, pp, _layout_kw(args))
        print("epoch\ttrain_loss\tval_loss")
        for i, (tl, vl) in enumerate(zip(hist.train_loss, hist.val_loss)):
            print(f"{i}\t{tl:.6g}\t{vl:.6g}")
        print(f"best epoch {hist.best_epoch}; checkpoint written to {target}")
    elif args.command == "register":
        res = cmd_register(args.checkpoint, args.source, args.target, args.points, out,
                           args.transform_model, args.debug)
        print("transform " + " ".join(f"{v:.6g}" for v in res["transform"]))
        print(f"outputs written to {out}")
    elif args.command == "evaluate":
        pp = PreprocessParams(gray_mode=GrayMode(args.gray_mode))
        reports = cmd_evaluate(args.dataset, args.C, args.S, args.branch, _train_cfg(args),
                               _aug_cfg(args), out, args.transform_model, pp, args.protocol,
                               args.test_fraction, _layout_kw(args))
        for (C, S), rep in reports.items():
            print(f"C={C} S={S:g} extent={(C - 1) * S:g} px  mean recovery {rep.mean():.1f}%")
            print(rep.summary())
        print(f"reports written to {out}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _run(args)
    except ConfigError as e:
        print(f"imitreg: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"imitreg: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"imitreg: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
