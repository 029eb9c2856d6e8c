"""Command-line entry point: ``svbrdfgan <subcommand> ...``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the subcommand's long option names (dashes or underscores).
Command-line flags override file values.  Each run writes the fully
resolved configuration next to its outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Set ``SVBRDFGAN_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import glob
import logging
import math
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, align, bench, brdf
from .config import ConfigError, TrainConfig, coerce, dump_config, load_config_file
from .imaging import ImageFormatError, LinearImage, load_image, save_image
from .nn.serialize import CheckpointError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("svbrdfgan")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument plumbing ------------------------------------------------------------

_TRAIN_HELP = {
    "patch_size": "training patch size (multiple of 32)",
    "lr": "generator learning rate",
    "iterations_stage1": "pretraining iterations on the proxy image",
    "iterations_stage2": "fine-tuning iterations when starting from --init",
    "iterations_single_stage": "iterations when training from scratch",
    "nr_steps": "optimiser steps per iteration on encoder + normal/roughness decoder",
    "pdp_steps": "optimiser steps per iteration on the diffuse/specular decoder",
    "lambda_diffuse": "weight of the L1 loss against the guessed diffuse map",
    "intensity": "flash intensity (pi renders a white Lambertian facing the camera to 1)",
    "camera_height": "camera/flash height above the unit sample plane",
    "direction_mode": "light/view direction model: point or distant",
    "optimizer": "adam or sgd",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "d_lr": "discriminator learning rate (default: same as --lr)",
    "base_channels": "width of the first conv layer; deeper layers use 2x, 4x, 8x",
    "seed": "random seed",
    "log_every": "log one loss record every N iterations",
    "checkpoint_every": "write a resumable state file every N iterations",
}


def _add_train_options(p: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        if f.name not in _TRAIN_HELP:
            continue
        default = getattr(defaults, f.name)
        kind = str(f.type)
        conv = (lambda s, k=kind: coerce(s, k))
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=conv, default=default,
                       metavar=f.name.upper(), help=f"{_TRAIN_HELP[f.name]} (default: {default})")


def _train_config(args) -> TrainConfig:
    kw = {f.name: getattr(args, f.name) for f in fields(TrainConfig) if hasattr(args, f.name)}
    return TrainConfig(**kw)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value configuration file (default: none)")


def _add_align_options(p: argparse.ArgumentParser) -> None:
    d = align.AlignParams()
    p.add_argument("--prealigned", action="store_true", help="inputs are already co-registered (default: off)")
    p.add_argument("--no-exposure-norm", dest="exposure_norm", action="store_false",
                   help="disable median-luminance gain matching (default: enabled)")
    p.add_argument("--ratio", type=float, default=d.ratio, help=f"descriptor ratio test (default: {d.ratio})")
    p.add_argument("--inlier-px", type=float, default=d.inlier_px,
                   help=f"RANSAC inlier threshold in pixels (default: {d.inlier_px})")
    p.add_argument("--ransac-iters", type=int, default=d.iters, help=f"RANSAC iterations (default: {d.iters})")
    p.add_argument("--min-inliers", type=int, default=d.min_inliers,
                   help=f"inliers needed to accept an alignment (default: {d.min_inliers})")
    p.add_argument("--align-seed", type=int, default=d.seed, help=f"RANSAC seed (default: {d.seed})")


def _align_params(args) -> align.AlignParams:
    return align.AlignParams(ratio=args.ratio, inlier_px=args.inlier_px, iters=args.ransac_iters,
                             min_inliers=args.min_inliers, seed=args.align_seed,
                             exposure_normalize=args.exposure_norm)


def _expand_inputs(patterns: list[str]) -> list[Path]:
    out: list[Path] = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        out.extend(Path(h) for h in hits)
    if not out:
        raise UsageError(f"no input files matched {' '.join(patterns)!r}")
    return out


def _load_rgb(paths: list[Path]) -> list[LinearImage]:
    return [load_image(p).to_rgb() for p in paths]


def _write_resolved(args, path: Path) -> None:
    values = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "config", "command")}
    values = {k: (" ".join(map(str, v)) if isinstance(v, list) else v) for k, v in values.items()}
    values = {k: (",".join(map(str, v)) if isinstance(v, tuple) else v) for k, v in values.items()}
    dump_config(values, path)


# -- subcommands ------------------------------------------------------------------

def cmd_extract_diffuse(args) -> int:
    paths = _expand_inputs(args.inputs)
    photos = _load_rgb(paths)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    diffuse, homs = align.extract_guessed_diffuse(photos, args.prealigned, _align_params(args))
    save_image(diffuse, out)
    hom_dir = Path(args.homography_dir) if args.homography_dir else out.parent
    hom_dir.mkdir(parents=True, exist_ok=True)
    for p, h in zip(paths, homs):
        if h is not None:
            h.save(hom_dir / f"{p.stem}.homography.txt")
    excluded = [str(p) for p, h in zip(paths, homs) if h is None]
    if excluded:
        log.warning("excluded from the composite: %s", ", ".join(excluded))
    _write_resolved(args, out.with_suffix(".config.txt"))
    print(f"guessed diffuse map written to {out} ({len(paths) - len(excluded)}/{len(paths)} photos used)")
    return EXIT_OK


def _training_inputs(args) -> tuple[list[LinearImage], LinearImage]:
    photos = _load_rgb(_expand_inputs(args.inputs))
    params = _align_params(args)
    if args.guessed:
        guessed = load_image(args.guessed).to_rgb()
    else:
        guessed, homs = align.extract_guessed_diffuse(photos, args.prealigned, params)
    if not args.prealigned and len(photos) > 1:
        if args.guessed:
            _, homs = align.extract_guessed_diffuse(photos, False, params)
        ref = photos[0]
        aligned = [ref]
        for p, h in zip(photos[1:], homs[1:]):
            if h is None:
                continue
            m = align.warp_to_reference(p, h, (ref.width, ref.height))
            # out-of-frame pixels borrow the reference so every crop stays a plausible photo
            aligned.append(LinearImage(np.where(m.valid[..., None], m.image.data, ref.data)))
        photos = aligned
    for p in photos:
        if (p.width, p.height) != (guessed.width, guessed.height):
            raise DataError("photos and guessed diffuse map differ in size")
    return photos, guessed


def _finish_training(args, cfg: TrainConfig, result, out: Path) -> None:
    from .plotting import plot_training_log

    stem = out.with_suffix("")
    result.log.write_csv(stem.with_suffix(".log.csv"))
    if result.log.records:
        plot_training_log(result.log.column("iteration"), result.log.column("d_loss"),
                          result.log.column("g_adv"), result.log.column("g_diffuse"),
                          stem.with_suffix(".losses.png"))
    _write_resolved(args, stem.with_suffix(".config.txt"))


def cmd_pretrain(args) -> int:
    from .trainer import pretrain_stage

    cfg = _train_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg.checkpoint_dir = str(out.parent / (out.stem + "_state"))
    proxy = load_image(args.proxy)
    result = pretrain_stage(cfg, proxy, out_path=out)
    _finish_training(args, cfg, result, out)
    print(f"pretrained checkpoint written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _train_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    iterations = args.iterations
    if iterations == 0 and args.init and not args.resume:
        shutil.copyfile(args.init, out)
        _write_resolved(args, out.with_suffix("").with_suffix(".config.txt"))
        print(f"0 iterations: copied {args.init} to {out}")
        return EXIT_OK
    cfg.checkpoint_dir = str(out.parent / (out.stem + "_state"))
    photos, guessed = _training_inputs(args)
    result = train(cfg, photos, guessed, init_checkpoint=args.init, out_path=out, iterations=iterations,
                   resume_from=args.resume)
    _finish_training(args, cfg, result, out)
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    from .plotting import plot_maps
    from .trainer import estimate

    photo = load_image(args.photo).to_rgb()
    guessed = load_image(args.guessed).to_rgb() if args.guessed else None
    if args.render_with_guessed and guessed is None:
        raise UsageError("--render-with-guessed needs --guessed")
    est = estimate(args.checkpoint, photo, args.intensity, args.camera_height, args.direction_mode,
                   guessed if args.render_with_guessed else None)
    stem = Path(args.out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    brdf.save_maps(est.maps, stem)
    save_image(LinearImage(np.clip(est.rerender.data, 0, 1)), f"{stem}_rerender.png")
    plot_maps(est.maps, f"{stem}_panel.png", photo=photo, rerender=est.rerender, guessed=guessed)
    _write_resolved(args, Path(f"{stem}.config.txt"))
    print(f"maps written with stem {stem}")
    return EXIT_OK


def _parse_center(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected X,Y") from exc
    return x, y


def cmd_render(args) -> int:
    maps = brdf.load_maps(args.maps)
    field = brdf.direction_field(maps.width, maps.height, args.camera_height, center=args.center,
                                 mode=args.direction_mode)
    img = brdf.render(maps, field, args.intensity)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(LinearImage(np.clip(img.data, 0, 1)), out)
    _write_resolved(args, out.with_suffix(".config.txt"))
    print(f"render written to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .plotting import plot_maps

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.fixture == "glossy":
        gt = bench.glossy_fixture(args.size, args.seed)
    else:
        gt = brdf.SvbrdfMaps.constant(args.size, args.size, diffuse=(0.4, 0.4, 0.4), specular=0.3, roughness=0.5)
    offsets = bench.grid_offsets(args.views, args.spread)
    views = bench.synth_views(gt, args.views, offsets, args.camera_height, args.intensity, args.noise,
                              args.seed, args.direction_mode)
    brdf.save_maps(gt, out / "gt")
    for i, v in enumerate(views):
        save_image(v, out / f"view_{i:02d}.png")
    diffuse_render = bench.diffuse_only_render(gt, args.camera_height, args.intensity, args.direction_mode)
    save_image(LinearImage(np.clip(diffuse_render.data, 0, 1)), out / "diffuse_only.png")
    if args.fit_iters > 0:
        fields_ = bench.view_fields(gt.width, gt.height, offsets, args.camera_height, args.direction_mode)
        fit = bench.direct_fit(views, fields_, args.fit_iters, args.fit_lr, args.smoothness, args.intensity,
                               args.seed)
        brdf.save_maps(fit.maps, out / "fit")
        plot_maps(fit.maps, out / "fit_panel.png", photo=views[0])
    plot_maps(gt, out / "gt_panel.png", photo=views[0])
    _write_resolved(args, out / "synth.config.txt")
    print(f"{len(views)} views and ground-truth maps written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .plotting import plot_report

    est = brdf.load_maps(args.estimated)
    gt = brdf.load_maps(args.gt)
    guessed = load_image(args.guessed).to_rgb() if args.guessed else None
    rep = bench.report(est, gt, guessed, args.label)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.table() + "\n")
    (out / "report.csv").write_text(rep.csv_header() + "\n" + rep.csv_row() + "\n")
    if args.diffuse_reference:
        ref = load_image(args.diffuse_reference).to_rgb()
        if guessed is not None:
            (out / "diffuse_reference.csv").write_text(
                "image,rmse_to_diffuse_reference\n"
                f"guessed_diffuse,{bench.rmse(guessed.data, ref.data):.6f}\n")
    plot_report([rep], out / "report.png")
    _write_resolved(args, out / "evaluate.config.txt")
    print(rep.table())
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svbrdfgan", description="SVBRDF estimation from collocated-flash photographs.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("extract-diffuse", help="align photos and min-composite a guessed diffuse map")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", required=True, help="input PNGs or glob patterns")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--homography-dir", default=None, help="where to write per-photo 3x3 matrices (default: next to --out)")
    _add_align_options(p)
    p.set_defaults(func=cmd_extract_diffuse)

    p = sub.add_parser("pretrain", help="first training stage on a single proxy image")
    _add_common(p)
    p.add_argument("--proxy", required=True, help="proxy PNG with global features")
    p.add_argument("--out", required=True, help="output checkpoint")
    _add_train_options(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="adversarial training on a photo set")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", required=True, help="input PNGs or glob patterns (first is the reference)")
    p.add_argument("--guessed", default=None, help="guessed diffuse PNG (default: extracted from the inputs)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--init", default=None, help="stage-1 checkpoint to fine-tune (default: train from scratch)")
    p.add_argument("--resume", default=None, help="resume from a periodic state file (default: none)")
    p.add_argument("--iterations", type=int, default=None,
                   help="override the iteration count (default: stage-2 count with --init, single-stage otherwise)")
    _add_align_options(p)
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="run a trained generator on a full photo")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--photo", required=True, help="input PNG (width and height multiples of 8)")
    p.add_argument("--out-stem", required=True, help="output prefix for <stem>_normal.png etc.")
    p.add_argument("--guessed", default=None, help="guessed diffuse PNG, shown in the panel (default: none)")
    p.add_argument("--render-with-guessed", action="store_true",
                   help="re-render with the guessed diffuse map instead of the generated one (default: off)")
    _add_render_options(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("render", help="render a stored map set")
    _add_common(p)
    p.add_argument("--maps", required=True, help="map stem (<stem>_normal.png ...)")
    p.add_argument("--out", required=True)
    p.add_argument("--center", type=_parse_center, default=(0.0, 0.0),
                   help="camera offset X,Y in plane units (default: 0,0)")
    _add_render_options(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="synthetic ground truth, views, and an optional direct fit")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fixture", choices=("glossy", "constant"), default="glossy", help="ground-truth map set (default: glossy)")
    p.add_argument("--size", type=int, default=128, help="map size in pixels (default: 128)")
    p.add_argument("--views", type=int, default=9, help="number of views on a square grid (default: 9)")
    p.add_argument("--spread", type=float, default=0.3, help="camera grid half-width in plane units (default: 0.3)")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian sensor noise sigma (default: 0)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--fit-iters", type=int, default=0, help="direct per-pixel fit iterations, 0 to skip (default: 0)")
    p.add_argument("--fit-lr", type=float, default=0.02, help="direct fit learning rate (default: 0.02)")
    p.add_argument("--smoothness", type=float, default=1e-3, help="direct fit total-variation weight (default: 0.001)")
    _add_render_options(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="RMSE table of estimated maps against ground truth")
    _add_common(p)
    p.add_argument("--estimated", required=True, help="estimated map stem")
    p.add_argument("--gt", required=True, help="ground-truth map stem")
    p.add_argument("--guessed", default=None, help="guessed diffuse PNG, adds the guessed-diffuse column (default: none)")
    p.add_argument("--diffuse-reference", default=None,
                   help="diffuse-only render PNG; with --guessed, also reports the guessed map's RMSE to it (default: none)")
    p.add_argument("--label", default="ours", help="method label (default: ours)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _add_render_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--intensity", type=float, default=math.pi, help=f"flash intensity (default: {math.pi})")
    p.add_argument("--camera-height", type=float, default=1.0, help="camera height above the plane (default: 1.0)")
    p.add_argument("--direction-mode", choices=("point", "distant"), default="point",
                   help="light/view direction model (default: point)")


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _parse_args(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    choices = parser._subparsers._group_actions[0].choices
    command = next((t for t in argv if t in choices), None)
    cfg_path = _config_path(argv)
    if command is not None and cfg_path is not None:
        sub = choices[command]
        known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        values = load_config_file(cfg_path, {k: "str" for k in known})
        defaults = {}
        for key, text in values.items():
            action = known[key]
            try:
                if action.nargs == 0:
                    defaults[key] = coerce(text, "bool")
                elif action.nargs == "+":
                    defaults[key] = text.split()
                elif action.type is not None:
                    defaults[key] = action.type(text)
                else:
                    defaults[key] = None if text.lower() == "none" else text
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{cfg_path}: bad value for {key!r}: {exc}") from exc
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"{cfg_path}: {key} must be one of {sorted(action.choices)}")
            action.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return args


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SVBRDFGAN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    from .trainer import NonFiniteLossError

    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse_args(parser, argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"svbrdfgan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"svbrdfgan: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ImageFormatError, CheckpointError, align.AlignmentError, FileNotFoundError,
            ValueError) as exc:
        print(f"svbrdfgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
