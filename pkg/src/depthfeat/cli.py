"""Command-line entry points: train, extract, evaluate, localize, synthesize.

Every command takes a JSON config (falling back to the built-in desk-scale
defaults) plus a handful of overrides, and writes its outputs under --out.
Reports are stable JSON: running a command twice with the same config and
seed reproduces them byte for byte.
"""

import argparse
import json
import os
import sys

from .config import (PAIR_OFFSETS, RunConfig, load_config, save_config,
                     validate_config)
from .errors import DepthFeatError
from .evaluate import (detect_frame, frame_id, restore_bundle,
                       save_synthesis_images, synthesis_report,
                       synthesize_pair, evaluate_matching)
from .featnet import save_keypoints
from .matching import lift_keypoint
from .train import build_sequence, run_training

MANIFEST_HEADER = "# depthfeat-manifest 1"


def _add_config_flags(sub: argparse.ArgumentParser, out_default: str,
                      checkpoint_required: bool) -> None:
    sub.add_argument("--config", metavar="PATH",
                     help="JSON run config (defaults to the built-in "
                          "desk-scale synthetic setup)")
    sub.add_argument("--seed", type=int, metavar="N",
                     help="override the run seed")
    sub.add_argument("--checkpoint", metavar="PATH",
                     required=checkpoint_required,
                     help="model checkpoint file")
    sub.add_argument("--out", metavar="DIR", default=out_default,
                     help=f"output directory (default: {out_default})")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "offset", None) is not None:
        cfg.training.offset = args.offset
    if getattr(args, "alpha", None) is not None:
        cfg.loss.alpha = args.alpha
    if getattr(args, "no_vsm", False):
        cfg.training.use_vsm = False
    return validate_config(cfg)


def _write_report(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_rows(title: str, rows: list[tuple[str, str]]) -> None:
    print(title)
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"  {key:<{width}}  {value}")


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    checkpoint = args.checkpoint or os.path.join(args.out, "checkpoint.npz")
    log_path = os.path.join(args.out, "train_log.txt")
    save_config(os.path.join(args.out, "config.json"), cfg)
    records = run_training(cfg, checkpoint, log_path, progress=print)
    done = [r for r in records if not r.skipped]
    skipped = len(records) - len(done)
    print(f"trained {len(done)} steps ({skipped} skipped) -> {checkpoint}")
    if done:
        print(f"final losses: l_cm={done[-1].l_cm!r} l_v={done[-1].l_v!r} "
              f"total={done[-1].total!r}")
    return 0


def cmd_extract(args) -> int:
    cfg = _resolve_config(args)
    bundle = restore_bundle(cfg, args.checkpoint)
    sequence = build_sequence(cfg.dataset)
    os.makedirs(args.out, exist_ok=True)
    manifest = [MANIFEST_HEADER]
    for frame in sequence.frames:
        keypoints = detect_frame(frame, cfg, bundle)
        # Keep every detection; those over valid depth gain a world point.
        exported = [lift_keypoint(kp, frame.image) or kp for kp in keypoints]
        name = f"{frame_id(frame)}.txt"
        save_keypoints(os.path.join(args.out, name), exported)
        manifest.append(f"{frame_id(frame)} {name}")
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(manifest) + "\n")
    print(f"extracted keypoints for {len(sequence.frames)} images "
          f"-> {args.out}")
    return 0


def _print_evaluation(report: dict) -> None:
    counts = report["counts"]
    print(f"reference images: {counts['reference_images']}  "
          f"test images: {counts['test_images']}  "
          f"repository size: {counts['repository_size']}")
    _print_rows("mean matching accuracy (%)",
                [(f"{k} m", f"{v:.2f}") for k, v in report["mma"].items()])
    _print_rows("random-assignment baseline (%)",
                [(f"{k} m", f"{v:.2f}")
                 for k, v in report["mma_random_baseline"].items()])
    _print_rows("localization accuracy (%)",
                [(k.replace("_", ", "), f"{v:.2f}")
                 for k, v in report["localization"].items()])


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    bundle = restore_bundle(cfg, args.checkpoint)
    report = evaluate_matching(cfg, bundle)
    os.makedirs(args.out, exist_ok=True)
    _write_report(os.path.join(args.out, "evaluation.json"), report)
    _print_evaluation(report)
    return 0


def cmd_localize(args) -> int:
    cfg = _resolve_config(args)
    bundle = restore_bundle(cfg, args.checkpoint)
    full = evaluate_matching(cfg, bundle)
    report = {key: full[key] for key in
              ("report_version", "counts", "localization", "per_image")}
    os.makedirs(args.out, exist_ok=True)
    _write_report(os.path.join(args.out, "localization.json"), report)
    _print_rows("localization accuracy (%)",
                [(k.replace("_", ", "), f"{v:.2f}")
                 for k, v in report["localization"].items()])
    return 0


def cmd_synthesize(args) -> int:
    cfg = _resolve_config(args)
    bundle = restore_bundle(cfg, args.checkpoint)
    art = synthesize_pair(cfg, bundle, args.index)
    os.makedirs(args.out, exist_ok=True)
    names = save_synthesis_images(args.out, art)
    report = synthesis_report(art, args.index, cfg.training.offset)
    _write_report(os.path.join(args.out, "synthesis.json"), report)
    print(f"wrote {', '.join(names)} -> {args.out}")
    print(f"masked MAE {art.masked_mae!r} vs constant-depth baseline "
          f"{art.constant_baseline_mae!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthfeat",
        description="Joint keypoint/descriptor learning on depth images "
                    "with depth-synthesis regularization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(p, "runs/train", checkpoint_required=False)
    p.add_argument("--offset", type=int, choices=PAIR_OFFSETS,
                   help="frame offset between training views")
    p.add_argument("--alpha", type=float, metavar="A",
                   help="synthesis loss weight")
    p.add_argument("--no-vsm", action="store_true",
                   help="disable the view synthesis branch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract",
                       help="export keypoints for every dataset image")
    _add_config_flags(p, "runs/extract", checkpoint_required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate",
                       help="matching and localization metrics on the "
                            "held-out split")
    _add_config_flags(p, "runs/evaluate", checkpoint_required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("localize",
                       help="robust pose accuracy on the held-out split")
    _add_config_flags(p, "runs/localize", checkpoint_required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("synthesize",
                       help="predict one view's coarse depth from another "
                            "and write comparison images")
    _add_config_flags(p, "runs/synthesize", checkpoint_required=True)
    p.add_argument("--offset", type=int, choices=PAIR_OFFSETS,
                   help="frame offset between the pair's views")
    p.add_argument("--index", type=int, default=0, metavar="I",
                   help="first frame of the pair (default: 0)")
    p.set_defaults(func=cmd_synthesize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DepthFeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
