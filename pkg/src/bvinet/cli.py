"""Command line entry point: ``bvinet synth|train|infer|eval|toy-data``.

Exit status: 0 success, 1 invalid input or configuration, 2 runtime or
file-integrity failure.
"""
import argparse
import logging
from pathlib import Path
import sys

import numpy as np

from .config import RunConfig, SynthConfig, load_config
from .errors import BVINetError, ConfigError, DimensionError, GenerationError, ValidationError

log = logging.getLogger("bvinet")

VALIDATION_ERRORS = (ConfigError, DimensionError, ValidationError, GenerationError)


def cmd_synth(args):
    from .data_synthesis import load_pool, load_videos, synth_dataset

    cfg = load_config(args.config, SynthConfig) if args.config else SynthConfig()
    pool = load_pool(args.content_dir) if (args.fill or cfg.fill) == "natural" else None
    written = synth_dataset(load_videos(args.gt_dir), pool, args.out, args.clips, args.frames, args.seed, cfg, args.fill)
    print(f"wrote {len(written)} clips to {args.out}")
    return 0


def cmd_train(args):
    from .pipeline import train

    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, RunConfig, **overrides) if args.config else RunConfig(**overrides)

    def progress(rec):
        if rec["step"] % args.log_every == 0:
            log.info("step %d  l_m %.4f  l_v %.4f  l_c %.4f  total %.4f",
                     rec["step"], rec["l_m"], rec["l_v"], rec["l_c"], rec["total"])

    res = train(cfg, args.data, args.out, resume=args.resume, progress=progress)
    print(f"checkpoint: {res.checkpoint}")
    return 0


def _input_clips(root: Path):
    from .data_synthesis import list_images

    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs and list_images(root):
        return [(root.name, root)]
    out = []
    for d in dirs:
        src = d / "corrupted" if (d / "corrupted").is_dir() else d
        if list_images(src):
            out.append((d.name, src))
    return out


def cmd_infer(args):
    import torch

    from .data_synthesis import read_frames, write_frames
    from .pipeline import blind_inpaint, load_model

    model = load_model(args.checkpoint)
    clips = _input_clips(Path(args.inp))
    if not clips:
        raise ValidationError(f"no input clips under {args.inp}")
    failures = 0
    for name, src in clips:
        try:
            x = torch.as_tensor(read_frames(src), dtype=torch.float32)
            y_hat, m_pred = blind_inpaint(model, x)
        except DimensionError as exc:
            log.error("%s: %s", name, exc)
            failures += 1
            continue
        write_frames(Path(args.out) / name, y_hat.numpy())
        if args.dump_masks:
            write_frames(Path(args.out) / name / "mask", m_pred.numpy())
        log.info("%s: %d frames, predicted coverage %.3f", name, x.shape[0], float(m_pred.mean()))
    return 1 if failures else 0


def cmd_eval(args):
    from .metrics import evaluate

    report = evaluate(args.pred, args.gt, args.flows, args.masks)
    lines = report.to_lines()
    if args.report:
        Path(args.report).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        print("\n".join(lines))
    print(report.table(), file=sys.stderr)
    if not report.clips:
        return 1
    return 1 if report.errors else 0


def cmd_toy(args):
    from .toydata import write_toy_sources

    gt, content = write_toy_sources(args.out, videos=args.videos, frames=args.frames, seed=args.seed)
    print(f"gt videos: {gt}\ncontent images: {content}")
    return 0


class _Parser(argparse.ArgumentParser):
    # bad command lines are validation errors (status 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bvinet", description="Blind video inpainting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build a synthetic corrupted dataset")
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--content-dir", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--clips", type=int, default=10)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--fill", choices=("natural", "noise", "constant"), default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train MPNet and VCNet jointly")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--log-every", type=int, default=25)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="blind inpainting of corrupted clips")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--dump-masks", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR / SSIM / E_warp report")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--flows", default=None)
    e.add_argument("--masks", default=None, help="clip folders holding mask/ (default: next to the ground truth)")
    e.add_argument("--report", default=None, help="write the machine-readable report here instead of stdout")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("toy-data", help="write procedural source videos and content images")
    d.add_argument("--out", required=True)
    d.add_argument("--videos", type=int, default=4)
    d.add_argument("--frames", type=int, default=12)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        log.error("error: %s", exc)
        return 1
    except (BVINetError, OSError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
