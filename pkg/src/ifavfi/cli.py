"""Command-line front end.

    ifavfi interpolate --frame0 a.png --frame1 b.png --t 0.5 --out mid_{t}.png
    ifavfi flow        --frame0 a.png --frame1 b.png --t 0.5 --out flow.png
    ifavfi eval        --dir triplets/ --report report.csv
    ifavfi overfit     --steps 200 --curve curve.csv --save-weights tiny.emav
    ifavfi selftest    --level fast
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import io
from . import metrics as mt
from . import selftest
from .backbone import VARIANTS, ModelConfig
from .data import translation_triplet
from .synthesis import FeatureCache, FrameInterpolator, interpolate
from .training import train_overfit

log = logging.getLogger("ifavfi")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING = 2
EXIT_SIZE = 3
EXIT_BAD_T = 4

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _configure_threads() -> None:
    threads = os.environ.get("IFA_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))


def build_model(args) -> FrameInterpolator:
    if args.weights:
        if not Path(args.weights).is_file():
            raise CliError(EXIT_MISSING, f"weights file not found: {args.weights}")
        model = io.load_weights(args.weights)
        if args.config and model.cfg.variant != args.config:
            raise CliError(
                EXIT_FAILURE, f"--config {args.config} does not match weights variant {model.cfg.variant}"
            )
    else:
        model = FrameInterpolator(ModelConfig.named(args.config or "small"), seed=args.seed)
    return model.eval()


def _read_pair(args) -> tuple[torch.Tensor, torch.Tensor]:
    for p in (args.frame0, args.frame1):
        if not Path(p).is_file():
            raise CliError(EXIT_MISSING, f"input frame not found: {p}")
    i0, i1 = io.read_png(args.frame0), io.read_png(args.frame1)
    if i0.shape != i1.shape:
        raise CliError(
            EXIT_SIZE, f"frame sizes differ: {i0.shape[-1]}x{i0.shape[-2]} vs {i1.shape[-1]}x{i1.shape[-2]}"
        )
    return i0, i1


def _check_times(ts) -> list[float]:
    for t in ts:
        if not (0.0 < t < 1.0):
            raise CliError(EXIT_BAD_T, f"timestep {t} is outside (0, 1)")
    return list(ts)


def _format_out(pattern: str, t: float, n_times: int) -> Path:
    if "{t}" in pattern:
        return Path(pattern.replace("{t}", f"{t:g}"))
    if n_times > 1:
        raise CliError(EXIT_FAILURE, "--out needs a {t} placeholder when several --t values are given")
    return Path(pattern)


def cmd_interpolate(args) -> int:
    times = _check_times(args.t)
    i0, i1 = _read_pair(args)
    model = build_model(args)
    cache = FeatureCache()
    with torch.no_grad():
        for t in times:
            out, _ = interpolate(i0, i1, t, model, cache)
            path = _format_out(args.out, t, len(times))
            path.parent.mkdir(parents=True, exist_ok=True)
            io.write_png(path, out)
            print(path)
    return EXIT_OK


def cmd_flow(args) -> int:
    (t,) = _check_times([args.t])
    i0, i1 = _read_pair(args)
    model = build_model(args)
    with torch.no_grad():
        _, diag = interpolate(i0, i1, t, model)
    flow = diag.flow[0, 2:4].numpy()  # F_{t->1}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_png(out, io.flow_to_color(flow))
    io.write_flow(out.with_suffix(".flo"), flow)
    print(out)
    return EXIT_OK


def _find_frame(folder: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        p = folder / f"{stem}{suffix}"
        if p.is_file():
            return p
    return None


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def evaluate_folder(root: Path, model: FrameInterpolator) -> tuple[list[tuple[str, float, float, float]], list[str]]:
    """Rows (name, psnr, ssim, ie) sorted by name, plus the skipped names."""
    rows, skipped = [], []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = [_find_frame(sub, s) for s in ("im1", "im2", "im3")]
        if any(f is None for f in frames):
            log.warning("skipping %s: missing im1/im2/im3", sub.name)
            skipped.append(sub.name)
            continue
        i0, gt, i1 = (io.read_png(f) for f in frames)
        if not (i0.shape == gt.shape == i1.shape):
            log.warning("skipping %s: frame sizes differ", sub.name)
            skipped.append(sub.name)
            continue
        with torch.no_grad():
            out, _ = interpolate(i0, i1, 0.5, model)
        # score what would be written to disk
        pred, ref = (io.quantize(x).astype(np.float64).transpose(2, 0, 1) / 255.0 for x in (out, gt))
        rows.append((sub.name, mt.psnr(pred, ref), mt.ssim(pred, ref), mt.interpolation_error(pred, ref)))
    return rows, skipped


def write_report(path: Path, rows, skipped) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "psnr", "ssim", "ie"])
        for name, p, s, e in rows:
            w.writerow([name, _fmt(p), _fmt(s), _fmt(e)])
        if rows:
            means = [float(np.mean([r[k] for r in rows])) for k in (1, 2, 3)]
            w.writerow(["mean", *(_fmt(m) for m in means)])
        w.writerow([f"# evaluated={len(rows)} skipped={len(skipped)}"])


def cmd_eval(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise CliError(EXIT_MISSING, f"triplet folder not found: {root}")
    model = build_model(args)
    rows, skipped = evaluate_folder(root, model)
    write_report(Path(args.report), rows, skipped)
    print(f"evaluated {len(rows)} triplets, skipped {len(skipped)} -> {args.report}")
    return EXIT_OK


def cmd_overfit(args) -> int:
    trip = translation_triplet(size=args.size, shift=args.shift, t=args.t, seed=args.data_seed)
    model = FrameInterpolator(ModelConfig.named(args.config or "tiny"), seed=args.seed)
    start = time.perf_counter()
    curve = train_overfit(model, trip, args.steps, peak_lr=args.lr, warmup=args.warmup)
    log.info("%d steps in %.1fs", args.steps, time.perf_counter() - start)
    if args.curve:
        Path(args.curve).parent.mkdir(parents=True, exist_ok=True)
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "total", "rec", "warp1", "warp2"])
            for row in curve:
                w.writerow([row.step, *(f"{v:.8g}" for v in row[1:])])
    if args.save_weights:
        io.save_weights(model, args.save_weights)
    if curve:
        print(f"loss {curve[0].total:.4f} -> {curve[-1].total:.4f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    start = time.perf_counter()
    failed = selftest.run(args.level, args.inject_fault)
    print(f"{'FAILED: ' + ', '.join(failed) if failed else 'all groups passed'} ({time.perf_counter() - start:.1f}s)")
    return EXIT_FAILURE if failed else EXIT_OK


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", choices=sorted(VARIANTS), default=None, help="model variant (default: small, or from --weights)")
    p.add_argument("--weights", default=None, help="EMAV weights file; random init when omitted")
    p.add_argument("--seed", type=int, default=0, help="init seed when no weights are given")


def _pair_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifavfi", description="Inter-frame attention frame interpolation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("interpolate", help="synthesize frames between two inputs")
    _pair_args(p)
    p.add_argument("--t", type=float, action="append", required=True, help="timestep in (0, 1); repeatable")
    p.add_argument("--out", default="out_{t}.png", help="output path; {t} is replaced by the timestep")
    _model_args(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("flow", help="visualize the estimated flow F_{t->1}")
    _pair_args(p)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--out", required=True, help="colour-coded PNG; raw .flo written alongside")
    _model_args(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("eval", help="PSNR/SSIM/IE over a folder of im1/im2/im3 triplets")
    p.add_argument("--dir", required=True)
    p.add_argument("--report", required=True)
    _model_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overfit", help="fit one synthetic translation triplet")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--shift", type=int, default=4)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--curve", default=None, help="CSV loss curve (step,total,rec,warp1,warp2)")
    p.add_argument("--save-weights", default=None)
    p.add_argument("--config", choices=sorted(VARIANTS), default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_overfit)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--level", choices=["fast", "full"], default="fast")
    p.add_argument("--inject-fault", choices=["softmax"], default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _configure_threads()
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except io.WeightsFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
