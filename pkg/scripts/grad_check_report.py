"""Per-coordinate gradient check of the tiny model's total loss, with error statistics.

    python scripts/grad_check_report.py --dtype float32 --eps 1e-3
    python scripts/grad_check_report.py --dtype float64 --eps 1e-6
"""

import argparse
import time

import numpy as np
import torch

from ifavfi import tensor_core as tc
from ifavfi import training as tr
from ifavfi.backbone import ModelConfig
from ifavfi.data import translation_triplet
from ifavfi.synthesis import FrameInterpolator


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    ap.add_argument("--eps", type=float, default=1e-3)
    ap.add_argument("--coords", type=int, default=32)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--tol", type=float, default=5e-3)
    args = ap.parse_args()

    dtype = getattr(torch, args.dtype)
    model = FrameInterpolator(ModelConfig.named("tiny"), seed=0).to(dtype)
    trip = translation_triplet(size=args.size, shift=2)
    i0, gt, i1 = (x.to(dtype) for x in (trip.i0, trip.gt, trip.i1))
    names, params = zip(*model.named_parameters())

    def f():
        out = model(i0, i1, 0.5)
        return tr.total_loss(out.stage_fused, out.image, gt).total

    tc.zero_grad(params)
    tc.backward(f())
    grads = [p.grad.detach().clone().view(-1) for p in params]

    rng = tc.SeededRng(0)
    rows = []
    start = time.perf_counter()
    with torch.no_grad():
        for name, p, g in zip(names, params, grads):
            flat = p.data.view(-1)
            for idx in rng.choice(flat.numel(), min(args.coords, flat.numel())):
                orig = flat[idx].item()
                flat[idx] = orig + args.eps
                up = f().item()
                flat[idx] = orig - args.eps
                down = f().item()
                flat[idx] = orig
                num = (up - down) / (2 * args.eps)
                a = g[idx].item()
                rows.append((name, a, num, abs(a - num) / max(abs(a), abs(num), 1e-6)))
    elapsed = time.perf_counter() - start

    err = np.array([r[3] for r in rows])
    mag = np.array([abs(r[1]) for r in rows])
    bad = err > args.tol
    print(f"{args.dtype} eps={args.eps:g}: {len(rows)} coordinates in {elapsed:.0f}s")
    print(f"rel. error quantiles 50/90/99/max: " + " ".join(f"{q:.2e}" for q in np.quantile(err, [0.5, 0.9, 0.99, 1.0])))
    print(f"above {args.tol:g}: {bad.sum()} ({bad.mean():.1%}); median |grad| there {np.median(mag[bad]) if bad.any() else 0:.2e}, elsewhere {np.median(mag[~bad]):.2e}")
    ulp = float(torch.finfo(dtype).eps) * abs(f().item())
    print(f"loss {f().item():.4f}; finite-difference noise floor ~ {ulp / (2 * args.eps):.1e}")
    for name, a, num, e in sorted(rows, key=lambda r: -r[3])[:8]:
        print(f"  {name:40s} analytic {a:+.3e} numeric {num:+.3e} rel {e:.2e}")


if __name__ == "__main__":
    main()
