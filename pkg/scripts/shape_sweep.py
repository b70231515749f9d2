"""Forward-pass shapes, parameter counts and timings for each model variant.

    python scripts/shape_sweep.py --sizes 32 64 96
"""

import argparse
import time

import torch

from ifavfi.backbone import VARIANTS, ModelConfig
from ifavfi.synthesis import FrameInterpolator, interpolate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 96])
    ap.add_argument("--variants", nargs="+", default=sorted(VARIANTS))
    args = ap.parse_args()

    gen = torch.Generator().manual_seed(0)
    print("variant  params     size   out shape          seconds")
    for name in args.variants:
        model = FrameInterpolator(ModelConfig.named(name), seed=0).eval()
        n_params = sum(p.numel() for p in model.parameters())
        for s in args.sizes:
            i0, i1 = torch.rand(2, 1, 3, s, s, generator=gen)
            start = time.perf_counter()
            with torch.no_grad():
                out, _ = interpolate(i0, i1, 0.5, model)
            print(f"{name:8s} {n_params:>9,d}  {s:>4d}   {str(tuple(out.shape)):18s} {time.perf_counter() - start:.3f}")


if __name__ == "__main__":
    main()
