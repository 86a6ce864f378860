#!/usr/bin/env python3
"""Print per-layer parameter tables for the three architectures.

Shows layer name, output shape for a 1x1x224x224 probe, and parameter
count, plus the model total. Useful for eyeballing a width-scaled variant:

    python scripts/print_param_tables.py --width-scale 0.25
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from denobench.models import ARCHITECTURES, build_model, forward, param_count
from denobench.tensor import Tensor


def print_table(arch: str, width_scale: float, size: int) -> None:
    model = build_model(arch, width_scale=width_scale)
    total, per_layer = param_count(model)
    trace: dict[str, tuple[int, ...]] = {}
    forward(model, Tensor(np.zeros((1, 1, size, size), np.float32)), trace=trace)

    print(f"\n{arch} (width_scale={width_scale}, probe {size}x{size})")
    name_w = max(len(n) for n in trace)
    print(f"  {'layer':<{name_w}}  {'output shape':<20}  params")
    for name, shape in trace.items():
        print(f"  {name:<{name_w}}  {str(shape):<20}  {per_layer.get(name, 0):,}")
    print(f"  total: {total:,}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--width-scale", type=float, default=1.0)
    parser.add_argument("--size", type=int, default=224,
                        help="probe image side (must be divisible by 4)")
    parser.add_argument("--arch", choices=ARCHITECTURES, default=None,
                        help="single architecture (default: all three)")
    args = parser.parse_args()

    for arch in [args.arch] if args.arch else list(ARCHITECTURES):
        print_table(arch, args.width_scale, args.size)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
