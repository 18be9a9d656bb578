"""Time the compiled kernels against the numpy fallback on 1024x768 inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is first checked for identical output on both backends.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from imarker import imgcore
from imarker._kernels import ckernels, pykernels


def _inputs(seed: int = 0):
    rng = np.random.default_rng(seed)
    h, w = 768, 1024
    gray = rng.integers(0, 256, (h, w), dtype=np.uint8)
    rgb = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    binary = np.zeros((h, w), dtype=np.uint8)
    for _ in range(60):
        x, y = rng.integers(0, w - 60), rng.integers(0, h - 60)
        s = int(rng.integers(12, 60))
        binary[y:y + s, x:x + s] = 255
    hinv = np.array([[1.01, 0.02, -3.0], [-0.015, 0.99, 2.0], [1e-5, -2e-5, 1.0]])
    hsv = pykernels.rgb_to_hsv(rgb)
    return {
        "min_filter": (gray, 1, 1),
        "convolve_separable": (gray, imgcore.gaussian_kernel(1.0)),
        "rgb_to_gray": (rgb,),
        "rgb_to_hsv": (rgb,),
        "hsv_mask": (*hsv, 90.0, 150.0, 0.3, 1.0, 0.49, 1.0),
        "fast_scores": (gray, 20, 9),
        "warp_bilinear": (gray, hinv, h, w),
        "trace_components": (binary, 10),
    }


def _same(a, b) -> bool:
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rows = []
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  match")
    for name, args_ in _inputs().items():
        fp, fc = getattr(pykernels, name), getattr(ckernels, name)
        match = _same(fp(*args_), fc(*args_))
        tp = min(timeit.repeat(lambda: fp(*args_), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fc(*args_), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "python_ms": tp, "cython_ms": tc, "match": match})
        print(f"{name:<20}{tp:12.2f}{tc:12.2f}{tp / tc:9.1f}x  {'yes' if match else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["match"] for r in rows) else 2


if __name__ == "__main__":
    raise SystemExit(main())
