"""Time the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--scale 1.0] [--repeat 5] [--json out.json]

Each workload runs once on both backends first (this also triggers JIT
compilation) and the outputs are compared before anything is timed.
"""

import argparse
import json
import platform
import sys
import timeit

import numpy as np

from energyref.kernels import get_backend


def workloads(scale: float, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    n_img = max(int(2000 * scale), 1)
    n_gt, n_det = 5 * n_img, 8 * n_img

    def boxes(n):
        xy = rng.uniform(0, 200, (n, 2))
        wh = rng.uniform(5, 60, (n, 2))
        return np.hstack([xy, xy + wh])

    gt_boxes, gt_img = boxes(n_gt), rng.integers(0, n_img, n_gt)
    det_img = rng.integers(0, n_img, n_det)
    det_boxes = boxes(n_det)
    # half the detections sit on a perturbed ground-truth box
    hit = rng.random(n_det) < 0.5
    src = rng.integers(0, n_gt, n_det)
    det_boxes[hit] = gt_boxes[src[hit]] + rng.normal(0, 2, (hit.sum(), 4))
    det_img[hit] = gt_img[src[hit]]
    det_boxes[:, 2:] = np.maximum(det_boxes[:, 2:], det_boxes[:, :2] + 1)

    n_samples = max(int(600_000 * scale), 2)
    n_thumbs = max(int(1500 * scale), 2)
    thumbs = rng.uniform(0, 255, (n_thumbs, 900))
    thumbs[1::7] = thumbs[::7][: len(thumbs[1::7])] + rng.normal(0, 1, (len(thumbs[1::7]), 900))
    return {
        "greedy_match": (det_boxes, det_img, gt_boxes, gt_img, 0.5),
        "average_precision": (rng.random(int(200_000 * scale) + 1) < 0.4, int(80_000 * scale) + 1),
        "trapezoid": (np.linspace(0, 600, n_samples), rng.uniform(4, 8, n_samples)),
        "pairwise_within": (thumbs, 60.0),
        "pairwise_cross": (thumbs[: n_thumbs // 2], thumbs[n_thumbs // 2 :], 60.0),
        "iou_matrix": (boxes(int(800 * scale) + 1), boxes(int(800 * scale) + 1)),
    }


def same(a, b) -> bool:
    if isinstance(a, float):
        return abs(a - b) <= 1e-9 * max(1.0, abs(a))
    return np.array_equal(a, b) if a.dtype != np.float64 else np.allclose(a, b, rtol=1e-12)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--only", nargs="*", help="kernel names to run")
    ap.add_argument("--json", help="write timings here as JSON")
    args = ap.parse_args(argv)

    backends = {"numpy": get_backend("numpy"), "numba": get_backend("numba")}
    results = []
    print(f"python {platform.python_version()}, numpy {np.__version__}, scale {args.scale}")
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, call_args in workloads(args.scale).items():
        if args.only and name not in args.only:
            continue
        outs = {b: getattr(m, name)(*call_args) for b, m in backends.items()}
        if not same(outs["numpy"], outs["numba"]):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        row = {"kernel": name}
        for b, m in backends.items():
            fn = getattr(m, name)
            best = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
            row[f"{b}_ms"] = best * 1e3
        row["speedup"] = row["numpy_ms"] / row["numba_ms"]
        results.append(row)
        print(f"{name:<18} {row['numpy_ms']:>10.2f} {row['numba_ms']:>10.2f} {row['speedup']:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
