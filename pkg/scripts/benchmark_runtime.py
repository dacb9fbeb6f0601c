"""Wall-clock and resident memory of full-image prediction, with an empty-network baseline.

    python scripts/benchmark_runtime.py --runs 10 --width 640 --height 480
"""
import argparse

import numpy as np

from tilesal.cost import REFERENCE_SECONDS, measure_runtime
from tilesal.network import TABLE1, init_dual


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=1)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--height", type=int, default=480)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    image = np.random.default_rng(args.seed).random((1, 3, args.height, args.width)).astype(np.float32)
    report = measure_runtime(init_dual(TABLE1, args.seed), image, runs=args.runs, warmup=args.warmup)
    mib = 1024 * 1024
    print(f"{args.width}x{args.height}, {args.runs} runs")
    print(f"  mean      {report.mean_seconds:.4f} s (cv {report.coefficient_of_variation:.1%})")
    print(f"  baseline  {report.baseline_seconds:.4f} s")
    print(f"  net       {report.net_seconds:.4f} s   (reference hardware figure {REFERENCE_SECONDS} s)")
    print(f"  rss peak  {report.total_memory_bytes / mib:.1f} MiB, baseline {report.baseline_memory_bytes / mib:.1f} MiB,"
          f" net {report.net_memory_bytes / mib:.1f} MiB")


if __name__ == "__main__":
    main()
