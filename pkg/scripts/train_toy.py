"""Overfit the reduced dual network on a handful of synthetic region pairs.

    python scripts/train_toy.py --steps 2000 --csv toy_loss.csv

Labels are a 2x2 area average of the fine region's red channel scaled by 0.8,
so a perfect fit exists.  Prints the dataset MAE every ``--every`` steps.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from tilesal.network import init_dual, reduced_spec
from tilesal.train import TrainSample, evaluate_loss, loss_trace_csv, train


def synthetic_pairs(n: int, seed: int) -> list[TrainSample]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        fine = rng.random((1, 3, 8, 8)).astype(np.float32)
        coarse = rng.random((1, 3, 8, 8)).astype(np.float32)
        label = 0.8 * fine[:, :1].reshape(1, 1, 4, 2, 4, 2).mean(axis=(3, 5))
        out.append(TrainSample(fine, coarse, label.astype(np.float32)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=250)
    ap.add_argument("--csv", type=Path, help="write the per-step loss trace here")
    args = ap.parse_args()

    data = synthetic_pairs(args.samples, args.seed)
    model = init_dual(reduced_spec(), args.seed)
    print(f"step 0: MAE {evaluate_loss(data, model):.5f}")
    trace, state, t0 = [], None, time.perf_counter()
    done = 0
    while done < args.steps:
        chunk = min(args.every, args.steps - done)
        result = train(data, model, epochs=chunk, batch_size=args.samples, seed=args.seed + done,
                       lr=args.lr, state=state)
        model, state = result.model, result.state
        trace.extend(result.trace)
        done += chunk
        print(f"step {state.step}: MAE {evaluate_loss(data, model):.5f}  ({time.perf_counter() - t0:.1f} s)")
    if args.csv:
        args.csv.write_text(loss_trace_csv(trace))
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
