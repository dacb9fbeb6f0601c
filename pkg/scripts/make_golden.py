"""Regenerate tests/data/golden.npz from the independent reference code in tests/oracles.py.

Run once when the golden fixtures change:  python scripts/make_golden.py
"""
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import forward_reference, pipeline_reference, spec_rows  # noqa: E402
from tilesal.network import TABLE1, init_dual, init_weights, reduced_spec  # noqa: E402

FORWARD_SEED, FORWARD_INPUT_SEED = 7, 3
PIPELINE_SEED, PIPELINE_IMAGE_SEED = 5, 9


def main():
    net = init_weights(TABLE1, FORWARD_SEED)
    region = np.random.default_rng(FORWARD_INPUT_SEED).random((1, 3, 80, 80)).astype(np.float32)
    forward = forward_reference(region, net.tensors, spec_rows(TABLE1))

    spec = reduced_spec()
    model = init_dual(spec, PIPELINE_SEED)
    image = np.random.default_rng(PIPELINE_IMAGE_SEED).random((1, 3, 12, 20)).astype(np.float32)
    pipeline = pipeline_reference(image, model.fine.tensors, model.coarse.tensors, spec_rows(spec), 8, 48)

    out = ROOT / "tests" / "data" / "golden.npz"
    np.savez(out, forward=forward, pipeline=pipeline)
    print(f"wrote {out}: forward {forward.shape}, pipeline {pipeline.shape}")


if __name__ == "__main__":
    main()
