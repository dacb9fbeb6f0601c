"""Analytical cost of the dual network: per-layer table, totals and reference ratios.

    python scripts/cost_report.py --sizes 640x480 1920x1080 --csv layers.csv
"""
import argparse
from pathlib import Path

from tilesal.cost import (
    REFERENCE_COMPUTATION,
    REFERENCE_PARAMETERS,
    cost_report,
    count_params,
    model_file_bytes,
    peak_activation,
    pipeline_macs,
    region_count,
    separable_ratio,
)
from tilesal.network import TABLE1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="*", default=["640x480"], help="WIDTHxHEIGHT image sizes")
    ap.add_argument("--csv", type=Path)
    args = ap.parse_args()

    report = cost_report(TABLE1)
    print(report.to_table())
    if args.csv:
        args.csv.write_text(report.to_csv())
        print(f"wrote {args.csv}")

    print("\nseparable vs. standard convolution, k = 3")
    for c_out in (16, 32, 64, 128, 512):
        print(f"  C_out {c_out:>4}: {separable_ratio(c_out, 3):6.3f}x")

    params = 2 * count_params(TABLE1)
    print(f"\ndual parameters {params:,} vs reference {REFERENCE_PARAMETERS:,} ({params / REFERENCE_PARAMETERS:.3f}x)")
    print(f"model file: {model_file_bytes(TABLE1, 0):,} bytes (32-bit), {model_file_bytes(TABLE1, 1):,} bytes (16-bit)")
    region_peak = peak_activation(TABLE1)
    for size in args.sizes:
        w, h = (int(v) for v in size.lower().split("x"))
        macs = pipeline_macs(TABLE1, h, w)
        print(f"\n{w}x{h}: {region_count(h, w)} regions, {macs:,} MACs"
              f" ({macs / REFERENCE_COMPUTATION:.3f}x the 640x480 reference)")
        whole = peak_activation(TABLE1, h, w)
        print(f"  peak activation whole image {whole:,} B vs per region {region_peak:,} B"
              f" ({whole / region_peak:.2f}x)")


if __name__ == "__main__":
    main()
