"""``tilesal`` command line: predict, train, eval, cost, weights.

Exit codes: 0 ok, 1 internal error, 2 bad input data, 3 bad model file.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cost as costmod
from .config import THREADS_ENV, RunConfig
from .dataset import DatasetLayout, LayoutError, density_for, rescale_points, training_samples
from .imageio import ImageFormatError, read_image, read_map, write_saliency
from .metrics import METRIC_ORDER, MetricError, score_all
from .network import (
    TABLE1,
    DualModel,
    WeightFileError,
    atomic_write,
    decode_tensors,
    encode_tensors,
    init_dual,
    load_weights,
    reduced_spec,
    save_weights,
)
from .tensor import resize_bilinear
from .tiling import predict

log = logging.getLogger("tilesal")

EXIT_OK, EXIT_INTERNAL, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
ARCHS = {"table1": TABLE1, "reduced": reduced_spec()}
METRIC_LABELS = {
    "auc_judd": "AUC-Judd", "sim": "SIM", "emd": "EMD", "auc_borji": "AUC-Borji",
    "sauc": "sAUC", "cc": "CC", "nss": "NSS", "kld": "KL",
}


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _load_model(path) -> DualModel:
    try:
        return load_weights(path)
    except FileNotFoundError:
        raise CommandError(f"weights file not found: {path}", EXIT_MODEL) from None
    except (WeightFileError, OSError) as exc:
        raise CommandError(f"bad weights file {path}: {exc}", EXIT_MODEL) from None


# --- predict -----------------------------------------------------------------


def cmd_predict(args, cfg: RunConfig) -> int:
    model = _load_model(args.weights)
    try:
        image = read_image(args.image)
    except ImageFormatError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    t0 = time.perf_counter()
    smap = predict(image, model, workers=cfg.workers)
    elapsed = time.perf_counter() - t0
    written = write_saliency(args.out, smap, raw=args.raw)
    for p in written:
        print(p)
    print(f"{image.shape[3]}x{image.shape[2]} in {elapsed:.3f} s")
    return EXIT_OK


# --- train -------------------------------------------------------------------


def cmd_train(args, cfg: RunConfig) -> int:
    from .train import load_adam_state, loss_trace_csv, save_adam_state, train

    try:
        layout = DatasetLayout.open(args.dataset)
        layout.validate(need_fixations=True)
        samples = []
        spec = ARCHS[args.arch]
        for sample_id in layout.ids:
            samples.extend(training_samples(layout.load(sample_id), spec, sigma=cfg.sigma, short_side=args.short_side))
    except LayoutError as exc:
        raise CommandError(f"invalid dataset layout: {exc}", EXIT_DATA) from None
    except ImageFormatError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None

    state = None
    if args.resume:
        model = _load_model(args.resume)
        if model.spec != spec:
            raise CommandError("resumed weights do not match --arch", EXIT_MODEL)
        state_path = Path(str(args.resume) + ".adam")
        if state_path.exists():
            try:
                state = load_adam_state(state_path, lr=cfg.lr)
            except (WeightFileError, ValueError) as exc:
                raise CommandError(f"bad optimizer state {state_path}: {exc}", EXIT_MODEL) from None
    else:
        model = init_dual(spec, cfg.seed)

    print(f"{len(samples)} training regions from {len(layout.ids)} images")
    result = train(
        samples, model, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
        lr=cfg.lr, state=state, max_steps=args.max_steps,
        on_step=lambda s, e, l: log.info("step %d epoch %d loss %.6f", s, e, l),
    )
    out = Path(args.out)
    save_weights(result.model, out, encoding=cfg.encoding_code)
    save_adam_state(result.state, Path(str(out) + ".adam"))
    trace_path = Path(str(out) + ".loss.csv")
    atomic_write(trace_path, loss_trace_csv(result.trace).encode())
    last = result.trace[-1][2] if result.trace else float("nan")
    print(f"wrote {out} (step {result.state.step}, last batch loss {last:.6f})")
    print(f"wrote {trace_path}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def _find_prediction(pred_dir: Path, sample_id: str) -> Optional[Path]:
    for suffix in (".f32", ".pgm", ".png", ".ppm"):
        p = pred_dir / f"{sample_id}{suffix}"
        if p.is_file():
            return p
    return None


def format_table(rows: list[tuple[str, dict[str, float]]], metrics: Sequence[str]) -> str:
    header = f"{'image':<16}" + "".join(f"{METRIC_LABELS[m]:>11}" for m in metrics)
    lines = [header]
    for name, scores in rows:
        lines.append(f"{name:<16}" + "".join(f"{scores[m]:>11.4f}" for m in metrics))
    return "\n".join(lines)


def evaluate_dataset(pred_dir, layout: DatasetLayout, metrics: Sequence[str], cfg: RunConfig):
    """Per-image scores for every id with a prediction; returns (rows, missing ids)."""
    pred_dir = Path(pred_dir)
    fixations = {i: layout.fixations(i) for i in layout.ids}
    rows, missing = [], []
    for sample_id in layout.ids:
        pred_path = _find_prediction(pred_dir, sample_id)
        if pred_path is None:
            missing.append(sample_id)
            continue
        sample = layout.load(sample_id)
        h, w = sample.fixations.shape
        s = read_map(pred_path).astype(np.float32)
        if s.shape != (h, w):
            s = resize_bilinear(s[None, None], h, w)[0, 0]
        sigma = cfg.sigma * min(h, w) / 480.0
        g_b = density_for(sample, sigma)
        others = [rescale_points(m, (h, w)) for i, m in fixations.items() if i != sample_id]
        scores = {}
        for m in metrics:
            try:
                scores[m] = score_all(
                    s, sample.fixations, g_b, [m], others, cfg.borji_splits, cfg.seed, cfg.emd_grid
                )[m]
            except MetricError as exc:
                log.warning("%s: %s undefined (%s)", sample_id, m, exc)
                scores[m] = math.nan
        rows.append((sample_id, scores))
    return rows, missing


def cmd_eval(args, cfg: RunConfig) -> int:
    metrics = [m for m in METRIC_ORDER if not args.metrics or m in args.metrics]
    try:
        layout = DatasetLayout.open(args.dataset)
        layout.validate(need_fixations=True)
        rows, missing = evaluate_dataset(args.pred_dir, layout, metrics, cfg)
    except LayoutError as exc:
        raise CommandError(f"invalid dataset layout: {exc}", EXIT_DATA) from None
    except ImageFormatError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None

    if rows:
        mean = {m: float(np.nanmean([r[m] for _, r in rows])) if any(
            not math.isnan(r[m]) for _, r in rows) else math.nan for m in metrics}
        rows_out = rows + [("mean", mean)]
    else:
        rows_out = []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image"] + [METRIC_LABELS[m] for m in metrics])
    for name, scores in rows_out:
        writer.writerow([name] + [repr(float(scores[m])) for m in metrics])
    report = Path(args.report) if args.report else Path(args.pred_dir) / "report.csv"
    atomic_write(report, buf.getvalue().encode())
    print(format_table(rows_out, metrics))
    print(f"wrote {report}")
    if missing:
        print(f"missing predictions: {', '.join(missing)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# --- cost --------------------------------------------------------------------


def cmd_cost(args, cfg: RunConfig) -> int:
    w, h = args.size
    spec = ARCHS[args.arch]
    on_disk = None
    if args.weights:
        spec = _load_model(args.weights).spec
        on_disk = Path(args.weights).stat().st_size
    report = costmod.cost_report(spec, image_h=h, image_w=w, encoding=cfg.encoding_code)
    if on_disk is not None:
        if on_disk != costmod.model_file_bytes(spec, 0) and on_disk != costmod.model_file_bytes(spec, 1):
            log.warning("on-disk size %d matches neither encoding", on_disk)
        report.model_file_bytes = on_disk
    print(report.to_table())
    if args.csv:
        atomic_write(Path(args.csv), report.to_csv().encode())
        print(f"wrote {args.csv}")
    return EXIT_OK


# --- weights -----------------------------------------------------------------


def cmd_weights(args, cfg: RunConfig) -> int:
    try:
        data = Path(args.path).read_bytes()
        encoding, tensors = decode_tensors(data)
    except FileNotFoundError:
        raise CommandError(f"weights file not found: {args.path}", EXIT_MODEL) from None
    except WeightFileError as exc:
        raise CommandError(f"bad weights file {args.path}: {exc}", EXIT_MODEL) from None
    if args.action == "inspect":
        bits = 32 if encoding == 0 else 16
        print(f"{args.path}: {len(data)} bytes, {bits}-bit values, {len(tensors)} tensors")
        for name, t in tensors.items():
            print(f"  {name:<32}{str(t.shape):<22}{t.size:>8}")
        print(f"parameters {sum(t.size for t in tensors.values()):,}")
        return EXIT_OK
    if not args.out:
        raise CommandError("convert needs --out", EXIT_DATA)
    atomic_write(Path(args.out), encode_tensors(tensors, cfg.encoding_code))
    print(f"wrote {args.out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (>= 0, default 0)")
    common.add_argument("--workers", type=int, default=0,
                        help=f"worker threads (0 = CPU count; env {THREADS_ENV} overrides the default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tilesal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", parents=[common], help="saliency map for one image")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="output .pgm (or .png with Pillow)")
    p.add_argument("--raw", action="store_true", help="also write a float32 .f32 sidecar")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train", parents=[common], help="train a dual model on a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--resume", help="weights file to continue from (reads <file>.adam if present)")
    p.add_argument("--arch", choices=sorted(ARCHS), default="table1")
    p.add_argument("--epochs", type=int, default=1, help="passes over the data (>= 0, default 1)")
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int, default=48, help="default 48")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate in (0, 1), default 0.001")
    p.add_argument("--max-steps", dest="max_steps", type=_positive_int)
    p.add_argument("--sigma", type=float, default=19.0,
                   help="label blur in pixels at 480-row resolution (> 0, default 19)")
    p.add_argument("--short-side", dest="short_side", type=_positive_int, default=480)
    p.add_argument("--encoding", type=int, choices=(16, 32), default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score predictions against fixations")
    p.add_argument("pred_dir")
    p.add_argument("dataset")
    p.add_argument("--metrics", nargs="*", choices=METRIC_ORDER, default=[],
                   help="subset of metrics (default: all eight)")
    p.add_argument("--report", help="CSV path (default <pred_dir>/report.csv)")
    p.add_argument("--sigma", type=float, default=19.0,
                   help="blur in pixels at 480-row resolution, scaled with the image (> 0, default 19)")
    p.add_argument("--emd-grid", dest="emd_grid", type=int, default=32,
                   help="EMD downsamples the longer axis to at most this many cells (1-128, default 32) "
                        "and solves the exact transport problem on that grid")
    p.add_argument("--borji-splits", dest="borji_splits", type=_positive_int, default=100,
                   help="random negative sets for AUC-Borji and sAUC (default 100)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", parents=[common], help="parameter / MAC / memory report")
    p.add_argument("--weights", help="read the architecture and file size from a weights file")
    p.add_argument("--arch", choices=sorted(ARCHS), default="table1")
    p.add_argument("--size", type=_size, default=(640, 480), help="WIDTHxHEIGHT, default 640x480")
    p.add_argument("--encoding", type=int, choices=(16, 32), default=32)
    p.add_argument("--csv", help="write the per-layer table as CSV")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("weights", parents=[common], help="inspect or re-encode a weights file")
    p.add_argument("action", choices=("inspect", "convert"))
    p.add_argument("path")
    p.add_argument("--out")
    p.add_argument("--encoding", type=int, choices=(16, 32), default=32)
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_namespace(args)
    except ValueError as exc:
        print(f"tilesal: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        return args.func(args, cfg)
    except CommandError as exc:
        print(f"tilesal: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"tilesal: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
