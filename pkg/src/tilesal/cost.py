"""Analytical cost accounting: parameters, MACs, activation memory, file size.

Parameters are kernel elements only (no biases, no normalisation), MACs are
kernel elements times output positions, and activation bytes assume float32
values.  Runtime measurement lives in :func:`measure_runtime`.
"""
from __future__ import annotations

import csv
import io
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .network import BlockSpec, ConvSpec, DualModel, NetworkSpec, PoolSpec, TABLE1
from .tiling import make_plan

BYTES_PER_VALUE = 4

# published "our approach" row of the computational-cost table
REFERENCE_PARAMETERS = 245_440
REFERENCE_COMPUTATION = 3_577_036_800
REFERENCE_MODEL_MB = 0.94
REFERENCE_SECONDS = 1.60656


@dataclass(frozen=True)
class LayerCost:
    layer: str
    type: str
    params: int
    macs: int
    activation_bytes: int  # output tensor


@dataclass
class CostReport:
    parameter_count: int
    mac_count: int
    peak_activation_bytes: int
    model_file_bytes: int
    layers: list[LayerCost] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "type", "params", "macs", "activation_bytes"])
        for row in self.layers:
            w.writerow([row.layer, row.type, row.params, row.macs, row.activation_bytes])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'layer':<22}{'type':<12}{'params':>10}{'macs':>16}{'act bytes':>12}"]
        for row in self.layers:
            lines.append(
                f"{row.layer:<22}{row.type:<12}{row.params:>10,}{row.macs:>16,}{row.activation_bytes:>12,}"
            )
        lines.append("")
        lines.append(f"parameters            {self.parameter_count:,}")
        lines.append(f"MACs                  {self.mac_count:,}")
        lines.append(f"peak activation bytes {self.peak_activation_bytes:,}")
        lines.append(f"model file bytes      {self.model_file_bytes:,}")
        lines.extend(self.notes)
        return "\n".join(lines)


def separable_ratio(c_out: int, k: int) -> float:
    """Cost of a standard k x k conv divided by depthwise k x k + pointwise 1 x 1."""
    if c_out < 1 or k < 1:
        raise ValueError("c_out and k must be >= 1")
    return (c_out * k * k) / (c_out + k * k)


def traditional_conv_macs(c_in: int, c_out: int, k: int, w: int, h: int) -> int:
    return c_in * c_out * k * k * w * h


def separable_conv_macs(c_in: int, c_out: int, k: int, w: int, h: int) -> int:
    return c_in * k * k * w * h + c_in * c_out * w * h


def _sublayers(spec: NetworkSpec, height: int, width: int):
    """Yield (name, type, params, out_channels, out_h, out_w) for every primitive layer."""
    h, w = height, width
    c = spec.in_channels
    for name, layer in spec.named_layers():
        if isinstance(layer, PoolSpec):
            h, w = -(-h // 2), -(-w // 2)
            yield name, "maxpool", 0, c, h, w
        elif isinstance(layer, BlockSpec):
            e = layer.expand_channels
            yield f"{name}.expand", "conv1x1", c * e, e, h, w
            yield f"{name}.depthwise", "dwconv3x3", e * 9, e, h, w
            c = layer.out_channels
            yield f"{name}.bottleneck", "conv1x1", e * c, c, h, w
        else:
            kind = f"conv{layer.k}x{layer.k}"
            params = c * layer.out_channels * layer.k * layer.k
            c = layer.out_channels
            yield name, kind, params, c, h, w


def layer_costs(spec: NetworkSpec, height: Optional[int] = None, width: Optional[int] = None) -> list[LayerCost]:
    h = spec.input_size if height is None else height
    w = spec.input_size if width is None else width
    return [
        LayerCost(name, kind, params, params * oh * ow, BYTES_PER_VALUE * c * oh * ow)
        for name, kind, params, c, oh, ow in _sublayers(spec, h, w)
    ]


def count_params(spec: NetworkSpec) -> int:
    """Sum of C_in * C_out * k * k over layers; depthwise layers count e * k * k."""
    return sum(row.params for row in layer_costs(spec))


def count_macs(spec: NetworkSpec, input_h: Optional[int] = None, input_w: Optional[int] = None) -> int:
    """One network's MACs at the given input size: params times output area, summed."""
    return sum(row.macs for row in layer_costs(spec, input_h, input_w))


def region_count(image_h: int, image_w: int, spec: NetworkSpec = TABLE1) -> int:
    return make_plan(image_h, image_w, region=spec.input_size).count


def pipeline_macs(spec: NetworkSpec = TABLE1, image_h: int = 480, image_w: int = 640) -> int:
    """Dual pipeline: both networks on one region pair, times the number of regions."""
    return 2 * count_macs(spec) * region_count(image_h, image_w, spec)


def activation_steps(spec: NetworkSpec, height: Optional[int] = None, width: Optional[int] = None):
    """Live bytes at each forward step, mirroring :class:`tilesal.network.ActivationMeter`."""
    h = spec.input_size if height is None else height
    w = spec.input_size if width is None else width
    c = spec.in_channels
    nbytes = lambda ch: BYTES_PER_VALUE * ch * h * w  # noqa: E731
    steps = []
    for name, layer in spec.named_layers():
        if isinstance(layer, PoolSpec):
            before = nbytes(c)
            h, w = -(-h // 2), -(-w // 2)
            steps.append((name, before + nbytes(c)))
        elif isinstance(layer, BlockSpec):
            e = layer.expand_channels
            stash = nbytes(c) if layer.use_residual else 0
            steps.append((f"{name}.expand", nbytes(c) + nbytes(e)))
            steps.append((f"{name}.depthwise", 2 * nbytes(e) + stash))
            steps.append((f"{name}.bottleneck", nbytes(e) + nbytes(layer.out_channels) + stash))
            c = layer.out_channels
        else:
            steps.append((name, nbytes(c) + nbytes(layer.out_channels)))
            c = layer.out_channels
    steps.append(("sigmoid", 2 * nbytes(c)))
    return steps


def peak_activation(spec: NetworkSpec, input_h: Optional[int] = None, input_w: Optional[int] = None) -> int:
    """High-water mark of live activation bytes (input + output + residual stash)."""
    return max(b for _, b in activation_steps(spec, input_h, input_w))


def model_file_bytes(spec: NetworkSpec = TABLE1, encoding: int = 0) -> int:
    """Exact size of a dual-model weight file (16-byte header plus tensor records)."""
    value_bytes = {0: 4, 1: 2}[encoding]
    total = 16
    for prefix in ("fine.", "coarse."):
        for name, shape in spec.kernel_shapes().items():
            total += 2 + len(prefix + name) + 1 + 4 * len(shape)
            total += value_bytes * int(np.prod(shape))
    return total


def cost_report(
    spec: NetworkSpec = TABLE1, image_h: int = 480, image_w: int = 640, encoding: int = 0
) -> CostReport:
    """Dual-pipeline report: per-layer rows are for one network on one region."""
    rows = layer_costs(spec)
    params = 2 * count_params(spec)
    macs = pipeline_macs(spec, image_h, image_w)
    report = CostReport(
        parameter_count=params,
        mac_count=macs,
        peak_activation_bytes=peak_activation(spec),
        model_file_bytes=model_file_bytes(spec, encoding),
        layers=rows,
    )
    if spec == TABLE1 and (image_h, image_w) == (480, 640):
        report.notes.append(
            f"reference parameters {REFERENCE_PARAMETERS:,}: ratio {params / REFERENCE_PARAMETERS:.3f} "
            "(the reference figure does not match two independent networks under the same formula)"
        )
        report.notes.append(
            f"reference computation {REFERENCE_COMPUTATION:,}: ratio {macs / REFERENCE_COMPUTATION:.3f}"
        )
    return report


# --- runtime -----------------------------------------------------------------


@dataclass
class RuntimeReport:
    seconds: list[float]
    baseline_seconds: float
    total_memory_bytes: int
    baseline_memory_bytes: int

    @property
    def mean_seconds(self) -> float:
        return statistics.fmean(self.seconds)

    @property
    def net_seconds(self) -> float:
        return max(0.0, self.mean_seconds - self.baseline_seconds)

    @property
    def net_memory_bytes(self) -> int:
        return max(0, self.total_memory_bytes - self.baseline_memory_bytes)

    @property
    def coefficient_of_variation(self) -> float:
        if len(self.seconds) < 2:
            return 0.0
        return statistics.stdev(self.seconds) / self.mean_seconds


def _rss() -> int:
    import psutil

    return psutil.Process().memory_info().rss


class _RssSampler:
    """Polls resident set size on a background thread and keeps the maximum."""

    def __init__(self, interval: float = 0.005):
        self.interval = interval
        self.peak = _rss()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        while not self._stop.is_set():
            self.peak = max(self.peak, _rss())
            self._stop.wait(self.interval)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.peak = max(self.peak, _rss())


def _timed(fn: Callable[[], object], runs: int, warmup: int) -> tuple[list[float], int]:
    for _ in range(warmup):
        fn()
    times = []
    with _RssSampler() as sampler:
        for _ in range(runs):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
    return times, sampler.peak


def measure_runtime(model: DualModel, image: np.ndarray, runs: int = 10, warmup: int = 1) -> RuntimeReport:
    """Wall-clock and resident memory of :func:`tilesal.tiling.predict`.

    The baseline runs the same tiling with networks that do nothing, so the
    net figures isolate the cost of the networks themselves.
    """
    from .tiling import predict

    def empty_forward(region, net, meter=None):
        r = net.spec.output_size
        return np.ones((region.shape[0], 1, r, r), dtype=np.float32)

    base_times, base_mem = _timed(lambda: predict(image, model, forward=empty_forward), runs, warmup)
    times, mem = _timed(lambda: predict(image, model), runs, warmup)
    return RuntimeReport(times, statistics.fmean(base_times), mem, base_mem)
