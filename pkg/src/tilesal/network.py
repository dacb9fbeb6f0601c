"""Feature-extraction network built from depthwise-separable blocks.

One network maps an 80x80 RGB region to a 10x10 saliency region.  The layer
list in :data:`TABLE1` is the published architecture; :func:`reduced_spec`
gives a two-block miniature with the same layer types for gradient checks and
toy training.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np

from .tensor import DTYPE, ConvKernel, ShapeError, conv2d, maxpool2, sigmoid


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    k: int


@dataclass(frozen=True)
class PoolSpec:
    pass


@dataclass(frozen=True)
class BlockSpec:
    """Expansion 1x1 -> depthwise 3x3 -> linear 1x1 bottleneck."""

    in_channels: int
    expand_channels: int
    out_channels: int
    use_residual: Optional[bool] = None

    def __post_init__(self):
        same = self.in_channels == self.out_channels
        if self.use_residual is None:
            object.__setattr__(self, "use_residual", same)
        elif self.use_residual != same:
            raise ValueError("use_residual must be true exactly when in_channels == out_channels")
        if self.expand_channels < self.in_channels:
            raise ValueError(
                f"expand_channels {self.expand_channels} < in_channels {self.in_channels}"
            )


LayerSpec = Union[ConvSpec, PoolSpec, BlockSpec]


@dataclass(frozen=True)
class TraceRow:
    operator: str
    height: int
    width: int
    expand: Optional[int]
    channels: int


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list.  The first layer is the stem conv, the last the head conv."""

    layers: tuple[LayerSpec, ...]
    input_size: int = 80
    in_channels: int = 3

    def __post_init__(self):
        if not self.layers or not isinstance(self.layers[0], ConvSpec):
            raise ValueError("a network starts with a stem convolution")
        if not isinstance(self.layers[-1], ConvSpec):
            raise ValueError("a network ends with a head convolution")
        channels = self.in_channels
        for layer in self.layers:
            if isinstance(layer, (ConvSpec, BlockSpec)):
                if layer.in_channels != channels:
                    raise ValueError(f"{layer} expects {layer.in_channels} channels, gets {channels}")
                channels = layer.out_channels

    @property
    def blocks(self) -> list[BlockSpec]:
        return [l for l in self.layers if isinstance(l, BlockSpec)]

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def named_layers(self) -> Iterator[tuple[str, LayerSpec]]:
        t = 0
        n_conv = sum(isinstance(l, ConvSpec) for l in self.layers)
        conv_seen = 0
        pools = 0
        for layer in self.layers:
            if isinstance(layer, BlockSpec):
                t += 1
                yield f"block{t}", layer
            elif isinstance(layer, PoolSpec):
                pools += 1
                yield f"pool{pools}", layer
            else:
                conv_seen += 1
                if conv_seen == 1:
                    yield "stem", layer
                elif conv_seen == n_conv:
                    yield "head", layer
                else:
                    yield f"conv{conv_seen}", layer

    def kernel_shapes(self) -> dict[str, tuple[int, int, int, int]]:
        """Name -> (out, in/groups, k, k) for every weight tensor, in layer order."""
        shapes = {}
        for name, layer in self.named_layers():
            if isinstance(layer, ConvSpec):
                shapes[name] = (layer.out_channels, layer.in_channels, layer.k, layer.k)
            elif isinstance(layer, BlockSpec):
                e = layer.expand_channels
                shapes[f"{name}.expand"] = (e, layer.in_channels, 1, 1)
                shapes[f"{name}.depthwise"] = (e, 1, 3, 3)
                shapes[f"{name}.bottleneck"] = (layer.out_channels, e, 1, 1)
        return shapes

    def trace(self, height: Optional[int] = None, width: Optional[int] = None) -> list[TraceRow]:
        """Output size and channels after every layer, in the layout of the architecture table."""
        h = self.input_size if height is None else height
        w = self.input_size if width is None else width
        rows = []
        c = self.in_channels
        for _, layer in self.named_layers():
            if isinstance(layer, PoolSpec):
                h, w = -(-h // 2), -(-w // 2)
                rows.append(TraceRow("maxpool", h, w, None, c))
            elif isinstance(layer, BlockSpec):
                c = layer.out_channels
                rows.append(TraceRow("block3x3", h, w, layer.expand_channels, c))
            else:
                c = layer.out_channels
                rows.append(TraceRow(f"conv{layer.k}x{layer.k}", h, w, None, c))
        return rows

    @property
    def output_size(self) -> int:
        return self.trace()[-1].height


def _table1() -> NetworkSpec:
    def blocks(cin, e, cout, n=1):
        out = [BlockSpec(cin, e, cout)]
        out += [BlockSpec(cout, e, cout) for _ in range(n - 1)]
        return out

    layers = [ConvSpec(3, 32, 3), PoolSpec()]
    layers += blocks(32, 64, 16, 2) + [PoolSpec()]
    layers += blocks(16, 96, 24, 3) + [PoolSpec()]
    layers += blocks(24, 128, 32, 4)
    layers += blocks(32, 256, 64, 2)
    layers += blocks(64, 512, 128, 1)
    layers += [ConvSpec(128, 1, 1)]
    return NetworkSpec(tuple(layers), input_size=80)


TABLE1 = _table1()


def reduced_spec() -> NetworkSpec:
    """Two-block miniature (8x8 in, 4x4 out) with every layer type of TABLE1."""
    return NetworkSpec(
        (
            ConvSpec(3, 4, 3),
            PoolSpec(),
            BlockSpec(4, 8, 4),
            BlockSpec(4, 12, 6),
            ConvSpec(6, 1, 1),
        ),
        input_size=8,
    )


@dataclass(frozen=True)
class NetworkWeights:
    """Named, read-only kernels of one network; shapes are checked against ``spec``."""

    spec: NetworkSpec
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = self.spec.kernel_shapes()
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"weight names do not match the architecture: missing {missing}, unexpected {extra}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name])
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def replace(self, tensors: dict[str, np.ndarray]) -> "NetworkWeights":
        return NetworkWeights(self.spec, tensors)


@dataclass(frozen=True)
class DualModel:
    """Fine- and coarse-resolution networks with independent parameters."""

    fine: NetworkWeights
    coarse: NetworkWeights

    def __post_init__(self):
        if self.fine.spec != self.coarse.spec:
            raise ValueError("fine and coarse networks must share one spec")

    @property
    def spec(self) -> NetworkSpec:
        return self.fine.spec

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {f"fine.{k}": v for k, v in self.fine.tensors.items()}
        out.update({f"coarse.{k}": v for k, v in self.coarse.tensors.items()})
        return out

    def parameter_count(self) -> int:
        return self.fine.parameter_count() + self.coarse.parameter_count()


def init_weights(spec: NetworkSpec, seed: Union[int, np.random.Generator]) -> NetworkWeights:
    """He-uniform init: U(-b, b) with b = sqrt(6 / fan_in), fan_in = (in/groups)*k*k."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.kernel_shapes().items():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    return NetworkWeights(spec, tensors)


def init_dual(spec: NetworkSpec, seed: int) -> DualModel:
    fine_seq, coarse_seq = np.random.SeedSequence(seed).spawn(2)
    return DualModel(
        init_weights(spec, np.random.default_rng(fine_seq)),
        init_weights(spec, np.random.default_rng(coarse_seq)),
    )


def zero_weights(spec: NetworkSpec) -> NetworkWeights:
    return NetworkWeights(
        spec, {n: np.zeros(s, dtype=DTYPE) for n, s in spec.kernel_shapes().items()}
    )


class ActivationMeter:
    """Records the bytes of activation tensors live at each step of a forward pass.

    A step is one layer operation; live tensors are its input, its output and
    the residual stash if a block is open.  ``peak`` is the high-water mark.
    """

    def __init__(self):
        self.steps: list[tuple[str, int]] = []

    def record(self, label: str, *arrays: Optional[np.ndarray]) -> None:
        seen = set()
        total = 0
        for a in arrays:
            if a is not None and id(a) not in seen:
                seen.add(id(a))
                total += a.nbytes
        self.steps.append((label, total))

    @property
    def peak(self) -> int:
        return max((b for _, b in self.steps), default=0)


def block_forward(
    x: np.ndarray,
    block: BlockSpec,
    expand: np.ndarray,
    depthwise: np.ndarray,
    bottleneck: np.ndarray,
    meter: Optional[ActivationMeter] = None,
    label: str = "block",
) -> np.ndarray:
    """ReLU6 after expansion and depthwise, linear bottleneck, optional residual add."""
    if x.ndim != 4 or x.shape[1] != block.in_channels:
        raise ShapeError(f"{label}: input {x.shape} does not have {block.in_channels} channels")
    stash = x if block.use_residual else None
    e = conv2d(x, ConvKernel.same(expand))
    np.clip(e, 0, 6, out=e)
    if meter:
        meter.record(f"{label}.expand", x, e)
    d = conv2d(e, ConvKernel.same(depthwise, groups=block.expand_channels))
    np.clip(d, 0, 6, out=d)
    if meter:
        meter.record(f"{label}.depthwise", e, d, stash)
    del e
    y = conv2d(d, ConvKernel.same(bottleneck))
    if meter:
        meter.record(f"{label}.bottleneck", d, y, stash)
    if block.use_residual:
        y += x
    return y


def network_forward(
    region: np.ndarray,
    net: NetworkWeights,
    meter: Optional[ActivationMeter] = None,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Map (N, 3, S, S) regions in [0, 1] to (N, 1, S/8, S/8) maps in (0, 1).

    If ``trace`` is a list, the (channels, height, width) after each layer is
    appended to it.
    """
    spec = net.spec
    expected = (spec.in_channels, spec.input_size, spec.input_size)
    if region.ndim != 4 or region.shape[1:] != expected:
        raise ShapeError(f"region must have shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {region.shape}")
    if region.size and (region.min() < 0 or region.max() > 1):
        raise ValueError("region values must lie in [0, 1]")
    x = region
    for name, layer in spec.named_layers():
        if isinstance(layer, PoolSpec):
            y = maxpool2(x)
        elif isinstance(layer, BlockSpec):
            y = block_forward(
                x, layer, net[f"{name}.expand"], net[f"{name}.depthwise"],
                net[f"{name}.bottleneck"], meter=meter, label=name,
            )
        else:
            y = conv2d(x, ConvKernel.same(net[name]))
            if name != "head":
                np.clip(y, 0, 6, out=y)
        if meter and not isinstance(layer, BlockSpec):
            meter.record(name, x, y)
        if trace is not None:
            trace.append(y.shape[1:])
        x = y
    out = sigmoid(x)
    if meter:
        meter.record("sigmoid", x, out)
    return out


# --- weight file ----------------------------------------------------------

MAGIC = b"TSAL"
VERSION = 1
ENCODINGS = {0: np.dtype("<f4"), 1: np.dtype("<f2")}
_HEADER = struct.Struct("<4sIB3xI")  # magic, version, encoding, 3 reserved, tensor count


class WeightFileError(ValueError):
    """Base class for unreadable weight files."""


class BadMagicError(WeightFileError):
    pass


class BadVersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    pass


def encode_tensors(tensors: dict[str, np.ndarray], encoding: int = 0) -> bytes:
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding}; use 0 (float32) or 1 (float16)")
    dt = ENCODINGS[encoding]
    parts = [_HEADER.pack(MAGIC, VERSION, encoding, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("ascii")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def decode_tensors(data: bytes) -> tuple[int, dict[str, np.ndarray]]:
    """Parse a tensor file; returns (encoding, name -> float32 array)."""
    if len(data) < _HEADER.size:
        if data[:4] != MAGIC[: len(data[:4])]:
            raise BadMagicError("not a TSAL weight file (bad magic)")
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, encoding, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"not a TSAL weight file (magic {magic!r})")
    if version != VERSION:
        raise BadVersionError(f"unsupported format version {version}")
    if encoding not in ENCODINGS:
        raise BadVersionError(f"unknown value encoding {encoding}")
    dt = ENCODINGS[encoding]
    pos = _HEADER.size
    tensors = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"file truncated at byte {len(data)} (needed {pos + n})")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("ascii")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(size * dt.itemsize), dtype=dt)
        tensors[name] = values.astype(DTYPE).reshape(dims)
    if pos != len(data):
        raise WeightFileError(f"{len(data) - pos} trailing bytes after the last tensor")
    return encoding, tensors


def atomic_write(path: Union[str, os.PathLike], data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(model: DualModel, path, encoding: int = 0) -> int:
    """Write both networks to one file; returns the number of bytes written."""
    data = encode_tensors(model.named_tensors(), encoding)
    atomic_write(path, data)
    return len(data)


def split_dual(tensors: dict[str, np.ndarray], spec: NetworkSpec) -> DualModel:
    nets = {}
    for prefix in ("fine", "coarse"):
        sub = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        try:
            nets[prefix] = NetworkWeights(spec, sub)
        except ShapeError as exc:
            raise WeightShapeError(f"{prefix} network: {exc}") from None
    unknown = [k for k in tensors if not k.startswith(("fine.", "coarse."))]
    if unknown:
        raise WeightShapeError(f"unexpected tensors {unknown}")
    return DualModel(nets["fine"], nets["coarse"])


def detect_spec(tensors: dict[str, np.ndarray]) -> NetworkSpec:
    """The known architecture whose kernel shapes match ``fine.*`` tensors."""
    fine = {k[5:]: v.shape for k, v in tensors.items() if k.startswith("fine.")}
    for spec in (TABLE1, reduced_spec()):
        if fine == spec.kernel_shapes():
            return spec
    raise WeightShapeError("tensor shapes match no known architecture")


def load_weights(path, spec: Optional[NetworkSpec] = None) -> DualModel:
    """Read and validate a dual model; ``spec=None`` picks the matching known architecture."""
    with open(path, "rb") as fh:
        data = fh.read()
    _, tensors = decode_tensors(data)
    return split_dual(tensors, spec if spec is not None else detect_spec(tensors))
