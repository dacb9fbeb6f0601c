import math
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import forward_reference, spec_rows
from tilesal.cost import count_params, peak_activation
from tilesal.network import (
    TABLE1,
    ActivationMeter,
    BadMagicError,
    BadVersionError,
    BlockSpec,
    ConvSpec,
    DualModel,
    NetworkWeights,
    PoolSpec,
    TruncatedFileError,
    WeightShapeError,
    block_forward,
    init_dual,
    init_weights,
    load_weights,
    network_forward,
    reduced_spec,
    save_weights,
    zero_weights,
)
from tilesal.tensor import ConvKernel, ShapeError, conv2d, elementwise, relu6

GOLDEN = np.load(Path(__file__).parent / "data" / "golden.npz")

# S_output, C_expand, C_output per row of the architecture table
TABLE1_ROWS = [
    ("conv3x3", 80, None, 32),
    ("maxpool", 40, None, 32),
    ("block3x3", 40, 64, 16),
    ("block3x3", 40, 64, 16),
    ("maxpool", 20, None, 16),
    ("block3x3", 20, 96, 24),
    ("block3x3", 20, 96, 24),
    ("block3x3", 20, 96, 24),
    ("maxpool", 10, None, 24),
    ("block3x3", 10, 128, 32),
    ("block3x3", 10, 128, 32),
    ("block3x3", 10, 128, 32),
    ("block3x3", 10, 128, 32),
    ("block3x3", 10, 256, 64),
    ("block3x3", 10, 256, 64),
    ("block3x3", 10, 512, 128),
    ("conv1x1", 10, None, 1),
]


def test_table1_layer_counts():
    layers = TABLE1.layers
    assert sum(isinstance(l, BlockSpec) for l in layers) == 12
    assert sum(isinstance(l, PoolSpec) for l in layers) == 3
    assert isinstance(layers[0], ConvSpec) and layers[0].k == 3
    assert isinstance(layers[-1], ConvSpec) and layers[-1].k == 1
    assert sum(isinstance(l, ConvSpec) for l in layers) == 2


def test_table1_static_trace():
    rows = [(r.operator, r.height, r.expand, r.channels) for r in TABLE1.trace()]
    assert rows == TABLE1_ROWS
    assert all(r.height == r.width for r in TABLE1.trace())


def test_forward_trace_per_layer():
    net = init_weights(TABLE1, 0)
    trace = []
    out = network_forward(np.full((1, 3, 80, 80), 0.5, np.float32), net, trace=trace)
    assert out.shape == (1, 1, 10, 10)
    assert trace == [(c, s, s) for _, s, _, c in TABLE1_ROWS]


def test_block_spec_residual_rule():
    assert BlockSpec(16, 64, 16).use_residual
    assert not BlockSpec(32, 64, 16).use_residual
    with pytest.raises(ValueError):
        BlockSpec(16, 64, 16, use_residual=False)
    with pytest.raises(ValueError):
        BlockSpec(32, 16, 32)


def _block_weights(block, value=None, rng=None):
    e = block.expand_channels
    shapes = [(e, block.in_channels, 1, 1), (e, 1, 3, 3), (block.out_channels, e, 1, 1)]
    if rng is None:
        return [np.full(s, value, np.float32) for s in shapes]
    return [(rng.standard_normal(s) * 0.3).astype(np.float32) for s in shapes]


def test_block_zero_weights_residual_identity(rng):
    x = rng.standard_normal((1, 16, 8, 8)).astype(np.float32)
    block = BlockSpec(16, 64, 16)
    out = block_forward(x, block, *_block_weights(block, 0.0))
    assert out.tobytes() == x.tobytes()


def test_block_zero_weights_no_residual(rng):
    x = rng.standard_normal((1, 16, 8, 8)).astype(np.float32)
    block = BlockSpec(16, 64, 24)
    out = block_forward(x, block, *_block_weights(block, 0.0))
    assert out.shape == (1, 24, 8, 8) and not out.any()


def test_block_equals_primitive_composition(rng):
    x = rng.standard_normal((1, 16, 8, 8)).astype(np.float32)
    block = BlockSpec(16, 64, 16)
    we, wd, wb = _block_weights(block, rng=rng)
    expected = elementwise(
        conv2d(relu6(conv2d(relu6(conv2d(x, ConvKernel.same(we))), ConvKernel.same(wd, groups=64))),
               ConvKernel.same(wb)),
        x, "add",
    )
    assert block_forward(x, block, we, wd, wb).tobytes() == expected.tobytes()


def test_block_rejects_channel_mismatch(rng):
    block = BlockSpec(16, 64, 16)
    with pytest.raises(ShapeError):
        block_forward(np.zeros((1, 8, 4, 4), np.float32), block, *_block_weights(block, 0.0))


def test_forward_rejects_wrong_shape():
    net = zero_weights(TABLE1)
    with pytest.raises(ShapeError):
        network_forward(np.zeros((1, 3, 64, 64), np.float32), net)
    with pytest.raises(ShapeError):
        network_forward(np.zeros((1, 1, 80, 80), np.float32), net)


def test_zero_weights_give_half():
    out = network_forward(np.random.default_rng(0).random((1, 3, 80, 80)).astype(np.float32), zero_weights(TABLE1))
    np.testing.assert_array_equal(out, np.full((1, 1, 10, 10), 0.5, np.float32))


def test_forward_matches_golden_reference():
    net = init_weights(TABLE1, 7)
    region = np.random.default_rng(3).random((1, 3, 80, 80)).astype(np.float32)
    out = network_forward(region, net)
    np.testing.assert_allclose(out, GOLDEN["forward"], rtol=1e-4, atol=1e-6)


def test_reduced_forward_matches_reference(rng):
    spec = reduced_spec()
    net = init_weights(spec, 3)
    region = rng.random((1, 3, 8, 8)).astype(np.float32)
    ref = forward_reference(region, net.tensors, spec_rows(spec))
    np.testing.assert_allclose(network_forward(region, net), ref, rtol=1e-5, atol=1e-7)


@settings(max_examples=10)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.5, 20))
def test_forward_output_strictly_inside_unit_interval(seed, scale):
    spec = reduced_spec()
    net = init_weights(spec, seed)
    net = NetworkWeights(spec, {k: v * np.float32(scale) for k, v in net.tensors.items()})
    region = np.random.default_rng(seed).random((2, 3, 8, 8)).astype(np.float32)
    out = network_forward(region, net)
    assert np.all(out > 0) and np.all(out < 1)


def test_forward_activation_meter_peak():
    meter = ActivationMeter()
    network_forward(np.zeros((1, 3, 80, 80), np.float32), init_weights(TABLE1, 0), meter=meter)
    # post-stem activation plus its pooled copy is the largest live set
    assert meter.peak == 4 * (32 * 80 * 80 + 32 * 40 * 40)
    assert meter.peak == peak_activation(TABLE1)
    assert max(b for label, b in meter.steps if label.startswith("block")) <= meter.peak


# --- init -----------------------------------------------------------------


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_weights(TABLE1, 1), init_weights(TABLE1, 1), init_weights(TABLE1, 2)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert any(not np.array_equal(a[k], c[k]) for k in a.tensors)


def test_init_stem_bound():
    net = init_weights(TABLE1, 0)
    bound = math.sqrt(6 / 27)
    assert abs(bound - 0.4714) < 1e-4
    assert np.abs(net["stem"]).max() <= bound
    assert np.abs(net["block1.depthwise"]).max() <= math.sqrt(6 / 9)


def test_weights_are_read_only():
    net = init_weights(TABLE1, 0)
    with pytest.raises(ValueError):
        net["stem"][0, 0, 0, 0] = 1.0


def test_weights_reject_shape_mismatch():
    tensors = dict(init_weights(TABLE1, 0).tensors)
    tensors["stem"] = np.zeros((32, 3, 1, 1), np.float32)
    with pytest.raises(ShapeError, match="stem"):
        NetworkWeights(TABLE1, tensors)


def test_no_bias_or_norm_tensors():
    names = init_weights(TABLE1, 0).tensors
    assert all(n == "stem" or n == "head" or n.split(".")[-1] in ("expand", "depthwise", "bottleneck") for n in names)
    assert len(names) == 2 + 3 * 12


# --- weight file ------------------------------------------------------------


def test_weight_round_trip_bit_exact(tmp_path):
    model = init_dual(TABLE1, 4)
    path = tmp_path / "w.tsal"
    save_weights(model, path)
    loaded = load_weights(path)
    for name, t in model.named_tensors().items():
        assert loaded.named_tensors()[name].tobytes() == t.tobytes()


def test_weight_file_layout(tmp_path):
    model = init_dual(TABLE1, 4)
    path = tmp_path / "w.tsal"
    n = save_weights(model, path)
    data = path.read_bytes()
    assert n == len(data)
    magic, version, encoding, count = struct.unpack_from("<4sIB3xI", data)
    assert (magic, version, encoding, count) == (b"TSAL", 1, 0, 76)
    # 16-byte header + per-tensor (name length, name, rank, dims) + 4 bytes per value
    meta = sum(2 + len(name) + 1 + 4 * t.ndim for name, t in model.named_tensors().items())
    assert len(data) == 16 + meta + 4 * 2 * count_params(TABLE1)
    assert b"fine.block3.expand" in data and b"coarse.head" in data


def test_weight_file_float16(tmp_path):
    model = init_dual(TABLE1, 4)
    path = tmp_path / "w16.tsal"
    save_weights(model, path, encoding=1)
    loaded = load_weights(path)
    for name, t in model.named_tensors().items():
        np.testing.assert_array_equal(loaded.named_tensors()[name], t.astype(np.float16).astype(np.float32))


def test_weight_file_errors(tmp_path):
    model = init_dual(reduced_spec(), 0)
    good = tmp_path / "good.tsal"
    save_weights(model, good)
    data = good.read_bytes()

    bad = tmp_path / "bad.tsal"
    bad.write_bytes(b"XSAL" + data[4:])
    with pytest.raises(BadMagicError):
        load_weights(bad)

    bad.write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(BadVersionError):
        load_weights(bad)

    bad.write_bytes(data[:-3])
    with pytest.raises(TruncatedFileError):
        load_weights(bad)

    with pytest.raises(WeightShapeError):
        load_weights(good, spec=TABLE1)


def test_dual_model_requires_same_spec():
    with pytest.raises(ValueError):
        DualModel(init_weights(TABLE1, 0), init_weights(reduced_spec(), 0))
