"""Dense NCHW kernels shared by the network, the tiling pipeline and training.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out as
(batch, channel, row, column).  Every function here is pure: inputs are never
written to, and the result is a fresh array.  Arithmetic follows the dtype of
the input, which is float32 for everything built through :func:`as_tensor`;
float64 inputs are accepted so gradient checks can run at higher precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

DTYPE = np.float32

PadSpec = Union[int, Sequence[int]]


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def as_tensor(data, dtype=DTYPE) -> np.ndarray:
    """Validate ``data`` as a rank-4 tensor with every dimension >= 1."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 (N, C, H, W) tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
    return arr


def _check_rank4(x: np.ndarray, what: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (N, C, H, W), got shape {x.shape}")


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights plus their grouping, stride and zero padding.

    ``weights`` has shape (out_channels, in_channels // groups, k, k).
    """

    weights: np.ndarray
    groups: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"kernel weights must be (out, in/groups, k, k), got {w.shape}")
        if self.groups < 1 or w.shape[0] % self.groups:
            raise ShapeError(
                f"out_channels {w.shape[0]} is not divisible by groups {self.groups}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride {self.stride} / padding {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def size(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def same(cls, weights: np.ndarray, groups: int = 1) -> "ConvKernel":
        """Stride-1 kernel zero-padded so the spatial size is preserved."""
        return cls(weights, groups=groups, stride=1, padding=(weights.shape[2] - 1) // 2)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv(x: np.ndarray, kernel: ConvKernel) -> tuple[int, int]:
    _check_rank4(x)
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernel "
            f"{kernel.weights.shape} with groups={kernel.groups} expects {kernel.in_channels}"
        )
    k, s, p = kernel.size, kernel.stride, kernel.padding
    oh = conv_output_size(x.shape[2], k, s, p)
    ow = conv_output_size(x.shape[3], k, s, p)
    if oh < 1 or ow < 1:
        raise ShapeError(f"input shape {x.shape} is too small for a {k}x{k} kernel")
    return oh, ow


def _zero_pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(
    x: np.ndarray, kernel: ConvKernel, method: Literal["direct", "im2col"] = "direct"
) -> np.ndarray:
    """Grouped 2-D cross-correlation.

    ``direct`` accumulates one kernel tap at a time over the whole output;
    ``im2col`` unrolls the receptive fields and does one matrix product per
    group.  Both produce the same values up to summation order.
    """
    oh, ow = _check_conv(x, kernel)
    if method == "im2col":
        return _conv2d_im2col(x, kernel, oh, ow)
    if method != "direct":
        raise ValueError(f"unknown conv method {method!r}")

    w = kernel.weights.astype(x.dtype, copy=False)
    n, c, _, _ = x.shape
    g, k, s = kernel.groups, kernel.size, kernel.stride
    co, cig = w.shape[0], w.shape[1]
    cog = co // g
    xp = _zero_pad(x, kernel.padding)
    ys, xs = s * (oh - 1) + 1, s * (ow - 1) + 1

    if g == 1:
        out = np.zeros((co, n, oh, ow), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                win = xp[:, :, i : i + ys : s, j : j + xs : s]
                out += np.tensordot(w[:, :, i, j], win, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    if cig == 1 and cog == 1:
        # depthwise: one filter per channel
        out = np.zeros((n, c, oh, ow), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                win = xp[:, :, i : i + ys : s, j : j + xs : s]
                out += win * w[:, 0, i, j][None, :, None, None]
        return out

    xg = xp.reshape(n, g, cig, xp.shape[2], xp.shape[3])
    wg = w.reshape(g, cog, cig, k, k)
    out = np.zeros((n, g, cog, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            win = xg[..., i : i + ys : s, j : j + xs : s]
            out += np.einsum("goc,ngcyx->ngoyx", wg[..., i, j], win)
    return out.reshape(n, co, oh, ow)


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unroll k x k windows into shape (N, C*k*k, OH*OW), channel-major."""
    n, c, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(w, k, stride, padding)
    xp = _zero_pad(x, padding)
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (oh - 1) + 1 : stride,
                                  j : j + stride * (ow - 1) + 1 : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _conv2d_im2col(x: np.ndarray, kernel: ConvKernel, oh: int, ow: int) -> np.ndarray:
    w = kernel.weights.astype(x.dtype, copy=False)
    n = x.shape[0]
    g, k = kernel.groups, kernel.size
    co, cig = w.shape[0], w.shape[1]
    cols = im2col(x, k, kernel.stride, kernel.padding).reshape(n, g, cig * k * k, oh * ow)
    wg = w.reshape(g, co // g, cig * k * k)
    out = np.einsum("gok,ngkp->ngop", wg, cols)
    return np.ascontiguousarray(out.reshape(n, co, oh, ow))


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2."""
    _check_rank4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dimensions, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def relu6(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0, 6)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, clamped so the result stays strictly inside (0, 1) in x's dtype."""
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    info = np.finfo(x.dtype)
    return np.clip(out, info.smallest_subnormal, 1 - info.epsneg, out=out)


def _bilinear_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centre source indices and weights along one axis."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize using half-pixel centres (``align_corners=False``).

    No antialiasing is applied when shrinking.  Interpolation runs in float64
    and is rounded back to the input dtype, which keeps constant maps constant
    and the output inside the input's value range.
    """
    _check_rank4(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be at least 1x1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x.copy()
    xd = x.astype(np.float64)
    lo, hi, f = _bilinear_taps(h, out_h)
    f = f[:, None]
    rows = xd[:, :, lo, :] * (1.0 - f) + xd[:, :, hi, :] * f
    lo, hi, f = _bilinear_taps(w, out_w)
    out = rows[..., lo] * (1.0 - f) + rows[..., hi] * f
    return out.astype(x.dtype)


def _pad_widths(pad: PadSpec) -> tuple[int, int, int, int]:
    if isinstance(pad, (int, np.integer)):
        widths = (int(pad),) * 4
    else:
        widths = tuple(int(p) for p in pad)
        if len(widths) == 2:
            widths = (widths[0], widths[0], widths[1], widths[1])
        if len(widths) != 4:
            raise ValueError(f"pad must be an int, (rows, cols) or (top, bottom, left, right), got {pad}")
    if min(widths) < 0:
        raise ValueError(f"padding must be non-negative, got {widths}")
    return widths  # type: ignore[return-value]


def replicate_pad(x: np.ndarray, pad: PadSpec) -> np.ndarray:
    """Extend the border by copying edge pixels outward.

    ``pad`` is either one width for every side, (rows, cols), or
    (top, bottom, left, right).
    """
    _check_rank4(x)
    top, bottom, left, right = _pad_widths(pad)
    if top == bottom == left == right == 0:
        return x.copy()
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="edge")


def elementwise(a: np.ndarray, b: np.ndarray, op: Literal["add", "mul"]) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op} needs identical shapes, got {a.shape} and {b.shape}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def crop(x: np.ndarray, top: int, left: int, h: int, w: int) -> np.ndarray:
    _check_rank4(x)
    H, W = x.shape[2:]
    if top < 0 or left < 0 or h < 1 or w < 1 or top + h > H or left + w > W:
        raise ShapeError(
            f"crop window rows {top}:{top + h}, cols {left}:{left + w} "
            f"is outside the {H}x{W} image"
        )
    return x[:, :, top : top + h, left : left + w].copy()
