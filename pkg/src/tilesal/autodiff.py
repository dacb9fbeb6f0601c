"""Reverse-mode gradients for the layer set used by the saliency network.

Every forward layer here goes through the same primitives as
:func:`tilesal.network.network_forward`; the cache keeps the pre-activation
tensors the backward pass needs.  Conventions: ReLU6 passes gradient only on
the open interval (0, 6); max pooling routes to the first maximal element of
each window in row-major order; the subgradient of |e| at 0 is 0.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .network import BlockSpec, DualModel, NetworkWeights, PoolSpec
from .tensor import ConvKernel, ShapeError, _zero_pad, conv2d, maxpool2, sigmoid

GradientSet = dict[str, np.ndarray]


def conv2d_backward(
    x: np.ndarray, kernel: ConvKernel, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a grouped convolution w.r.t. its input and its weights."""
    w = kernel.weights.astype(x.dtype, copy=False)
    n, c, h, wd = x.shape
    g, k, s, p = kernel.groups, kernel.size, kernel.stride, kernel.padding
    co, cig = w.shape[0], w.shape[1]
    cog = co // g
    oh, ow = grad_out.shape[2:]
    xp = _zero_pad(x, p)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    ys, xs = s * (oh - 1) + 1, s * (ow - 1) + 1

    for i in range(k):
        for j in range(k):
            win = xp[:, :, i : i + ys : s, j : j + xs : s]
            gwin = gxp[:, :, i : i + ys : s, j : j + xs : s]
            if g == 1:
                gw[:, :, i, j] = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
                gwin += np.tensordot(w[:, :, i, j], grad_out, axes=([0], [1])).transpose(1, 0, 2, 3)
            elif cig == 1 and cog == 1:
                gw[:, 0, i, j] = np.einsum("ncyx,ncyx->c", grad_out, win)
                gwin += grad_out * w[:, 0, i, j][None, :, None, None]
            else:
                go = grad_out.reshape(n, g, cog, oh, ow)
                wing = win.reshape(n, g, cig, oh, ow)
                gw[:, :, i, j] = np.einsum("ngoyx,ngcyx->goc", go, wing).reshape(co, cig)
                wg = w[:, :, i, j].reshape(g, cog, cig)
                gwin += np.einsum("goc,ngoyx->ngcyx", wg, go).reshape(n, c, oh, ow)
    gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
    return np.ascontiguousarray(gx), gw


def maxpool2_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    arg = windows.reshape(n, c, h // 2, w // 2, 4).argmax(axis=-1)
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(routed, arg[..., None], grad_out[..., None], axis=-1)
    routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return routed.reshape(n, c, h, w)


def relu6_backward(pre: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * ((pre > 0) & (pre < 6))


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def forward_cached(x: np.ndarray, net: NetworkWeights) -> tuple[np.ndarray, list]:
    """Forward pass that also returns what :func:`network_backward` needs."""
    cache = []
    for name, layer in net.spec.named_layers():
        if isinstance(layer, PoolSpec):
            cache.append((name, layer, x))
            x = maxpool2(x)
        elif isinstance(layer, BlockSpec):
            ke = ConvKernel.same(net[f"{name}.expand"])
            kd = ConvKernel.same(net[f"{name}.depthwise"], groups=layer.expand_channels)
            kb = ConvKernel.same(net[f"{name}.bottleneck"])
            ze = conv2d(x, ke)
            e = np.clip(ze, 0, 6)
            zd = conv2d(e, kd)
            d = np.clip(zd, 0, 6)
            y = conv2d(d, kb)
            if layer.use_residual:
                y = y + x
            cache.append((name, layer, (x, ze, e, zd, d)))
            x = y
        else:
            z = conv2d(x, ConvKernel.same(net[name]))
            cache.append((name, layer, (x, z)))
            x = z if name == "head" else np.clip(z, 0, 6)
        _check_finite(name, x)
    out = sigmoid(x)
    cache.append(("sigmoid", None, out))
    return out, cache


def network_backward(cache: list, net: NetworkWeights, grad_out: np.ndarray) -> tuple[np.ndarray, GradientSet]:
    """Back-propagate ``grad_out`` (w.r.t. the sigmoid output) through one network."""
    grads: GradientSet = {}
    _, _, s = cache[-1]
    g = grad_out * s * (1 - s)
    for name, layer, saved in reversed(cache[:-1]):
        if isinstance(layer, PoolSpec):
            g = maxpool2_backward(saved, g)
        elif isinstance(layer, BlockSpec):
            x, ze, e, zd, d = saved
            skip = g
            gd, grads[f"{name}.bottleneck"] = conv2d_backward(d, ConvKernel.same(net[f"{name}.bottleneck"]), g)
            gd = relu6_backward(zd, gd)
            ge, grads[f"{name}.depthwise"] = conv2d_backward(
                e, ConvKernel.same(net[f"{name}.depthwise"], groups=layer.expand_channels), gd
            )
            ge = relu6_backward(ze, ge)
            gx, grads[f"{name}.expand"] = conv2d_backward(x, ConvKernel.same(net[f"{name}.expand"]), ge)
            g = gx + skip if layer.use_residual else gx
        else:
            x, z = saved
            if name != "head":
                g = relu6_backward(z, g)
            g, grads[name] = conv2d_backward(x, ConvKernel.same(net[name]), g)
        _check_finite(name, g)
        for key, val in grads.items():
            if key == name or key.startswith(name + "."):
                _check_finite(key, val)
    return g, {k: grads[k] for k in net.spec.kernel_shapes()}


def mae_loss(pred: np.ndarray, label: np.ndarray) -> float:
    if pred.shape != label.shape:
        raise ShapeError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    return float(np.mean(np.abs(pred.astype(np.float64) - label)))


def mae_grad(pred: np.ndarray, label: np.ndarray) -> np.ndarray:
    return (np.sign(pred - label) / pred.size).astype(pred.dtype)


def backward_batch(
    fine: np.ndarray, coarse: np.ndarray, labels: np.ndarray, model: DualModel
) -> tuple[float, GradientSet, GradientSet]:
    """Loss and gradients for a stacked batch; the loss is the mean over all label elements."""
    s_fine, cache_f = forward_cached(fine, model.fine)
    s_coarse, cache_c = forward_cached(coarse, model.coarse)
    pred = s_fine * s_coarse
    loss = mae_loss(pred, labels)
    g = mae_grad(pred, labels)
    _, grads_f = network_backward(cache_f, model.fine, g * s_coarse)
    _, grads_c = network_backward(cache_c, model.coarse, g * s_fine)
    return loss, grads_f, grads_c


def backward(sample, model: DualModel) -> tuple[float, GradientSet, GradientSet]:
    """Loss and exact gradients for one :class:`~tilesal.train.TrainSample`."""
    return backward_batch(sample.fine, sample.coarse, sample.label, model)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-3, index: Optional[tuple] = None):
    """Central difference of scalar ``f`` w.r.t. ``x`` (modified in place, then restored).

    With ``index`` only that coordinate is evaluated and a float is returned.
    """
    def at(idx):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        return (fp - fm) / (2 * h)

    if index is not None:
        return at(index)
    out = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        out[idx] = at(idx)
    return out
