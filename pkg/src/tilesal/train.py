"""MAE loss, Adam and the mini-batch training loop for a :class:`DualModel`."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import GradientSet, backward, backward_batch, mae_loss  # noqa: F401
from .network import DualModel, NetworkWeights, atomic_write, decode_tensors, encode_tensors


@dataclass(frozen=True)
class TrainSample:
    fine: np.ndarray  # (1, 3, R, R)
    coarse: np.ndarray  # (1, 3, R, R)
    label: np.ndarray  # (1, 1, r, r), values in [0, 1]

    def __post_init__(self):
        if self.label.size and (self.label.min() < 0 or self.label.max() > 1):
            raise ValueError("label values must lie in [0, 1]")
        if self.fine.shape != self.coarse.shape:
            raise ValueError(f"fine {self.fine.shape} and coarse {self.coarse.shape} regions differ")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, weights: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            {k: np.zeros_like(w) for k, w in weights.items()},
            {k: np.zeros_like(w) for k, w in weights.items()},
            **hyper,
        )


def adam_step(
    weights: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are left untouched."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != weight shape {w.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_w[name] = (w - update).astype(w.dtype)
        new_m[name] = m.astype(w.dtype)
        new_v[name] = v.astype(w.dtype)
    return new_w, replace(state, m=new_m, v=new_v, step=t)


def _apply(model: DualModel, flat: dict[str, np.ndarray]) -> DualModel:
    fine = {k[5:]: v for k, v in flat.items() if k.startswith("fine.")}
    coarse = {k[7:]: v for k, v in flat.items() if k.startswith("coarse.")}
    return DualModel(NetworkWeights(model.spec, fine), NetworkWeights(model.spec, coarse))


def _stack(samples: Sequence[TrainSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.concatenate([s.fine for s in samples]),
        np.concatenate([s.coarse for s in samples]),
        np.concatenate([s.label for s in samples]),
    )


@dataclass
class TrainResult:
    model: DualModel
    state: AdamState
    trace: list[tuple[int, int, float]] = field(default_factory=list)  # (step, epoch, batch_loss)


def train(
    dataset: Sequence[TrainSample],
    model: DualModel,
    epochs: int = 1,
    batch_size: int = 48,
    seed: int = 0,
    lr: float = 1e-3,
    state: Optional[AdamState] = None,
    max_steps: Optional[int] = None,
    on_step: Optional[Callable[[int, int, float], None]] = None,
) -> TrainResult:
    """Mini-batch Adam on the mean absolute error of the merged prediction.

    Each epoch draws a fresh permutation from ``seed``; the last batch of an
    epoch may be short, so one epoch is ceil(N / batch_size) updates.  Passing a
    previous ``state`` resumes its step counter and moments.
    """
    if not dataset:
        raise ValueError("training needs at least one sample")
    if batch_size < 1 or epochs < 0:
        raise ValueError(f"invalid batch_size {batch_size} / epochs {epochs}")
    flat = model.named_tensors()
    if state is None:
        state = AdamState.zeros_like(flat, lr=lr)
    rng = np.random.default_rng(seed)
    trace = []
    n = len(dataset)
    done = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if max_steps is not None and done >= max_steps:
                break
            batch = [dataset[i] for i in order[start : start + batch_size]]
            loss, g_fine, g_coarse = backward_batch(*_stack(batch), model)
            grads = {f"fine.{k}": v for k, v in g_fine.items()}
            grads.update({f"coarse.{k}": v for k, v in g_coarse.items()})
            flat, state = adam_step(flat, grads, state)
            model = _apply(model, flat)
            done += 1
            trace.append((state.step, epoch, loss))
            if on_step:
                on_step(state.step, epoch, loss)
    return TrainResult(model, state, trace)


def evaluate_loss(dataset: Sequence[TrainSample], model: DualModel) -> float:
    """Mean absolute error over the whole dataset (no gradient)."""
    from .autodiff import forward_cached

    fine, coarse, labels = _stack(dataset)
    s_f, _ = forward_cached(fine, model.fine)
    s_c, _ = forward_cached(coarse, model.coarse)
    return mae_loss(s_f * s_c, labels)


def loss_trace_csv(trace: Sequence[tuple[int, int, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "epoch", "batch_loss"])
    for step, epoch, loss in trace:
        writer.writerow([step, epoch, repr(float(loss))])
    return buf.getvalue()


def save_adam_state(state: AdamState, path) -> None:
    """Moments plus a one-element ``adam.step`` tensor, in the weight-file format."""
    tensors = {f"adam.m.{k}": v for k, v in state.m.items()}
    tensors.update({f"adam.v.{k}": v for k, v in state.v.items()})
    if state.step >= 2**24:
        raise ValueError("step counter exceeds exact float32 range")
    tensors["adam.step"] = np.array([state.step], dtype=np.float32)
    atomic_write(path, encode_tensors(tensors, 0))


def load_adam_state(path, **hyper) -> AdamState:
    """Read moments and step counter; hyperparameters come from the caller."""
    with open(path, "rb") as fh:
        _, tensors = decode_tensors(fh.read())
    m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m.")}
    v = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.v.")}
    if "adam.step" not in tensors or set(m) != set(v):
        raise ValueError(f"{path} is not an optimizer state file")
    return AdamState(m, v, int(tensors["adam.step"][0]), **hyper)
