"""Saliency evaluation metrics.

``S`` is a predicted saliency map, ``G_p`` a binary fixation map and ``G_b``
a blurred fixation density.  All maps are 2-D arrays of equal shape.
"""
from __future__ import annotations

import math
import os
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

# keep POT from importing every deep-learning backend it can find
for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

KLD_EPS = 1e-12

#: Column order of the benchmark tables.
METRIC_ORDER = ("auc_judd", "sim", "emd", "auc_borji", "sauc", "cc", "nss", "kld")
HIGHER_IS_BETTER = {
    "auc_judd": True, "sim": True, "emd": False, "auc_borji": True,
    "sauc": True, "cc": True, "nss": True, "kld": False,
}


class MetricError(ValueError):
    """Raised when a map cannot be scored (no fixations, zero variance, ...)."""


def _map(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricError(f"expected a 2-D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MetricError("map contains non-finite values")
    return arr


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"map shapes differ: {a.shape} vs {b.shape}")


def _fixations(s: np.ndarray, fix) -> np.ndarray:
    mask = np.asarray(fix) > 0
    _same_shape(s, mask)
    if not mask.any():
        raise MetricError("fixation map has no fixations")
    return mask


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at radius ceil(3*sigma), normalised to unit sum."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(points, sigma: float = 19.0) -> np.ndarray:
    """Separable Gaussian blur with replicated borders."""
    p = _map(points)
    k = gaussian_kernel(sigma)
    out = correlate1d(p, k, axis=0, mode="nearest")
    return correlate1d(out, k, axis=1, mode="nearest")


def roc_area(pos: np.ndarray, neg: np.ndarray) -> float:
    """Trapezoidal ROC area for a threshold sweep over every observed value.

    At threshold t, TPR = mean(pos >= t) and FPR = mean(neg >= t).  The curve
    is anchored at (0, 0) and (1, 1), so tied scores contribute one half.
    """
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tpr = 1.0 - np.searchsorted(pos, thresholds, side="left") / len(pos)
    fpr = 1.0 - np.searchsorted(neg, thresholds, side="left") / len(neg)
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.trapezoid(tpr, fpr))


def auc_judd(S, G_p) -> float:
    """ROC area with thresholds at the saliency values of the fixated pixels.

    Every non-fixated pixel is a negative.
    """
    s = _map(S)
    mask = _fixations(s, G_p)
    pos = np.sort(s[mask])
    neg = np.sort(s[~mask])
    if neg.size == 0:
        raise MetricError("every pixel is fixated; no negatives for AUC-Judd")
    thresholds = np.unique(pos)[::-1]
    tpr = 1.0 - np.searchsorted(pos, thresholds, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg, thresholds, side="left") / neg.size
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.trapezoid(tpr, fpr))


def _sampled_auc(pos: np.ndarray, pool: np.ndarray, splits: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    scores = np.empty(splits)
    for i in range(splits):
        neg = pool[rng.integers(0, pool.size, size=pos.size)]
        scores[i] = roc_area(pos, neg)
    return float(scores.mean())


def auc_borji(S, G_p, splits: int = 100, seed: int = 0) -> float:
    """Mean ROC area over ``splits`` draws of uniformly sampled non-fixated negatives."""
    s = _map(S)
    mask = _fixations(s, G_p)
    pool = s[~mask]
    if pool.size == 0:
        raise MetricError("every pixel is fixated; no negatives for AUC-Borji")
    return _sampled_auc(s[mask], pool, splits, seed)


def sauc(
    S, G_p, other_fixations: Sequence, splits: int = 100, seed: int = 0, exclude_own: bool = True
) -> float:
    """Shuffled AUC: negatives are S sampled at other images' fixation locations.

    With ``exclude_own`` (the default) locations fixated in this image are
    removed from the pool.
    """
    s = _map(S)
    mask = _fixations(s, G_p)
    pool_mask = np.zeros_like(mask)
    for other in other_fixations:
        other = np.asarray(other) > 0
        _same_shape(s, other)
        pool_mask |= other
    if exclude_own:
        pool_mask &= ~mask
    if not pool_mask.any():
        raise MetricError("shuffled-AUC negative pool is empty")
    return _sampled_auc(s[mask], s[pool_mask], splits, seed)


def _standardize(s: np.ndarray, what: str) -> np.ndarray:
    std = s.std()
    if std == 0 or not np.isfinite(std):
        raise MetricError(f"{what} is constant; it cannot be standardised")
    return (s - s.mean()) / std


def nss(S, G_p) -> float:
    """Mean of the standardised map (population std) at fixated pixels."""
    s = _map(S)
    mask = _fixations(s, G_p)
    return float(_standardize(s, "saliency map")[mask].mean())


def cc(S, G_b) -> float:
    """Pearson correlation over all pixels."""
    s, g = _map(S), _map(G_b)
    _same_shape(s, g)
    zs = _standardize(s, "saliency map")
    zg = _standardize(g, "density map")
    return float(np.clip((zs * zg).mean(), -1.0, 1.0))


def _as_distribution(x: np.ndarray, what: str) -> np.ndarray:
    if np.any(x < 0):
        raise MetricError(f"{what} has negative values")
    total = x.sum()
    if total <= 0:
        raise MetricError(f"{what} must have a positive sum")
    return x / total


def sim(S, G_b) -> float:
    """Histogram intersection of the two maps after each is scaled to unit sum."""
    s, g = _map(S), _map(G_b)
    _same_shape(s, g)
    return float(np.minimum(_as_distribution(s, "saliency map"), _as_distribution(g, "density map")).sum())


def kld(S, G_b) -> float:
    """KL(G || S) with a 1e-12 floor in the denominator; zero-mass cells of G add nothing."""
    s, g = _map(S), _map(G_b)
    _same_shape(s, g)
    p = _as_distribution(g, "density map")
    q = _as_distribution(s, "saliency map")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (q[nz] + KLD_EPS))))


def area_downsample(x: np.ndarray, max_grid: int) -> np.ndarray:
    """Sum-pool into f x f blocks with f chosen so the longer axis is <= max_grid.

    Edge blocks may be partial; their mass is kept.
    """
    h, w = x.shape
    f = max(1, -(-max(h, w) // max_grid))
    if f == 1:
        return x.copy()
    gh, gw = -(-h // f), -(-w // f)
    padded = np.zeros((gh * f, gw * f), dtype=x.dtype)
    padded[:h, :w] = x
    return padded.reshape(gh, f, gw, f).sum(axis=(1, 3))


def grid_distances(shape: tuple[int, int]) -> np.ndarray:
    rr, cc_ = np.indices(shape)
    pts = np.stack([rr.ravel(), cc_.ravel()], axis=1).astype(np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def transport_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Exact minimum-cost transport between two equal-shape grids of unit mass."""
    M = grid_distances(a.shape)
    pa, pb = a.ravel(), b.ravel()
    # exact network simplex needs matching totals to machine precision
    pb = pb * (pa.sum() / pb.sum())
    return float(ot.emd2(pa, pb, M, numItermax=10_000_000))


def emd(S, G_b, max_grid: int = 32) -> float:
    """Earth mover's distance in downsampled-cell units (Euclidean ground distance)."""
    s, g = _map(S), _map(G_b)
    _same_shape(s, g)
    s = _as_distribution(s, "saliency map")
    g = _as_distribution(g, "density map")
    ds = _as_distribution(area_downsample(s, max_grid), "saliency map")
    dg = _as_distribution(area_downsample(g, max_grid), "density map")
    return transport_cost(ds, dg)


def score_all(
    S,
    G_p,
    G_b,
    metrics: Optional[Sequence[str]] = None,
    other_fixations: Sequence = (),
    splits: int = 100,
    seed: int = 0,
    max_grid: int = 32,
) -> dict[str, float]:
    """Every requested metric for one image, in table column order."""
    wanted = list(metrics) if metrics else list(METRIC_ORDER)
    unknown = set(wanted) - set(METRIC_ORDER)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {METRIC_ORDER}")
    funcs = {
        "auc_judd": lambda: auc_judd(S, G_p),
        "sim": lambda: sim(S, G_b),
        "emd": lambda: emd(S, G_b, max_grid),
        "auc_borji": lambda: auc_borji(S, G_p, splits, seed),
        "sauc": lambda: sauc(S, G_p, other_fixations, splits, seed),
        "cc": lambda: cc(S, G_b),
        "nss": lambda: nss(S, G_p),
        "kld": lambda: kld(S, G_b),
    }
    return {name: funcs[name]() for name in METRIC_ORDER if name in wanted}
