"""Regional input: resize, pad, tile into fine/coarse pairs, predict, mosaic."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .network import ActivationMeter, DualModel, NetworkWeights, network_forward
from .tensor import ShapeError, crop, elementwise, replicate_pad, resize_bilinear

REGION = 80
SHORT_SIDE = 480


@dataclass(frozen=True)
class TilingPlan:
    original: tuple[int, int]  # (H, W) of the input image
    resized: tuple[int, int]  # short side scaled to SHORT_SIDE
    fine: tuple[int, int]  # resized, replicate-padded up to multiples of the region size
    region: int = REGION

    @property
    def pad(self) -> int:
        return self.region

    @property
    def coarse(self) -> tuple[int, int]:
        return self.fine[0] + 2 * self.pad, self.fine[1] + 2 * self.pad

    @property
    def rows(self) -> int:
        return self.fine[0] // self.region

    @property
    def cols(self) -> int:
        return self.fine[1] // self.region

    @property
    def count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class RegionPair:
    fine: np.ndarray  # (1, 3, R, R)
    coarse: np.ndarray  # (1, 3, R, R), resized from a 3R x 3R crop
    grid_pos: tuple[int, int]


def resized_shape(h: int, w: int, short_side: int = SHORT_SIDE) -> tuple[int, int]:
    """Scale so the short side equals ``short_side``; the long side is rounded up."""
    if h <= w:
        return short_side, -(-w * short_side // h)
    return -(-h * short_side // w), short_side


def make_plan(h: int, w: int, region: int = REGION, short_side: int = SHORT_SIDE) -> TilingPlan:
    if h < 1 or w < 1:
        raise ShapeError(f"image must be at least 1x1, got {h}x{w}")
    if short_side % region:
        raise ValueError(f"short side {short_side} must be a multiple of the region size {region}")
    rh, rw = resized_shape(h, w, short_side)
    fh, fw = -(-rh // region) * region, -(-rw // region) * region
    return TilingPlan((h, w), (rh, rw), (fh, fw), region)


def prepare(
    image: np.ndarray, region: int = REGION, short_side: int = SHORT_SIDE
) -> tuple[np.ndarray, np.ndarray, TilingPlan]:
    """Return (fine image, coarse image, plan) for a (1, C, H, W) image."""
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"expected a single (1, C, H, W) image, got {image.shape}")
    plan = make_plan(image.shape[2], image.shape[3], region, short_side)
    fine = resize_bilinear(image, *plan.resized)
    extra_h = plan.fine[0] - plan.resized[0]
    extra_w = plan.fine[1] - plan.resized[1]
    if extra_h or extra_w:
        fine = replicate_pad(fine, (0, extra_h, 0, extra_w))
    coarse = replicate_pad(fine, plan.pad)
    return fine, coarse, plan


def extract_pairs(fine: np.ndarray, coarse: np.ndarray, plan: TilingPlan) -> list[RegionPair]:
    """Row-major region pairs.

    The coarse window is centred on the fine one: in padded coordinates its
    top-left is (pad + r*R + R/2 - 3R/2, ...) = (r*R, c*R) because pad = R.
    """
    if fine.shape[2:] != plan.fine or coarse.shape[2:] != plan.coarse:
        raise ShapeError(
            f"images {fine.shape[2:]} / {coarse.shape[2:]} do not match plan "
            f"{plan.fine} / {plan.coarse}"
        )
    R = plan.region
    pairs = []
    for r in range(plan.rows):
        for c in range(plan.cols):
            f = crop(fine, r * R, c * R, R, R)
            ctx = crop(coarse, r * R, c * R, 3 * R, 3 * R)
            pairs.append(RegionPair(f, resize_bilinear(ctx, R, R), (r, c)))
    return pairs


Forward = Callable[..., np.ndarray]


def predict_region(
    pair: RegionPair,
    model: DualModel,
    forward: Forward = network_forward,
    meter: Optional[ActivationMeter] = None,
) -> np.ndarray:
    """Merged (1, 1, r, r) saliency region for one pair."""
    s_fine = forward(pair.fine, model.fine, meter=meter)
    s_coarse = forward(pair.coarse, model.coarse, meter=meter)
    return elementwise(s_fine, s_coarse, "mul")


def assemble(regions: dict[tuple[int, int], np.ndarray], plan: TilingPlan) -> np.ndarray:
    """Upsample each merged region to R x R and place it at its grid cell."""
    R = plan.region
    mosaic = np.empty((1, 1) + plan.fine, dtype=np.float32)
    for (r, c), s in regions.items():
        mosaic[:, :, r * R : (r + 1) * R, c * R : (c + 1) * R] = resize_bilinear(s, R, R)
    return mosaic


def predict(
    image: np.ndarray,
    model: DualModel,
    workers: int = 1,
    forward: Forward = network_forward,
    short_side: int = SHORT_SIDE,
) -> np.ndarray:
    """Saliency map with the original image's (H, W), values in (0, 1)."""
    region = model.spec.input_size
    fine, coarse, plan = prepare(image, region=region, short_side=short_side)
    pairs = extract_pairs(fine, coarse, plan)
    del fine, coarse
    workers = max(1, min(workers, len(pairs)))
    if workers == 1:
        merged = [predict_region(p, model, forward) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            merged = list(pool.map(lambda p: predict_region(p, model, forward), pairs))
    mosaic = assemble({p.grid_pos: s for p, s in zip(pairs, merged)}, plan)
    rh, rw = plan.resized
    mosaic = mosaic[:, :, :rh, :rw]
    out = resize_bilinear(np.ascontiguousarray(mosaic), *plan.original)
    return out[0, 0]


def tile_fine_outputs(image: np.ndarray, net: NetworkWeights, short_side: int = SHORT_SIDE) -> np.ndarray:
    """Mosaic of the fine network alone, cropped and resized like :func:`predict`."""
    fine, coarse, plan = prepare(image, region=net.spec.input_size, short_side=short_side)
    pairs = extract_pairs(fine, coarse, plan)
    mosaic = assemble({p.grid_pos: network_forward(p.fine, net) for p in pairs}, plan)
    rh, rw = plan.resized
    return resize_bilinear(np.ascontiguousarray(mosaic[:, :, :rh, :rw]), *plan.original)[0, 0]
