"""On-disk dataset layout and conversion of images into training regions.

Layout (our own; no public saliency dataset ships in this form)::

    root/
      manifest.txt        one sample id per line, '#' starts a comment
      images/<id>.ppm     stimulus (.ppm/.pgm, or .png with Pillow)
      fixations/<id>.pgm  binary fixation map, non-zero = fixated
      maps/<id>.f32       optional blurred density (.f32 or image)
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .imageio import read_image, read_map, read_pixels
from .metrics import gaussian_blur
from .network import NetworkSpec, TABLE1
from .tensor import crop, replicate_pad, resize_bilinear
from .tiling import SHORT_SIDE, extract_pairs, prepare
from .train import TrainSample

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")
MAP_SUFFIXES = (".f32",) + IMAGE_SUFFIXES


class LayoutError(ValueError):
    """A dataset directory does not follow the expected layout."""

    def __init__(self, message: str, path: Path):
        super().__init__(f"{path}: {message}")
        self.path = path


def _find(directory: Path, sample_id: str, suffixes) -> Optional[Path]:
    for suffix in suffixes:
        p = directory / f"{sample_id}{suffix}"
        if p.is_file():
            return p
    return None


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (1, 3, H, W)
    fixations: np.ndarray  # (H, W) bool
    density: Optional[np.ndarray]  # (H, W) or None


@dataclass(frozen=True)
class DatasetLayout:
    root: Path

    @classmethod
    def open(cls, root) -> "DatasetLayout":
        root = Path(root)
        if not root.is_dir():
            raise LayoutError("dataset root is not a directory", root)
        manifest = root / "manifest.txt"
        if not manifest.is_file():
            raise LayoutError("missing manifest.txt", manifest)
        if not (root / "images").is_dir():
            raise LayoutError("missing images/ directory", root / "images")
        return cls(root)

    @property
    def ids(self) -> list[str]:
        ids = []
        for line in (self.root / "manifest.txt").read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                ids.append(line)
        return ids

    def image_path(self, sample_id: str) -> Path:
        p = _find(self.root / "images", sample_id, IMAGE_SUFFIXES)
        if p is None:
            raise LayoutError(f"no image for sample {sample_id!r}", self.root / "images" / sample_id)
        return p

    def fixation_path(self, sample_id: str) -> Path:
        p = _find(self.root / "fixations", sample_id, IMAGE_SUFFIXES)
        if p is None:
            raise LayoutError(f"no fixation map for sample {sample_id!r}", self.root / "fixations" / sample_id)
        return p

    def density_path(self, sample_id: str) -> Optional[Path]:
        return _find(self.root / "maps", sample_id, MAP_SUFFIXES)

    def validate(self, need_fixations: bool = True) -> None:
        """Raise :class:`LayoutError` for the first id that does not resolve."""
        ids = self.ids
        if not ids:
            raise LayoutError("manifest lists no samples", self.root / "manifest.txt")
        for sample_id in ids:
            self.image_path(sample_id)
            if need_fixations:
                self.fixation_path(sample_id)

    def fixations(self, sample_id: str) -> np.ndarray:
        px = read_pixels(self.fixation_path(sample_id))
        if px.ndim == 3:
            px = px.max(axis=2)
        return px > 0

    def load(self, sample_id: str) -> Sample:
        image = read_image(self.image_path(sample_id))
        fix = self.fixations(sample_id)
        if fix.shape != image.shape[2:]:
            raise LayoutError(
                f"fixation map {fix.shape} does not match image {image.shape[2:]}",
                self.fixation_path(sample_id),
            )
        dp = self.density_path(sample_id)
        density = read_map(dp).astype(np.float64) if dp is not None else None
        return Sample(sample_id, image, fix, density)


def density_for(sample: Sample, sigma: float) -> np.ndarray:
    """Blurred fixation density at the sample's own resolution."""
    if sample.density is not None:
        return sample.density
    return gaussian_blur(sample.fixations.astype(np.float64), sigma)


def rescale_points(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Move fixation points to a grid of a different size (pixel-centre mapping)."""
    out = np.zeros(shape, dtype=bool)
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    ry = np.minimum(((ys + 0.5) * shape[0] / h).astype(np.intp), shape[0] - 1)
    rx = np.minimum(((xs + 0.5) * shape[1] / w).astype(np.intp), shape[1] - 1)
    out[ry, rx] = True
    return out


def label_map(sample: Sample, sigma: float, resized: tuple[int, int]) -> np.ndarray:
    """Density at the resized resolution, scaled so its maximum is 1."""
    if sample.density is not None:
        d = resize_bilinear(sample.density[None, None], *resized)[0, 0]
    else:
        d = gaussian_blur(rescale_points(sample.fixations, resized).astype(np.float64), sigma)
    peak = d.max()
    return d / peak if peak > 0 else d


def training_samples(
    sample: Sample, spec: NetworkSpec = TABLE1, sigma: float = 19.0, short_side: int = SHORT_SIDE
) -> list[TrainSample]:
    """One :class:`TrainSample` per region pair; labels are area averages of the density."""
    region = spec.input_size
    out_size = spec.output_size
    fine, coarse, plan = prepare(sample.image, region=region, short_side=short_side)
    labels = label_map(sample, sigma, plan.resized)[None, None].astype(np.float32)
    extra = (0, plan.fine[0] - plan.resized[0], 0, plan.fine[1] - plan.resized[1])
    labels = replicate_pad(labels, extra)
    f = region // out_size
    samples = []
    for pair in extract_pairs(fine, coarse, plan):
        r, c = pair.grid_pos
        lab = crop(labels, r * region, c * region, region, region)
        lab = lab.reshape(1, 1, out_size, f, out_size, f).mean(axis=(3, 5))
        samples.append(TrainSample(pair.fine, pair.coarse, np.clip(lab, 0, 1).astype(np.float32)))
    return samples
