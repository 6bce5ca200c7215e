"""Evaluation-time image geometry: crops, resizes, and effective spacing.

Resizing a tile never changes the slide region it covers, so the
physical extent source_px * source_mpp is conserved and the spacing
rescales accordingly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import CropTooLarge
from .slide import TileImage

_INTERP = {
    "bilinear": Image.BILINEAR,
    "nearest": Image.NEAREST,
    "bicubic": Image.BICUBIC,
}


@dataclass(frozen=True)
class ResizeSpec:
    """Target geometry for feeding tiles to a model."""

    target_px: int = 224
    strategy: str = "resize"  # "resize" or "center-crop-then-resize"
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.strategy not in ("resize", "center-crop-then-resize"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.interpolation not in _INTERP:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def effective_mpp_after_resize(source_px: int, source_mpp: float,
                               target_px: int) -> float:
    """Pixel spacing after resampling to ``target_px`` on a side."""
    if source_px <= 0 or source_mpp <= 0 or target_px <= 0:
        raise ValueError("all inputs must be positive")
    return source_mpp * source_px / target_px


def center_crop(tile: TileImage, crop_px: int) -> TileImage:
    """Centered square crop; offsets are floor((dim - crop) / 2)."""
    if crop_px > tile.width_px or crop_px > tile.height_px:
        raise CropTooLarge(
            f"crop {crop_px} exceeds tile {tile.width_px}x{tile.height_px}")
    ox = (tile.width_px - crop_px) // 2
    oy = (tile.height_px - crop_px) // 2
    return TileImage(
        pixels=np.ascontiguousarray(tile.pixels[oy:oy + crop_px, ox:ox + crop_px]),
        mpp=tile.mpp,
        origin_l0=(tile.origin_l0[0] + ox, tile.origin_l0[1] + oy),
        slide_id=tile.slide_id)


def resize_tile(tile: TileImage, target_px: int,
                interpolation: str = "bilinear") -> TileImage:
    """Resample a square tile to target_px, rescaling its mpp."""
    if tile.width_px != tile.height_px:
        raise ValueError("resize_tile expects a square tile; center_crop first")
    if tile.width_px == target_px:
        return tile
    out = np.asarray(Image.fromarray(tile.pixels).resize(
        (target_px, target_px), _INTERP[interpolation]))
    return TileImage(
        pixels=np.ascontiguousarray(out),
        mpp=effective_mpp_after_resize(tile.width_px, tile.mpp, target_px),
        origin_l0=tile.origin_l0,
        slide_id=tile.slide_id)


def apply_resize_spec(tile: TileImage, spec: ResizeSpec) -> TileImage:
    """Run the configured geometry chain on one tile."""
    if spec.strategy == "center-crop-then-resize":
        tile = center_crop(tile, min(tile.width_px, tile.height_px))
    return resize_tile(tile, spec.target_px, spec.interpolation)
