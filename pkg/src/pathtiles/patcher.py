"""Online patching: foreground masks and rejection sampling of tiles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MaxAttemptsExceeded, OutOfBounds
from .slide import SlideHandle, TileImage, read_region
from .stain import rgb_to_hsv_array

# A thumbnail pixel counts as tissue when it is not near-white:
# saturation >= 20 or value <= 210 on the 8-bit scale.
FOREGROUND_MIN_SATURATION = 20
FOREGROUND_MAX_VALUE = 210
DEFAULT_MASK_MPP = 8.0


@dataclass
class ForegroundMask:
    """Boolean thumbnail grid used for rejection sampling."""

    bits: np.ndarray
    mask_mpp: float
    level0_mpp: float
    slide_id: str = ""

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def fraction(self) -> float:
        return float(np.count_nonzero(self.bits)) / self.bits.size


@dataclass(frozen=True)
class SamplerParams:
    tile_size_px: int = 256
    mpp_choices: tuple[float, ...] = (2.0, 1.0, 0.5, 0.25)
    foreground_threshold: float = 0.40
    max_attempts: int = 1000

    def __post_init__(self):
        if self.tile_size_px <= 0:
            raise ValueError("tile_size_px must be positive")
        if not self.mpp_choices or any(m <= 0 for m in self.mpp_choices):
            raise ValueError("mpp_choices must be non-empty and positive")
        if not 0 < self.foreground_threshold <= 1:
            raise ValueError("foreground_threshold must lie in (0, 1]")
        if self.max_attempts <= 0:
            raise ValueError("max_attempts must be positive")


@dataclass
class TileCandidate:
    tile: TileImage
    foreground_fraction: float
    attempt_count: int
    rng_draws: int


def compute_foreground_mask(slide: SlideHandle,
                            mask_mpp: float = DEFAULT_MASK_MPP) -> ForegroundMask:
    """Threshold a thumbnail read at ``mask_mpp`` into a tissue mask."""
    if mask_mpp < slide.level0_mpp:
        raise ValueError("mask_mpp must be at least the slide's level0_mpp")
    gw = int(slide.width_px * slide.level0_mpp / mask_mpp)
    gh = int(slide.height_px * slide.level0_mpp / mask_mpp)
    thumb = read_region(slide, (0, 0), mask_mpp, gw, gh)
    _, s, v = rgb_to_hsv_array(thumb.pixels)
    bits = (s >= FOREGROUND_MIN_SATURATION) | (v <= FOREGROUND_MAX_VALUE)
    return ForegroundMask(bits=bits, mask_mpp=mask_mpp,
                          level0_mpp=slide.level0_mpp, slide_id=slide.slide_id)


def foreground_fraction(mask: ForegroundMask, origin_l0, tile_size_px: int,
                        tile_mpp: float) -> float:
    """Fraction of mask cells overlapping the tile's physical footprint."""
    x_um = origin_l0[0] * mask.level0_mpp
    y_um = origin_l0[1] * mask.level0_mpp
    size_um = tile_size_px * tile_mpp
    c0 = math.floor(x_um / mask.mask_mpp)
    r0 = math.floor(y_um / mask.mask_mpp)
    c1 = math.ceil((x_um + size_um) / mask.mask_mpp)
    r1 = math.ceil((y_um + size_um) / mask.mask_mpp)
    if c0 < 0 or r0 < 0 or c1 > mask.width + 1 or r1 > mask.height + 1:
        raise OutOfBounds(f"tile footprint {c0},{r0}..{c1},{r1} outside mask grid")
    cells = mask.bits[r0:min(r1, mask.height), c0:min(c1, mask.width)]
    if cells.size == 0:
        raise OutOfBounds("tile footprint covers no mask cells")
    return float(np.count_nonzero(cells)) / cells.size


def draw_position(slide: SlideHandle, params: SamplerParams,
                  rng: np.random.Generator):
    """One sampling draw: (mpp, x, y), in the documented order mpp, x, y.

    Origins are uniform over all level-0 positions where the footprint
    fits. Returns None for an mpp whose footprint exceeds the slide.
    """
    mpp = params.mpp_choices[int(rng.integers(len(params.mpp_choices)))]
    foot = round(params.tile_size_px * mpp / slide.level0_mpp)
    if foot > slide.width_px or foot > slide.height_px:
        return None
    x = int(rng.integers(0, slide.width_px - foot + 1))
    y = int(rng.integers(0, slide.height_px - foot + 1))
    return mpp, x, y


def sample_tile(slide: SlideHandle, mask: ForegroundMask, params: SamplerParams,
                rng: np.random.Generator) -> TileCandidate:
    """Rejection-sample one tile above the foreground threshold.

    Each attempt draws (mpp, x, y); the first draw whose footprint clears
    ``params.foreground_threshold`` is read from the slide and returned.
    """
    draws = 0
    for attempt in range(1, params.max_attempts + 1):
        pos = draw_position(slide, params, rng)
        draws += 3
        if pos is None:
            continue
        mpp, x, y = pos
        frac = foreground_fraction(mask, (x, y), params.tile_size_px, mpp)
        if frac >= params.foreground_threshold:
            tile = read_region(slide, (x, y), mpp,
                               params.tile_size_px, params.tile_size_px)
            return TileCandidate(tile=tile, foreground_fraction=frac,
                                 attempt_count=attempt, rng_draws=draws)
    raise MaxAttemptsExceeded(
        f"no tile above foreground threshold {params.foreground_threshold} "
        f"in {params.max_attempts} attempts on slide {slide.slide_id}",
        slide_id=slide.slide_id, attempts=params.max_attempts)


def physical_extent(size_px: int, mpp: float) -> float:
    """Physical side length in µm of a square region."""
    if size_px <= 0 or mpp <= 0:
        raise ValueError("size_px and mpp must be positive")
    return size_px * mpp
