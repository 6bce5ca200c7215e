"""Color-space math: RGB<->HSV, the HSV tile filter, and HED stain space.

Conventions:
  * HSV uses the 8-bit half-degree convention: hue in 0..179 (degrees/2,
    wrapped), saturation and value in 0..255, each rounded to the nearest
    integer. The filter thresholds below are only meaningful on this scale.
  * Optical density per channel is -log10((I + 1) / 255); the +1 offset
    keeps black pixels finite and makes the HED round trip exact up to
    floating point.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


LOG_EPS = 1.0  # 8-bit offset added before the log transform


@dataclass(frozen=True)
class HsvRanges:
    """Inclusive per-channel acceptance ranges plus the pixel fraction bar."""

    h: tuple[int, int] = (90, 180)
    s: tuple[int, int] = (8, 255)
    v: tuple[int, int] = (103, 255)
    min_fraction: float = 0.60

    def __post_init__(self):
        for lo, hi in (self.h, self.s, self.v):
            if lo > hi:
                raise ValueError("range lo must not exceed hi")
        if not 0 <= self.min_fraction <= 1:
            raise ValueError("min_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class HedParams:
    """Per-stain multipliers and offsets applied in HED space."""

    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)
    beta: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StainMatrix:
    """Unit-norm optical-density vectors for H, E, DAB and their inverse."""

    rows: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "StainMatrix":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (3, 3):
            raise ValueError("stain matrix must be 3x3")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0):
            raise ValueError("stain vectors must be nonzero")
        rows = rows / norms[:, None]
        inverse = np.linalg.inv(rows)
        if not np.all(np.isfinite(inverse)):
            raise ValueError("stain matrix is singular")
        return cls(rows=rows, inverse=inverse)


def load_stain_matrix(path=None) -> StainMatrix:
    """Load the stain basis from a 3x3 plain-text file (rows H, E, DAB).

    Without a path, the packaged Ruifrok-Johnston constants are used.
    Rows are re-normalized on load so unit norm holds to 1e-9 despite the
    file's 6-decimal precision.
    """
    if path is None:
        text = resources.files("pathtiles.data").joinpath("stain_matrix.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([float(tok) for tok in line.split()])
    return StainMatrix.from_rows(rows)


DEFAULT_STAIN_MATRIX = load_stain_matrix()


def rgb_to_hsv_array(rgb: np.ndarray):
    """Vectorized hexcone RGB->HSV on the 8-bit half-degree scale.

    Returns integer arrays (h in 0..179, s in 0..255, v in 0..255).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn

    v = np.rint(mx).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(mx > 0, np.rint(255.0 * delta / np.where(mx > 0, mx, 1)), 0)
    s = s.astype(np.int64)

    # Half-degrees as a single exact-integer-numerator division so that
    # .5 ties are exactly representable and np.rint resolves them with
    # clean round-half-even; a 60*(x/delta)/2 float chain misses ties.
    safe = np.where(delta > 0, delta, 1)
    num = np.where(
        mx == r, np.mod(30.0 * (g - b), 180.0 * safe),
        np.where(mx == g, 30.0 * (b - r) + 60.0 * safe,
                 30.0 * (r - g) + 120.0 * safe))
    h = np.where(delta == 0, 0,
                 np.rint(num / safe).astype(np.int64) % 180)
    return h, s, v


def rgb_to_hsv(pixel):
    """Scalar convenience wrapper: (R, G, B) -> (h, s, v) integers."""
    h, s, v = rgb_to_hsv_array(np.asarray(pixel, dtype=np.float64))
    return int(h), int(s), int(v)


def hsv_tile_filter(pixels: np.ndarray, ranges: HsvRanges = HsvRanges()):
    """Accept a tile iff enough pixels fall inside all three HSV ranges.

    Returns (accept, in_range_fraction); the fraction bar is inclusive.
    """
    if pixels.size == 0:
        raise ValueError("tile must be non-empty")
    h, s, v = rgb_to_hsv_array(pixels)
    in_range = ((h >= ranges.h[0]) & (h <= ranges.h[1])
                & (s >= ranges.s[0]) & (s <= ranges.s[1])
                & (v >= ranges.v[0]) & (v <= ranges.v[1]))
    fraction = float(np.count_nonzero(in_range)) / in_range.size
    return fraction >= ranges.min_fraction, fraction


def rgb_to_hed(pixels: np.ndarray, matrix: StainMatrix = DEFAULT_STAIN_MATRIX) -> np.ndarray:
    """Deconvolve 8-bit RGB into real-valued H, E, DAB concentration planes."""
    od = -np.log10((np.asarray(pixels, dtype=np.float64) + LOG_EPS) / 255.0)
    return od @ matrix.inverse


def hed_to_rgb(hed: np.ndarray, matrix: StainMatrix = DEFAULT_STAIN_MATRIX) -> np.ndarray:
    """Recompose HED planes into 8-bit RGB (inverse of rgb_to_hed)."""
    od = np.asarray(hed, dtype=np.float64) @ matrix.rows
    intensity = np.clip(255.0 * np.power(10.0, -od) - LOG_EPS, 0.0, 255.0)
    return np.rint(intensity).astype(np.uint8)


def hed_augment(pixels: np.ndarray, params: HedParams,
                matrix: StainMatrix = DEFAULT_STAIN_MATRIX) -> np.ndarray:
    """Scale and shift stain concentrations per channel: hed' = a*hed + b."""
    hed = rgb_to_hed(pixels, matrix)
    hed = hed * np.asarray(params.alpha, dtype=np.float64) \
        + np.asarray(params.beta, dtype=np.float64)
    return hed_to_rgb(hed, matrix)


def sample_hed_params(rng: np.random.Generator, sigma: float = 0.05) -> HedParams:
    """Draw alpha in [1-sigma, 1+sigma] and beta in [-sigma, sigma].

    Draw order: three alphas, then three betas.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    alpha = tuple(rng.uniform(1.0 - sigma, 1.0 + sigma, size=3).tolist())
    beta = tuple(rng.uniform(-sigma, sigma, size=3).tolist())
    return HedParams(alpha=alpha, beta=beta)
