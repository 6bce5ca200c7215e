"""sklearn-style transformer wrappers around the stateless image kernels.

These make the tile operations composable with sklearn pipelines and
grid search (get_params/set_params come from BaseEstimator); the
functional APIs in stain/viewgeom remain the primitive layer.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .stain import (DEFAULT_STAIN_MATRIX, HsvRanges, hed_augment,
                    hsv_tile_filter, sample_hed_params)
from .viewgeom import effective_mpp_after_resize
from PIL import Image


def check_rgb_stack(X) -> np.ndarray:
    """Validate a batch of tiles as a (n, H, W, 3) uint8 array."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"expected (n, H, W, 3) RGB stack, got {X.shape}")
    if X.dtype != np.uint8:
        raise ValueError("tile stacks must be uint8")
    return X


class HsvTileFilter(BaseEstimator, TransformerMixin):
    """Selects tiles whose pixels mostly fall in the H&E-friendly HSV box."""

    def __init__(self, h_range=(90, 180), s_range=(8, 255), v_range=(103, 255),
                 min_fraction=0.60):
        self.h_range = h_range
        self.s_range = s_range
        self.v_range = v_range
        self.min_fraction = min_fraction

    def _ranges(self) -> HsvRanges:
        return HsvRanges(h=tuple(self.h_range), s=tuple(self.s_range),
                         v=tuple(self.v_range), min_fraction=self.min_fraction)

    def fit(self, X, y=None):
        return self

    def predict(self, X):
        """Accept flag per tile."""
        ranges = self._ranges()
        X = check_rgb_stack(X)
        return np.array([hsv_tile_filter(t, ranges)[0] for t in X])

    def score_samples(self, X):
        """In-range pixel fraction per tile."""
        ranges = self._ranges()
        X = check_rgb_stack(X)
        return np.array([hsv_tile_filter(t, ranges)[1] for t in X])

    def transform(self, X):
        """Drop rejected tiles."""
        X = check_rgb_stack(X)
        return X[self.predict(X)]


class HedAugmenter(BaseEstimator, TransformerMixin):
    """Random per-tile color jitter in stain-concentration space."""

    def __init__(self, sigma=0.05, seed=0, stain_matrix=None):
        self.sigma = sigma
        self.seed = seed
        self.stain_matrix = stain_matrix

    def fit(self, X, y=None):
        self.rng_ = np.random.default_rng(self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "rng_"):
            self.fit(X)
        matrix = self.stain_matrix or DEFAULT_STAIN_MATRIX
        X = check_rgb_stack(X)
        out = np.empty_like(X)
        for i, tile in enumerate(X):
            params = sample_hed_params(self.rng_, self.sigma)
            out[i] = hed_augment(tile, params, matrix)
        return out


class TileResizer(BaseEstimator, TransformerMixin):
    """Resize a stack of square tiles to the model input size."""

    def __init__(self, target_px=224, interpolation="bilinear"):
        self.target_px = target_px
        self.interpolation = interpolation

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_rgb_stack(X)
        interp = {"bilinear": Image.BILINEAR, "nearest": Image.NEAREST,
                  "bicubic": Image.BICUBIC}[self.interpolation]
        out = np.empty((X.shape[0], self.target_px, self.target_px, 3),
                       dtype=np.uint8)
        for i, tile in enumerate(X):
            out[i] = np.asarray(Image.fromarray(tile).resize(
                (self.target_px, self.target_px), interp))
        return out

    def output_mpp(self, source_px: int, source_mpp: float) -> float:
        return effective_mpp_after_resize(source_px, source_mpp, self.target_px)
