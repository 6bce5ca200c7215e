"""Numeric kernels from the training recipe.

KDE uniformity regularizer with its analytic gradient, the KoLeo
baseline, CLS+Mean token aggregation, and the view-geometry / schedule
arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateBatch, DuplicateRows, EmptyPatchSet, NotDivisible


@dataclass(frozen=True)
class ViewConfig:
    """Crop-view geometry of one training stage."""

    local_crop_px: int = 98
    global_crop_px: int = 224
    patch_px: int = 14
    train_tile_px: int = 256
    mpp_choices: tuple[float, ...] = (2.0, 1.0, 0.5, 0.25)

    def __post_init__(self):
        if self.global_crop_px % self.patch_px != 0:
            raise ValueError("global_crop_px must be divisible by patch_px")

    def physical_extents_um(self) -> tuple[float, ...]:
        return tuple(self.train_tile_px * m for m in self.mpp_choices)


STANDARD_VIEW = ViewConfig()


@dataclass(frozen=True)
class ScheduleConfig:
    per_gpu_batch: int
    gpu_count: int
    grad_accum_steps: int
    base_lr: float = 3.5e-4
    iterations: int = 1_000_000

    def __post_init__(self):
        for name in ("per_gpu_batch", "gpu_count", "grad_accum_steps", "iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive integer")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


def _check_batch(batch: np.ndarray) -> np.ndarray:
    z = np.asarray(batch, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("batch must be an n x d matrix")
    if z.shape[0] < 2:
        raise DegenerateBatch(f"need at least 2 embeddings, got {z.shape[0]}")
    return z


def _pairwise_sq_dists(z: np.ndarray) -> np.ndarray:
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kde_uniformity_loss(batch: np.ndarray, t: float = 2.0):
    """Gaussian-kernel uniformity penalty over all unordered pairs.

    loss = log( (2 / (n (n-1))) * sum_{i<j} exp(-t ||z_i - z_j||^2) ),
    with the analytic gradient returned in ambient coordinates (callers
    re-project to the sphere themselves).
    """
    z = _check_batch(batch)
    n = z.shape[0]
    d2 = _pairwise_sq_dists(z)
    w = np.exp(-t * d2)
    np.fill_diagonal(w, 0.0)
    pair_mean = w.sum() / (n * (n - 1))  # counts each pair twice, cancels the 2/
    loss = float(np.log(pair_mean))

    # d loss / d z_i = (1/S) * c * sum_{j != i} w_ij * (-2 t) (z_i - z_j)
    # with S the mean inside the log and c its normalizer.
    coeff = -4.0 * t / (pair_mean * n * (n - 1))
    grad = coeff * (z * w.sum(axis=1)[:, None] - w @ z)
    return loss, grad


def koleo_loss(batch: np.ndarray) -> float:
    """Nearest-neighbor differential-entropy penalty.

    loss = -(1/n) * sum_i log(min_{j != i} ||z_i - z_j||). Exact
    duplicate rows are an error, not a clamp: the log diverges there.
    """
    z = _check_batch(batch)
    d2 = _pairwise_sq_dists(z)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sqrt(d2.min(axis=1))
    if np.any(nearest == 0.0):
        raise DuplicateRows("batch contains identical embeddings; "
                            "nearest-neighbor distance is zero")
    return float(-np.mean(np.log(nearest)))


def cls_mean_embedding(cls_token: np.ndarray, patch_tokens: np.ndarray) -> np.ndarray:
    """Concatenate the CLS token with the mean of all patch tokens."""
    cls_token = np.asarray(cls_token, dtype=np.float64)
    patch_tokens = np.asarray(patch_tokens, dtype=np.float64)
    if patch_tokens.ndim != 2 or patch_tokens.shape[0] < 1:
        raise EmptyPatchSet("need at least one patch token")
    if cls_token.shape != (patch_tokens.shape[1],):
        raise ValueError("cls token dimension must match patch tokens")
    return np.concatenate([cls_token, patch_tokens.mean(axis=0)])


def patch_token_count(image_px: int, patch_px: int) -> int:
    """Number of ViT patch tokens for a square input."""
    if image_px % patch_px != 0:
        raise NotDivisible(f"{image_px} is not a multiple of patch size {patch_px}")
    return (image_px // patch_px) ** 2


def highres_view_config(base: ViewConfig) -> ViewConfig:
    """Map the standard view geometry to the high-resolution stage.

    Crop views 98/224 -> 168/392, training tiles 256 -> 512, and every
    mpp halved so the physical extent of each tile region is preserved.
    Only defined on the standard config; a second application errors.
    """
    if base != STANDARD_VIEW:
        raise ValueError("high-resolution doubling is only defined on the "
                         "standard view config (98, 224, 256, [2, 1, 0.5, 0.25])")
    high = replace(base,
                   local_crop_px=168,
                   global_crop_px=392,
                   train_tile_px=base.train_tile_px * 2,
                   mpp_choices=tuple(m / 2 for m in base.mpp_choices))
    assert sorted(high.physical_extents_um()) == sorted(base.physical_extents_um())
    return high


def effective_batch(cfg: ScheduleConfig) -> int:
    """Effective total batch size across GPUs and gradient accumulation."""
    return cfg.per_gpu_batch * cfg.gpu_count * cfg.grad_accum_steps
