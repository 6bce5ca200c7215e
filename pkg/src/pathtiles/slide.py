"""Pyramidal slide access and deterministic synthetic slide generation.

A "slide" is either a real pyramidal TIFF (decoded through tifffile), a
plain single-level image treated as a one-level pyramid, or a synthetic
slide package: a losslessly compressed PNG plus a JSON sidecar carrying
the pixel spacing and a ground-truth tissue mask.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import DecodeError, MissingMpp, OutOfBounds, UnsupportedFormat

SIDECAR_KEYS = {"level0_mpp", "width_px", "height_px", "seed", "tissue_mask_path"}


@dataclass(frozen=True)
class Level:
    width_px: int
    height_px: int
    downsample: float


@dataclass
class TileImage:
    """An 8-bit RGB pixel buffer with its physical provenance.

    ``pixels`` is a (height, width, 3) uint8 array; ``mpp`` is the pixel
    spacing of this buffer in µm/px; ``origin_l0`` is the level-0 pixel
    coordinate of the top-left corner.
    """

    pixels: np.ndarray
    mpp: float
    origin_l0: tuple[int, int]
    slide_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be a (H, W, 3) array")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        if self.mpp <= 0:
            raise ValueError("mpp must be positive")

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    @property
    def physical_extent_um(self) -> tuple[float, float]:
        return (self.width_px * self.mpp, self.height_px * self.mpp)


class SlideHandle:
    """An opened slide. Immutable after open; safe for concurrent readers.

    Decoded level arrays are cached lazily behind a lock, invisible to
    callers.
    """

    def __init__(self, path, level0_mpp, levels, dataset_id="", slide_id=None,
                 sidecar=None):
        if level0_mpp <= 0:
            raise ValueError("level0_mpp must be positive")
        if abs(levels[0].downsample - 1.0) > 1e-9:
            raise ValueError("level 0 downsample must be 1.0")
        for a, b in zip(levels, levels[1:]):
            if b.downsample <= a.downsample:
                raise ValueError("downsample factors must strictly increase")
        self.path = Path(path)
        self.level0_mpp = float(level0_mpp)
        self.levels = list(levels)
        self.dataset_id = dataset_id
        self.slide_id = slide_id if slide_id is not None else self.path.stem
        self.sidecar = sidecar
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def width_px(self) -> int:
        return self.levels[0].width_px

    @property
    def height_px(self) -> int:
        return self.levels[0].height_px

    def level_array(self, level: int) -> np.ndarray:
        """Decoded (H, W, 3) uint8 pixels of a pyramid level."""
        with self._lock:
            arr = self._cache.get(level)
            if arr is None:
                arr = self._decode_level(level)
                self._cache[level] = arr
            return arr

    def _decode_level(self, level: int) -> np.ndarray:
        try:
            if self.path.suffix.lower() in (".tif", ".tiff"):
                import tifffile

                with tifffile.TiffFile(self.path) as tf:
                    arr = tf.series[0].levels[level].asarray()
            else:
                arr = np.asarray(Image.open(self.path).convert("RGB"))
        except Exception as exc:  # noqa: BLE001 - normalized to DecodeError
            raise DecodeError(f"cannot decode {self.path} level {level}: {exc}")
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        if arr.shape[2] > 3:
            arr = arr[:, :, :3]
        lvl = self.levels[level]
        if arr.shape[:2] != (lvl.height_px, lvl.width_px):
            raise DecodeError(
                f"level {level} pixel data is {arr.shape[:2]}, "
                f"metadata says {(lvl.height_px, lvl.width_px)}")
        return np.ascontiguousarray(arr, dtype=np.uint8)


def _load_sidecar(path: Path):
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        return None
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError:
        return None
    if not SIDECAR_KEYS.issubset(meta):
        return None
    meta["sidecar_path"] = str(sidecar_path)
    return meta


def open_slide(path, dataset_id: str = "", mpp_override: float | None = None) -> SlideHandle:
    """Open a pyramidal slide or a synthetic slide package.

    Raises FileNotFoundError, UnsupportedFormat when no pyramid can be
    parsed, and MissingMpp when the file has no pixel-spacing metadata
    and ``mpp_override`` is not given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))

    sidecar = _load_sidecar(path)
    if sidecar is not None:
        mpp = mpp_override if mpp_override is not None else sidecar["level0_mpp"]
        levels = [Level(int(sidecar["width_px"]), int(sidecar["height_px"]), 1.0)]
        return SlideHandle(path, mpp, levels, dataset_id, sidecar=sidecar)

    if path.suffix.lower() in (".tif", ".tiff"):
        return _open_tiff(path, dataset_id, mpp_override)

    try:
        with Image.open(path) as img:
            width, height = img.size
    except Exception:
        raise UnsupportedFormat(f"{path}: not a readable image or slide package")
    if mpp_override is None:
        raise MissingMpp(f"{path}: no pixel-spacing metadata; pass mpp_override")
    return SlideHandle(path, mpp_override, [Level(width, height, 1.0)], dataset_id)


def _open_tiff(path, dataset_id, mpp_override):
    import tifffile

    try:
        with tifffile.TiffFile(path) as tf:
            series = tf.series[0]
            levels = []
            w0 = h0 = None
            for lvl in series.levels:
                shape = lvl.shape
                h, w = shape[0], shape[1]
                if w0 is None:
                    w0, h0 = w, h
                    levels.append(Level(w, h, 1.0))
                else:
                    levels.append(Level(w, h, w0 / w))
            mpp = mpp_override
            if mpp is None:
                page = series.pages[0]
                res = page.tags.get("XResolution")
                unit = page.tags.get("ResolutionUnit")
                if res is not None and unit is not None:
                    num, den = res.value
                    if num:
                        px_per_unit = num / den
                        unit_um = {2: 25400.0, 3: 10000.0}.get(getattr(unit.value, "value", unit.value))
                        if unit_um:
                            mpp = unit_um / px_per_unit
    except Exception as exc:
        raise UnsupportedFormat(f"{path}: cannot parse pyramid metadata: {exc}")
    if mpp is None:
        raise MissingMpp(f"{path}: no pixel-spacing tag; pass mpp_override")
    return SlideHandle(path, mpp, levels, dataset_id)


def _box_downsample(block: np.ndarray, k: int) -> np.ndarray:
    h, w = block.shape[0] // k, block.shape[1] // k
    # INTER_AREA on an exact integer factor is a box average; it is an
    # order of magnitude faster than a reshape-mean in numpy.
    return cv2.resize(block, (w, h), interpolation=cv2.INTER_AREA)


def read_region(slide: SlideHandle, origin_l0, mpp: float,
                width_px: int, height_px: int) -> TileImage:
    """Read a region at the requested pixel spacing.

    Picks the pyramid level with the largest downsample whose effective
    mpp does not exceed the request, then box-averages (integer factors)
    or bilinearly resamples (fractional) down to exactly
    ``width_px`` x ``height_px``.
    """
    if mpp < slide.level0_mpp * (1 - 1e-9):
        raise ValueError(f"requested mpp {mpp} finer than level 0 ({slide.level0_mpp})")
    x0, y0 = int(origin_l0[0]), int(origin_l0[1])
    foot_w = round(width_px * mpp / slide.level0_mpp)
    foot_h = round(height_px * mpp / slide.level0_mpp)
    if x0 < 0 or y0 < 0 or x0 + foot_w > slide.width_px or y0 + foot_h > slide.height_px:
        raise OutOfBounds(
            f"region {x0},{y0} +{foot_w}x{foot_h} outside level-0 "
            f"{slide.width_px}x{slide.height_px}")

    level_idx = 0
    for i, lvl in enumerate(slide.levels):
        if slide.level0_mpp * lvl.downsample <= mpp * (1 + 1e-9):
            level_idx = i
    lvl = slide.levels[level_idx]
    level_mpp = slide.level0_mpp * lvl.downsample
    scale = mpp / level_mpp
    arr = slide.level_array(level_idx)
    lx = round(x0 / lvl.downsample)
    ly = round(y0 / lvl.downsample)

    k = round(scale)
    if abs(scale - k) < 1e-9:
        block = arr[ly:ly + height_px * k, lx:lx + width_px * k]
        out = block.copy() if k == 1 else _box_downsample(block, k)
    else:
        src_w = math.ceil(width_px * scale)
        src_h = math.ceil(height_px * scale)
        src_w = min(src_w, arr.shape[1] - lx)
        src_h = min(src_h, arr.shape[0] - ly)
        block = arr[ly:ly + src_h, lx:lx + src_w]
        out = np.asarray(
            Image.fromarray(block).resize((width_px, height_px), Image.BILINEAR))
    return TileImage(np.ascontiguousarray(out), mpp=mpp, origin_l0=(x0, y0),
                     slide_id=slide.slide_id)


# H&E-like tissue palette for the synthetic generator (purple/pink hues).
_TISSUE_PALETTE = np.array([
    (150, 80, 180),
    (190, 90, 160),
    (120, 60, 160),
    (205, 120, 170),
    (170, 70, 140),
], dtype=np.int64)


def pack_mask_rows(mask: np.ndarray) -> bytes:
    """Pack a boolean mask 1 bit per pixel, each row padded to a byte."""
    return b"".join(np.packbits(row).tobytes() for row in mask)


def unpack_mask_rows(data: bytes, width: int, height: int) -> np.ndarray:
    bytes_per_row = (width + 7) // 8
    rows = []
    for r in range(height):
        chunk = np.frombuffer(data, dtype=np.uint8,
                              count=bytes_per_row, offset=r * bytes_per_row)
        rows.append(np.unpackbits(chunk)[:width].astype(bool))
    return np.stack(rows)


def generate_synthetic_slide(seed: int, width_px: int, height_px: int,
                             level0_mpp: float, tissue_coverage: float,
                             out_path) -> Path:
    """Write a deterministic procedural slide package.

    White background with pseudo-tissue ellipses in H&E-like hues, plus a
    JSON sidecar and the exact ground-truth tissue mask. The same seed
    always yields byte-identical files.
    """
    if not 0 < tissue_coverage < 1:
        raise ValueError("tissue_coverage must lie strictly between 0 and 1")
    if width_px < 512 or height_px < 512:
        raise ValueError("slide dimensions must be at least 512 px")
    if level0_mpp <= 0:
        raise ValueError("level0_mpp must be positive")

    out_path = Path(out_path)
    if out_path.suffix.lower() != ".png":
        out_path = out_path.with_suffix(".png")

    rng = np.random.default_rng(seed)
    img = np.full((height_px, width_px, 3), 255, dtype=np.uint8)
    mask = np.zeros((height_px, width_px), dtype=bool)
    total = width_px * height_px
    min_dim = min(width_px, height_px)
    ax_lo, ax_hi = max(8, min_dim // 64), max(16, min_dim // 16)

    covered = 0
    # Axes capped at min_dim/16 so a single ellipse overshoots the target
    # coverage by at most ~1.2% of the slide area.
    for _ in range(200_000):
        if covered / total >= tissue_coverage:
            break
        cx = int(rng.integers(0, width_px))
        cy = int(rng.integers(0, height_px))
        a = int(rng.integers(ax_lo, ax_hi + 1))
        b = int(rng.integers(ax_lo, ax_hi + 1))
        color = _TISSUE_PALETTE[int(rng.integers(len(_TISSUE_PALETTE)))]
        jitter = rng.integers(-20, 21, size=3)
        color = np.clip(color + jitter, 0, 255).astype(np.uint8)

        x_lo, x_hi = max(0, cx - a), min(width_px, cx + a + 1)
        y_lo, y_hi = max(0, cy - b), min(height_px, cy + b + 1)
        yy, xx = np.ogrid[y_lo:y_hi, x_lo:x_hi]
        inside = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
        sub = mask[y_lo:y_hi, x_lo:x_hi]
        covered += int(np.count_nonzero(inside & ~sub))
        sub |= inside
        img[y_lo:y_hi, x_lo:x_hi][inside] = color

    try:
        Image.fromarray(img).save(out_path, format="PNG")
        mask_path = out_path.with_suffix(".mask.bin")
        mask_path.write_bytes(pack_mask_rows(mask))
        sidecar = {
            "level0_mpp": level0_mpp,
            "width_px": width_px,
            "height_px": height_px,
            "seed": seed,
            "tissue_mask_path": mask_path.name,
        }
        out_path.with_suffix(".json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write synthetic slide: {exc}")
    return out_path


def load_ground_truth_mask(slide: SlideHandle) -> np.ndarray:
    """Ground-truth tissue mask of a synthetic slide, as a boolean array."""
    if slide.sidecar is None:
        raise UnsupportedFormat(f"{slide.path}: not a synthetic slide package")
    mask_path = Path(slide.sidecar["sidecar_path"]).parent / slide.sidecar["tissue_mask_path"]
    return unpack_mask_rows(mask_path.read_bytes(), slide.width_px, slide.height_px)
