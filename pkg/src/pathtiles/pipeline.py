"""The end-to-end tile stream: sample -> HSV filter -> HED augment.

Every emitted byte is a pure function of (manifest, config, seed). The
randomness for tile number i comes from a generator seeded by
(stream_seed, i), so prefetching or re-serving never reorders streams.

Per-tile draw order: dataset, slide, then per attempt (mpp, x, y), and
after acceptance the HED alphas and betas (only when augmentation is
enabled).
"""
from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ExhaustedDataset, MaxAttemptsExceeded
from .manifest import DatasetManifest
from .patcher import (DEFAULT_MASK_MPP, ForegroundMask, SamplerParams,
                      compute_foreground_mask, draw_position, foreground_fraction)
from .slide import SlideHandle, TileImage, read_region
from .stain import HsvRanges, hed_augment, hsv_tile_filter, sample_hed_params

SHARD_MAGIC = b"MDNTSHRD"


@dataclass(frozen=True)
class StreamConfig:
    """Everything that determines a tile stream besides the manifest."""

    sampler: SamplerParams = SamplerParams()
    hsv: HsvRanges | None = HsvRanges()
    hed_sigma: float | None = 0.05
    batch_size: int = 12
    seed: int = 0
    dataset_weights: tuple[tuple[str, float], ...] | None = None  # None: equal
    slide_weighting: str = "uniform"  # "uniform" per slide or "area"
    mask_mpp: float = DEFAULT_MASK_MPP
    shard_capacity: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.slide_weighting not in ("uniform", "area"):
            raise ValueError("slide_weighting must be 'uniform' or 'area'")
        if self.dataset_weights is not None:
            if any(w <= 0 for _, w in self.dataset_weights):
                raise ValueError("dataset weights must be positive")

    def echo(self) -> dict:
        """JSON-serializable copy for index files and reports."""
        return json.loads(json.dumps(asdict(self)))


@dataclass
class TileRecord:
    tile: TileImage
    meta: dict

    def meta_bytes(self) -> bytes:
        return json.dumps(self.meta, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")


@dataclass
class TileBatch:
    records: list[TileRecord]

    def __len__(self):
        return len(self.records)


class MaskCache:
    """Thread-safe foreground-mask cache shared across streams."""

    def __init__(self):
        self._masks: dict[str, ForegroundMask] = {}
        self._lock = threading.Lock()

    def get(self, slide: SlideHandle, mask_mpp: float) -> ForegroundMask:
        key = f"{slide.path}@{mask_mpp}"
        with self._lock:
            mask = self._masks.get(key)
        if mask is None:
            mask = compute_foreground_mask(slide, mask_mpp)
            with self._lock:
                self._masks[key] = mask
        return mask


class TileStream:
    """A deterministic, sequential stream of accepted, augmented tiles."""

    def __init__(self, manifest: DatasetManifest, config: StreamConfig,
                 mask_cache: MaskCache | None = None):
        self.config = config
        self.mask_cache = mask_cache or MaskCache()
        handles = manifest.open_all()
        if config.dataset_weights is not None:
            self.dataset_ids = [ds for ds, _ in config.dataset_weights]
            weights = np.array([w for _, w in config.dataset_weights], dtype=np.float64)
        else:
            self.dataset_ids = manifest.dataset_ids
            weights = np.ones(len(self.dataset_ids))
        if not self.dataset_ids:
            raise ExhaustedDataset("no datasets configured")
        for ds in self.dataset_ids:
            if not handles.get(ds):
                raise ExhaustedDataset(f"dataset {ds!r} has no slides")
        self.weights = weights / weights.sum()
        self.cum_weights = np.cumsum(self.weights)
        self.slides = {ds: handles[ds] for ds in self.dataset_ids}
        self.slide_probs = {}
        if config.slide_weighting == "area":
            for ds, hs in self.slides.items():
                areas = np.array([h.width_px * h.height_px for h in hs], dtype=np.float64)
                self.slide_probs[ds] = areas / areas.sum()
        self.tile_index = 0

    def _rng_for_tile(self, tile_index: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.config.seed,
                                   spawn_key=(tile_index,)))

    def make_tile(self, tile_index: int) -> TileRecord:
        """Produce tile number ``tile_index`` from its derived seed alone."""
        cfg = self.config
        rng = self._rng_for_tile(tile_index)

        ds_idx = int(np.searchsorted(self.cum_weights, rng.random(), side="right"))
        ds_idx = min(ds_idx, len(self.dataset_ids) - 1)
        ds = self.dataset_ids[ds_idx]
        slides = self.slides[ds]
        if cfg.slide_weighting == "area":
            u = rng.random()
            slide_idx = int(np.searchsorted(np.cumsum(self.slide_probs[ds]), u,
                                            side="right"))
            slide_idx = min(slide_idx, len(slides) - 1)
        else:
            slide_idx = int(rng.integers(len(slides)))
        slide = slides[slide_idx]
        mask = self.mask_cache.get(slide, cfg.mask_mpp)

        params = cfg.sampler
        # Foreground and HSV rejections share one attempt budget; an HSV
        # reject triggers a full fresh (mpp, x, y) draw.
        for attempt in range(1, params.max_attempts + 1):
            pos = draw_position(slide, params, rng)
            if pos is None:
                continue
            mpp, x, y = pos
            frac = foreground_fraction(mask, (x, y), params.tile_size_px, mpp)
            if frac < params.foreground_threshold:
                continue
            tile = read_region(slide, (x, y), mpp,
                               params.tile_size_px, params.tile_size_px)
            if cfg.hsv is not None:
                accept, _ = hsv_tile_filter(tile.pixels, cfg.hsv)
                if not accept:
                    continue
            hed_params = None
            if cfg.hed_sigma is not None:
                hed_params = sample_hed_params(rng, cfg.hed_sigma)
                tile = TileImage(pixels=hed_augment(tile.pixels, hed_params),
                                 mpp=tile.mpp, origin_l0=tile.origin_l0,
                                 slide_id=tile.slide_id)
            meta = {
                "dataset": ds,
                "slide_id": slide.slide_id,
                "x": x,
                "y": y,
                "mpp": mpp,
                "width": tile.width_px,
                "height": tile.height_px,
                "tile_index": tile_index,
                "hed_alpha": None if hed_params is None else list(hed_params.alpha),
                "hed_beta": None if hed_params is None else list(hed_params.beta),
            }
            return TileRecord(tile=tile, meta=meta)
        raise MaxAttemptsExceeded(
            f"slide {slide.slide_id}: no acceptable tile in "
            f"{params.max_attempts} attempts", slide_id=slide.slide_id,
            attempts=params.max_attempts)

    def next_batch(self) -> TileBatch:
        records = []
        for _ in range(self.config.batch_size):
            records.append(self.make_tile(self.tile_index))
            self.tile_index += 1
        return TileBatch(records)


def encode_record(record: TileRecord) -> bytes:
    meta = record.meta_bytes()
    return (len(meta).to_bytes(4, "big") + meta
            + record.tile.pixels.tobytes())


def decode_records(data: bytes, offset: int, count: int):
    """Parse ``count`` consecutive tile records starting at ``offset``."""
    records = []
    for _ in range(count):
        mlen = int.from_bytes(data[offset:offset + 4], "big")
        offset += 4
        meta = json.loads(data[offset:offset + mlen].decode("utf-8"))
        offset += mlen
        npix = meta["width"] * meta["height"] * 3
        pixels = np.frombuffer(data, dtype=np.uint8, count=npix,
                               offset=offset).reshape(meta["height"],
                                                      meta["width"], 3)
        offset += npix
        records.append((meta, pixels.copy()))
    return records, offset


def export_shards(manifest: DatasetManifest, config: StreamConfig,
                  n_tiles: int, out_dir) -> Path:
    """Write ``n_tiles`` accepted tiles into numbered shard files.

    Each shard is the 8-byte magic followed by concatenated tile
    records; ``index.json`` lists per-shard counts and echoes the
    config. Returns the index path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = TileStream(manifest, config)
    shards = []
    written = 0
    shard_no = 0
    while written < n_tiles:
        count = min(config.shard_capacity, n_tiles - written)
        name = f"shard-{shard_no:06d}.bin"
        with open(out_dir / name, "wb") as fh:
            fh.write(SHARD_MAGIC)
            for _ in range(count):
                fh.write(encode_record(stream.make_tile(stream.tile_index)))
                stream.tile_index += 1
        shards.append({"path": name, "count": count})
        written += count
        shard_no += 1
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(
        {"shards": shards, "total": written, "config": config.echo()},
        indent=2, sort_keys=True) + "\n")
    return index_path


def read_shard(path):
    """Yield (meta, pixels) records from one shard file."""
    data = Path(path).read_bytes()
    if data[:8] != SHARD_MAGIC:
        raise ValueError(f"{path}: bad shard magic {data[:8]!r}")
    offset = 8
    records = []
    while offset < len(data):
        recs, offset = decode_records(data, offset, 1)
        records.extend(recs)
    return records
