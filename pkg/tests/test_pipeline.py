import json

import numpy as np
import pytest
from PIL import Image

from pathtiles.errors import (ExhaustedDataset, ManifestParseError,
                              ManifestValidationError, MaxAttemptsExceeded)
from pathtiles.manifest import load_manifest
from pathtiles.patcher import SamplerParams
from pathtiles.pipeline import (SHARD_MAGIC, StreamConfig, TileStream,
                                export_shards, read_shard)
from pathtiles.stain import HsvRanges, hsv_tile_filter


def write_manifest(path, entries):
    path.write_text("".join(json.dumps(e) + "\n" for e in entries))
    return path


@pytest.fixture(scope="module")
def two_dataset_manifest(tmp_path_factory, half_slide_path, dense_slide_path):
    tmp = tmp_path_factory.mktemp("manifests")
    path = write_manifest(tmp / "two.jsonl", [
        {"path": str(half_slide_path), "dataset": "ds-a"},
        {"path": str(dense_slide_path), "dataset": "ds-b"},
    ])
    return load_manifest(path)


def fast_config(**overrides):
    """Fine-mpp config on small slides keeps per-tile reads cheap."""
    defaults = dict(
        sampler=SamplerParams(mpp_choices=(0.5, 0.25), tile_size_px=128),
        hsv=None,
        hed_sigma=0.05,
        batch_size=4,
        seed=77,
    )
    defaults.update(overrides)
    return StreamConfig(**defaults)


class TestManifest:
    def test_load_and_counts(self, two_dataset_manifest):
        assert two_dataset_manifest.counts() == {"ds-a": 1, "ds-b": 1}
        assert two_dataset_manifest.dataset_ids == ["ds-a", "ds-b"]

    def test_malformed_line_number(self, tmp_path, half_slide_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps({"path": str(half_slide_path), "dataset": "a"}) + "\n"
            + json.dumps({"path": str(half_slide_path), "dataset": "b"}) + "\n"
            + "{not json}\n")
        with pytest.raises(ManifestParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 3

    def test_missing_slide_path(self, tmp_path):
        path = write_manifest(tmp_path / "missing.jsonl",
                              [{"path": "/nonexistent/slide.png", "dataset": "a"}])
        with pytest.raises(ManifestValidationError) as exc:
            load_manifest(path)
        assert "/nonexistent/slide.png" in str(exc.value)

    def test_missing_mpp_rejected(self, tmp_path):
        img = tmp_path / "nompp.png"
        Image.new("RGB", (600, 600), (120, 60, 160)).save(img)
        path = write_manifest(tmp_path / "nompp.jsonl",
                              [{"path": str(img), "dataset": "a"}])
        with pytest.raises(ManifestValidationError):
            load_manifest(path)

    def test_mpp_override_accepted(self, tmp_path):
        img = tmp_path / "ok.png"
        Image.new("RGB", (600, 600), (120, 60, 160)).save(img)
        path = write_manifest(tmp_path / "ok.jsonl",
                              [{"path": str(img), "dataset": "a", "mpp": 0.5}])
        manifest = load_manifest(path)
        assert manifest.counts() == {"a": 1}


class TestTileStream:
    def test_batch_shape_and_monotone_indices(self, two_dataset_manifest):
        stream = TileStream(two_dataset_manifest, fast_config())
        b1 = stream.next_batch()
        b2 = stream.next_batch()
        indices = [r.meta["tile_index"] for r in b1.records + b2.records]
        assert indices == list(range(8))
        for rec in b1.records:
            assert rec.tile.pixels.shape == (128, 128, 3)

    def test_same_seed_byte_identical(self, two_dataset_manifest):
        def collect():
            stream = TileStream(two_dataset_manifest, fast_config())
            batch = stream.next_batch()
            return [(r.meta_bytes(), r.tile.pixels.tobytes())
                    for r in batch.records]

        assert collect() == collect()

    def test_different_seed_differs(self, two_dataset_manifest):
        s1 = TileStream(two_dataset_manifest, fast_config(seed=1))
        s2 = TileStream(two_dataset_manifest, fast_config(seed=2))
        p1 = [r.tile.pixels.tobytes() for r in s1.next_batch().records]
        p2 = [r.tile.pixels.tobytes() for r in s2.next_batch().records]
        assert p1 != p2

    def test_dataset_mixing_near_equal(self, two_dataset_manifest):
        stream = TileStream(two_dataset_manifest, fast_config(hed_sigma=None))
        n = 2000
        counts = {"ds-a": 0, "ds-b": 0}
        for i in range(n):
            counts[stream.make_tile(i).meta["dataset"]] += 1
        sigma = np.sqrt(n * 0.25)
        assert abs(counts["ds-a"] - n / 2) <= 3 * sigma

    def test_weighted_mixing(self, two_dataset_manifest):
        config = fast_config(hed_sigma=None,
                             dataset_weights=(("ds-a", 3.0), ("ds-b", 1.0)))
        stream = TileStream(two_dataset_manifest, config)
        n = 2000
        hits = sum(stream.make_tile(i).meta["dataset"] == "ds-a"
                   for i in range(n))
        sigma = np.sqrt(n * 0.75 * 0.25)
        assert abs(hits - 0.75 * n) <= 3 * sigma

    def test_hsv_filter_enforced(self, two_dataset_manifest):
        config = fast_config(hsv=HsvRanges(), hed_sigma=None)
        stream = TileStream(two_dataset_manifest, config)
        for i in range(50):
            rec = stream.make_tile(i)
            accept, _ = hsv_tile_filter(rec.tile.pixels)
            assert accept

    def test_gray_marker_slide_exhausts_under_hsv(self, tmp_path):
        # Uniform gray: passes the foreground test (V <= 210) but has
        # zero saturation, so the HSV filter rejects every candidate.
        img = tmp_path / "gray.png"
        Image.new("RGB", (1024, 1024), (128, 128, 128)).save(img)
        manifest = load_manifest(write_manifest(
            tmp_path / "gray.jsonl",
            [{"path": str(img), "dataset": "gray", "mpp": 0.25}]))
        config = fast_config(
            hsv=HsvRanges(),
            sampler=SamplerParams(mpp_choices=(0.25,), tile_size_px=128,
                                  max_attempts=50))
        stream = TileStream(manifest, config)
        with pytest.raises(MaxAttemptsExceeded) as exc:
            stream.make_tile(0)
        assert exc.value.slide_id == "gray"

    def test_empty_dataset_list(self, two_dataset_manifest):
        with pytest.raises(ExhaustedDataset):
            TileStream(two_dataset_manifest,
                       fast_config(dataset_weights=(("ds-missing", 1.0),)))

    def test_area_weighting_runs(self, two_dataset_manifest):
        stream = TileStream(two_dataset_manifest,
                            fast_config(slide_weighting="area"))
        assert stream.make_tile(0).meta["tile_index"] == 0


class TestExportShards:
    def test_shard_counts(self, two_dataset_manifest, tmp_path):
        config = fast_config(shard_capacity=64)
        index = export_shards(two_dataset_manifest, config, 100, tmp_path / "out")
        idx = json.loads(index.read_text())
        assert [s["count"] for s in idx["shards"]] == [64, 36]
        assert idx["total"] == 100

    def test_zero_tiles(self, two_dataset_manifest, tmp_path):
        index = export_shards(two_dataset_manifest, fast_config(), 0,
                              tmp_path / "empty")
        idx = json.loads(index.read_text())
        assert idx["shards"] == [] and idx["total"] == 0

    def test_rerun_byte_identical(self, two_dataset_manifest, tmp_path):
        config = fast_config(shard_capacity=16)
        i1 = export_shards(two_dataset_manifest, config, 32, tmp_path / "r1")
        i2 = export_shards(two_dataset_manifest, config, 32, tmp_path / "r2")
        for shard in json.loads(i1.read_text())["shards"]:
            b1 = (i1.parent / shard["path"]).read_bytes()
            b2 = (i2.parent / shard["path"]).read_bytes()
            assert b1 == b2

    def test_shard_readback(self, two_dataset_manifest, tmp_path):
        config = fast_config(shard_capacity=8, hed_sigma=0.05)
        index = export_shards(two_dataset_manifest, config, 10, tmp_path / "rb")
        shards = json.loads(index.read_text())["shards"]
        records = []
        for shard in shards:
            raw = (index.parent / shard["path"]).read_bytes()
            assert raw[:8] == SHARD_MAGIC
            records.extend(read_shard(index.parent / shard["path"]))
        assert [m["tile_index"] for m, _ in records] == list(range(10))
        for meta, pixels in records:
            assert pixels.shape == (meta["height"], meta["width"], 3)
            assert meta["hed_alpha"] is not None

    def test_config_echo_in_index(self, two_dataset_manifest, tmp_path):
        config = fast_config(seed=123)
        index = export_shards(two_dataset_manifest, config, 4, tmp_path / "echo")
        idx = json.loads(index.read_text())
        assert idx["config"]["seed"] == 123
