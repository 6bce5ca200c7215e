import numpy as np
import pytest

from pathtiles.embed import patch_token_count
from pathtiles.errors import CropTooLarge
from pathtiles.slide import TileImage
from pathtiles.viewgeom import (ResizeSpec, apply_resize_spec, center_crop,
                                effective_mpp_after_resize, resize_tile)


def make_tile(w, h, mpp=0.5, origin=(0, 0)):
    pix = np.arange(w * h * 3, dtype=np.int64).reshape(h, w, 3) % 256
    return TileImage(pixels=pix.astype(np.uint8), mpp=mpp, origin_l0=origin)


class TestEffectiveMpp:
    def test_identity(self):
        assert effective_mpp_after_resize(224, 0.5, 224) == 0.5

    def test_two_fold_downsample(self):
        assert effective_mpp_after_resize(448, 0.25, 224) == 0.5

    def test_physical_extent_conserved(self, rng):
        for _ in range(50):
            src_px = int(rng.integers(50, 2000))
            src_mpp = float(rng.uniform(0.1, 4.0))
            tgt_px = int(rng.integers(50, 2000))
            out = effective_mpp_after_resize(src_px, src_mpp, tgt_px)
            assert src_px * src_mpp == pytest.approx(tgt_px * out, rel=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            effective_mpp_after_resize(0, 0.5, 224)


class TestCenterCrop:
    def test_breakhis_geometry(self):
        tile = make_tile(700, 460)
        out = center_crop(tile, 460)
        assert out.width_px == out.height_px == 460
        assert out.origin_l0 == (120, 0)
        assert np.array_equal(out.pixels, tile.pixels[:, 120:580])

    def test_identity_when_exact(self):
        tile = make_tile(64, 64)
        out = center_crop(tile, 64)
        assert np.array_equal(out.pixels, tile.pixels)

    def test_too_large(self):
        with pytest.raises(CropTooLarge):
            center_crop(make_tile(64, 64), 65)


class TestResize:
    def test_resize_rescales_mpp(self):
        tile = make_tile(448, 448, mpp=0.25)
        out = resize_tile(tile, 224)
        assert out.mpp == 0.5
        assert out.pixels.shape == (224, 224, 3)

    def test_noop_same_size(self):
        tile = make_tile(224, 224)
        assert resize_tile(tile, 224) is tile

    def test_stepwise_composition_matches_formula(self):
        # center-crop 700x460 -> 460, then resize to 224
        tile = make_tile(700, 460, mpp=1.995)
        out = apply_resize_spec(tile, ResizeSpec(
            target_px=224, strategy="center-crop-then-resize"))
        assert out.mpp == pytest.approx(
            effective_mpp_after_resize(460, 1.995, 224), rel=1e-12)
        assert out.width_px == 224

    def test_highres_contract_feeds_784_tokens(self):
        tile = make_tile(512, 512, mpp=0.25)
        out = resize_tile(tile, 392)
        assert patch_token_count(out.width_px, 14) == 784
        assert out.width_px * out.mpp == pytest.approx(512 * 0.25, rel=1e-12)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            ResizeSpec(strategy="stretch")
        with pytest.raises(ValueError):
            ResizeSpec(interpolation="lanczos9")
