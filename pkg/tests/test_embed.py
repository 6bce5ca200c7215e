import math

import numpy as np
import pytest

from pathtiles.embed import (STANDARD_VIEW, ScheduleConfig, ViewConfig,
                             cls_mean_embedding, effective_batch,
                             highres_view_config, kde_uniformity_loss,
                             koleo_loss, patch_token_count)
from pathtiles.errors import (DegenerateBatch, DuplicateRows, EmptyPatchSet,
                              NotDivisible)


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def kde_oracle(z, t):
    """Direct O(n^2) evaluation of the pairwise log-mean-exp loss."""
    n = len(z)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += math.exp(-t * float(np.sum((z[i] - z[j]) ** 2)))
    return math.log(total * 2.0 / (n * (n - 1)))


def koleo_oracle(z):
    n = len(z)
    total = 0.0
    for i in range(n):
        dmin = min(float(np.linalg.norm(z[i] - z[j]))
                   for j in range(n) if j != i)
        total += math.log(dmin)
    return -total / n


class TestKdeLoss:
    def test_identical_rows_zero_loss(self):
        z = np.tile([1.0, 0.0, 0.0], (5, 1))
        loss, _ = kde_uniformity_loss(z, t=2.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_antipodal_pair_closed_form(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        loss, _ = kde_uniformity_loss(z, t=2.0)
        assert loss == pytest.approx(-8.0, abs=1e-12)

    def test_matches_oracle(self, rng):
        for _ in range(10):
            z = unit_rows(rng, int(rng.integers(2, 17)), int(rng.integers(2, 33)))
            loss, _ = kde_uniformity_loss(z, t=2.0)
            assert loss == pytest.approx(kde_oracle(z, 2.0), rel=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-5
        for _ in range(20):
            n = int(rng.integers(2, 17))
            d = int(rng.integers(2, 33))
            z = unit_rows(rng, n, d)
            _, grad = kde_uniformity_loss(z, t=2.0)
            fd = np.zeros_like(z)
            for i in range(n):
                for k in range(d):
                    zp, zm = z.copy(), z.copy()
                    zp[i, k] += h
                    zm[i, k] -= h
                    fd[i, k] = (kde_uniformity_loss(zp, 2.0)[0]
                                - kde_uniformity_loss(zm, 2.0)[0]) / (2 * h)
            rel = np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-12)
            assert rel <= 1e-5

    def test_permutation_and_rotation_invariance(self, rng):
        z = unit_rows(rng, 8, 6)
        base, _ = kde_uniformity_loss(z)
        perm = z[rng.permutation(8)]
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        assert kde_uniformity_loss(perm)[0] == pytest.approx(base, abs=1e-9)
        assert kde_uniformity_loss(z @ q)[0] == pytest.approx(base, abs=1e-9)

    def test_separating_duplicates_decreases_loss(self):
        a = np.array([1.0, 0, 0, 0])
        b = np.array([0, 1.0, 0, 0])
        c = np.array([0, 0, 1.0, 0])
        d = np.array([0, 0, 0, 1.0])
        with_dup = np.stack([a, a, b, c])
        spread = np.stack([a, d, b, c])
        assert kde_uniformity_loss(spread)[0] < kde_uniformity_loss(with_dup)[0]

    def test_too_small_batch(self):
        with pytest.raises(DegenerateBatch):
            kde_uniformity_loss(np.array([[1.0, 0.0]]))


class TestKoleo:
    def test_distance_one_pair(self):
        z = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert koleo_loss(z) == pytest.approx(0.0, abs=1e-12)

    def test_equilateral_side_two(self):
        z = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, math.sqrt(3.0)]])
        assert koleo_loss(z) == pytest.approx(-math.log(2.0), abs=1e-12)

    def test_matches_oracle(self, rng):
        for _ in range(10):
            z = rng.normal(size=(int(rng.integers(2, 12)), 5))
            assert koleo_loss(z) == pytest.approx(koleo_oracle(z), abs=1e-12)

    def test_duplicates_raise(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DuplicateRows):
            koleo_loss(z)


class TestClsMean:
    def test_worked_example(self):
        out = cls_mean_embedding([1.0, 0.0], [[0.0, 0.0], [2.0, 2.0]])
        assert np.array_equal(out, [1.0, 0.0, 1.0, 1.0])

    def test_single_patch_identity(self, rng):
        cls = rng.normal(size=4)
        patch = rng.normal(size=(1, 4))
        assert np.allclose(cls_mean_embedding(cls, patch),
                           np.concatenate([cls, patch[0]]))

    def test_permutation_invariant(self, rng):
        cls = rng.normal(size=8)
        patches = rng.normal(size=(10, 8))
        a = cls_mean_embedding(cls, patches)
        b = cls_mean_embedding(cls, patches[rng.permutation(10)])
        assert np.allclose(a, b)

    def test_linearity(self, rng):
        cls = rng.normal(size=3)
        patches = rng.normal(size=(5, 3))
        assert np.allclose(cls_mean_embedding(2.5 * cls, 2.5 * patches),
                           2.5 * cls_mean_embedding(cls, patches))

    def test_output_dimension(self, rng):
        out = cls_mean_embedding(np.zeros(16), np.zeros((784, 16)))
        assert out.shape == (32,)

    def test_empty_patches(self):
        with pytest.raises(EmptyPatchSet):
            cls_mean_embedding(np.zeros(4), np.zeros((0, 4)))


class TestGeometry:
    @pytest.mark.parametrize("image,patch,count", [(224, 14, 256), (392, 14, 784)])
    def test_patch_token_count(self, image, patch, count):
        assert patch_token_count(image, patch) == count

    def test_not_divisible(self):
        with pytest.raises(NotDivisible):
            patch_token_count(224, 15)

    def test_highres_mapping(self):
        high = highres_view_config(STANDARD_VIEW)
        assert high.local_crop_px == 168
        assert high.global_crop_px == 392
        assert high.train_tile_px == 512
        assert high.mpp_choices == (1.0, 0.5, 0.25, 0.125)
        assert sorted(high.physical_extents_um()) == [64.0, 128.0, 256.0, 512.0]

    def test_highres_twice_errors(self):
        with pytest.raises(ValueError):
            highres_view_config(highres_view_config(STANDARD_VIEW))

    def test_view_config_patch_divisibility(self):
        with pytest.raises(ValueError):
            ViewConfig(global_crop_px=225)


class TestEffectiveBatch:
    @pytest.mark.parametrize("cfg,expected", [
        ((12, 32, 2), 768),
        ((6, 48, 4), 1152),
        ((64, 4, 3), 768),
    ])
    def test_quoted_schedules(self, cfg, expected):
        assert effective_batch(ScheduleConfig(*cfg)) == expected

    def test_validation(self):
        with pytest.raises(ValueError):
            ScheduleConfig(0, 1, 1)
