import numpy as np
import pytest

from pathtiles.slide import generate_synthetic_slide, open_slide


@pytest.fixture(scope="session")
def slide_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("slides")


@pytest.fixture(scope="session")
def half_slide_path(slide_dir):
    """2048px slide at 0.25 µm/px with ~50% tissue coverage."""
    return generate_synthetic_slide(7, 2048, 2048, 0.25, 0.5, slide_dir / "half.png")


@pytest.fixture(scope="session")
def half_slide(half_slide_path):
    return open_slide(half_slide_path, dataset_id="ds-a")


@pytest.fixture(scope="session")
def big_slide(slide_dir):
    path = generate_synthetic_slide(11, 4096, 4096, 0.25, 0.5, slide_dir / "big.png")
    return open_slide(path, dataset_id="ds-a")


@pytest.fixture(scope="session")
def dense_slide_path(slide_dir):
    """Small slide with near-total tissue coverage (fast accepts)."""
    return generate_synthetic_slide(3, 1024, 1024, 0.25, 0.95, slide_dir / "dense.png")


@pytest.fixture(scope="session")
def dense_slide(dense_slide_path):
    return open_slide(dense_slide_path, dataset_id="ds-b")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
