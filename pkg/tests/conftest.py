import numpy as np
import pytest
from PIL import Image


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mvtec_tree(tmp_path):
    root = tmp_path / "data"
    cat = root / "widget"
    for name in ("b.png", "a.png"):
        write_png(cat / "train" / "good" / name, np.full((20, 20, 3), 100))
    write_png(cat / "test" / "crack" / "x.png", np.full((20, 20, 3), 50))
    write_png(cat / "ground_truth" / "crack" / "x_mask.png", np.full((20, 20), 255))
    write_png(cat / "test" / "good" / "g.png", np.full((20, 20, 3), 100))
    write_png(cat / "test" / "scratch" / "nomask.png", np.full((20, 20, 3), 10))
    return root
