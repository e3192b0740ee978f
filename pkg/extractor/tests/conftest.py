import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def image_folder(tmp_path):
    """10 small RGB images in two class subfolders."""
    rng = np.random.default_rng(0)
    root = tmp_path / "images"
    for cls in ("sparrow", "warbler"):
        (root / cls).mkdir(parents=True)
    for i in range(10):
        cls = "sparrow" if i < 5 else "warbler"
        arr = rng.integers(0, 255, size=(48, 64, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / cls / f"img{i:02d}.png")
    return root
