import base64
import io

import numpy as np
import pytest
from PIL import Image


def png_bytes(seed: int, size: int = 32) -> bytes:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 255, size=(size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="session")
def smoke_images():
    """Three-image smoke fixture as (raw bytes, base64) pairs."""
    images = [png_bytes(seed) for seed in (1, 2, 3)]
    return [(raw, base64.b64encode(raw).decode("ascii")) for raw in images]
