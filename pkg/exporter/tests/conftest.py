import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    """Four decodable images of assorted sizes plus a scores table."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)

    gradient = np.tile(np.linspace(0, 255, 96, dtype=np.uint8), (64, 1))
    Image.fromarray(np.stack([gradient] * 3, axis=-1)).save(root / "gradient.png")

    noise = rng.integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    Image.fromarray(noise).save(root / "noise.png")

    checker = np.indices((80, 80)).sum(axis=0) % 2 * 255
    Image.fromarray(checker.astype(np.uint8)).convert("RGB").save(root / "checker.png")

    gray = np.full((64, 96, 3), 128, dtype=np.uint8)
    Image.fromarray(gray).save(root / "solid_gray.png")

    scores = root / "scores.csv"
    scores.write_text(
        "id,score\n"
        "gradient.png,0.25\n"
        "noise.png,0.9\n"
        "checker,0.55\n"  # stem-only id must still match
    )
    return root, scores
