"""Synthetic blob dataset: four classes a small CNN can separate.

Each class is a bright gaussian blob parked in one quadrant with a
class-specific color emphasis, over low uniform noise. Useful for smoke
tests and demos when no real imagery is on hand; every pixel is a pure
function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# class name -> (blob center as a fraction of the side, emphasized channels)
BLOB_CLASSES = {
    "blob_ne": ((0.25, 0.75), (0,)),
    "blob_nw": ((0.25, 0.25), (1,)),
    "blob_se": ((0.75, 0.75), (2,)),
    "blob_sw": ((0.75, 0.25), (0, 1)),
}


def blob_image(class_name, image_size, rng):
    (fy, fx), channels = BLOB_CLASSES[class_name]
    yy, xx = np.indices((image_size, image_size), dtype=np.float64)
    cy = fy * image_size + rng.uniform(-2, 2)
    cx = fx * image_size + rng.uniform(-2, 2)
    sigma = image_size / 8.0
    bump = 215.0 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    image = rng.integers(0, 40, size=(image_size, image_size, 3)).astype(np.float64)
    for channel in channels:
        image[:, :, channel] += bump
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def make_blob_dataset(root, images_per_class=16, image_size=32, rng_seed=0):
    """Write the dataset tree under ``root`` and return its path."""
    root = Path(root)
    for code, class_name in enumerate(sorted(BLOB_CLASSES)):
        class_dir = root / class_name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(images_per_class):
            rng = np.random.default_rng(np.random.SeedSequence((rng_seed, code, i)))
            image = blob_image(class_name, image_size, rng)
            Image.fromarray(image).save(class_dir / f"{class_name}_{i:04d}.png")
    return root
