"""
TsallisSeg - Shapes World
Procedural segmentation data: coloured shapes on a noisy background.

Class 0 is background; class 1 is a rectangle, class 2 an ellipse, and
class c >= 3 a regular polygon with c sides. Each class has its own base
colour so a small receptive field can tell classes apart; shapes and
pixels get jitter and noise on top.

Class colours are pulled towards the grey background by `contrast`. At the
default the grey-to-shape gap is about 0.12 per channel, under four
times an 8/255 budget.
"""
import colorsys
import json
import sys
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
from PIL import Image, ImageDraw

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from shared.constants import IGNORE_INDEX, MANIFEST_NAME, ShapesWorldDefaults, TrainDefaults
from shared.models import DatasetSplits, SegDataset, ShapesWorldSpec
from shared.tensor_io import write_tensor
from backend.core_logic.tensor_core import STORAGE_DTYPE, derive_rng

BACKGROUND_RGB = (0.5, 0.5, 0.5)
SHAPE_JITTER = 0.08


# ================= PALETTE =================

def class_color(cls: int, num_classes: int,
                contrast: float = ShapesWorldDefaults.CONTRAST) -> Tuple[float, float, float]:
    """Base RGB in [0, 1]; shape classes get evenly spaced hues blended towards grey."""
    if cls == 0:
        return BACKGROUND_RGB
    hue = (cls - 1) / max(num_classes - 1, 1)
    full = colorsys.hsv_to_rgb(hue, 0.85, 0.9)
    return tuple(g + contrast * (c - g) for c, g in zip(full, BACKGROUND_RGB))


def _to_u8(rgb) -> Tuple[int, int, int]:
    return tuple(int(round(255 * min(max(c, 0.0), 1.0))) for c in rgb)


# ================= RENDERING =================

def _draw_shape(draws, cls: int, box: Tuple[int, int, int, int], fills, rotation: float) -> None:
    x0, y0, x1, y1 = box
    for draw, fill in zip(draws, fills):
        if cls == 1:
            draw.rectangle(box, fill=fill)
        elif cls == 2:
            draw.ellipse(box, fill=fill)
        else:
            radius = (x1 - x0) / 2
            center = (x0 + radius, y0 + radius)
            draw.regular_polygon((center, radius), n_sides=cls, rotation=rotation, fill=fill)


def render_image(spec: ShapesWorldSpec, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw image `index` of the world described by `spec`.

    Image and label are rasterized from the same geometry, so every
    shape pixel carries its class and later shapes occlude earlier ones.

    Returns:
        (3 x H x W float32 image in [0, 1], H x W uint8 label map)
    """
    rng = derive_rng(spec.seed, index)
    size = spec.image_size
    canvas = Image.new("RGB", (size, size), _to_u8(BACKGROUND_RGB))
    labels = Image.new("L", (size, size), 0)
    draws = (ImageDraw.Draw(canvas), ImageDraw.Draw(labels))

    lo = min(ShapesWorldDefaults.MIN_SHAPE_SIZE, size // 2)
    hi = max(lo, min(ShapesWorldDefaults.MAX_SHAPE_SIZE, size // 2))
    n_shapes = int(rng.integers(spec.shapes_per_image[0], spec.shapes_per_image[1] + 1))

    for _ in range(n_shapes):
        cls = int(rng.integers(1, spec.num_classes))
        extent = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(0, size - extent + 1))
        y0 = int(rng.integers(0, size - extent + 1))
        base = np.asarray(class_color(cls, spec.num_classes, spec.contrast))
        rgb = base + spec.contrast * rng.uniform(-SHAPE_JITTER, SHAPE_JITTER, size=3)
        rotation = float(rng.uniform(0, 360))
        box = (x0, y0, x0 + extent - 1, y0 + extent - 1)
        _draw_shape(draws, cls, box, (_to_u8(rgb), cls), rotation)

    image = np.asarray(canvas, dtype=np.float64).transpose(2, 0, 1) / 255.0
    if spec.color_noise > 0:
        image = image + rng.normal(0.0, spec.color_noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(STORAGE_DTYPE)
    return image, np.asarray(labels, dtype=np.uint8)


def make_dataset(spec: ShapesWorldSpec, indices: Iterable[int]) -> SegDataset:
    """Render the given global indices in memory."""
    indices = tuple(indices)
    if not indices:
        raise ValueError("make_dataset needs at least one index")
    pairs = [render_image(spec, i) for i in indices]
    return SegDataset(
        images=np.stack([p[0] for p in pairs]),
        labels=np.stack([p[1] for p in pairs]),
        indices=indices,
        num_classes=spec.num_classes,
    )


# ================= ON-DISK DATASET =================

def image_path(root: Path, index: int) -> Path:
    return Path(root) / f"image_{index:05d}.tseg"


def label_path(root: Path, index: int) -> Path:
    return Path(root) / f"label_{index:05d}.tseg"


def gen_dataset(spec: ShapesWorldSpec, splits: DatasetSplits, output_dir) -> Path:
    """
    Write `splits.total` image/label pairs as TSEG1 files plus manifest.json.

    Splits are contiguous index ranges (train, val, test), recorded in the
    manifest so a reader can load one split without touching the others.

    Returns:
        Path of the manifest

    Raises:
        ValueError: if the splits are empty or the directory is unwritable
    """
    if splits.total < 1:
        raise ValueError("dataset needs at least one image")
    root = Path(output_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for index in range(splits.total):
            image, label = render_image(spec, index)
            write_tensor(image_path(root, index), image)
            write_tensor(label_path(root, index), label)
        manifest = {
            "format": "TSEG1",
            "spec": spec.model_dump(mode="json"),
            "splits": {name: [r.start, r.stop] for name, r in
                       ((s, splits.index_range(s)) for s in ("train", "val", "test"))},
            "num_classes": spec.num_classes,
            "image_shape": [TrainDefaults.IN_CHANNELS, spec.image_size, spec.image_size],
            "ignore_index": IGNORE_INDEX,
        }
        manifest_path = root / MANIFEST_NAME
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ValueError(f"Cannot write dataset to {root}: {e}") from e
    return manifest_path
