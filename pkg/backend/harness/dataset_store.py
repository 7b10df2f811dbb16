"""
Reads shapes-world datasets written by `gen-data`.
Only the files of the requested split are opened.
"""
import json
import sys
from pathlib import Path
from typing import Dict

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import MANIFEST_NAME
from shared.models import SegDataset
from shared.tensor_io import read_tensor
from shared.utils import ConfigError
from simulation.shapes_world import image_path, label_path


def load_manifest(dataset_dir) -> Dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"No dataset manifest at {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Corrupt manifest {path}: {e}") from e


def split_indices(manifest: Dict, split: str) -> range:
    if split not in manifest.get("splits", {}):
        raise ConfigError(f"Unknown split '{split}'; manifest has {sorted(manifest.get('splits', {}))}")
    start, stop = manifest["splits"][split]
    return range(start, stop)


def load_split(dataset_dir, split: str) -> SegDataset:
    """
    Load every image/label pair of one split.

    Raises:
        ConfigError: for a missing manifest or unknown split
        ValueError: if the split is empty
    """
    manifest = load_manifest(dataset_dir)
    indices = split_indices(manifest, split)
    if len(indices) == 0:
        raise ValueError(f"split '{split}' of {dataset_dir} is empty")
    images = [read_tensor(image_path(dataset_dir, i)) for i in indices]
    labels = [read_tensor(label_path(dataset_dir, i)) for i in indices]
    return SegDataset(
        images=np.stack(images),
        labels=np.stack(labels),
        indices=tuple(indices),
        num_classes=int(manifest["num_classes"]),
        ignore_index=int(manifest.get("ignore_index", 255)),
    )
