"""
Shared pytest fixtures: a tiny shapes world, an untrained victim and an
on-disk dataset in a temporary directory.
"""
import os
import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from shared.constants import RUN_SLOW_ENV_VAR
from shared.models import DatasetSplits, ShapesWorldSpec
from backend.core_logic.segmodel import init_params, save_params
from simulation.shapes_world import gen_dataset, make_dataset

TINY_CLASSES = 3


def pytest_collection_modifyitems(config, items):
    if os.getenv(RUN_SLOW_ENV_VAR) == "1":
        return
    skip_slow = pytest.mark.skip(reason=f"set {RUN_SLOW_ENV_VAR}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_spec():
    return ShapesWorldSpec(image_size=8, num_classes=TINY_CLASSES, shapes_per_image=(1, 2), seed=0)


@pytest.fixture
def tiny_dataset(tiny_spec):
    return make_dataset(tiny_spec, range(4))


@pytest.fixture
def tiny_params():
    return init_params(num_classes=TINY_CLASSES, seed=1, hidden=4)


@pytest.fixture
def dataset_dir(tmp_path, tiny_spec):
    root = tmp_path / "data"
    gen_dataset(tiny_spec, DatasetSplits(train=4, val=2, test=2), root)
    return root


@pytest.fixture
def model_path(tmp_path, tiny_params):
    path = tmp_path / "models" / "tiny.tseg"
    save_params(path, tiny_params)
    return path
