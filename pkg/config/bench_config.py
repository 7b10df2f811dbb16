"""
TsallisSeg - Benchmark Configuration
====================================

Benchmark config files use the .env syntax, one key=value per line:

    schema_version=1
    dataset_dir=data/shapes
    models=clean:models/clean.tseg,robust:models/robust.tseg
    eps=4/255,8/255,12/255
    attacks=ce,segpgd,cospgd,js,maskedce,tsallis@linear:-2:1
    iters=100
    phases=2@0.3,1.5@0.3,1@0.4
    seed=0
    split=test
    output_dir=results/bench

Unknown keys are errors. Relative paths resolve against the config file's
directory. The worker count is the only value taken from the environment
(TSALLISSEG_WORKERS, also read from a .env file in the project root).
"""
import os
import sys
from pathlib import Path
from typing import Dict, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from shared.constants import WORKERS_ENV_VAR
from shared.models import BenchConfig
from shared.utils import ConfigError, parse_fraction, split_list
from backend.core_logic.schedules import parse_loss_kind, parse_phases

# Load environment variables from .env file in the project root
_env_path = Path(__file__).parent.parent / ".env"
if _env_path.exists():
    load_dotenv(_env_path)

_PATH_KEYS = ("dataset_dir", "output_dir")


def get_workers(default: int = 1) -> int:
    """Worker count from TSALLISSEG_WORKERS, or `default` when unset."""
    value = os.getenv(WORKERS_ENV_VAR)
    if value is None or not value.strip():
        return default
    try:
        workers = int(value)
    except ValueError as e:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got '{value}'") from e
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be >= 1, got {workers}")
    return workers


def parse_models(text: str) -> Dict[str, str]:
    """Parse `name:path,name:path`."""
    models = {}
    for item in split_list(text):
        name, sep, path = item.partition(":")
        if not sep or not name.strip() or not path.strip():
            raise ConfigError(f"Bad model entry '{item}': expected name:path")
        if name.strip() in models:
            raise ConfigError(f"Duplicate model name '{name.strip()}'")
        models[name.strip()] = path.strip()
    return models


def _resolve(path: str, base: Optional[Path]) -> str:
    p = Path(path)
    if base is None or p.is_absolute():
        return str(p)
    return str(base / p)


def build_bench_config(values: Mapping[str, Optional[str]], base_dir: Optional[Path] = None) -> BenchConfig:
    """
    Validate raw key/value strings into a BenchConfig.

    Raises:
        ConfigError: for missing, malformed or unknown keys
    """
    raw = {k: v for k, v in values.items() if v is not None}
    fields = dict(raw)
    try:
        if "schema_version" in raw:
            fields["schema_version"] = int(raw["schema_version"])
        if "eps" in raw:
            fields["eps"] = [parse_fraction(e) for e in split_list(raw["eps"])]
        if "attacks" in raw:
            fields["attacks"] = [parse_loss_kind(a) for a in split_list(raw["attacks"])]
        if "phases" in raw:
            fields["phases"] = parse_phases(raw["phases"])
        if "models" in raw:
            fields["models"] = {name: _resolve(path, base_dir)
                                for name, path in parse_models(raw["models"]).items()}
        for key in _PATH_KEYS:
            if key in raw:
                fields[key] = _resolve(raw[key], base_dir)
        return BenchConfig(**fields)
    except ConfigError:
        raise
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid benchmark config: {problems}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid benchmark config: {e}") from e


def load_bench_config(path) -> BenchConfig:
    """Read and validate a key=value benchmark config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    return build_bench_config(dotenv_values(path), base_dir=path.parent)
