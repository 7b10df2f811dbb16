"""
TsallisSeg - Shared Module
"""

from .models import (
    LossName, ScheduleType, MaskNormalization, TieRule, SeaMetric,
    QSchedule, LossKind, EpsPhases, AttackConfig, TrainConfig,
    ShapesWorldSpec, DatasetSplits, BenchConfig, AttackScore, RowScores, SegDataset,
)

from .constants import (
    IGNORE_INDEX, NumericConstants, ApgdConstants, TrainDefaults,
    AttackDefaults, ShapesWorldDefaults, ATTACK_DISPLAY_NAMES, ExitCode,
)

from .utils import (
    TsallisSegError, NonFiniteError, TrainingDivergedError, ConfigError,
    CoverageError, TSEGFormatError, parse_fraction, format_eps,
)

from .tensor_io import encode_tensor, decode_tensor, write_tensor, read_tensor

__all__ = [
    # Models
    "LossName", "ScheduleType", "MaskNormalization", "TieRule", "SeaMetric",
    "QSchedule", "LossKind", "EpsPhases", "AttackConfig", "TrainConfig",
    "ShapesWorldSpec", "DatasetSplits", "BenchConfig", "AttackScore", "RowScores", "SegDataset",
    # Constants
    "IGNORE_INDEX", "NumericConstants", "ApgdConstants", "TrainDefaults",
    "AttackDefaults", "ShapesWorldDefaults", "ATTACK_DISPLAY_NAMES", "ExitCode",
    # Errors and helpers
    "TsallisSegError", "NonFiniteError", "TrainingDivergedError", "ConfigError",
    "CoverageError", "TSEGFormatError", "parse_fraction", "format_eps",
    # TSEG1
    "encode_tensor", "decode_tensor", "write_tensor", "read_tensor",
]
