"""
Constants and configuration values for TsallisSeg.
"""
from enum import Enum


# Label value excluded from losses and metrics
IGNORE_INDEX = 255

# TSEG1 container
TSEG_MAGIC = b"TSEG1"
TSEG_DTYPES = {
    0: "<f4",   # float32 tensors (images, logits, weights)
    1: "u1",    # uint8 tensors (label maps)
}


# Numerical guards
class NumericConstants:
    PROB_FLOOR = 1e-12          # clamp before p**(1-q) or log(p)
    FEASIBILITY_SLACK = 1e-6    # ||x' - x||_inf <= eps + slack


# APGD step-size controller
class ApgdConstants:
    INITIAL_STEP_FACTOR = 2.0   # step_0 = 2 * eps
    MOMENTUM = 0.75
    FIRST_CHECKPOINT = 0.22
    CHECKPOINT_DECAY = 0.03
    MIN_CHECKPOINT_GAP = 0.06
    SUCCESS_RATIO = 0.75
    MIN_ITERS = 10


# Victim model and training recipe
class TrainDefaults:
    IN_CHANNELS = 3
    HIDDEN_CHANNELS = 16
    NUM_CLASSES = 5
    EPOCHS = 30
    LEARNING_RATE = 0.05
    BATCH_SIZE = 8
    ADV_EPS = 8 / 255
    MIN_CLEAN_ACCURACY = 90.0


# Attack protocol
class AttackDefaults:
    ITERS = 100             # desk-scale default
    PROTOCOL_ITERS = 300    # full protocol budget
    EPS = "8/255"
    PHASES = ((2.0, 0.3), (1.5, 0.3), (1.0, 0.4))
    RESTARTS = 1
    Q_SCHEDULE = "linear:-2:1"


# Synthetic dataset defaults
class ShapesWorldDefaults:
    IMAGE_SIZE = 32
    TRAIN_COUNT = 256
    VAL_COUNT = 64
    TEST_COUNT = 64
    SHAPES_PER_IMAGE = (1, 3)
    COLOR_NOISE = 0.05
    CONTRAST = 0.3          # class colours sit this fraction of the way from grey to full hue
    MIN_SHAPE_SIZE = 6
    MAX_SHAPE_SIZE = 16


# Fixed-q study and schedule search grids
FIXED_Q_VALUES = (-3.0, -2.0, -1.0, 0.0, 0.5, 1.0)
SCHEDULE_Q_STARTS = (-3.0, -2.0, -1.0)
SCHEDULE_Q_ENDS = (0.5, 1.0)


# Attack names as they appear in reports
ATTACK_DISPLAY_NAMES = {
    "ce": "CEPGD",
    "segpgd": "SegPGD",
    "cospgd": "CosPGD",
    "js": "JSPGD",
    "maskedce": "MaskedPGD",
    "tsallis": "TsallisPGD",
}

# Report layouts
REPORT_COLUMNS = ["dataset", "model", "eps", "attack", "acc", "miou", "rank_acc", "rank_miou"]
ATTACK_CSV_COLUMNS = ["index", "best_loss", "feasible"]
CURVE_COLUMNS = ["kind", "q", "p", "weight"]
SCORE_COLUMNS = ["dataset", "model", "eps", "attack", "acc", "miou"]

METRIC_NAMES = ("acc", "miou")

# Environment
WORKERS_ENV_VAR = "TSALLISSEG_WORKERS"
RUN_SLOW_ENV_VAR = "TSALLISSEG_RUN_SLOW"
CONFIG_SCHEMA_VERSION = 1
RUN_LOG_NAME = "run_log.json"
MANIFEST_NAME = "manifest.json"


class ExitCode(int, Enum):
    OK = 0
    PARTIAL_FAILURE = 1
    CONFIG_ERROR = 2
