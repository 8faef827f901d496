"""Configuration settings for the DACL trainer"""

import logging
import os
from pathlib import Path
from typing import Any, Dict

from dotenv import dotenv_values, load_dotenv

from errors import ConfigurationError

load_dotenv()

logger = logging.getLogger(__name__)

# Logging
LOG_LEVEL = os.getenv("DACL_LOG_LEVEL", "INFO").upper()

# Reproducibility
DEFAULT_SEED = int(os.getenv("DACL_DEFAULT_SEED", "0"))

# Run-level parallelism (folds, sweep points, ablation arms)
DEFAULT_THREADS = int(os.getenv("DACL_THREADS", "1"))

# Output
DEFAULT_OUTPUT_DIR = os.getenv("DACL_OUTPUT_DIR", "runs")

# Slow acceptance gates
RUN_SLOW_TESTS = os.getenv("DACL_RUN_SLOW", "false").lower() in ("1", "true", "yes")

# Model and training defaults
DEFAULT_ALPHA = 0.1
DEFAULT_GAMMA = 0.1
DEFAULT_LR = 1e-4
DEFAULT_BATCH_SIZE = 8
DEFAULT_EPOCHS = 50
DEFAULT_SHARED_DIM = 128
DEFAULT_DOMAIN_DIM = 64
DEFAULT_EXTRACTOR_HIDDEN = (1000, 500)
DEFAULT_C1_HIDDEN = 128
DEFAULT_C2_HIDDEN = 64
DEFAULT_DISC_HIDDEN = 128
SWEEP_VALUES = (0.001, 0.01, 0.1, 1.0, 10.0)

# Numerics
PROB_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def read_run_config(path: str) -> Dict[str, Any]:
    """
    Read a flat key=value run-config file.

    Keys may use dashes or underscores; values are returned as strings and
    validated later by TrainConfig. Blank lines and '#' comments are ignored.

    Returns:
        Mapping of normalized key -> raw string value
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigurationError(f"config file not found: {path}")

    raw = dotenv_values(config_path)
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigurationError(f"{path}: key '{key}' has no value")
        values[key.strip().lower().replace("-", "_")] = value.strip()

    logger.debug(f"Read {len(values)} keys from {path}")
    return values
