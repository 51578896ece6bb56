"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
config.py file for environment configuration
--------------------------------------
Environment-level settings, read once from the process environment and an
optional .env file. Per-run settings live in run_config.py.
"""

import os
from pathlib import Path

import appdirs
from dotenv import load_dotenv

# Load environment variables from .env file
env_path = Path(__file__).parent / ".env"
load_dotenv(env_path)

APP_NAME = "sleepmeta"
VERSION = "0.4.0"

# Application Paths
APP_ROOT = Path(__file__).parent.absolute()
OUTPUT_DIR = os.getenv("OUTPUT_DIR", str(APP_ROOT / "runs"))
LOGS_DIR = os.getenv("LOGS_DIR", str(APP_ROOT / "logs"))
CACHE_DIR = os.getenv("CACHE_DIR", appdirs.user_cache_dir(APP_NAME))

# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_TO_FILE = os.getenv("LOG_TO_FILE", "False").lower() == "true"
LOG_FILE = os.getenv("LOG_FILE")

# Reproducibility
DETERMINISTIC = os.getenv("DETERMINISTIC", "True").lower() == "true"
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "0"))

# Thread env vars applied before numpy is imported when DETERMINISTIC is on
THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# Checkpoint rotation
CHECKPOINT_KEEP = int(os.getenv("CHECKPOINT_KEEP", "5"))

# Sleep stage vocabulary, in label-index order
STAGE_NAMES = ["W", "N1", "N2", "N3", "REM"]

# Plot colors per training mode
MODE_COLORS = {
    "S2MAML": "#1976D2",
    "MAML": "#FFA000",
    "SL": "#6c757d",
}
