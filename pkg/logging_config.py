"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
logging_config.py file for logging setup
--------------------------------------
"""

import logging
import logging.handlers
import sys
from datetime import datetime
from pathlib import Path


def setup_logging(level=None, log_to_file=None, log_file=None):
    """Configure the root logger from the environment settings"""
    from config import LOG_FILE, LOG_LEVEL, LOG_TO_FILE, LOGS_DIR

    numeric_level = getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO)
    log_to_file = LOG_TO_FILE if log_to_file is None else log_to_file

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)

    # Remove existing handlers to avoid duplicates on repeated setup
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    verbose_formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"
    )
    simple_formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(simple_formatter)
    root_logger.addHandler(console_handler)

    if log_to_file:
        log_dir = Path(LOGS_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)
        target = log_file or LOG_FILE or str(
            log_dir / f'sleepmeta_{datetime.now().strftime("%Y%m%d")}.log'
        )
        # Rotating file handler, 10MB per file
        file_handler = logging.handlers.RotatingFileHandler(
            target, maxBytes=10485760, backupCount=10, encoding="utf-8"
        )
        file_handler.setFormatter(verbose_formatter)
        root_logger.addHandler(file_handler)

    # Quiet chatty third-party loggers
    for name in ("matplotlib", "PIL", "kaleido", "urllib3", "choreographer"):
        logging.getLogger(name).setLevel(logging.WARNING)

    return logging.getLogger(__name__)


def get_logger(name):
    """Get a logger for a specific module"""
    return logging.getLogger(name)
