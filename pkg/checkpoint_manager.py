"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
checkpoint_manager.py file for training checkpoints
--------------------------------------
"""

import shutil
from datetime import datetime
from pathlib import Path

from config import CHECKPOINT_KEEP
from errors import DataError
from logging_config import get_logger
from sleepnet import load_bundle, save_bundle

logger = get_logger(__name__)

PREFIX = "ckpt_iter"


class CheckpointManager:
    """Timestamped checkpoint directories with rotation of the oldest ones"""

    def __init__(self, checkpoint_dir, max_checkpoints=None):
        self.checkpoint_dir = Path(checkpoint_dir).absolute()
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self.max_checkpoints = CHECKPOINT_KEEP if max_checkpoints is None else max_checkpoints
        self.last_checkpoint = None
        logger.debug(f"Checkpoint manager at {self.checkpoint_dir}, keeping {self.max_checkpoints}")

    def save(self, bundle, iteration, adam_states=None, metadata=None):
        """Write a checkpoint for this iteration; returns its path or None on failure"""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        path = self.checkpoint_dir / f"{PREFIX}{iteration:07d}_{timestamp}"
        meta = dict(metadata or {})
        meta["iteration"] = int(iteration)
        try:
            save_bundle(path, bundle, adam_states, meta)
        except OSError as e:
            logger.error(f"Checkpoint at iteration {iteration} failed: {e}")
            return None
        self.last_checkpoint = path
        logger.info(f"Checkpoint written: {path.name}")
        self.clean_old_checkpoints()
        return path

    def _checkpoint_dirs(self):
        dirs = [p for p in self.checkpoint_dir.glob(f"{PREFIX}*") if p.is_dir()]
        # Iteration number sorts before the timestamp
        return sorted(dirs, key=lambda p: p.name)

    def clean_old_checkpoints(self):
        """Remove checkpoints beyond max_checkpoints, oldest iteration first"""
        if self.max_checkpoints <= 0:
            return
        dirs = self._checkpoint_dirs()
        for old in dirs[: -self.max_checkpoints]:
            try:
                shutil.rmtree(old)
                logger.debug(f"Removed old checkpoint: {old.name}")
            except OSError as e:
                logger.error(f"Failed to remove old checkpoint {old}: {e}")

    def latest(self):
        dirs = self._checkpoint_dirs()
        return dirs[-1] if dirs else None

    def restore(self, path=None):
        """Load a checkpoint (the latest by default) as (bundle, adam states, metadata)"""
        path = Path(path) if path is not None else self.latest()
        if path is None:
            raise DataError(f"No checkpoints in {self.checkpoint_dir}")
        bundle, adam_states, metadata = load_bundle(path)
        logger.info(f"Restored checkpoint {path.name} (iteration {metadata.get('iteration')})")
        return bundle, adam_states, metadata

    def get_available_checkpoints(self):
        """Details of every checkpoint, newest first"""
        checkpoints = []
        for path in reversed(self._checkpoint_dirs()):
            stem = path.name[len(PREFIX):]
            iteration_str, _, timestamp_str = stem.partition("_")
            try:
                formatted_date = datetime.strptime(timestamp_str, "%Y%m%d_%H%M%S").strftime("%Y-%m-%d %H:%M:%S")
            except ValueError:
                formatted_date = "Unknown date"
            size_bytes = sum(f.stat().st_size for f in path.iterdir() if f.is_file())
            if size_bytes < 1024 * 1024:
                size_str = f"{size_bytes / 1024:.1f} KB"
            else:
                size_str = f"{size_bytes / (1024 * 1024):.1f} MB"
            checkpoints.append(
                {
                    "path": str(path),
                    "iteration": int(iteration_str) if iteration_str.isdigit() else None,
                    "date": formatted_date,
                    "size": size_str,
                }
            )
        return checkpoints
