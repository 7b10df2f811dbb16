"""
Run log for benchmarks and CLI commands.
Keeps a decision log with JSON persistence next to the run's outputs.
"""
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import RUN_LOG_NAME

logger = logging.getLogger(__name__)


class RunLog:
    """
    Thread-safe decision log for one run.
    Entries are persisted to `<output_dir>/run_log.json` after every decision
    when an output directory is given.
    """

    def __init__(self, output_dir: Optional[Path] = None, command: str = ""):
        self._lock = Lock()
        self.command = command
        self.started = datetime.now().isoformat()
        self.decision_log: List[dict] = []
        self.failures: List[dict] = []
        self.log_file = Path(output_dir) / RUN_LOG_NAME if output_dir is not None else None
        if self.log_file is not None:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)

    def save(self) -> bool:
        """Persist the log as JSON; a no-op without an output directory."""
        if self.log_file is None:
            return False
        with self._lock:
            try:
                data = {
                    "command": self.command,
                    "started": self.started,
                    "saved": datetime.now().isoformat(),
                    "decision_log": self.decision_log,
                    "failures": self.failures,
                }
                self.log_file.write_text(json.dumps(data, default=str, indent=2))
                return True
            except OSError as e:
                logger.error("Could not save run log: %s", e)
                return False

    def log_decision(self, action: str, reason: str, details: Dict[str, Any] = None) -> None:
        """
        Record a decision (cell start, schedule choice, abort) with its reason.
        """
        entry = {
            "timestamp": datetime.now().isoformat(),
            "action": action,
            "reason": reason,
            "details": details or {},
        }
        with self._lock:
            self.decision_log.append(entry)
        logger.info("[DECISION] %s: %s", action, reason)
        self.save()

    def log_failure(self, where: str, error: str) -> None:
        with self._lock:
            self.failures.append({"timestamp": datetime.now().isoformat(), "where": where, "error": error})
        logger.error("[FAILURE] %s: %s", where, error)
        self.save()

    @property
    def has_failures(self) -> bool:
        return bool(self.failures)

    def get_stats(self) -> dict:
        return {
            "decisions": len(self.decision_log),
            "failures": len(self.failures),
        }
