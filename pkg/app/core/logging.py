import json
import logging
import os
import sys
from typing import Any, Optional


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = record.msg if isinstance(record.msg, dict) else None
        if payload is None:
            try:
                payload = json.loads(record.getMessage())
            except (TypeError, ValueError):
                payload = {"message": record.getMessage()}
        line = {"level": record.levelname, "logger": record.name, **payload}
        return json.dumps(line, sort_keys=True, default=str)


def setup_logging(log_level: str = "INFO"):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        handlers=[handler],
        force=True,
    )


class JsonStructuredLogger:
    def __init__(self, name: str = "dvd"):
        self._logger = logging.getLogger(name)

    def _log(self, level: int, message: str, **kwargs: Any):
        self._logger.log(level, json.dumps({"message": message, **kwargs}, default=str))

    def info(self, message: str, **kwargs: Any):
        self._log(logging.INFO, message, **kwargs)

    def warning(self, message: str, **kwargs: Any) -> None:
        self._log(logging.WARNING, message, **kwargs)

    def error(self, message: str, **kwargs: Any) -> None:
        self._log(logging.ERROR, message, **kwargs)

    def debug(self, message: str, **kwargs: Any) -> None:
        self._log(logging.DEBUG, message, **kwargs)


def log_startup(command: str):
    logger = logging.getLogger("dvd.startup")
    profile = os.getenv("DVD_PROFILE", "desk")
    logger.info(json.dumps({"type": "startup", "command": command, "profile": profile}))


def log_shutdown(command: str, exit_code: int):
    logger = logging.getLogger("dvd.shutdown")
    logger.info(json.dumps({"type": "shutdown", "command": command, "exit_code": exit_code}))


def log_stage(
    stage: str,
    duration_ms: float,
    config_digest: Optional[str] = None,
    error: Optional[str] = None,
    **details: Any,
):
    logger = logging.getLogger("dvd.stage")
    log_data = {
        "type": "stage",
        "stage": stage,
        "duration_ms": round(duration_ms, 2),
        "config_digest": config_digest,
        "error": error,
        "success": error is None,
        **details,
    }
    level = logging.ERROR if error else logging.INFO
    logger.log(level, json.dumps(log_data, default=str))


def log_epoch(stage: str, epoch: int, **metrics: float):
    logger = logging.getLogger("dvd.train")
    log_data = {
        "type": "epoch",
        "stage": stage,
        "epoch": epoch,
        **{k: round(float(v), 6) for k, v in metrics.items()},
    }
    logger.info(json.dumps(log_data))


def log_cache(stage: str, digest: str, hit: bool):
    logger = logging.getLogger("dvd.cache")
    log_data = {
        "type": "cache",
        "message": "cache hit" if hit else "cache miss",
        "stage": stage,
        "digest": digest,
        "hit": hit,
    }
    logger.info(json.dumps(log_data))


def log_episode(
    task: str,
    tier: int,
    success: bool,
    chosen_scores: list,
    dynamics_mode: str,
):
    logger = logging.getLogger("dvd.planner")
    log_data = {
        "type": "episode",
        "task": task,
        "tier": tier,
        "success": success,
        "chosen_scores": [round(float(s), 4) for s in chosen_scores],
        "dynamics_mode": dynamics_mode,
    }
    logger.debug(json.dumps(log_data))


def log_cell(
    method: str,
    tier: int,
    task: str,
    seed: int,
    successes: Optional[int],
    trials: int,
    duration_ms: float,
):
    logger = logging.getLogger("dvd.bench")
    log_data = {
        "type": "cell",
        "method": method,
        "tier": tier,
        "task": task,
        "seed": seed,
        "successes": successes,
        "trials": trials,
        "duration_ms": round(duration_ms, 2),
    }
    logger.info(json.dumps(log_data))
