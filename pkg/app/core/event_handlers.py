import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator

from app.core.config import load_config
from app.core.logging import JsonStructuredLogger, log_shutdown, log_startup, setup_logging
from app.core.template_loader import TemplateLoader


@dataclass
class CommandContext:
    command: str
    settings: Dict[str, Any]
    logger: JsonStructuredLogger
    templates: TemplateLoader
    started: float = field(default_factory=time.perf_counter)
    exit_code: int = 0

    @property
    def artifact_root(self) -> Path:
        return Path(self.settings.get("artifact_root", "artifacts"))

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self.started) * 1000.0


@contextmanager
def command_lifespan(command: str) -> Iterator[CommandContext]:
    """Logging, settings and templates for the duration of one CLI command."""
    settings = load_config()
    setup_logging(settings.get("log_level", "INFO"))
    log_startup(command)

    context = CommandContext(
        command=command,
        settings=settings,
        logger=JsonStructuredLogger(f"dvd.{command}"),
        templates=TemplateLoader(),
    )
    try:
        yield context
    finally:
        log_shutdown(command, context.exit_code)
