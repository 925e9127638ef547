import hashlib
import json
import shutil
import threading
from pathlib import Path
from typing import Any, Callable, Dict, Optional, TypeVar

from app.core.exceptions import ArtifactIOError
from app.core.logging import JsonStructuredLogger, log_cache
from app.core.protocols import StructuredLogger

T = TypeVar("T")
COMPLETE_MARKER = "COMPLETE.json"


def payload_digest(stage: str, payload: Dict[str, Any]) -> str:
    canonical = json.dumps({"stage": stage, "payload": payload}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ArtifactCache:
    """Stage outputs under `<root>/<stage>/<digest>/`, reused when the digest matches.

    A directory counts as cached only once its completion marker exists, so
    an interrupted build is redone from scratch.
    """

    def __init__(self, root: Path, logger: Optional[StructuredLogger] = None):
        self.root = Path(root)
        self.logger = logger or JsonStructuredLogger("dvd.cache")
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, stage: str, digest: str) -> Path:
        return self.root / stage / digest

    def _lock(self, digest: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(digest, threading.Lock())

    def fetch(
        self,
        stage: str,
        payload: Dict[str, Any],
        build: Callable[[Path], T],
        load: Callable[[Path], T],
    ) -> T:
        digest = payload_digest(stage, payload)
        directory = self.path(stage, digest)
        with self._lock(digest):
            if (directory / COMPLETE_MARKER).exists():
                log_cache(stage, digest, hit=True)
                return load(directory)
            log_cache(stage, digest, hit=False)
            try:
                if directory.exists():
                    shutil.rmtree(directory)
                directory.mkdir(parents=True)
            except OSError as e:
                raise ArtifactIOError(f"cannot prepare cache directory {directory}: {e}") from e
            result = build(directory)
            try:
                (directory / COMPLETE_MARKER).write_text(
                    json.dumps({"stage": stage, "payload": payload}, indent=2, sort_keys=True, default=str) + "\n"
                )
            except OSError as e:
                raise ArtifactIOError(f"cannot mark cache entry {directory}: {e}") from e
            self.logger.debug("cache entry stored", stage=stage, digest=digest)
            return result
