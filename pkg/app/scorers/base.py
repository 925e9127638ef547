import time
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from app.core.exceptions import NumericError, ShapeError
from app.core.logging import JsonStructuredLogger
from app.core.protocols import StructuredLogger
from app.models.planner import Predictions
from app.models.world import VideoClip


class BaseScorer(ABC):
    """Scores predicted candidate futures against a demonstration clip."""

    name = "scorer"

    def __init__(self, logger: Optional[StructuredLogger] = None):
        self.logger = logger or JsonStructuredLogger(f"dvd.scorer.{self.name}")

    def score(self, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray:
        start = time.monotonic()
        self._validate_inputs(predictions)
        scores = np.asarray(self._score(demo, predictions), dtype=np.float64).reshape(-1)
        if scores.shape[0] != len(predictions):
            raise ShapeError(f"{self.name} returned {scores.shape[0]} scores for {len(predictions)} candidates")
        if not np.all(np.isfinite(scores)):
            raise NumericError(f"{self.name} produced non-finite candidate scores")
        self.logger.debug(
            "candidates scored",
            scorer=self.name,
            candidates=len(predictions),
            best=float(scores.max()),
            duration_ms=round((time.monotonic() - start) * 1000, 2),
        )
        return scores

    def _validate_inputs(self, predictions: Predictions) -> None:
        frames = np.asarray(predictions.frames)
        if frames.ndim != 5 or frames.shape[-1] != 3:
            raise ShapeError(f"predicted frames must be (G, H, h, w, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ShapeError("no candidates to score")

    @staticmethod
    def candidate_clips(predictions: Predictions) -> list:
        return [
            VideoClip(frames=np.clip(predictions.candidate_frames(g), 0.0, 1.0))
            for g in range(len(predictions))
        ]

    @abstractmethod
    def _score(self, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray: ...
