from typing import Optional

import numpy as np

from app.core.exceptions import UsageError
from app.models.planner import Predictions
from app.models.world import VideoClip
from app.scorers.base import BaseScorer
from app.services.dvd_service import DVDModel


class DVDScorer(BaseScorer):
    """R(candidate, demo) from a trained DVD model; the demo embedding is computed once."""

    name = "dvd"

    def __init__(self, model: DVDModel, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.model = model
        self._demo_key: Optional[int] = None
        self._demo_embedding: Optional[np.ndarray] = None

    def demo_embedding(self, demo: VideoClip) -> np.ndarray:
        if self._demo_key != id(demo):
            self._demo_embedding = self.model.encode(demo)
            self._demo_key = id(demo)
        return self._demo_embedding

    def _score(self, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray:
        if demo is None:
            raise UsageError("the DVD reward needs a demonstration clip")
        candidates = self.model.encode_batch(self.candidate_clips(predictions))
        return self.model.score_embeddings(candidates, self.demo_embedding(demo))
