from typing import Optional

import numpy as np

from app.core.exceptions import UnsupportedTaskError
from app.models.planner import Predictions
from app.models.world import TaskSpec, VideoClip
from app.scorers.base import BaseScorer
from app.services.dvd_service import DVDModel


class ClassifierRewardScorer(BaseScorer):
    """Pretraining-classifier probability of the target task; ignores the demo."""

    name = "classifier_reward"

    def __init__(self, model: DVDModel, task: TaskSpec, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if task.task_id not in model.class_task_ids:
            raise UnsupportedTaskError(f"task '{task.name}' is not one of the classifier's classes")
        self.model = model
        self.task = task
        self.class_index = model.class_task_ids.index(task.task_id)

    def _score(self, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray:
        probs = self.model.class_probabilities(self.candidate_clips(predictions))
        return probs[:, self.class_index]
