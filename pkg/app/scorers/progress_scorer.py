from typing import Optional

import numpy as np

from app.core.exceptions import UsageError
from app.models.planner import Predictions
from app.models.world import TaskSpec, VideoClip
from app.scorers.base import BaseScorer
from app.sim.tasks import task_progress


class ProgressScorer(BaseScorer):
    """Ground-truth shaped progress of each simulated candidate; sets the planner ceiling."""

    name = "progress"

    def __init__(self, task: TaskSpec, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.task = task

    def _score(self, demo: Optional[VideoClip], predictions: Predictions) -> np.ndarray:
        if predictions.states is None:
            raise UsageError("progress scoring needs simulator states; use oracle dynamics")
        scores = []
        for states in predictions.states:
            trajectory = states if predictions.origin is None else (predictions.origin, *states)
            scores.append(task_progress(self.task, trajectory))
        return np.array(scores)
