from typing import Optional

from app.core.exceptions import MissingPrerequisiteError, UsageError
from app.core.protocols import StructuredLogger
from app.models.bench import MethodKind
from app.models.world import TaskSpec
from app.scorers.base import BaseScorer
from app.scorers.classifier_scorer import ClassifierRewardScorer
from app.scorers.dvd_scorer import DVDScorer
from app.scorers.progress_scorer import ProgressScorer
from app.services.dvd_service import DVDModel


class ScorerFactory:
    def __init__(self, logger: StructuredLogger):
        self.logger = logger
        self.creators = {
            MethodKind.DVD: self._dvd,
            MethodKind.DVD_ROBOT_ONLY: self._dvd,
            MethodKind.CLASSIFIER_REWARD: self._classifier,
            MethodKind.PROGRESS: self._progress,
        }

    def create(self, kind: MethodKind, task: TaskSpec, model: Optional[DVDModel] = None) -> BaseScorer:
        """Candidate scorer for a planning method.

        Raises:
            UsageError: the method does not plan (random, bc)
            UnsupportedTaskError: classifier reward for a task outside its classes
        """
        creator = self.creators.get(MethodKind(kind))
        if creator is None:
            raise UsageError(f"method '{MethodKind(kind).value}' does not score candidates")
        return creator(task, model)

    def _dvd(self, task: TaskSpec, model: Optional[DVDModel]) -> BaseScorer:
        if model is None:
            raise MissingPrerequisiteError("train-dvd", stage="scorer")
        return DVDScorer(model, logger=self.logger)

    def _classifier(self, task: TaskSpec, model: Optional[DVDModel]) -> BaseScorer:
        if model is None:
            raise MissingPrerequisiteError("pretrain-encoder", stage="scorer")
        return ClassifierRewardScorer(model, task, logger=self.logger)

    def _progress(self, task: TaskSpec, model: Optional[DVDModel]) -> BaseScorer:
        return ProgressScorer(task, logger=self.logger)
