from typing import Any, Protocol, Sequence

import numpy as np


class TemplateProvider(Protocol):
    def get_template(self, key: str) -> str: ...
    def get_formatted(self, key: str, **kwargs: Any) -> str: ...


class StructuredLogger(Protocol):
    def info(self, message: str, **kwargs: Any) -> None: ...
    def warning(self, message: str, **kwargs: Any) -> None: ...
    def error(self, message: str, **kwargs: Any) -> None: ...
    def debug(self, message: str, **kwargs: Any) -> None: ...


class PairScorer(Protocol):
    """Anything that maps a (candidate, demo) clip pair to a same-task probability."""

    def score_pair(self, clip_a: Any, clip_b: Any) -> float: ...


class CandidateScorer(Protocol):
    """Scores every predicted candidate future against a demonstration."""

    name: str

    def score(self, demo: Any, predictions: Any) -> np.ndarray: ...


class Dynamics(Protocol):
    mode: str

    def predict_candidates(
        self, history: Sequence[np.ndarray], state: Any, action_seqs: np.ndarray
    ) -> Any: ...
