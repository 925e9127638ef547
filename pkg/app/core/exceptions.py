from typing import Optional


class DVDError(Exception):
    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage


class ConfigError(DVDError):
    exit_code = 2


class FormatError(DVDError):
    exit_code = 3


class ArtifactIOError(DVDError):
    exit_code = 3


class DataError(DVDError):
    exit_code = 3


class CompatibilityError(DVDError):
    exit_code = 3


class MissingPrerequisiteError(DVDError):
    exit_code = 4

    def __init__(self, missing: str, stage: Optional[str] = None):
        super().__init__(
            f"missing prerequisite '{missing}'; run `dvd {missing}` first", stage
        )
        self.missing = missing


class HorizonExceededError(DVDError):
    pass


class UnsupportedTaskError(DVDError):
    pass


class InsufficientDataError(DVDError):
    pass


class ShapeError(DVDError):
    def __init__(self, message: str, layer_index: Optional[int] = None):
        prefix = f"layer {layer_index}: " if layer_index is not None else ""
        super().__init__(prefix + message)
        self.layer_index = layer_index


class UsageError(DVDError):
    pass


class NumericError(DVDError):
    pass


class DemoRejectedError(DVDError):
    def __init__(self, task: str, seed: int):
        super().__init__(f"scripted demo for '{task}' failed its predicate (seed {seed})")
        self.task = task
        self.seed = seed
