import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import ArtifactIOError, DataError, FormatError, MissingPrerequisiteError
from app.data.clip_io import read_clip
from app.models.data import ClipRecord, Manifest, Split
from app.models.world import Domain, VideoClip

PathLike = Union[str, Path]
ACTIONS_SUFFIX = ".actions.json"


def manifest_path(dataset_dir: PathLike, domain: str, split: Split) -> Path:
    return Path(dataset_dir) / domain / f"{split.value}.json"


def save_manifest(manifest: Manifest, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        )
    except OSError as e:
        raise ArtifactIOError(f"cannot write manifest {path}: {e}") from e
    return path


def load_manifest(path: PathLike) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise MissingPrerequisiteError("gen-data", stage="load-manifest") from e
    except OSError as e:
        raise ArtifactIOError(f"cannot read manifest {path}: {e}") from e
    try:
        return Manifest.model_validate_json(text)
    except ValidationError as e:
        raise FormatError(f"malformed manifest {path}: {e}") from e


def load_clip(root: PathLike, record: ClipRecord) -> VideoClip:
    """Decode a record's clip, filling metadata from the record."""
    return read_clip(
        Path(root) / record.clip_path,
        task_id=record.task_id,
        domain=record.domain,
        env_tier=record.env_tier,
    )


def verify_manifest(manifest: Manifest, root: PathLike) -> None:
    """Every record's file exists and decodes to its declared frame count."""
    for record in manifest.records:
        clip = load_clip(root, record)
        if clip.n_frames != record.n_frames:
            raise FormatError(
                f"{record.clip_path} holds {clip.n_frames} frames, manifest says {record.n_frames}"
            )


def actions_path(clip_path: PathLike) -> Path:
    clip_path = Path(clip_path)
    return clip_path.with_name(clip_path.stem + ACTIONS_SUFFIX)


def write_actions(clip_path: PathLike, episode_id: str, actions: np.ndarray) -> Path:
    path = actions_path(clip_path)
    payload = {
        "episode_id": episode_id,
        "actions": [[float(v) for v in row] for row in np.asarray(actions).reshape(-1, 3)],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write action sidecar {path}: {e}") from e
    return path


def read_actions(clip_path: PathLike, expected: Optional[int] = None) -> np.ndarray:
    path = actions_path(clip_path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"missing action sidecar {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable action sidecar {path}: {e}") from e
    actions = np.asarray(payload.get("actions", []), dtype=np.float64).reshape(-1, 3)
    if expected is not None and len(actions) != expected:
        raise DataError(f"{path} has {len(actions)} actions, expected {expected}")
    return actions


def select_records(
    manifest: Manifest,
    task_ids: Optional[List[int]] = None,
    per_task: Optional[int] = None,
) -> Manifest:
    """Restrict a manifest to some tasks and to the first `per_task` records of each."""
    keep = set(manifest.task_ids() if task_ids is None else task_ids)
    records: List[ClipRecord] = []
    for task_id in sorted(keep):
        task_records = manifest.records_for(task_id)
        records.extend(task_records if per_task is None else task_records[:per_task])
    return manifest.model_copy(update={"records": records})


def load_split(
    dataset_dir: PathLike,
    domain: Domain,
    split: Split,
    task_ids: Optional[List[int]] = None,
    per_task: Optional[int] = None,
) -> Tuple[Manifest, List[VideoClip]]:
    """A split manifest, optionally restricted, together with its decoded clips."""
    manifest = load_manifest(manifest_path(dataset_dir, domain.value, split))
    if task_ids is not None or per_task is not None:
        manifest = select_records(manifest, task_ids, per_task)
    root = Path(dataset_dir) / domain.value
    return manifest, [load_clip(root, record) for record in manifest.records]
