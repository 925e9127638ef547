import numpy as np
import pytest

from app.core.config import resolve_run_config
from app.core.exceptions import (
    ArtifactIOError,
    ConfigError,
    DataError,
    FormatError,
    InsufficientDataError,
    MissingPrerequisiteError,
)
from app.data.clip_io import MAGIC, decode_clip, encode_clip, read_clip, write_clip
from app.data.generate import (
    EVAL_SEED_BASE,
    TRAIN_SEED_LIMIT,
    audit_seed_partition,
    env_seed,
    eval_seed,
    generate_datasets,
    split_point,
    training_seed,
)
from app.data.manifest import load_manifest, load_split, read_actions, select_records, verify_manifest
from app.data.sampler import ClipPool, make_batch, sample_triplet
from app.data.transforms import (
    augment,
    center_crop,
    resample_indices,
    sample_clip_window,
    temporal_resample,
    to_network_input,
)
from app.models.data import AugmentSpec, ClipRecord, Manifest, Split, WindowSpec
from app.models.world import Domain, VideoClip
from app.sim.tasks import get_task


def _clip(n=10, size=16, task_id=0, domain=Domain.ROBOT, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(n, size, size, 3)) / 255.0
    return VideoClip(frames=frames, task_id=task_id, domain=domain)


def _pool(tasks=(0, 1, 2), per_domain=3):
    clips = [
        _clip(n=8, task_id=task, domain=domain, seed=task * 100 + i)
        for task in tasks
        for domain in (Domain.ROBOT, Domain.HUMAN)
        for i in range(per_domain)
    ]
    return ClipPool.from_clips(clips)


@pytest.fixture
def tiny_dataset(tmp_path, settings):
    run_config = resolve_run_config(
        overrides={
            "world": {"frame_size": 16},
            "data": {
                "human_tasks": ["drawer_close", "faucet_right"],
                "robot_tasks": ["drawer_close"],
                "human_clips_per_task": 2,
                "robot_demos_per_task": 2,
            },
        },
        settings=settings,
    )
    summary = generate_datasets(run_config, tmp_path / "data", {"seed": 0})
    return tmp_path / "data", summary


def test_clip_bytes_round_trip():
    clip = _clip()
    decoded = decode_clip(encode_clip(clip), task_id=3, domain=Domain.HUMAN)
    assert np.array_equal(decoded.frames, clip.frames)
    assert decoded.task_id == 3
    assert decoded.domain == Domain.HUMAN


def test_decode_rejects_bad_magic_and_truncation():
    data = encode_clip(_clip())
    with pytest.raises(FormatError):
        decode_clip(b"XXXX" + data[len(MAGIC) :])
    with pytest.raises(FormatError):
        decode_clip(data[:-1])
    with pytest.raises(FormatError):
        decode_clip(data[:4])


def test_read_clip_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        read_clip(tmp_path / "missing.dvdc")
    bad = tmp_path / "bad.dvdc"
    bad.write_bytes(b"not a clip at all")
    with pytest.raises(FormatError):
        read_clip(bad)


def test_write_then_read_clip(tmp_path):
    clip = _clip(n=4)
    path = write_clip(clip, tmp_path / "nested" / "clip.dvdc")
    assert np.array_equal(read_clip(path).frames, clip.frames)


def test_window_pads_short_clips():
    clip = _clip(n=10)
    window = sample_clip_window(clip, np.random.default_rng(0), min_len=15, max_len=15)
    assert window.n_frames == 15
    assert np.array_equal(window.frames[9:], np.repeat(clip.frames[-1:], 6, axis=0))


def test_window_is_contiguous_slice():
    clip = _clip(n=50)
    window = sample_clip_window(clip, np.random.default_rng(1), min_len=20, max_len=40)
    assert 20 <= window.n_frames <= 40
    starts = [
        s for s in range(50 - window.n_frames + 1) if np.array_equal(clip.frames[s : s + window.n_frames], window.frames)
    ]
    assert starts


def test_window_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        sample_clip_window(_clip(), np.random.default_rng(0), min_len=5, max_len=4)


@pytest.mark.parametrize(
    "n,frames,expected",
    [
        (5, 3, [0, 2, 4]),
        (4, 3, [0, 2, 3]),
        (1, 4, [0, 0, 0, 0]),
        (7, 1, [0]),
    ],
)
def test_resample_indices(n, frames, expected):
    assert resample_indices(n, frames).tolist() == expected


def test_temporal_resample_keeps_endpoints():
    clip = _clip(n=9)
    resampled = temporal_resample(clip, 4)
    assert resampled.n_frames == 4
    assert np.array_equal(resampled.frames[0], clip.frames[0])
    assert np.array_equal(resampled.frames[-1], clip.frames[-1])


def test_augment_keeps_shape_and_range():
    clip = _clip(n=3, size=20)
    out = augment(clip, AugmentSpec(), np.random.default_rng(2))
    assert out.frames.shape == clip.frames.shape
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_augment_disabled_is_identity():
    clip = _clip()
    assert augment(clip, AugmentSpec(enabled=False), np.random.default_rng(0)) is clip


def test_center_crop_full_frame_is_identity():
    clip = _clip()
    assert center_crop(clip, 1.0) is clip


def test_network_input_layout():
    batch = to_network_input([_clip(n=4, size=16), _clip(n=4, size=16, seed=1)])
    assert batch.shape == (2, 3, 4, 16, 16)


def test_triplet_labels():
    pool = _pool()
    rng = np.random.default_rng(0)
    for _ in range(200):
        triplet = sample_triplet(pool, rng)
        assert triplet.anchor.task_id == triplet.positive.task_id
        assert triplet.negative.task_id != triplet.anchor.task_id


def test_triplet_domain_coin_is_balanced():
    pool = _pool()
    rng = np.random.default_rng(4)
    draws = [sample_triplet(pool, rng) for _ in range(2000)]
    robot = np.mean([t.anchor.domain == Domain.ROBOT for t in draws])
    assert 0.45 < robot < 0.55


def test_triplet_falls_back_to_human_when_robot_lacks_task():
    clips = [_clip(task_id=0, domain=Domain.ROBOT, seed=i) for i in range(2)]
    clips += [_clip(task_id=1, domain=Domain.HUMAN, seed=10 + i) for i in range(2)]
    pool = ClipPool.from_clips(clips)
    rng = np.random.default_rng(0)
    for _ in range(50):
        triplet = sample_triplet(pool, rng)
        if triplet.anchor.task_id == 1:
            assert triplet.positive.domain == Domain.HUMAN


def test_triplet_needs_two_tasks():
    with pytest.raises(InsufficientDataError):
        sample_triplet(_pool(tasks=(0,)), np.random.default_rng(0))


def test_make_batch_resamples_to_frames():
    batch = make_batch(
        _pool(),
        np.random.default_rng(0),
        batch_size=3,
        window=WindowSpec(min_len=4, max_len=6),
        augment_spec=AugmentSpec(enabled=False),
        frames=5,
    )
    assert len(batch) == 3
    assert all(t.anchor.n_frames == 5 and t.negative.n_frames == 5 for t in batch)


def test_manifest_rejects_unknown_task():
    with pytest.raises(ValueError):
        Manifest(
            tasks=[get_task("drawer_close")],
            records=[ClipRecord(clip_path="a.dvdc", task_id=99, domain=Domain.ROBOT, n_frames=3)],
        )


def test_missing_manifest_is_missing_prerequisite(tmp_path):
    with pytest.raises(MissingPrerequisiteError):
        load_manifest(tmp_path / "robot" / "train.json")


def test_seed_partition():
    assert training_seed(3, Domain.HUMAN, 11, 1499) < TRAIN_SEED_LIMIT
    assert eval_seed(0, 0, 0, 0) >= EVAL_SEED_BASE
    assert env_seed(5, 2) >= EVAL_SEED_BASE
    assert eval_seed(0, 0, 0, 1) - eval_seed(0, 0, 0, 0) >= 20


@pytest.mark.parametrize("task_id,index", [(0, 1500), (0, -1), (16, 0)])
def test_training_seed_rejects_overlapping_blocks(task_id, index):
    with pytest.raises(ConfigError):
        training_seed(0, Domain.ROBOT, task_id, index)


def test_training_seed_blocks_are_disjoint():
    seeds = sorted(
        training_seed(0, domain, task_id, index)
        for domain in (Domain.ROBOT, Domain.HUMAN)
        for task_id in range(12)
        for index in (0, 1, 749, 1499)
    )
    assert np.all(np.diff(seeds) >= 20)


@pytest.mark.parametrize("n,val_fraction,expected", [(10, 0.15, 8), (2, 0.15, 1), (1, 0.5, 1), (20, 0.25, 15)])
def test_split_point(n, val_fraction, expected):
    assert split_point(n, val_fraction) == expected


def test_generate_datasets_layout(tiny_dataset):
    data_dir, summary = tiny_dataset
    assert summary.count("human") == 4
    assert summary.count("robot", "train") == 1
    assert summary.count("robot", "val") == 1

    manifest, clips = load_split(data_dir, Domain.HUMAN, Split.TRAIN)
    assert len(clips) == 2
    assert all(c.domain == Domain.HUMAN and c.frame_size == (16, 16) for c in clips)
    verify_manifest(manifest, data_dir / "human")
    assert audit_seed_partition([manifest]) == []

    robot, _ = load_split(data_dir, Domain.ROBOT, Split.TRAIN)
    record = robot.records[0]
    actions = read_actions(data_dir / "robot" / record.clip_path, expected=record.n_frames - 1)
    assert actions.shape == (record.n_frames - 1, 3)


def test_select_records_restricts_tasks(tiny_dataset):
    data_dir, _ = tiny_dataset
    drawer = get_task("drawer_close").task_id
    manifest, clips = load_split(data_dir, Domain.HUMAN, Split.TRAIN, task_ids=[drawer], per_task=1)
    assert [r.task_id for r in manifest.records] == [drawer]
    assert len(clips) == 1
    full = load_manifest(data_dir / "human" / "train.json")
    assert len(select_records(full, per_task=1).records) == 2


def test_missing_action_sidecar(tmp_path):
    with pytest.raises(DataError):
        read_actions(tmp_path / "clips" / "0000.dvdc")


@pytest.mark.slow
def test_triplet_domain_coin_within_binomial_interval():
    pool = _pool()
    rng = np.random.default_rng(11)
    robot = np.mean([sample_triplet(pool, rng).anchor.domain == Domain.ROBOT for _ in range(10_000)])
    assert abs(robot - 0.5) < 0.013


def test_triplet_fallback_never_reuses_the_anchor():
    clips = [_clip(task_id=0, domain=Domain.ROBOT, seed=i) for i in range(2)]
    clips.append(_clip(task_id=1, domain=Domain.HUMAN, seed=10))
    pool = ClipPool.from_clips(clips)
    rng = np.random.default_rng(2)
    for _ in range(50):
        try:
            triplet = sample_triplet(pool, rng)
        except InsufficientDataError:
            continue
        assert triplet.positive is not triplet.anchor


@pytest.mark.slow
def test_triplet_labels_hold_over_many_draws():
    clips = [
        _clip(n=8, task_id=task, domain=domain, seed=task * 100 + i)
        for task in (0, 1, 2)
        for domain in (Domain.ROBOT, Domain.HUMAN)
        for i in range(3)
    ]
    clips += [_clip(n=8, task_id=3, domain=Domain.HUMAN, seed=300 + i) for i in range(2)]
    pool = ClipPool.from_clips(clips)
    rng = np.random.default_rng(13)
    for _ in range(10_000):
        triplet = sample_triplet(pool, rng)
        assert triplet.anchor.task_id == triplet.positive.task_id
        assert triplet.negative.task_id != triplet.anchor.task_id
        assert triplet.positive is not triplet.anchor
