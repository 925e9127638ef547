from typing import Tuple

import numpy as np

from app.models.world import ALL_ARRANGEMENTS, Domain, DomainSpec, Point, ViewTransform
from app.sim.render import CANONICAL_PALETTE, PALETTES

MAX_TIER = 3
CANONICAL_ARRANGEMENT = (0, 1, 2)
# Second training scene: drawer and faucet swap places.
REARRANGED_TRAIN_ARRANGEMENT = (1, 0, 2)
TIER3_ARRANGEMENTS = tuple(
    a for a in ALL_ARRANGEMENTS if a not in (CANONICAL_ARRANGEMENT, REARRANGED_TRAIN_ARRANGEMENT)
)
_DISTRACTOR_SITES: Tuple[Point, ...] = (
    (0.15, 0.20),
    (0.85, 0.20),
    (0.12, 0.88),
    (0.88, 0.88),
    (0.88, 0.40),
    (0.12, 0.40),
)


def canonical_domain(embodiment: Domain = Domain.ROBOT) -> DomainSpec:
    return DomainSpec(embodiment=embodiment)


def train_domain(rearranged: bool = False) -> DomainSpec:
    arrangement = REARRANGED_TRAIN_ARRANGEMENT if rearranged else CANONICAL_ARRANGEMENT
    return DomainSpec(embodiment=Domain.ROBOT, arrangement=arrangement)


def _sample_view(rng: np.random.Generator) -> ViewTransform:
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return ViewTransform(
        rotation=float(sign * rng.uniform(0.1, 0.35)),
        tx=float(rng.uniform(-0.05, 0.05)),
        ty=float(rng.uniform(-0.05, 0.05)),
        scale=float(rng.uniform(0.85, 1.15)),
    )


def sample_env_variant(tier: int, seed: int) -> DomainSpec:
    """Robot evaluation domain with graded shift.

    Tier 1 resamples the palette, tier 2 additionally applies a non-identity
    view, tier 3 additionally rearranges the objects. Fields below the tier
    stay canonical.
    """
    if not 0 <= tier <= MAX_TIER:
        raise ValueError(f"tier must be in [0, {MAX_TIER}], got {tier}")
    rng = np.random.default_rng([seed, tier])
    palette_id = CANONICAL_PALETTE
    view = ViewTransform()
    arrangement = CANONICAL_ARRANGEMENT
    if tier >= 1:
        palette_id = int(rng.integers(1, len(PALETTES)))
    if tier >= 2:
        view = _sample_view(rng)
    if tier >= 3:
        arrangement = TIER3_ARRANGEMENTS[int(rng.integers(len(TIER3_ARRANGEMENTS)))]
    return DomainSpec(
        embodiment=Domain.ROBOT, palette_id=palette_id, view=view, arrangement=arrangement
    )


def sample_human_scene(seed: int) -> Tuple[DomainSpec, Tuple[Point, ...]]:
    """Per-clip human domain: random palette, view, arrangement, texture and clutter."""
    rng = np.random.default_rng([seed, 7919])
    domain = DomainSpec(
        embodiment=Domain.HUMAN,
        palette_id=int(rng.integers(len(PALETTES))),
        view=_sample_view(rng) if rng.random() < 0.75 else ViewTransform(),
        arrangement=ALL_ARRANGEMENTS[int(rng.integers(len(ALL_ARRANGEMENTS)))],
        texture_seed=int(rng.integers(1, 2**31 - 1)),
    )
    n_distractors = int(rng.integers(0, 3))
    sites = rng.choice(len(_DISTRACTOR_SITES), size=n_distractors, replace=False)
    return domain, tuple(_DISTRACTOR_SITES[i] for i in sorted(sites))
