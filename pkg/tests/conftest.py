import numpy as np
import pytest
from dotenv import load_dotenv

from app.core.config import load_config, resolve_run_config
from app.core.logging import JsonStructuredLogger
from app.models.world import Domain, VideoClip
from app.nn.network import Network
from app.services.dvd_service import DVDModel, classifier_spec, encoder_spec, head_spec
from app.sim.variants import canonical_domain

load_dotenv()


@pytest.fixture(autouse=True)
def dev_profile(monkeypatch):
    monkeypatch.setenv("DVD_PROFILE", "dev")


@pytest.fixture
def settings(dev_profile):
    return load_config()


@pytest.fixture
def run_config(settings):
    return resolve_run_config(settings=settings)


@pytest.fixture
def robot_domain():
    return canonical_domain()


@pytest.fixture
def logger():
    return JsonStructuredLogger("dvd.tests")


@pytest.fixture
def constant_clip():
    """Factory for flat-colour clips; the colour stands in for the task."""

    def make(value, task_id=0, domain=Domain.ROBOT, n=6, size=16):
        frames = np.full((n, size, size, 3), value, dtype=np.float64)
        return VideoClip(frames=frames, task_id=task_id, domain=domain)

    return make


@pytest.fixture
def tiny_model():
    encoder = Network(encoder_spec(frames=4, size=16, widths=[4], embedding_dim=4), seed=0)
    encoder.freeze()
    classifier = Network(classifier_spec(4, 2), seed=1)
    classifier.freeze()
    head = Network(head_spec(4, [16]), seed=2)
    return DVDModel(
        encoder=encoder,
        head=head,
        frames=4,
        crop_frac=0.9,
        classifier=classifier,
        class_task_ids=[0, 2],
    )
