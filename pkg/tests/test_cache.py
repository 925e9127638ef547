import pytest

from app.core.exceptions import DataError
from app.services.artifact_cache import COMPLETE_MARKER, ArtifactCache, payload_digest


@pytest.fixture
def cache(tmp_path, logger):
    return ArtifactCache(tmp_path / "cache", logger)


def _counting_build(calls):
    def build(directory):
        calls.append(directory)
        (directory / "value.txt").write_text("built")
        return "built"

    return build


def _load(directory):
    return (directory / "value.txt").read_text() + "-loaded"


def test_payload_digest_ignores_key_order():
    assert payload_digest("dvd", {"a": 1, "b": [1, 2]}) == payload_digest("dvd", {"b": [1, 2], "a": 1})
    assert payload_digest("dvd", {"a": 1}) != payload_digest("encoder", {"a": 1})
    assert payload_digest("dvd", {"a": 1}) != payload_digest("dvd", {"a": 2})


def test_miss_builds_then_hit_loads(cache):
    calls = []
    payload = {"seed": 3}
    first = cache.fetch("data", payload, _counting_build(calls), _load)
    second = cache.fetch("data", payload, _counting_build(calls), _load)

    assert first == "built"
    assert second == "built-loaded"
    assert len(calls) == 1
    directory = cache.path("data", payload_digest("data", payload))
    assert (directory / COMPLETE_MARKER).exists()


def test_changed_payload_misses(cache):
    calls = []
    cache.fetch("data", {"seed": 0}, _counting_build(calls), _load)
    cache.fetch("data", {"seed": 1}, _counting_build(calls), _load)
    assert len(calls) == 2


def test_unmarked_directory_is_rebuilt(cache):
    payload = {"seed": 0}
    directory = cache.path("data", payload_digest("data", payload))
    directory.mkdir(parents=True)
    (directory / "stale.txt").write_text("half written")

    calls = []
    assert cache.fetch("data", payload, _counting_build(calls), _load) == "built"
    assert len(calls) == 1
    assert not (directory / "stale.txt").exists()


def test_failed_build_leaves_no_marker(cache):
    payload = {"seed": 0}

    def failing(directory):
        raise DataError("generation failed")

    with pytest.raises(DataError):
        cache.fetch("data", payload, failing, _load)
    assert not (cache.path("data", payload_digest("data", payload)) / COMPLETE_MARKER).exists()

    calls = []
    assert cache.fetch("data", payload, _counting_build(calls), _load) == "built"
