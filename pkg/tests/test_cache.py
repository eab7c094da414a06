import json
import threading
import time
from pathlib import Path
from random import Random
from typing import List, cast

import pytest
from _pytest.fixtures import SubRequest

from factrec.cache import (
    CacheRegistry,
    MemoryTier,
    ResponseCache,
    SingleFlight,
    cache_key,
    canonical_json,
    payload_digest,
    sentinel,
)


@pytest.fixture(params=["lru", "tlfu"])
def policy(request: SubRequest) -> str:
    return cast(str, request.param)


def test_set(policy: str) -> None:
    cache = MemoryTier(policy, 100)
    for i in range(20):
        key = f"key:{i}"
        cache.set(key, key)
    for i in range(20):
        key = f"key:{i}"
        assert cache.get(key) == key
    for i in range(20):
        key = f"key:{i}"
        cache.set(key, key + ":v2")
    for i in range(20):
        key = f"key:{i}"
        assert cache.get(key) == key + ":v2"
    for i in range(100):
        key = f"key:{i}:other"
        cache.set(key, key)
    assert len(cache) == 100


def test_set_cache_size(policy: str) -> None:
    cache = MemoryTier(policy, 500)
    rng = Random(7)
    for _ in range(100000):
        i = rng.randint(0, 100000)
        cache.set(f"key:{i}", i)
    assert len([i for i in cache._cache if i is not sentinel]) == 500


def test_set_reports_eviction(policy: str) -> None:
    cache = MemoryTier(policy, 10)
    evicted = [cache.set(f"key:{i}", i) for i in range(200)]
    gone = [k for k in evicted if k is not None]
    assert len(gone) == 190
    for key in gone:
        assert cache.get(key) is None


def test_delete(policy: str) -> None:
    cache = MemoryTier(policy, 100)
    for i in range(20):
        cache.set(f"key:{i}", i)
    assert cache.delete("key:1")
    assert cache.delete("key:3")
    assert not cache.delete("key:missing")
    assert len(cache) == 18
    assert cache.get("key:1") is None
    assert cache.get("key:2") == 2


def test_clear(policy: str) -> None:
    cache = MemoryTier(policy, 100)
    for i in range(20):
        cache.set(f"key:{i}", i)
    cache.clear()
    assert len(cache) == 0
    assert cache.get("key:1", "default") == "default"


def test_unknown_policy() -> None:
    with pytest.raises(ValueError):
        MemoryTier("clockpro", 10)


def test_memory_stats(policy: str) -> None:
    cache = MemoryTier(policy, 100)
    for i in range(10):
        cache.set(f"key:{i}", i)
    for i in range(20):
        cache.get(f"key:{i}")
    stats = cache.stats()
    assert stats.request_count == 20
    assert stats.hit_count == 10
    assert stats.miss_count == 10
    assert stats.hit_rate == 0.5


def test_canonical_json_is_order_independent() -> None:
    assert canonical_json({"b": 1, "a": "é"}) == canonical_json({"a": "é", "b": 1})
    assert canonical_json({"b": 1, "a": "é"}) == '{"a":"é","b":1}'.encode("utf-8")


def test_cache_key_separates_kind_and_model() -> None:
    digest = payload_digest({"premise": "p", "hypothesis": "h"})
    base = cache_key("nli", digest, "m1")
    assert base == cache_key("nli", digest, "m1")
    assert base.startswith("nli:")
    assert base != cache_key("chat", digest, "m1")
    assert base != cache_key("nli", digest, "m2")
    assert base != cache_key("nli", payload_digest({"premise": "p", "hypothesis": "x"}), "m1")
    # shifting characters between kind and model must not collide
    assert cache_key("ab", digest, "c")[3:] != cache_key("a", digest, "bc")[2:]


def test_response_cache_in_memory() -> None:
    cache = ResponseCache()
    assert cache.get("k") is None
    cache.put("k", {"v": 1})
    assert cache.get("k") == {"v": 1}
    assert "k" in cache
    assert len(cache) == 1
    stats = cache.stats()
    assert stats.request_count == 2
    assert stats.hit_count == 1


def test_response_cache_persists(tmp_path: Path, policy: str) -> None:
    path = tmp_path / "responses.jsonl"
    cache = ResponseCache(path, 100, policy)
    for i in range(50):
        cache.put(f"key:{i}", {"choices": [i], "text": "ünïcode"})
    cache.put("key:0", {"choices": ["latest"]})
    cache.close()

    reopened = ResponseCache(path, 100, policy)
    assert len(reopened) == 50
    assert reopened.get("key:0") == {"choices": ["latest"]}
    for i in range(1, 50):
        assert reopened.get(f"key:{i}") == {"choices": [i], "text": "ünïcode"}
    assert reopened.stats().disk_hit_count == 50
    # second read is served by the memory tier
    reopened.get("key:1")
    assert reopened.stats().disk_hit_count == 50
    reopened.close()


def test_response_cache_small_memory_tier(tmp_path: Path) -> None:
    cache = ResponseCache(tmp_path / "c.jsonl", memory_size=5)
    for i in range(100):
        cache.put(f"key:{i}", i)
    for i in range(100):
        assert cache.get(f"key:{i}") == i
    cache.close()


def test_response_cache_ignores_truncated_record(tmp_path: Path) -> None:
    path = tmp_path / "c.jsonl"
    cache = ResponseCache(path)
    cache.put("a", 1)
    cache.put("b", 2)
    cache.close()
    with open(path, "ab") as f:
        f.write(b'{"key": "c", "val')

    reopened = ResponseCache(path)
    assert reopened.get("a") == 1
    assert reopened.get("b") == 2
    assert "c" not in reopened
    assert reopened.get("c") is None
    reopened.put("c", 3)
    reopened.close()

    again = ResponseCache(path)
    assert again.get("c") == 3
    assert again.get("a") == 1
    again.close()


def test_response_cache_appends_after_truncated_record(tmp_path: Path) -> None:
    path = tmp_path / "c.jsonl"
    path.write_bytes(b'{"key": "a", "value": 1}\nnot json\n')
    cache = ResponseCache(path)
    cache.put("b", [1, 2])
    assert cache.get("a") == 1
    assert cache.get("b") == [1, 2]
    cache.close()
    lines = path.read_bytes().splitlines()
    assert json.loads(lines[-1]) == {"key": "b", "value": [1, 2]}


def test_get_or_compute_caches() -> None:
    cache = ResponseCache()
    calls: List[int] = []

    def loader() -> str:
        calls.append(1)
        return "value"

    assert cache.get_or_compute("k", loader) == "value"
    assert cache.get_or_compute("k", loader) == "value"
    assert len(calls) == 1


def test_get_or_compute_single_flight(tmp_path: Path) -> None:
    cache = ResponseCache(tmp_path / "c.jsonl")
    calls: List[int] = []
    lock = threading.Lock()

    def loader() -> str:
        with lock:
            calls.append(1)
        time.sleep(0.2)
        return "value"

    results: List[str] = []

    def run() -> None:
        results.append(cache.get_or_compute("k", loader))

    threads = [threading.Thread(target=run) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["value"] * 16
    assert len(calls) == 1
    assert len(cache) == 1
    cache.close()


def test_get_or_compute_error_is_not_cached() -> None:
    cache = ResponseCache()

    def failing() -> str:
        raise RuntimeError("backend down")

    with pytest.raises(RuntimeError):
        cache.get_or_compute("k", failing)
    assert "k" not in cache
    assert cache.get_or_compute("k", lambda: "ok") == "ok"


def test_single_flight_shares_errors() -> None:
    flight = SingleFlight()
    started = threading.Event()
    errors: List[BaseException] = []

    def loader() -> str:
        started.set()
        time.sleep(0.2)
        raise KeyError("boom")

    def leader() -> None:
        try:
            flight.do("k", loader)
        except KeyError as e:
            errors.append(e)

    def follower() -> None:
        started.wait()
        try:
            flight.do("k", lambda: "unused")
        except KeyError as e:
            errors.append(e)

    threads = [threading.Thread(target=leader), threading.Thread(target=follower)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(errors) == 2


def test_registry_shares_by_path(tmp_path: Path) -> None:
    registry = CacheRegistry()
    (tmp_path / "sub").mkdir()
    a = registry.open(tmp_path / "c.jsonl")
    b = registry.open(str(tmp_path / "sub" / ".." / "c.jsonl"))
    c = registry.open(tmp_path / "other.jsonl")
    assert a is b
    assert a is not c
    assert registry.open(None) is not registry.open(None)
    assert len(registry.all()) == 2
    registry.close()
    assert registry.all() == []
