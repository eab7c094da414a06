import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from threading import Event, Lock
from typing import Any, Callable, Dict, List, Optional, Tuple, Type, Union

from theine_core import LruCore, TlfuCore
from typing_extensions import Protocol

from factrec.models import CacheStats

logger = logging.getLogger(__name__)

sentinel = object()


class Core(Protocol):
    def __init__(self, size: int): ...

    def set(self, key: str, ttl: int) -> Tuple[int, Optional[int], Optional[str]]: ...

    def remove(self, key: str) -> Optional[int]: ...

    def access(self, key: str) -> Optional[int]: ...

    def clear(self) -> None: ...

    def len(self) -> int: ...


CORES: Dict[str, Type[Core]] = {
    "tlfu": TlfuCore,
    "lru": LruCore,
}


def canonical_json(payload: Any) -> bytes:
    """Serialization used for digests, cache records and request bodies."""
    return json.dumps(
        payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def payload_digest(payload: Any) -> bytes:
    return hashlib.sha256(canonical_json(payload)).digest()


def cache_key(request_kind: str, payload_digest: bytes, model_id: str) -> str:
    """
    Content address of a backend request. Each part is length-prefixed so that
    distinct (kind, model) pairs can never produce the same material.
    """
    h = hashlib.sha256()
    for part in (request_kind.encode("utf-8"), model_id.encode("utf-8"), payload_digest):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return f"{request_kind}:{h.hexdigest()}"


class MemoryTier:
    """
    Bounded in-memory key/value store. Admission and eviction are decided by the
    theine core, values live in a slot list indexed by the core. Safe for use by
    multiple threads.

    :param policy: eviction policy, "tlfu" or "lru".
    :param size: maximum number of entries.
    """

    def __init__(self, policy: str, size: int):
        if policy not in CORES:
            raise ValueError(f"unknown cache policy {policy!r}")
        self._cache: List[Any] = [sentinel] * (size + 500)
        self.core = CORES[policy](size)
        self.max_size = size
        self._lock = Lock()
        self._total = 0
        self._hit = 0

    def __len__(self) -> int:
        return self.core.len()

    def get(self, key: str, default: Any = None) -> Any:
        with self._lock:
            self._total += 1
            index = self.core.access(key)
            if index is None:
                return default
            self._hit += 1
            return self._cache[index]

    def set(self, key: str, value: Any) -> Optional[str]:
        """
        Add or overwrite an entry. Returns the key evicted to make room, if any.
        """
        with self._lock:
            # 0 means no ttl
            index, evicted_index, evicted_key = self.core.set(key, 0)
            self._cache[index] = value
            if evicted_index is not None:
                self._cache[evicted_index] = sentinel
                return evicted_key
            return None

    def delete(self, key: str) -> bool:
        with self._lock:
            index = self.core.remove(key)
            if index is not None:
                self._cache[index] = sentinel
                return True
            return False

    def clear(self) -> None:
        with self._lock:
            self.core.clear()
            self._cache = [sentinel] * len(self._cache)

    def stats(self) -> CacheStats:
        return CacheStats(self._total, self._hit)


@dataclass
class EventData:
    event: Event
    data: Any
    error: Optional[BaseException] = None


class SingleFlight:
    """
    Concurrent calls for the same key run the loader once; the other callers
    wait for its result (or its exception).
    """

    def __init__(self) -> None:
        self._events: Dict[str, EventData] = {}
        self._lock = Lock()

    def do(self, key: str, loader: Callable[[], Any]) -> Any:
        event = EventData(Event(), None)
        with self._lock:
            ve = self._events.setdefault(key, event)
        if ve is not event:
            ve.event.wait()
            if ve.error is not None:
                raise ve.error
            return ve.data
        try:
            event.data = loader()
        except BaseException as e:
            event.error = e
            raise
        finally:
            with self._lock:
                self._events.pop(key, None)
            event.event.set()
        return event.data


class ResponseCache:
    """
    Persistent content-addressed store for backend responses.

    Records are appended to one JSONL file as {"key": ..., "value": ...}; an
    in-memory index maps each key to the byte range of its latest record, and a
    MemoryTier keeps recently used values decoded. Writers are serialized,
    readers only take the file lock for the short positional read.

    :param path: record file; None keeps everything in memory only.
    :param memory_size: entries held by the in-memory tier.
    :param policy: eviction policy of the in-memory tier.
    """

    def __init__(
        self,
        path: Optional[Union[str, Path]] = None,
        memory_size: int = 10000,
        policy: str = "tlfu",
    ):
        self.path = Path(path) if path is not None else None
        self.memory = MemoryTier(policy, memory_size)
        self._index: Dict[str, Tuple[int, int]] = {}
        self._values: Dict[str, Any] = {}
        self._write_lock = Lock()
        self._read_lock = Lock()
        self._flight = SingleFlight()
        self._total = 0
        self._hit = 0
        self._disk_hit = 0
        self._stats_lock = Lock()
        self._fd: Optional[int] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
            self._load_index()
            self._fd = os.open(self.path, os.O_RDONLY)

    def _load_index(self) -> None:
        assert self.path is not None
        offset = 0
        bad = 0
        line = b""
        with open(self.path, "rb") as f:
            for line in f:
                length = len(line)
                try:
                    key = json.loads(line)["key"]
                except (ValueError, KeyError, TypeError):
                    bad += 1
                else:
                    self._index[key] = (offset, length)
                offset += length
        if line and not line.endswith(b"\n"):
            # a record cut short by a crash; later appends start on a fresh line
            with open(self.path, "ab") as f:
                f.write(b"\n")
        if bad:
            logger.warning("ignored %d unreadable record(s) in cache %s", bad, self.path)
        logger.debug("cache %s: %d record(s) indexed", self.path, len(self._index))

    def _read(self, key: str) -> Any:
        if self.path is None:
            return self._values.get(key, sentinel)
        span = self._index.get(key)
        if span is None or self._fd is None:
            return sentinel
        offset, length = span
        with self._read_lock:
            os.lseek(self._fd, offset, os.SEEK_SET)
            raw = os.read(self._fd, length)
        return json.loads(raw)["value"]

    def get(self, key: str, default: Any = None) -> Any:
        with self._stats_lock:
            self._total += 1
        value = self.memory.get(key, sentinel)
        if value is sentinel:
            value = self._read(key)
            if value is sentinel:
                return default
            self.memory.set(key, value)
            with self._stats_lock:
                self._disk_hit += 1
        with self._stats_lock:
            self._hit += 1
        return value

    def put(self, key: str, value: Any) -> None:
        with self._write_lock:
            if self.path is None:
                self._values[key] = value
            else:
                line = canonical_json({"key": key, "value": value}) + b"\n"
                with open(self.path, "ab") as f:
                    offset = f.tell()
                    f.write(line)
                    f.flush()
                self._index[key] = (offset, len(line))
            self.memory.set(key, value)

    def get_or_compute(self, key: str, loader: Callable[[], Any]) -> Any:
        """
        Return the cached value for key, or run loader once (even under
        concurrent callers), store its result and return it.
        """
        value = self.get(key, sentinel)
        if value is not sentinel:
            return value

        def load() -> Any:
            # another flight may have stored it while we waited for the slot
            stored = self._read(key)
            if stored is not sentinel:
                return stored
            result = loader()
            self.put(key, result)
            return result

        return self._flight.do(key, load)

    def __contains__(self, key: str) -> bool:
        if self.path is None:
            return key in self._values
        return key in self._index

    def __len__(self) -> int:
        return len(self._values) if self.path is None else len(self._index)

    def stats(self) -> CacheStats:
        return CacheStats(self._total, self._hit, self._disk_hit)

    def close(self) -> None:
        fd: Optional[int] = getattr(self, "_fd", None)
        if fd is not None:
            os.close(fd)
            self._fd = None

    def __del__(self) -> None:
        self.close()


class CacheRegistry:
    """
    Hands out one ResponseCache per file path, so backends configured with the
    same cache_path share a single store and index.
    """

    def __init__(self) -> None:
        self._opened: Dict[str, ResponseCache] = {}
        self._lock = Lock()

    def open(
        self, path: Optional[Union[str, Path]], memory_size: int = 10000, policy: str = "tlfu"
    ) -> ResponseCache:
        if path is None:
            return ResponseCache(None, memory_size, policy)
        key = str(Path(path).resolve())
        with self._lock:
            if key not in self._opened:
                self._opened[key] = ResponseCache(path, memory_size, policy)
            return self._opened[key]

    def all(self) -> List[ResponseCache]:
        return list(self._opened.values())

    def close(self) -> None:
        for cache in self._opened.values():
            cache.close()
        self._opened.clear()
