"""
Dataset cache.

A generated patch set is a pure function of its SynthSpec, so ablation arms and
repeats that share a spec reuse one copy. Entries are dicts of numpy arrays
keyed by the spec's content hash.

:hierarchy: [Core | Cache | Backend]
:relates-to:
 - motivated_by: "Ablation studies regenerate identical synthetic datasets"
 - implements: "DatasetCache protocol; memory and diskcache backends"

:contract:
 - pre: "keys are content hashes of the generating spec"
 - post: "get returns the stored arrays or None; hits and misses are counted"

:complexity: 3
:decision_cache: "diskcache when IKD_MIL_CACHE is set, else one bounded process-wide dict"
"""

import os
from collections import OrderedDict
from typing import Any, Dict, Optional, Protocol

from ikd_mil.utils.logger import get_logger

ArrayBundle = Dict[str, Any]

DEFAULT_MEMORY_ENTRIES = 16
DEFAULT_DISK_LIMIT = 4 * 1024**3


class CacheBackend(Protocol):
    """
    What the data layer needs from a cache.

    :hierarchy: [Core | Cache | CacheBackend]
    """

    hits: int
    misses: int

    def __contains__(self, key: str) -> bool: ...

    def get(self, key: str) -> Optional[ArrayBundle]: ...

    def set(self, key: str, arrays: ArrayBundle) -> None: ...


class _Counted:
    def __init__(self):
        self.hits = 0
        self.misses = 0

    def _count(self, value: Optional[ArrayBundle]) -> Optional[ArrayBundle]:
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def stats(self) -> Dict[str, int]:
        return {"hits": self.hits, "misses": self.misses, "entries": len(self)}


class DiskCacheBackend(_Counted):
    """
    diskcache store shared between processes.

    :hierarchy: [Core | Cache | DiskCacheBackend]
    :contract:
     - invariant: "entries persist across processes; diskcache evicts past size_limit bytes"
    """

    def __init__(self, directory: Optional[str] = None, size_limit: int = DEFAULT_DISK_LIMIT):
        from diskcache import Cache

        super().__init__()
        self._cache = Cache(directory=directory, size_limit=size_limit)
        self.directory = self._cache.directory

    def __contains__(self, key: str) -> bool:
        return key in self._cache

    def __len__(self) -> int:
        return len(self._cache)

    def get(self, key: str) -> Optional[ArrayBundle]:
        return self._count(self._cache.get(key))

    def set(self, key: str, arrays: ArrayBundle) -> None:
        self._cache.set(key, arrays)

    def close(self) -> None:
        self._cache.close()

    def __repr__(self) -> str:
        return f"DiskCacheBackend(directory={self.directory!r}, entries={len(self)})"


class InMemoryCacheBackend(_Counted):
    """
    Bounded dict; the least recently used bundle is dropped first.

    :hierarchy: [Core | Cache | InMemoryCacheBackend]
    :contract:
     - invariant: "len(self) <= max_entries"
    """

    def __init__(self, max_entries: int = DEFAULT_MEMORY_ENTRIES):
        super().__init__()
        self.max_entries = max(1, int(max_entries))
        self._cache: "OrderedDict[str, ArrayBundle]" = OrderedDict()

    def __contains__(self, key: str) -> bool:
        return key in self._cache

    def __len__(self) -> int:
        return len(self._cache)

    def get(self, key: str) -> Optional[ArrayBundle]:
        value = self._cache.get(key)
        if value is not None:
            self._cache.move_to_end(key)
        return self._count(value)

    def set(self, key: str, arrays: ArrayBundle) -> None:
        self._cache[key] = arrays
        self._cache.move_to_end(key)
        while len(self._cache) > self.max_entries:
            self._cache.popitem(last=False)

    def clear(self) -> None:
        self._cache.clear()
        self.hits = self.misses = 0

    def __repr__(self) -> str:
        return f"InMemoryCacheBackend(entries={len(self)}, max_entries={self.max_entries})"


_memory_cache = InMemoryCacheBackend()


def dataset_cache() -> CacheBackend:
    """
    Return the dataset cache selected by the environment.

    :hierarchy: [Core | Cache | DatasetCache]
    :contract:
     - post: "DiskCacheBackend at $IKD_MIL_CACHE if set, else the process-wide memory cache"
    """
    directory = os.getenv("IKD_MIL_CACHE")
    if directory:
        get_logger(__name__, dataset_cache).debug(f"[Cache|Select] disk cache at {directory}")
        return DiskCacheBackend(directory=directory)
    return _memory_cache
