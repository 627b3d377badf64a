"""Dataset cache backends."""

from ikd_mil.core.cache.backend import (
    CacheBackend,
    DiskCacheBackend,
    InMemoryCacheBackend,
    dataset_cache,
)

__all__ = [
    "CacheBackend",
    "DiskCacheBackend",
    "InMemoryCacheBackend",
    "dataset_cache",
]
