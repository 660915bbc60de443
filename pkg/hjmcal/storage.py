"""Artifact storage abstraction: local filesystem, interface for object stores later."""

from __future__ import annotations

import abc
from pathlib import Path
from typing import Optional

from .config import Settings, settings as default_settings


class StorageBackend(abc.ABC):
    @abc.abstractmethod
    def save(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> str: ...
    @abc.abstractmethod
    def get(self, key: str) -> Optional[bytes]: ...
    @abc.abstractmethod
    def uri(self, key: str) -> str: ...
    @abc.abstractmethod
    def exists(self, key: str) -> bool: ...

    def save_text(self, key: str, text: str, content_type: str = "text/plain") -> str:
        return self.save(key, text.encode("utf-8"), content_type)


class LocalStorage(StorageBackend):
    def __init__(self, base_dir: Path):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        path = (self.base_dir / key).resolve()
        if self.base_dir.resolve() not in path.parents and path != self.base_dir.resolve():
            raise ValueError(f"key escapes storage root: {key}")
        return path

    def save(self, key: str, data: bytes, content_type: str = "application/octet-stream") -> str:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return self.uri(key)

    def get(self, key: str) -> Optional[bytes]:
        path = self._path(key)
        return path.read_bytes() if path.exists() else None

    def uri(self, key: str) -> str:
        return self._path(key).as_uri()

    def exists(self, key: str) -> bool:
        return self._path(key).exists()


def create_storage(config: Optional[Settings] = None) -> StorageBackend:
    config = config or default_settings
    if config.storage_backend == "local":
        return LocalStorage(base_dir=config.resolved_output_dir)
    raise ValueError(f"Unknown storage backend: {config.storage_backend}")
