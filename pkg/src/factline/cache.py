"""Content-addressed on-disk cache for model replies.

Each entry is one file: a JSON header line (key, creation time, payload
size and SHA-256) followed by the raw payload bytes. Entries are written
to a temporary file and renamed into place, so readers never observe a
partial write. Entries that fail the integrity check are reported and
treated as misses.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path
from typing import Optional

from factline.text import sha256_hex

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: bytes
    created_at: float


def cache_key(operation_id: str, template_id: str, model_id: str, text: str) -> str:
    return sha256_hex(operation_id, template_id, model_id, text)


class ReplyCache:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.entry"

    def get_entry(self, key: str) -> Optional[CacheEntry]:
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            header_raw, payload = blob.split(b"\n", 1)
            header = json.loads(header_raw)
            ok = (
                header["key"] == key
                and header["size"] == len(payload)
                and header["sha256"] == sha256(payload).hexdigest()
            )
        except (ValueError, KeyError):
            ok = False
        if not ok:
            logger.warning("cache entry %s is corrupted; treating as a miss", path)
            return None
        return CacheEntry(key, payload, header["created_at"])

    def get(self, key: str) -> Optional[bytes]:
        entry = self.get_entry(key)
        return None if entry is None else entry.value

    def put(self, key: str, value: bytes) -> None:
        """Store ``value`` under ``key``; an existing valid entry is left untouched."""
        path = self._path(key)
        with self._lock:
            if self.get_entry(key) is not None:
                return
            path.parent.mkdir(parents=True, exist_ok=True)
            header = {"key": key, "created_at": time.time(), "size": len(value),
                      "sha256": sha256(value).hexdigest()}
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
                    fh.write(value)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def __contains__(self, key: str) -> bool:
        return self.get_entry(key) is not None
