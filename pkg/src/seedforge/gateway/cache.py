"""Content-addressed response cache.

Cache keys are the sha256 of a canonical JSON encoding of the request:
provider id, operation name, and normalized parameters (prompt text included
verbatim). One file per key; the file body is the JSON-encoded response
payload. Writes go through a temp file and os.replace, so a crashed writer
never leaves a truncated entry behind and concurrent writers of the same key
are harmless (last replace wins with identical bytes).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def request_key(provider_id: str, operation: str, params: dict) -> str:
    """Stable hex digest identifying one provider request."""
    body = canonical_json(
        {"provider": provider_id, "op": operation, "params": params})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Any | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            # A half-written legacy entry; treat as a miss and let the
            # caller overwrite it atomically.
            return None

    def put(self, key: str, payload: Any) -> None:
        path = self._path(key)
        tmp = path.with_suffix(f".tmp.{os.getpid()}")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)
        os.replace(tmp, path)


class NullCache:
    """Cache-less mode: every call reaches the provider."""

    def get(self, key: str) -> None:
        return None

    def put(self, key: str, payload: Any) -> None:
        return None
