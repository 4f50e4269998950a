"""Small shared helpers: token estimation, stable seeds, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

# Rough chat-model average of ~4 characters per token. Every budget check in
# the package goes through this single estimator so the accounting is
# self-consistent even though it is not tied to any specific tokenizer.
_CHARS_PER_TOKEN = 4


def estimate_tokens(text: str) -> int:
    if not text:
        return 0
    return (len(text) + _CHARS_PER_TOKEN - 1) // _CHARS_PER_TOKEN


def stable_seed(*parts: Any) -> int:
    """Derive a reproducible 63-bit seed from arbitrary parts.

    Uses sha256 rather than ``hash()`` so the value survives interpreter
    restarts and is independent of dataset ordering.
    """
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and a fixed layout for byte-stable files."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


_SAFE_ID = re.compile(r"[^A-Za-z0-9_.-]+")


def safe_name(identifier: str) -> str:
    """Turn a problem id like ``HumanEval/12`` into a filesystem-safe name."""
    cleaned = _SAFE_ID.sub("_", identifier).strip("_")
    return cleaned or "unnamed"
