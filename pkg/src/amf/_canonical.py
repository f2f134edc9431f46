"""Canonical serialization and digests shared by the audit/closure machinery.

Canonical form: JSON with sorted keys, compact separators, ASCII-only output,
NaN/Inf rejected, floats in Python's shortest round-trip representation. Two
platforms producing the same values therefore produce the same bytes, which is
what makes seals and digest chains stable.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

GENESIS_DIGEST = "0" * 64


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True, allow_nan=False)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    """SHA-256 over the canonical JSON form of ``obj``."""
    return sha256_hex(canonical_json(obj))


def anonymize_id(raw_id: str) -> str:
    """One-way pseudonym for an applicant id, safe to place in audit artifacts."""
    return "a" + sha256_hex("anon\x00" + raw_id)[:12]
