"""
portsim Utilities
Content digests and deterministic random-stream derivation.
"""
import hashlib
from typing import Any

import numpy as np
import orjson

_ORJSON_OPTS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def canonical_bytes(payload: Any) -> bytes:
    """Serialize a payload to canonical JSON bytes (sorted keys)."""
    return orjson.dumps(payload, option=_ORJSON_OPTS)


def digest(payload: Any) -> str:
    """SHA-256 hex digest of the canonical JSON form of a payload."""
    return hashlib.sha256(canonical_bytes(payload)).hexdigest()


def derive_rng(seed: int, *path: Any) -> np.random.Generator:
    """
    Child generator for a path of stream components.

    derive_rng(seed, "day", cycle, day, consumer_id) always yields the same
    stream regardless of how many other streams were drawn before it, so
    execution order cannot change results.
    """
    material = "/".join([str(seed), *(str(p) for p in path)])
    entropy = int.from_bytes(hashlib.sha256(material.encode()).digest()[:16], "big")
    return np.random.default_rng(entropy)
