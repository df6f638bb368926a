import base64
import hashlib
import json
import zlib
from typing import Any


def canonical(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, default=_default)


def serialize(obj: Any) -> str:
    return compress64(canonical(obj))


def deserialize(raw: str) -> Any:
    string = expand64(raw)
    return json.loads(string)


def digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON form of ``obj``"""
    return hashlib.sha256(canonical(obj).encode("utf-8")).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def compress64(string: str) -> str:
    compressed = zlib.compress(string.encode("utf-8"), level=zlib.Z_BEST_COMPRESSION)
    return base64.urlsafe_b64encode(compressed).decode("utf-8")


def expand64(raw: str) -> str:
    bytes_str = base64.urlsafe_b64decode(raw.encode("utf-8"))
    return zlib.decompress(bytes_str).decode("utf-8")


def _default(obj: Any) -> Any:
    # numpy scalars and tuples sneak into config dicts built from dataclasses
    if hasattr(obj, "item"):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
