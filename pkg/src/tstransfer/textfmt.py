"""Text output helpers shared by the CSV/JSON report writers.

Floats are printed with 17 significant digits everywhere so that every
emitted value round-trips to the exact same float64 on re-parse. The JSON
writer is hand-rolled because the stdlib encoder always prints the shortest
repr for floats.
"""

from __future__ import annotations

import json
import numbers
import os
import tempfile

__all__ = ["fmt17", "dumps_json_17g", "dump_json_17g", "atomic_write_bytes"]


def fmt17(value: float) -> str:
    """Render a float with 17 significant digits."""
    return format(float(value), ".17g")


def _encode(obj, pieces: list[str], indent: int) -> None:
    pad = " " * indent
    inner = " " * (indent + 2)
    if obj is None:
        pieces.append("null")
    elif isinstance(obj, bool):
        pieces.append("true" if obj else "false")
    elif isinstance(obj, numbers.Integral):  # includes numpy integer scalars
        pieces.append(str(int(obj)))
    elif isinstance(obj, numbers.Real):  # includes numpy float scalars
        pieces.append(fmt17(obj))
    elif isinstance(obj, str):
        pieces.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            pieces.append("{}")
            return
        pieces.append("{\n")
        for k, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            pieces.append(inner + json.dumps(key) + ": ")
            _encode(value, pieces, indent + 2)
            pieces.append(",\n" if k < len(obj) - 1 else "\n")
        pieces.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            pieces.append("[]")
            return
        pieces.append("[\n")
        for k, value in enumerate(obj):
            pieces.append(inner)
            _encode(value, pieces, indent + 2)
            pieces.append(",\n" if k < len(obj) - 1 else "\n")
        pieces.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dumps_json_17g(obj) -> str:
    """Serialize to pretty JSON with 17-significant-digit floats."""
    pieces: list[str] = []
    _encode(obj, pieces, 0)
    pieces.append("\n")
    return "".join(pieces)


def dump_json_17g(obj, path) -> None:
    atomic_write_bytes(path, dumps_json_17g(obj).encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
