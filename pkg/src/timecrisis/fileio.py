"""CSV/JSON writers with fixed 17-significant-digit float formatting.

A hand-rolled JSON emitter keeps float formatting under our control (the
stdlib encoder pins floats to repr), which makes output files byte-stable
and round-trip exact.
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from typing import Iterable, Sequence

__all__ = ["fmt17", "dumps_json", "write_json", "write_csv", "timestamp_line"]


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    if isinstance(x, float):
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, ".17g")
    return str(x)


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    closing = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return fmt17(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + closing + "}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{_emit(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + closing + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return _emit(obj.item(), indent, level)
    if hasattr(obj, "tolist"):  # numpy array
        return _emit(obj.tolist(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    return _emit(obj, indent, 0) + "\n"


def timestamp_line() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_json(path, obj: dict, timestamp: bool = True) -> None:
    payload = dict(obj)
    if timestamp:
        payload = {"generated": timestamp_line(), **payload}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(payload))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], timestamp: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if timestamp:
            fh.write(f"# generated {timestamp_line()}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt17(v) if isinstance(v, float) else str(v) for v in row) + "\n")
