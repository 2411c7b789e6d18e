"""Bit-stable JSON / CSV output.

Floats are serialized with 17 significant digits (exact round trip), keys
in insertion order, fixed separators: identical data yields identical
bytes on every platform and thread count.
"""
from __future__ import annotations

import numpy as np


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats compact but unambiguous
        return f"{x:.1f}"
    return f"{x:.17g}"


def dumps(obj, indent: int = 0) -> str:
    pad = " " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ", ".join(dumps(v) for v in obj)
        if len(inner) <= 100 and "\n" not in inner:
            return "[" + inner + "]"
        body = (",\n" + pad + "  ").join(dumps(v, indent + 2) for v in obj)
        return "[\n" + pad + "  " + body + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = (",\n" + pad + "  ").join(
            dumps(str(k)) + ": " + dumps(v, indent + 2) for k, v in obj.items()
        )
        return "{\n" + pad + "  " + body + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj)}")


def dump_bytes(obj) -> bytes:
    return (dumps(obj) + "\n").encode("utf-8")


def csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for x in row:
            if isinstance(x, str):
                cells.append(x)
            elif x is None or (isinstance(x, (float, np.floating)) and not np.isfinite(x)):
                cells.append("nan")
            elif isinstance(x, (int, np.integer)):
                cells.append(str(int(x)))
            else:
                cells.append(_fmt_float(float(x)))
        lines.append(",".join(cells))
    return ("\n".join(lines) + "\n").encode("utf-8")
