"""Canonical JSON encoding shared by reports, model files, and hashing.

Key order is the construction order of each dict (all producers in this
package build their dicts in a fixed order), floats are printed with 17
significant digits, and no locale- or version-dependent formatting is used,
so identical data always yields byte-identical text.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def _format_float(value: float) -> str:
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"non-finite float {value!r} cannot be serialized")
    text = format(value, ".17g")
    # Keep floats recognizable as floats on round-trip.
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def canonical_dumps(obj: Any) -> str:
    """Serialize ``obj`` to deterministic JSON text."""
    out: list[str] = []
    _write(obj, out)
    return "".join(out)


def _write(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(",")
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, value in enumerate(obj):
            if i:
                out.append(",")
            _write(value, out)
        out.append("]")
    elif isinstance(obj, np.ndarray):
        _write(obj.tolist(), out)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
