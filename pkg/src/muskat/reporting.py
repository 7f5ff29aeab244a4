"""Deterministic serialization of run reports.

The report contract is byte-level: one configuration and seed must
reproduce the same file digit for digit.  ``json.dumps`` is close but
its float repr is shortest-roundtrip, which is an implementation detail,
so every float here goes through a fixed 17-significant-digit format.
Non-finite values are refused outright; a NaN in a report means the run
should have failed, not that the serializer should improvise.
"""

import hashlib
import json
import math

import numpy as np

__all__ = ["format_float", "canonical_json", "config_hash",
           "write_report", "write_csv", "version_stamp"]


def format_float(value):
    """Fixed-width float text: 17 significant digits, round-trip exact."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value cannot enter a report: {value!r}")
    return format(value, ".17g")


def canonical_json(obj, _indent=0):
    """Serialize dicts/lists/scalars with sorted keys and fixed floats."""
    pad = "  " * _indent
    inner = "  " * (_indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [canonical_json(v, _indent + 1) for v in obj]
        return "[\n" + ",\n".join(inner + p for p in parts) + "\n" + pad + "]"
    if isinstance(obj, dict):
        for key in obj:
            if not isinstance(key, str):
                raise TypeError(f"report keys must be strings, got {key!r}")
        parts = [json.dumps(k, ensure_ascii=True) + ": "
                 + canonical_json(obj[k], _indent + 1) for k in sorted(obj)]
        return "{\n" + ",\n".join(inner + p for p in parts) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def config_hash(mapping):
    """sha256 of the resolved configuration, canonically serialized."""
    return hashlib.sha256(canonical_json(mapping).encode("utf-8")).hexdigest()


def write_report(path, payload):
    text = canonical_json(payload) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text


def _cell(value):
    if isinstance(value, str):
        if "," in value or "\n" in value or '"' in value:
            raise ValueError(f"csv cells must be plain text: {value!r}")
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_float(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        cells = [_cell(v) for v in row]
        if len(cells) != len(header):
            raise ValueError("csv row width does not match the header")
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def version_stamp():
    import scipy

    from . import __version__

    return {"muskat": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__}
