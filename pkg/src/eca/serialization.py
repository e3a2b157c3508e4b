"""JSON text with floats written at 17 significant digits.

Seventeen significant digits are enough for any IEEE-754 double to survive
a write/read cycle bit for bit.
"""

import json

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


def _encode(obj, out):
    if isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    elif obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            raise ValueError("non-finite value cannot be serialized")
        out.append("%.17g" % x)
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    out = []
    _encode(obj, out)
    return "".join(out) + "\n"


def write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def read_json(path, kind=None):
    """Read a versioned document, checking ``format_version`` and ``kind``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a valid document ({exc})") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise FormatError(f"{path}: missing format_version field")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"{path}: format_version {doc['format_version']!r} is not supported "
            f"(this build reads version {FORMAT_VERSION})"
        )
    if kind is not None and doc.get("kind", kind) != kind:
        raise FormatError(f"{path}: expected a {kind!r} document, found {doc.get('kind')!r}")
    return doc


def require(doc, keys, path="document"):
    missing = [k for k in keys if k not in doc]
    if missing:
        raise FormatError(f"{path}: missing field(s) {', '.join(missing)}")


def matrix(doc, key, shape, path="document"):
    try:
        arr = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: field {key!r} is not numeric") from exc
    if arr.shape != tuple(shape):
        raise FormatError(f"{path}: field {key!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr
