"""JSON helpers.

Python's float ``repr`` is already the shortest decimal that round-trips,
so the standard ``json`` module gives bit-exact reals once numpy scalars
and arrays are converted to plain Python objects.
"""

import json
import os
import sys

import numpy as np

__all__ = ["to_plain", "dumps", "dump", "load", "output_path", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "SOSMPC_OUTPUT_DIR"


def to_plain(obj):
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj):
    return json.dumps(to_plain(obj), indent=2)


def dump(obj, path=None):
    """Write JSON to ``path`` or standard output when ``path`` is None or ``-``."""
    text = dumps(obj) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def load(path):
    if path == "-":
        return json.load(sys.stdin)
    with open(path) as fh:
        return json.load(fh)


def output_path(path):
    """Resolve a relative output path against ``$SOSMPC_OUTPUT_DIR`` when that is set."""
    if path in (None, "-") or os.path.isabs(path):
        return path
    base = os.environ.get(OUTPUT_DIR_ENV)
    return os.path.join(base, path) if base else path
