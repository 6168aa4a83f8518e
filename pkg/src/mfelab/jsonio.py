"""Deterministic JSON output with non-finite numbers mapped to null."""
from __future__ import annotations

import json
import math

import numpy as np


def sanitize(obj):
    """Recursively convert numpy scalars/arrays and replace nan/inf by ``None``."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj, indent=2) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, indent=indent, allow_nan=False)
