"""
Versioned JSON and CSV artifacts.

Every JSON document carries schema_version, kind, tool_version and the run
configuration. Output is deterministic: keys are sorted, there are no
timestamps, nan becomes null and infinities become the strings "inf"/"-inf".
"""
import json
import logging
import math
from enum import Enum
from pathlib import Path

import numpy as np

from hetsel import __version__

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Enum):
        return to_jsonable(obj.value)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, Path):
        return str(obj)
    return obj


def document(kind, payload, config=None):
    return to_jsonable({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "tool_version": __version__,
        "config": config or {},
        **payload,
    })


def write_json(path, kind, payload, config=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document(kind, payload, config), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote %s artifact to %s", kind, path)
    return path


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {data.get('schema_version')!r}")
    return data


def write_csv(path, frame):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8")
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def parse_extended(value):
    """Inverse of the JSON encoding of extended reals."""
    if value is None:
        return float("nan")
    if value == "inf":
        return float("inf")
    if value == "-inf":
        return float("-inf")
    return float(value)
