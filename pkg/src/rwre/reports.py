"""Report envelopes: canonical JSON, config hashing, reproducibility.

Reports are deterministic functions of the resolved configuration: the
canonical payload bytes depend only on it, and the envelope separates the
one volatile field (the timestamp) so byte comparisons can exclude it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from datetime import datetime, timezone

import numpy as np

TOOL_NAME = "rwre"
TOOL_VERSION = "0.1.0"


def sanitize(obj):
    """Make a payload JSON-stable: plain types, lists, finite-or-tagged floats."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return sanitize(dataclasses.asdict(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return obj
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return repr(obj)


def canonical_json(obj) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def envelope(command: str, config: dict, payload, warnings=None, seed=None) -> dict:
    return {
        "tool": {"name": TOOL_NAME, "version": TOOL_VERSION},
        "command": command,
        "config": sanitize(config),
        "config_hash": config_hash(config),
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "warnings": sorted(set(warnings or [])),
        "payload": sanitize(payload),
    }


def payload_bytes(env: dict) -> bytes:
    """Envelope bytes with the timestamp removed; the reproducibility unit."""
    stripped = {k: v for k, v in env.items() if k != "timestamp"}
    return canonical_json(stripped).encode()


def write_report(path: str, env: dict) -> None:
    with open(path, "w") as fh:
        json.dump(env, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path: str, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
