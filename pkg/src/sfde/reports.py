"""Check reports and their JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True)


@dataclass
class CheckReport:
    """Outcome of one numerical verification.

    ``worst_ratio`` is the largest observed value of whatever ratio the check
    bounds; ``constants`` holds fitted or analytic constants it was compared
    against.
    """

    check: str
    samples: int
    worst_ratio: float
    constants: dict = field(default_factory=dict)
    passed: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "samples": int(self.samples),
            "worst_ratio": self.worst_ratio,
            "constants": self.constants,
            "pass": bool(self.passed),
            "details": self.details,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


KernelBoundReport = CheckReport
