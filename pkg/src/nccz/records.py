"""Check records and probe reports shared by the experiment modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

PASS, FAIL, MEASURED = "pass", "fail", "measured"


@dataclass
class CheckRecord:
    name: str
    anchor: str
    value: float
    bound: float | None
    status: str
    detail: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def upper(cls, name: str, anchor: str, value: float, bound: float, **detail) -> "CheckRecord":
        """Asserted check value <= bound (NaN fails)."""
        value = float(value)
        bound = float(bound)
        ok = bool(np.isfinite(value) and value <= bound)
        return cls(name, anchor, value, bound, PASS if ok else FAIL, detail)

    @classmethod
    def measured(cls, name: str, anchor: str, value: float, bound: float | None = None, **detail) -> "CheckRecord":
        return cls(name, anchor, float(value), None if bound is None else float(bound), MEASURED, detail)

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))


@dataclass
class ProbeReport:
    """Per-sample measurements plus ensemble worst cases.

    ``asserted`` is False for measured-only probes, which can never fail.
    """

    name: str
    samples: list[dict[str, float]] = field(default_factory=list)
    worst: dict[str, float] = field(default_factory=dict)
    ceiling: float | None = None
    asserted: bool = False
    skipped: int = 0

    def add(self, **values: float):
        self.samples.append({k: float(v) for k, v in values.items()})
        for k, v in values.items():
            v = float(v)
            if k not in self.worst or v > self.worst[k]:
                self.worst[k] = v

    @property
    def passed(self) -> bool:
        if not self.asserted or self.ceiling is None:
            return True
        return all(v <= self.ceiling for v in self.worst.values())

    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))


def _plain(obj):
    """Convert numpy scalars (and non-finite floats) into JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj
