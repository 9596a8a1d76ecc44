"""JSON run reports with a bit-stable, digestible result payload.

Floats are written with 17 significant digits so they round-trip
exactly; non-finite floats become the strings ``"inf"``, ``"-inf"`` and
``"nan"``. Only the payload (input digest, results, warnings) enters the
payload digest; metadata such as timestamps does not.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if not any(c in s for c in ".eEn"):
        s += ".0"
    return s


def dumps(obj: Any, indent: int | None = None, _level: int = 0) -> str:
    """Deterministic JSON with sorted keys and 17-digit floats."""
    nl = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = "," if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{nl}{json.dumps(str(k))}:{'' if indent is None else ' '}{dumps(v, indent, _level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + sep.join(f"{nl}{dumps(v, indent, _level + 1)}" for v in obj) + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if hasattr(obj, "to_dict"):
        return dumps(obj.to_dict(), indent, _level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def sha256(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


@dataclass
class Report:
    command: str
    seed: int
    input_digest: str
    results: Any = None
    warnings: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def payload(self) -> dict:
        return {"input_digest": self.input_digest, "results": self.results, "warnings": self.warnings}

    def payload_text(self) -> str:
        return dumps(self.payload())

    def payload_digest(self) -> str:
        return sha256(self.payload_text())

    def to_dict(self) -> dict:
        import numpy
        import scipy

        from . import __version__

        meta = {
            "command": self.command,
            "seed": self.seed,
            "versions": {"ficsel": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            **self.metadata,
        }
        return {"metadata": meta, **self.payload(), "payload_digest": self.payload_digest()}

    def to_json(self, indent: int | None = 2) -> str:
        return dumps(self.to_dict(), indent) + "\n"
