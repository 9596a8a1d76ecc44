"""Run configuration: a flat, versioned JSON document with strict keys."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Any, Mapping

from .design import FocusSpec, Subset
from .errors import ValidationError

SCHEMA_VERSION = 1
COMMANDS = ("fic", "avefic", "order", "limit-risk", "simulate", "gof", "tolerance")
FAMILY_GUARD_Q = 20


@dataclass
class RunConfig:
    command: str
    schema_version: int = SCHEMA_VERSION
    data_path: str | None = None
    roles: dict | None = None
    subset_family: str = "all"
    subsets: list[list[int]] | None = None
    focus: dict | None = None
    rank_by: str | None = None
    shortlist: int = 10
    cost: dict | None = None
    seed: int = 0
    reps: int = 10_000
    threads: int = 1
    out_path: str | None = None
    limit_spec: dict | None = None
    schemes: list[dict] | None = None
    deltas: list[list[float]] | None = None
    delta_grid: dict | None = None
    loss: str = "squared"
    order_spec: dict | None = None
    order_n: list[int] | None = None
    order_mc: bool = False
    n: int | None = None
    n_values: list[int] | None = None
    beta: list[float] | None = None
    omega: list[float] | None = None
    K: list[list[float]] | None = None
    gamma_offsets: list[list[float]] | None = None

    def digest_view(self) -> dict:
        """Fields that determine results; excludes output and threading options."""
        d = asdict(self)
        for k in ("out_path", "threads", "data_path"):
            d.pop(k)
        return d


_FIELDS = set(RunConfig.__dataclass_fields__)


def parse_config(source: str | os.PathLike | Mapping[str, Any]) -> RunConfig:
    """Read and validate a run configuration from a path, JSON text or mapping."""
    if isinstance(source, Mapping):
        doc = dict(source)
    else:
        text = str(source)
        if os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "command" not in doc:
        raise ValidationError("config must name a command")
    cfg = RunConfig(**doc)
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {cfg.schema_version}")
    if cfg.command not in COMMANDS:
        raise ValidationError(f"unknown command {cfg.command!r}; expected one of {COMMANDS}")
    if not isinstance(cfg.reps, int) or cfg.reps < 1:
        raise ValidationError("reps must be a positive integer")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ValidationError("threads must be >= 1")
    if cfg.shortlist < 1:
        raise ValidationError("shortlist must be >= 1")
    if cfg.subset_family not in ("all", "nested", "explicit"):
        raise ValidationError(f"unknown subset_family {cfg.subset_family!r}")
    if cfg.subsets is not None:
        cfg.subsets = sorted({Subset(tuple(s)) for s in cfg.subsets}, key=Subset.sort_key)
        cfg.subsets = [s.to_list() for s in cfg.subsets]
    if cfg.subset_family == "explicit" and not cfg.subsets:
        raise ValidationError("subset_family 'explicit' requires a non-empty subsets list")
    if cfg.command in ("fic", "avefic", "gof") and cfg.roles is None:
        raise ValidationError(f"command {cfg.command!r} needs column roles")
    if cfg.command in ("limit-risk", "simulate") and cfg.limit_spec is None:
        raise ValidationError(f"command {cfg.command!r} needs a limit_spec")
    if cfg.command == "order" and cfg.order_spec is None:
        raise ValidationError("command 'order' needs an order_spec")
    if cfg.command == "tolerance" and (cfg.omega is None or cfg.K is None or cfg.n is None):
        raise ValidationError("command 'tolerance' needs omega, K and n")
    if cfg.loss not in ("squared", "absolute"):
        raise ValidationError(f"unknown loss {cfg.loss!r}")
    if cfg.focus is not None:
        focus_from_dict(cfg.focus)
    return cfg


def check_family_size(q: int, family: str) -> None:
    if family == "all" and q > FAMILY_GUARD_Q:
        raise ValidationError(f"2^{q} subsets requested; restrict the family (nested or explicit) for q > {FAMILY_GUARD_Q}")


def focus_from_dict(doc: Mapping[str, Any]) -> FocusSpec:
    allowed = {"kind", "j", "x0", "u0", "omega", "tau0_sq"}
    extra = set(doc) - allowed
    if extra:
        raise ValidationError(f"unknown focus keys: {sorted(extra)}")
    if "kind" not in doc:
        raise ValidationError("focus needs a kind")
    return FocusSpec(**doc)
