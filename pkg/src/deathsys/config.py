"""Strict JSON configuration helpers.

Every config document carries ``"schema": "deathsys/1"``.  Unknown keys are
errors so a typo cannot silently change a causal scenario.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ConfigError

SCHEMA = "deathsys/1"


def load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return doc


def check_schema(doc: Mapping, where: str = "config") -> None:
    version = doc.get("schema")
    if version != SCHEMA:
        raise ConfigError(f"{where}: expected schema {SCHEMA!r}, got {version!r}")


def take(doc: Mapping, where: str, required: Iterable[str] = (), optional: Iterable[str] = ()) -> dict:
    """Return ``doc`` as a dict after checking its key set."""
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    required = list(required)
    allowed = set(required) | set(optional)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(allowed)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")
    return dict(doc)


def one_of(doc: Mapping, where: str, kinds: Iterable[str]) -> tuple[str, Any]:
    """Tagged union: a single-key object whose key names the variant."""
    kinds = list(kinds)
    if not isinstance(doc, Mapping) or len(doc) != 1:
        raise ConfigError(f"{where}: expected a single-key object naming one of {kinds}")
    (kind, body), = doc.items()
    if kind not in kinds:
        raise ConfigError(f"{where}: unknown variant {kind!r}; expected one of {kinds}")
    return kind, body


def as_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]
