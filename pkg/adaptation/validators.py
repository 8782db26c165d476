"""Coercion of JSON/CLI values into typed configuration fields.

The ``to_*`` helpers return ``None`` for anything unusable so callers can
name the offending key in one ``require`` call.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigError


def to_int(value, *, min_value: int | None = None, max_value: int | None = None) -> int | None:
    if isinstance(value, bool):
        return None
    try:
        out = int(value)
    except (TypeError, ValueError):
        return None
    if isinstance(value, float) and value != out:
        return None
    if min_value is not None and out < min_value:
        return None
    if max_value is not None and out > max_value:
        return None
    return out


def to_float(value, *, min_value: float | None = None, max_value: float | None = None) -> float | None:
    if isinstance(value, bool):
        return None
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    if not np.isfinite(out):
        return None
    if min_value is not None and out < min_value:
        return None
    if max_value is not None and out > max_value:
        return None
    return out


def require(value, name: str):
    if value is None:
        raise ConfigError(f'invalid value for {name}')
    return value


def reject_unknown(data, allowed, section: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f'{section} must be a JSON object')
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f'unknown {section} keys: {", ".join(unknown)}')
    return data
