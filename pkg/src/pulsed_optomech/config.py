"""Strict parsing of declarative config documents.

Every reader takes the dotted path of the node it is parsing so error
messages name the offending field, e.g. ``steps[1].pulse.chi``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import yaml

from .errors import ConfigError

ENV_PREFIX = "PULSED_OPTOMECH_"


def load_document(path) -> dict:
    """Read a JSON or YAML config file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return doc


def check_keys(node, allowed, path: str, required=()) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{_join(path, key)}: unknown key")
    for key in required:
        if key not in node:
            raise ConfigError(f"{_join(path, key)}: missing required field")
    return node


def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def get_float(node, key, path, default=None, required=False, minimum=None, positive=False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{_join(path, key)}: missing required field")
        return default
    val = node[key]
    if isinstance(val, str):
        # YAML 1.1 leaves exponents without a dot ("1e-3") as strings
        try:
            val = float(val)
        except ValueError:
            pass
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{_join(path, key)}: expected a number, got {val!r}")
    val = float(val)
    if positive and not val > 0:
        raise ConfigError(f"{_join(path, key)}: must be positive")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{_join(path, key)}: must be >= {minimum}")
    return val


def get_int(node, key, path, default=None, required=False, minimum=None):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{_join(path, key)}: missing required field")
        return default
    val = node[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{_join(path, key)}: expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{_join(path, key)}: must be >= {minimum}")
    return val


def get_str(node, key, path, default=None, choices=None, required=False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{_join(path, key)}: missing required field")
        return default
    val = node[key]
    if not isinstance(val, str):
        raise ConfigError(f"{_join(path, key)}: expected a string")
    if choices is not None and val not in choices:
        raise ConfigError(f"{_join(path, key)}: must be one of {list(choices)}")
    return val


def get_float_list(node, key, path, default=None, required=False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{_join(path, key)}: missing required field")
        return default
    val = node[key]
    if not isinstance(val, list):
        raise ConfigError(f"{_join(path, key)}: expected a list of numbers")
    out = []
    for i, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{_join(path, key)}[{i}]: expected a number")
        out.append(float(v))
    return out


def apply_env_overrides(doc: dict, environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Override config values from ``PREFIX<A>__<B>=value`` environment variables.

    Keys are lower-cased and ``__`` separates nesting levels; values are parsed
    as JSON, falling back to YAML. Overrides may only replace existing keys or add keys that
    the schema then validates.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(doc))
    for name in sorted(environ):
        if not name.startswith(prefix) or name[len(prefix):] in ("SEED", "THREADS"):
            continue
        parts = name[len(prefix):].lower().split("__")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {name}: {part} is not a mapping")
        node[parts[-1]] = _parse_scalar(environ[name])
    return out


def _parse_scalar(text: str):
    # JSON first: PyYAML reads "1e-3" as a string
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return yaml.safe_load(text)
