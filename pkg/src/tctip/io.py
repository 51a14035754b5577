"""Run configuration and result serialization for the command-line tools.

One JSON config file fully describes a run; every output embeds the
resolved config so any result can be replayed byte for byte.  Floats are
serialized with repr (shortest round-trip form, 17 significant digits when
needed), CSV files are RFC-4180-style with a header row and LF endings, and
JSON files use UTF-8 with sorted keys.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
TOOL_NAME = "tctip"


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """Fully resolved description of one run: defaults overlaid with the
    config file and command-line overrides."""

    command: str
    values: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, command: str, defaults: dict, file_path: str | None,
                overrides: dict | None = None) -> "RunConfig":
        merged = dict(defaults)
        if file_path is not None:
            try:
                text = Path(file_path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            try:
                loaded = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError("config root must be a JSON object")
            unknown = set(loaded) - set(defaults)
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            merged = _merge(merged, loaded)
        if overrides:
            merged = _merge(merged, overrides)
        cfg = cls(command=command, values=merged)
        cfg.validate()
        return cfg

    def validate(self):
        for key, val in self.values.items():
            if isinstance(val, dict):
                for k2, v2 in val.items():
                    _check_scalar(f"{key}.{k2}", v2)
            else:
                _check_scalar(key, val)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return {"command": self.command, **self.values}


def _check_scalar(name, val):
    if val is None or isinstance(val, (bool, int, float, str, list)):
        return
    raise ConfigError(f"config value {name} has unsupported type "
                      f"{type(val).__name__}")


def envelope(config: RunConfig, payload, produced_at: str | None = None) -> dict:
    """Standard result wrapper: schema version, tool id, config echo,
    deterministic metadata (produced_at stays null unless stamping was
    requested), and the payload."""
    from . import __version__

    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": TOOL_NAME, "version": __version__},
        "config": config.as_dict(),
        "produced_at": produced_at,
        "payload": payload,
    }


def _jsonify(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and obj != obj:   # NaN -> null for valid JSON
        return None
    return obj


def dump_json(data: dict, path: Path | None = None) -> str:
    """Serialize with sorted keys and round-trip floats; write if path."""
    text = json.dumps(_jsonify(data), sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def _format_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    try:
        import numpy as np
        if isinstance(x, np.floating):
            return repr(float(x))
        if isinstance(x, np.integer):
            return str(int(x))
    except ImportError:
        pass
    return str(x)


def dump_csv(header, rows, path: Path | None = None) -> str:
    """RFC-4180-style CSV with header row and LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(x) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def read_csv(path) -> tuple[list, list]:
    """Read back a CSV written by dump_csv: (header, rows of floats/strs)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            row = []
            for cell in raw:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(row)
    return header, rows
