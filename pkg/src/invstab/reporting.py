"""Experiment configuration and machine-readable report output.

Configs are flat key = value text files (# comments allowed); reports are
JSON with stable key order so identical config and seed reproduce them
bit-for-bit, with wall-clock metadata kept in a separate file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = "1"


@dataclass
class ExperimentConfig:
    system: str = "doubling"
    perturbation: str = "translation:0.0"
    delta: str = "0.01"          # float literal or "auto"
    eta: float = 0.05
    eta_lip: float = 0.1
    k_b: int = 24
    k_f: int = 24
    n_orbits: int = 48
    shift_range: str = "auto"    # column half-range S, or "auto"
    truncation_tol: float = 1e-10
    max_iters: int = 80
    stop_tol: float = 1e-10
    mc_samples: int = 100_000
    seed: int = 0
    output_dir: str = "out"
    jobs: int = 1

    _FLOATS = ("eta", "eta_lip", "truncation_tol", "stop_tol")
    _INTS = ("k_b", "k_f", "n_orbits", "max_iters", "mc_samples", "seed", "jobs")

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in self._FLOATS:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in self._INTS:
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 0):
                raise ConfigError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.k_b < 1 or self.k_f < 1 or self.n_orbits < 1 or self.jobs < 1:
            raise ConfigError("k_b, k_f, n_orbits and jobs must be at least 1")
        if self.delta != "auto":
            try:
                d = float(self.delta)
            except ValueError as err:
                raise ConfigError(f"delta must be a number or 'auto': {err}")
            if d < 0:
                raise ConfigError("delta must be nonnegative")
        if self.shift_range != "auto":
            try:
                int(self.shift_range)
            except ValueError as err:
                raise ConfigError(f"shift_range must be an int or 'auto': {err}")

    @property
    def delta_value(self):
        return "auto" if self.delta == "auto" else float(self.delta)

    @property
    def shift_range_value(self):
        return None if self.shift_range == "auto" else int(self.shift_range)

    @classmethod
    def from_file(cls, path):
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
        return cls.from_dict(values, source=str(path))

    @classmethod
    def from_dict(cls, values, source="<dict>"):
        kwargs = {}
        for key, val in values.items():
            if key not in cls.__dataclass_fields__ or key.startswith("_"):
                raise ConfigError(f"{source}: unknown key {key!r}")
            try:
                if key in cls._FLOATS:
                    kwargs[key] = float(val)
                elif key in cls._INTS:
                    kwargs[key] = int(val)
                else:
                    kwargs[key] = str(val)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{source}: field {key!r}: {err}")
        return cls(**kwargs)

    def to_dict(self):
        d = asdict(self)
        return {k: v for k, v in d.items() if not k.startswith("_")}

    # execution-placement fields that cannot influence any computed value
    _NON_SEMANTIC = ("output_dir", "jobs")

    def semantic_dict(self):
        return {k: v for k, v in self.to_dict().items()
                if k not in self._NON_SEMANTIC}

    def config_hash(self):
        text = json.dumps(self.semantic_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_report(path, payload, config=None):
    """Deterministic JSON report plus a side file with the timestamp."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION}
    if config is not None:
        body["config"] = config.semantic_dict()
        body["config_hash"] = config.config_hash()
    body.update(_jsonify(payload))
    path.write_text(json.dumps(body, sort_keys=True, indent=1,
                               ensure_ascii=False) + "\n", encoding="utf-8")
    meta = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "report": path.name}
    meta_path = path.with_name(path.stem + ".meta.json")
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n",
                         encoding="utf-8")
    return path


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v
                             for v in row])
    return path


def section_rows(section):
    """CSV rows for a section: orbit, column, fiber components."""
    n, c, k = section.values.shape
    S = section.sample.S
    for i in range(n):
        for j in range(c):
            yield [i, j - S] + [float(v) for v in section.values[i, j]]


def field_rows(field):
    """CSV rows for a plane field: orbit, column, flattened basis columns."""
    n, c, Np, k = field.bases.shape
    S = field.sample.S
    for i in range(n):
        for j in range(c):
            if not field.mask[i, j]:
                continue
            yield [i, j - S] + [float(v) for v in field.bases[i, j].ravel(order="F")]


def residual_rows(residuals):
    for it, r in enumerate(residuals):
        yield [it, float(r)]
