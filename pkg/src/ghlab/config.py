"""Experiment configuration (TOML) and run manifests carried in CSV headers."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import time
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from . import __version__

REGIMES = ("tangential", "normal", "mixed")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` and ``line`` locate the problem when known."""

    def __init__(self, msg, field=None, line=None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.field = field
        self.line = line


@dataclass
class ExperimentConfig:
    domain: str = "ball"
    seed: int = 0
    out: str = "results"
    # point families
    regime: str = "mixed"
    deltas: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    pairs: int = 10
    separation: float = 0.1
    tangency_threshold: float = 0.1
    samples: int = 20
    # metric solver
    d: int = 8
    m: int = 64
    # quasi-geodesic solver: grid shape (nodes per frame axis) and refinement passes
    grid: list = field(default_factory=lambda: [13, 9, 7, 5])
    refine: int = 1
    vertices: int = 24
    # single-pair commands: points given as [[re, im], ...]
    point: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 0.0]])
    z: list = field(default_factory=lambda: [[0.0, 0.0], [0.0, 0.0]])
    w: list = field(default_factory=lambda: [[0.5, 0.0], [0.0, 0.5]])
    # scaling and telescope
    t: list = field(default_factory=lambda: [0.9, 0.99, 0.999])
    beta: float = -0.5
    epsilon: float = 0.05
    curve: str = "axis"
    quotient_bound: float = 2.0
    workers: int = 1

    # ------------------------------------------------------------ checks
    def validate(self, source=None):
        def bad(name, msg):
            raise ConfigError(msg, name, _line_of(source, name))

        from .domains import default_catalog

        if self.domain not in default_catalog():
            bad("domain", f"unknown domain id {self.domain!r}; known: {sorted(default_catalog())}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            bad("seed", "must be an integer in [0, 2^64)")
        if self.regime not in REGIMES:
            bad("regime", f"must be one of {REGIMES}")
        if not self.deltas or any(not 0 < x < 1 for x in self.deltas):
            bad("deltas", "need a non-empty list of values in (0, 1)")
        for name in ("pairs", "samples"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 0:
                bad(name, "must be a non-negative integer")
        for name, lo, hi in (("separation", 0, 2), ("tangency_threshold", 0, 1), ("epsilon", 0, 1),
                             ("quotient_bound", 0, float("inf"))):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not lo < v < hi:
                bad(name, f"must lie in ({lo}, {hi})")
        if not -1 < self.beta < 1:
            bad("beta", "must lie in (-1, 1)")
        if not 1 <= self.d <= 64:
            bad("d", "disc degree must lie in [1, 64]")
        if not 8 <= self.m <= 4096:
            bad("m", "boundary samples must lie in [8, 4096]")
        if len(self.grid) != 4 or any(not isinstance(k, int) or k < 2 for k in self.grid):
            bad("grid", "need four integers >= 2")
        if not 0 <= self.refine <= 10:
            bad("refine", "must lie in [0, 10]")
        if not 3 <= self.vertices <= 512:
            bad("vertices", "must lie in [3, 512]")
        for name in ("point", "z", "w"):
            v = getattr(self, name)
            if not v or any(len(c) != 2 for c in v):
                bad(name, "need a list of [re, im] pairs")
        if not self.t or any(not 0 < x < 1 for x in self.t):
            bad("t", "need values in (0, 1)")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        return self

    # --------------------------------------------------------- (de)serialise
    def to_dict(self):
        return asdict(self)

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data, source=None):
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown key", key, _line_of(source, key))
        cfg = cls(**data)
        for f in fields(cls):
            default = getattr(cls(), f.name)
            value = getattr(cfg, f.name)
            if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
                setattr(cfg, f.name, float(value))
            elif type(default) is not type(value):
                raise ConfigError(f"expected {type(default).__name__}, got {type(value).__name__}",
                                  f.name, _line_of(source, f.name))
        return cfg.validate(source)

    @classmethod
    def from_toml(cls, text):
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as err:
            m = re.search(r"line (\d+)", str(err))
            line = int(m.group(1)) if m else max(1, len(text.splitlines()))
            raise ConfigError(f"TOML syntax: {err}", line=line) from None
        return cls.from_dict(data, text)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_toml(fh.read())

    def with_env(self, environ=None):
        """Apply GHLAB_<FIELD> overrides (scalars parsed by type, lists as JSON)."""
        environ = os.environ if environ is None else environ
        data = self.to_dict()
        for f in fields(self):
            key = "GHLAB_" + f.name.upper()
            if key not in environ:
                continue
            raw = environ[key]
            cur = data[f.name]
            try:
                if isinstance(cur, bool):
                    data[f.name] = raw.lower() in ("1", "true", "yes")
                elif isinstance(cur, (int, float, str)):
                    data[f.name] = type(cur)(raw)
                else:
                    data[f.name] = json.loads(raw)
            except (ValueError, json.JSONDecodeError) as err:
                raise ConfigError(f"environment override {key}: {err}", f.name) from None
        return type(self).from_dict(data)

    # fields that do not influence any computed value
    UNHASHED = ("out", "workers")

    def config_hash(self):
        data = {k: v for k, v in self.to_dict().items() if k not in self.UNHASHED}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(source, key):
    if not source:
        return None
    for i, line in enumerate(source.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


# --------------------------------------------------------------------------
# Manifests and CSV
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str = __version__
    rows: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    tolerances: dict = field(default_factory=dict)
    timestamp: str = ""

    VOLATILE = ("wall_clock", "timestamp")

    def start(self):
        self._t0 = time.perf_counter()
        self.timestamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return self

    def stop(self):
        self.wall_clock = round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 3)
        return self

    @property
    def passed(self):
        return all(self.tolerances.values())

    def header(self):
        d = {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "rows": json.dumps(self.rows, sort_keys=True),
            "tolerances": json.dumps(self.tolerances, sort_keys=True),
            "wall_clock": self.wall_clock,
            "timestamp": self.timestamp,
        }
        return [f"# {k}: {v}" for k, v in d.items()]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if hasattr(v, "item"):
        return _fmt(v.item())
    return str(v)


def write_csv(path, columns, rows, manifest):
    """RFC 4180 CSV preceded by '#'-prefixed manifest lines."""
    buf = io.StringIO()
    for line in manifest.header():
        buf.write(line + "\r\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """(manifest dict, column names, list of row dicts with string values)."""
    meta, body = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition(": ")
                meta[k] = v
            else:
                body.append(line)
    reader = csv.reader(body)
    cols = next(reader, [])
    rows = [dict(zip(cols, r)) for r in reader]
    return meta, cols, rows
