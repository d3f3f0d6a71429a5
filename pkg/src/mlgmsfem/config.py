"""Experiment configuration: ``key = value`` lines with ``#`` comments.

Lists are whitespace separated; coarsening factors are written ``10x10``.
Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .grid import GridHierarchy, build_hierarchy, sub_hierarchy

_COUNT_KEY = re.compile(r"^N(\d+)$")


def _floats(n):
    def conv(s):
        parts = s.split()
        if n is not None and len(parts) != n:
            raise ValueError(f"expected {n} numbers")
        return tuple(float(p) for p in parts)
    return conv


def _ints(n=None):
    def conv(s):
        parts = s.split()
        if not parts or (n is not None and len(parts) != n):
            raise ValueError(f"expected {n or 'one or more'} integers")
        return tuple(int(p) for p in parts)
    return conv


def _factors(s):
    out = []
    for tok in s.split():
        m = re.fullmatch(r"(\d+)x(\d+)", tok)
        if not m:
            raise ValueError(f"factor {tok!r} is not of the form CxC")
        out.append((int(m.group(1)), int(m.group(2))))
    return tuple(out)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _level_configs(s):
    out = []
    for tok in s.replace(",", " ").split():
        out.append(tuple(int(p) for p in tok.split("+")))
    return tuple(out)


def _choice(*options):
    def conv(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return conv


def _opt_int(s):
    return None if s.lower() == "none" else int(s)


# key -> (converter, default); None default with required=True below
_SCHEMA = {
    "domain": (_floats(2), (1.0, 1.0)),
    "fine_dims": (_ints(2), None),
    "factors": (_factors, None),
    "snapshot_count": (_opt_int, None),
    "snapshot_mode": (_choice("trace-exhaustive", "trace-randomized"), "trace-exhaustive"),
    "coarse_snapshot_count": (_opt_int, None),
    "oversample": (int, 4),
    "oversample_coarse": (int, 0),
    "kappa_weighted": (_bool, False),
    "theta": (float, 0.7),
    "tol": (float, 0.0),
    "max_iter": (int, 5),
    "decay_threshold": (float, 1.05),
    "seed": (int, 0),
    "kappa": (str, "1.0"),
    "contrast": (float, 1e4),
    "field_seed": (int, 0),
    "channel_spacing": (int, 10),
    "inclusions": (int, 150),
    "mask": (str, "none"),
    "perf_count": (int, 0),
    "perf_radius": (_floats(2), (2.0, 4.0)),
    "perf_seed": (int, 0),
    "f": (str, "1.0"),
    "fine_solver": (_choice("direct", "cg"), "direct"),
    "snap_reference": (_choice("fine", "own", "none"), "fine"),
    "reference_snapshots": (int, 32),
    "level_configs": (_level_configs, ()),
    "sweep_n1": (_ints(), ()),
    "sweep_n2": (_ints(), ()),
    "sweep_n3": (_ints(), ()),
    "output": (str, "out"),
}
_REQUIRED = ("fine_dims", "factors")
_PATH_KEYS = ("kappa", "mask", "f")


@dataclass(frozen=True)
class ExperimentConfig:
    fine_dims: tuple
    factors: tuple
    counts: tuple                     # N_1 .. N_{N-1}
    domain: tuple = (1.0, 1.0)
    snapshot_count: int | None = None
    snapshot_mode: str = "trace-exhaustive"
    coarse_snapshot_count: int | None = None
    oversample: int = 4
    oversample_coarse: int = 0
    kappa_weighted: bool = False
    theta: float = 0.7
    tol: float = 0.0
    max_iter: int = 5
    decay_threshold: float = 1.05
    seed: int = 0
    kappa: str = "1.0"
    contrast: float = 1e4
    field_seed: int = 0
    channel_spacing: int = 10
    inclusions: int = 150
    mask: str = "none"
    perf_count: int = 0
    perf_radius: tuple = (2.0, 4.0)
    perf_seed: int = 0
    f: str = "1.0"
    fine_solver: str = "direct"
    snap_reference: str = "fine"
    reference_snapshots: int = 32
    level_configs: tuple = ()
    sweep_n1: tuple = ()
    sweep_n2: tuple = ()
    sweep_n3: tuple = ()
    output: str = "out"
    base_dir: str = field(default=".", compare=False)

    @property
    def levels(self) -> int:
        return len(self.factors)

    def hierarchy(self) -> GridHierarchy:
        return build_hierarchy(self.fine_dims, self.factors, self.domain)

    def sub(self, levels) -> GridHierarchy:
        return sub_hierarchy(self.hierarchy(), levels)

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_overrides(self, overrides) -> "ExperimentConfig":
        text = serialize_config(self) + "\n" + "\n".join(overrides)
        return parse_text(text, self.base_dir, "override")


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def parse_text(text: str, base_dir=".", source: str = "<config>") -> ExperimentConfig:
    values, where = {}, {}
    counts = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        m = _COUNT_KEY.match(key)
        if m:
            try:
                counts[int(m.group(1))] = (int(val), lineno)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} must be an integer") from None
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        conv, _ = _SCHEMA[key]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        where[key] = lineno
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"{source}: missing required key {key!r}")
    factors = values["factors"]
    try:
        build_hierarchy(values["fine_dims"], factors, values.get("domain", (1.0, 1.0)))
    except ConfigError as exc:
        raise ConfigError(f"{source}:{where['factors']}: {exc}") from None
    n_coarse = len(factors) - 1
    for l, (_, lineno) in counts.items():
        if not 1 <= l <= n_coarse:
            raise ConfigError(f"{source}:{lineno}: unknown key 'N{l}' for a "
                              f"{len(factors)}-level configuration")
    missing = [f"N{l}" for l in range(1, n_coarse + 1) if l not in counts]
    if missing:
        raise ConfigError(f"{source}: missing required key(s) {', '.join(missing)}")
    for l, (n, lineno) in counts.items():
        if n < 1:
            raise ConfigError(f"{source}:{lineno}: N{l} must be >= 1")
    for cfg in values.get("level_configs", ()):
        if cfg[0] != 1 or cfg[-1] != len(factors) or list(cfg) != sorted(set(cfg)):
            raise ConfigError(f"{source}:{where['level_configs']}: level configuration "
                              f"{'+'.join(map(str, cfg))} must start at 1, end at "
                              f"{len(factors)} and increase")
    cfg = ExperimentConfig(counts=tuple(counts[l][0] for l in range(1, n_coarse + 1)),
                           base_dir=str(base_dir), **values)
    for key in _PATH_KEYS:
        val = getattr(cfg, key)
        if key == "mask" and val in ("none", "circles"):
            continue
        if key == "kappa" and val == "channels":
            continue
        if not _is_number(val) and not cfg.resolve(val).is_file():
            raise ConfigError(f"{source}:{where.get(key, '?')}: {key} file {val!r} not found")
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, path.parent, str(path))


def _fmt(key, v) -> str:
    if key == "factors":
        return " ".join(f"{a}x{b}" for a, b in v)
    if key == "level_configs":
        return " ".join("+".join(map(str, c)) for c in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(repr(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        if f.name in ("counts", "base_dir"):
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple) and not v and f.name not in _REQUIRED:
            continue
        lines.append(f"{f.name} = {_fmt(f.name, v)}")
    lines += [f"N{l} = {n}" for l, n in enumerate(cfg.counts, start=1)]
    return "\n".join(lines) + "\n"


def apply_set(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``key=value`` overrides from the command line."""
    lines = []
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not key=value")
        k, v = p.split("=", 1)
        lines.append(f"{k.strip()} = {v.strip()}")
    return cfg.with_overrides(lines) if lines else cfg

