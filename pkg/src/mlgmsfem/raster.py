"""Plain-text cell rasters.

Format: first line ``nx ny``, then ``nx * ny`` whitespace-separated values,
y outer and x fastest, so value k belongs to cell ``(k % nx, k // nx)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError


def write_raster(values, path) -> None:
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError("raster values must be 2D (ny, nx)")
    ny, nx = a.shape
    lines = [f"{nx} {ny}"]
    lines += [" ".join(format(v, ".17g") for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_raster(path) -> np.ndarray:
    """Read a raster into a (ny, nx) float array."""
    path = Path(path)
    try:
        tokens = path.read_text().split()
    except OSError as exc:
        raise ConfigError(f"cannot read raster {path}: {exc}") from exc
    if len(tokens) < 2:
        raise ConfigError(f"{path}: missing 'nx ny' header")
    try:
        nx, ny = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ConfigError(f"{path}: header must be two integers, got {tokens[:2]}") from None
    body = tokens[2:]
    if len(body) != nx * ny:
        raise ConfigError(f"{path}: header says {nx}x{ny} = {nx * ny} values, found {len(body)}")
    out = np.empty(nx * ny)
    for k, tok in enumerate(body):
        try:
            out[k] = float(tok)
        except ValueError:
            raise ConfigError(f"{path}: non-numeric token {tok!r} at value {k} "
                              f"(cell {k % nx}, {k // nx})") from None
    return out.reshape(ny, nx)
