"""Seeded test media: channelized high-contrast fields and circular perforations."""
from __future__ import annotations

import warnings

import numpy as np


def channel_field(dims, contrast: float = 1e4, spacing: int = 10, width: int = 1,
                  inclusions: int = 150, seed: int = 0) -> np.ndarray:
    """Background 1 with horizontal high-conductivity channels and inclusions.

    Channels sit roughly every ``spacing`` cells in y with a random offset and
    random breaks; inclusions are small rectangles.  Returns (ny, nx) values.
    """
    nx, ny = dims
    rng = np.random.default_rng(seed)
    kappa = np.ones((ny, nx))
    y = int(rng.integers(2, spacing))
    while y + width <= ny - 2:
        x0 = int(rng.integers(0, nx // 10 + 1))
        x1 = nx - int(rng.integers(0, nx // 10 + 1))
        kappa[y:y + width, x0:x1] = contrast
        # a break somewhere along most channels
        if rng.random() < 0.5:
            g0 = int(rng.integers(x0, max(x0 + 1, x1 - 4)))
            kappa[y:y + width, g0:g0 + int(rng.integers(2, 5))] = 1.0
        y += spacing + int(rng.integers(-spacing // 4, spacing // 4 + 1))
    for _ in range(inclusions):
        w, h = (int(v) for v in rng.integers(1, 4, size=2))
        ix = int(rng.integers(0, nx - w + 1))
        iy = int(rng.integers(0, ny - h + 1))
        kappa[iy:iy + h, ix:ix + w] = contrast
    return kappa


def perforation_mask(dims, circle_count: int, radius_range, seed: int = 0):
    """Active-cell mask with seeded circular holes.

    Centers and radii are drawn on the half-cell lattice and a cell is a hole
    when its center lies strictly inside a circle; all tests are integer so
    the mask is platform independent.  Returns ``(mask, porosity)``.
    """
    nx, ny = dims
    rmin, rmax = radius_range
    rng = np.random.default_rng(seed)
    mask = np.ones((ny, nx), dtype=bool)
    cx = 2 * np.arange(nx) + 1   # cell centers in half-cell units
    cy = 2 * np.arange(ny) + 1
    for _ in range(int(circle_count)):
        px = int(rng.integers(0, 2 * nx + 1))
        py = int(rng.integers(0, 2 * ny + 1))
        r2 = int(rng.integers(int(round(2 * rmin)), int(round(2 * rmax)) + 1))
        d = (cy[:, None] - py) ** 2 + (cx[None, :] - px) ** 2
        mask &= ~(d < r2 * r2)
    porosity = float(mask.mean())
    if porosity < 0.5:
        warnings.warn(f"porosity {porosity:.3f} < 0.5: domain mostly perforated",
                      RuntimeWarning, stacklevel=2)
    return mask, porosity
