"""Latent traversals: set one unit of the latent mean to a range of levels
and decode, for a handful of sample images."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .renderer import write_pgm

DEFAULT_LEVELS = tuple(np.linspace(-3.0, 3.0, 9).tolist())


@dataclass
class TraversalGrid:
    unit: int
    sample_ids: tuple[int, ...]
    levels: tuple[float, ...]       # strictly increasing traversal values
    baseline_column: int
    images: np.ndarray              # (n_samples, n_columns, H, W)
    baseline_values: np.ndarray     # mu_j of each sample
    mode: str = "absolute"

    @property
    def n_columns(self) -> int:
        return self.images.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[:2]


def _columns(levels, mode):
    levels = [float(v) for v in levels]
    if not levels:
        raise ConfigError("perturbation levels must be non-empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be strictly increasing: {levels}")
    if mode not in ("absolute", "additive"):
        raise ConfigError(f"mode must be 'absolute' or 'additive', got {mode!r}")
    return levels


def perturb_unit(model, images, unit: int, levels: Sequence[float] = DEFAULT_LEVELS,
                 sample_ids: Sequence[int] | None = None, mode: str = "absolute") -> TraversalGrid:
    """Traverse latent ``unit`` for every image in ``images``.

    ``absolute`` sets z_j to each level; ``additive`` adds each level to mu_j.
    Column ``baseline_column`` holds the unperturbed reconstruction. In
    additive mode that is the offset 0 (added to ``levels`` if missing); in
    absolute mode mu_j differs per sample, so the baseline is an extra first
    column ahead of the levels.
    """
    levels = _columns(levels, mode)
    if not 0 <= unit < model.latent_size:
        raise ConfigError(f"unit {unit} outside [0, {model.latent_size})")
    images = np.asarray(images)
    mu = model.encode(images).mu
    n = mu.shape[0]
    base = mu[:, unit].copy()
    if sample_ids is None:
        sample_ids = range(n)
    if mode == "additive":
        offsets = sorted(set(levels) | {0.0})
        baseline_column = offsets.index(0.0)
        cols = [base + o for o in offsets]
        levels = offsets
    else:
        # baseline is per sample; it sits in its own column ahead of the fixed levels
        baseline_column = 0
        cols = [base] + [np.full(n, lv, dtype=mu.dtype) for lv in levels]
    out = np.empty((n, len(cols)) + model.canvas, dtype=np.float32)
    for c, values in enumerate(cols):
        z = mu.copy()
        z[:, unit] = values
        out[:, c] = model.decode(z)[..., 0]
    return TraversalGrid(unit, tuple(int(i) for i in sample_ids), tuple(levels), baseline_column,
                         out, base, mode)


def perturb_all(model, images, units=None, levels=DEFAULT_LEVELS, sample_ids=None, mode="absolute"):
    units = range(model.latent_size) if units is None else units
    return [perturb_unit(model, images, j, levels, sample_ids, mode) for j in units]


def grid_raster(grid: TraversalGrid, separator: float = 0.5, originals=None) -> np.ndarray:
    """Rows = samples, columns = levels, 1 px separators. ``originals``, if
    given, are prepended as an extra first column."""
    n, m, h, w = grid.images.shape
    tiles = grid.images
    if originals is not None:
        originals = np.asarray(originals, dtype=np.float32).reshape(n, 1, h, w)
        tiles = np.concatenate([originals, tiles], axis=1)
        m += 1
    canvas = np.full((n * (h + 1) - 1, m * (w + 1) - 1), separator, dtype=np.float32)
    for r in range(n):
        for c in range(m):
            canvas[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = tiles[r, c]
    return canvas


def emit_grid(grid: TraversalGrid, path, originals=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, grid_raster(grid, originals=originals))
    return path
