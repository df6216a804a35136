"""Rasterize factor assignments into binary word images and pack them.

Glyphs are small embedded bitmaps, so rendering is byte-for-byte identical on
every platform. Images are white (1) glyphs on a black (0) background.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import FactorAssignment, FactorGrid, enumerate_assignments, write_manifest
from .errors import ConfigError, RenderBoundsError

CANVAS = (64, 64)
DEFAULT_GAP = 3

_A = """
..###..
.##.##.
##...##
##...##
##...##
#######
#######
##...##
##...##
##...##
"""

_B = """
######.
##...##
##...##
##...##
######.
######.
##...##
##...##
##...##
######.
"""


def _parse(art: str) -> np.ndarray:
    rows = [r for r in art.strip().splitlines()]
    return np.array([[c == "#" for c in r] for r in rows], dtype=bool)


@dataclass(frozen=True)
class GlyphSet:
    bitmaps: Mapping[str, np.ndarray]
    baseline: int = 0

    def __post_init__(self):
        shapes = {g.shape for g in self.bitmaps.values()}
        if len(shapes) != 1:
            raise ConfigError(f"glyphs must share one shape, got {sorted(shapes)}")
        seen = []
        for sym, g in self.bitmaps.items():
            if any(np.array_equal(g, other) for other in seen):
                raise ConfigError(f"glyph {sym!r} duplicates another glyph")
            seen.append(g)

    @property
    def height(self) -> int:
        return next(iter(self.bitmaps.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.bitmaps.values())).shape[1]

    def __getitem__(self, symbol: str) -> np.ndarray:
        try:
            return self.bitmaps[symbol]
        except KeyError:
            raise ConfigError(f"no glyph for symbol {symbol!r}") from None


DEFAULT_GLYPHS = GlyphSet({"A": _parse(_A), "B": _parse(_B)})


def string_width(n_letters: int, glyph_width: int, spacing: int, default_gap: int = DEFAULT_GAP) -> int:
    return n_letters * glyph_width + (n_letters - 1) * (default_gap + spacing)


def render(assignment: FactorAssignment, glyphs: GlyphSet = DEFAULT_GLYPHS,
           canvas: tuple[int, int] = CANVAS, default_gap: int = DEFAULT_GAP) -> np.ndarray:
    """Render one word as a float32 ``canvas`` image with pixels in {0, 1}.

    The string's bounding box is centred on the canvas (within half a pixel
    when parities differ), then moved ``x_shift`` px right and ``y_shift`` px
    up. Adjacent glyphs are ``default_gap + spacing`` px apart; a negative
    gap would make glyphs overlap and is rejected.
    """
    return _render_bool(assignment, glyphs, canvas, default_gap).astype(np.float32)


def _render_bool(a: FactorAssignment, glyphs: GlyphSet, canvas, default_gap) -> np.ndarray:
    height, width = canvas
    letters = a.word.letters
    gap = default_gap + a.spacing
    if gap < 0 and len(letters) > 1:
        raise RenderBoundsError(f"spacing {a.spacing} makes glyphs overlap (gap {gap})", a.id)
    gw, gh = glyphs.width, glyphs.height
    w = string_width(len(letters), gw, a.spacing, default_gap)
    left = (width - w) // 2 + a.x_shift
    top = (height - gh) // 2 - a.y_shift + glyphs.baseline
    if left < 0 or left + w > width or top < 0 or top + gh > height:
        raise RenderBoundsError(
            f"word {letters!r} ({w}x{gh}px) at shift ({a.x_shift},{a.y_shift}) "
            f"leaves the {height}x{width} canvas", a.id)
    img = np.zeros(canvas, dtype=bool)
    for i, ch in enumerate(letters):
        x0 = left + i * (gw + gap)
        img[top:top + gh, x0:x0 + gw] |= glyphs[ch]
    return img


@dataclass
class ImageStore:
    """Images in enumeration order, held as uint8 0/1 frames."""

    frames: np.ndarray  # (count, H, W) uint8

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def canvas(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def batch(self, ids: Sequence[int] | np.ndarray, dtype=np.float32) -> np.ndarray:
        """Images ``ids`` as an (n, H, W, 1) array in [0, 1]."""
        return self.frames[np.asarray(ids, dtype=np.int64)][..., None].astype(dtype)

    def header(self) -> dict:
        h, w = self.canvas
        return {"canvas_h": h, "canvas_w": w, "count": self.count, "dtype": "u8"}

    def save(self, path) -> None:
        header = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(header + b"\n")
            fh.write((self.frames * np.uint8(255)).tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ImageStore":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            raw = fh.read()
        if header.get("dtype") != "u8":
            raise ConfigError(f"unsupported store dtype {header.get('dtype')!r}")
        shape = (header["count"], header["canvas_h"], header["canvas_w"])
        frames = np.frombuffer(raw, dtype=np.uint8)
        if frames.size != shape[0] * shape[1] * shape[2]:
            raise ConfigError(f"store payload has {frames.size} bytes, header implies {shape}")
        return cls((frames.reshape(shape) > 127).astype(np.uint8))


def generate_dataset(grid: FactorGrid = FactorGrid(), glyphs: GlyphSet = DEFAULT_GLYPHS,
                     canvas: tuple[int, int] = CANVAS, default_gap: int = DEFAULT_GAP):
    """Render every assignment of ``grid``. Returns ``(store, assignments)``
    with ``store.frames[i]`` the image of ``assignments[i]``."""
    assignments = enumerate_assignments(grid)
    frames = np.zeros((len(assignments),) + tuple(canvas), dtype=np.uint8)
    for a in assignments:
        frames[a.id] = _render_bool(a, glyphs, canvas, default_gap)
    return ImageStore(frames), assignments


def write_dataset(out_dir, store: ImageStore, assignments) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store_path, manifest_path = out_dir / "images.u8", out_dir / "manifest.jsonl"
    store.save(store_path)
    write_manifest(manifest_path, assignments)
    return store_path, manifest_path


def write_pbm(path, image: np.ndarray) -> None:
    """Plain-text portable bitmap (P1); lit pixels are written as 1."""
    img = np.asarray(image) > 0.5
    h, w = img.shape[:2]
    lines = [f"P1\n{w} {h}"]
    lines += [" ".join("1" if v else "0" for v in row) for row in img.reshape(h, w)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_pgm(path, image: np.ndarray) -> None:
    """Binary portable graymap (P5) of an image with values in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape[:2]
    data = np.round(img.reshape(h, w) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def export_bitmaps(out_dir, store: ImageStore, assignments) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for a in assignments:
        name = f"{a.id:05d}_{a.word.letters}_x{a.x_shift:+d}_y{a.y_shift:+d}_s{a.spacing:+d}.pbm"
        write_pbm(out_dir / name, store.frames[a.id])
