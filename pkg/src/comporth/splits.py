"""The three CompOrth train/test partitions, as lists of manifest ids.

* spatial: one split per (x_shift, y_shift) pair; that pair is left out.
* length: one split per word length; words of that length are left out.
* compositional: one split per (letter, position); words whose letter at the
  1-based position equals the letter are left out. Shorter words stay in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import FactorAssignment
from .errors import SplitError

FAMILIES = ("spatial", "length", "compositional")


@dataclass(frozen=True)
class SplitSpec:
    family: str
    key: dict
    left_in: tuple[int, ...]
    left_out: tuple[int, ...]

    @property
    def key_str(self) -> str:
        return key_string(self.family, self.key)

    @property
    def filename(self) -> str:
        return f"{self.family}__{self.key_str}.json"

    def to_dict(self) -> dict:
        return {"family": self.family, "key": dict(self.key),
                "left_in": list(self.left_in), "left_out": list(self.left_out)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(d["family"], dict(d["key"]), tuple(d["left_in"]), tuple(d["left_out"]))


def key_string(family: str, key: dict) -> str:
    if family == "spatial":
        return f"x{key['x_shift']:+d}_y{key['y_shift']:+d}"
    if family == "length":
        return f"len{key['length']}"
    if family == "compositional":
        return f"{key['letter']}_pos{key['position']}"
    raise SplitError(f"unknown split family {family!r}")


def _make(family: str, key: dict, manifest: Sequence[FactorAssignment],
          held_out: Callable[[FactorAssignment], bool]) -> SplitSpec:
    left_in, left_out = [], []
    for a in manifest:
        (left_out if held_out(a) else left_in).append(a.id)
    if not left_in or not left_out:
        raise SplitError(f"{family} split {key} has an empty side "
                         f"({len(left_in)} left-in, {len(left_out)} left-out)")
    return SplitSpec(family, key, tuple(left_in), tuple(left_out))


def _levels(manifest, attr):
    return sorted({getattr(a, attr) for a in manifest})


def spatial_splits(manifest: Sequence[FactorAssignment]) -> list[SplitSpec]:
    xs, ys = _levels(manifest, "x_shift"), _levels(manifest, "y_shift")
    return [_make("spatial", {"x_shift": x, "y_shift": y}, manifest,
                  lambda a, x=x, y=y: a.x_shift == x and a.y_shift == y)
            for x in xs for y in ys]


def length_splits(manifest: Sequence[FactorAssignment]) -> list[SplitSpec]:
    lengths = sorted({a.word.length for a in manifest})
    return [_make("length", {"length": n}, manifest, lambda a, n=n: a.word.length == n)
            for n in lengths]


def compositional_splits(manifest: Sequence[FactorAssignment]) -> list[SplitSpec]:
    letters = sorted({ch for a in manifest for ch in a.word.letters})
    max_len = max(a.word.length for a in manifest)

    def held_out(a, letter, pos):
        w = a.word.letters
        return len(w) >= pos and w[pos - 1] == letter

    return [_make("compositional", {"letter": c, "position": p}, manifest,
                  lambda a, c=c, p=p: held_out(a, c, p))
            for c in letters for p in range(1, max_len + 1)]


SPLITTERS = {
    "spatial": spatial_splits,
    "length": length_splits,
    "compositional": compositional_splits,
}


def make_splits(manifest, families: Sequence[str] = FAMILIES) -> list[SplitSpec]:
    out = []
    for fam in families:
        if fam not in SPLITTERS:
            raise SplitError(f"unknown split family {fam!r}")
        out.extend(SPLITTERS[fam](manifest))
    return out


def write_split(out_dir, split: SplitSpec) -> Path:
    path = Path(out_dir) / split.filename
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), sort_keys=True, separators=(",", ":")))
    return path


def read_split(path) -> SplitSpec:
    return SplitSpec.from_dict(json.loads(Path(path).read_text()))
