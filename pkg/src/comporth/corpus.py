"""Word vocabulary and generative-factor grid.

Words are strings over a small alphabet. Their canonical index orders them by
length first and lexicographically (in alphabet order) within a length, so
with alphabet ``AB`` and ``max_length=5``: ``A``=0, ``B``=1, ``AA``=2, ...,
``BBBBB``=61.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError

DEFAULT_ALPHABET = ("A", "B")
DEFAULT_MAX_LENGTH = 5


@dataclass(frozen=True, order=True)
class Word:
    index: int
    letters: str

    @property
    def length(self) -> int:
        return len(self.letters)

    def __str__(self) -> str:
        return self.letters


def _check_alphabet(alphabet: Sequence[str], max_length: int) -> tuple[str, ...]:
    alphabet = tuple(alphabet)
    if not alphabet:
        raise ConfigError("alphabet must be non-empty")
    if any(not isinstance(s, str) or len(s) != 1 for s in alphabet):
        raise ConfigError(f"alphabet symbols must be single characters: {alphabet!r}")
    if len(set(alphabet)) != len(alphabet):
        raise ConfigError(f"alphabet has duplicate symbols: {alphabet!r}")
    if not isinstance(max_length, int) or max_length < 1:
        raise ConfigError(f"max_length must be an integer >= 1, got {max_length!r}")
    return alphabet


def enumerate_words(alphabet: Sequence[str] = DEFAULT_ALPHABET,
                    max_length: int = DEFAULT_MAX_LENGTH) -> list[Word]:
    """All words of length 1..max_length in canonical order."""
    alphabet = _check_alphabet(alphabet, max_length)
    words = []
    for length in range(1, max_length + 1):
        for letters in itertools.product(alphabet, repeat=length):
            words.append(Word(len(words), "".join(letters)))
    return words


def vocabulary_size(alphabet_size: int, max_length: int) -> int:
    return sum(alphabet_size ** n for n in range(1, max_length + 1))


def index_of(letters: str, alphabet: Sequence[str] = DEFAULT_ALPHABET) -> int:
    """Canonical index of ``letters`` without enumerating the vocabulary."""
    alphabet = tuple(alphabet)
    k = len(alphabet)
    if not letters:
        raise ConfigError("empty word")
    rank = 0
    for ch in letters:
        try:
            rank = rank * k + alphabet.index(ch)
        except ValueError:
            raise ConfigError(f"symbol {ch!r} not in alphabet {alphabet!r}") from None
    return vocabulary_size(k, len(letters) - 1) + rank


def word_of(index: int, alphabet: Sequence[str] = DEFAULT_ALPHABET) -> str:
    """Inverse of :func:`index_of`."""
    alphabet = tuple(alphabet)
    k = len(alphabet)
    if index < 0:
        raise ConfigError(f"negative word index {index}")
    length, offset = 1, index
    while offset >= k ** length:
        offset -= k ** length
        length += 1
    letters = []
    for _ in range(length):
        offset, r = divmod(offset, k)
        letters.append(alphabet[r])
    return "".join(reversed(letters))


def _check_axis(name: str, values: Sequence[int]) -> tuple[int, ...]:
    values = tuple(values)
    if not values:
        raise ConfigError(f"{name} must be non-empty")
    if any(not isinstance(v, int) or isinstance(v, bool) for v in values):
        raise ConfigError(f"{name} must contain integers: {values!r}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{name} must be strictly increasing: {values!r}")
    return values


@dataclass(frozen=True)
class FactorGrid:
    """Levels of every generative factor. Shifts and spacing are in pixels;
    positive ``y_shift`` moves the word up."""

    alphabet: tuple[str, ...] = DEFAULT_ALPHABET
    max_length: int = DEFAULT_MAX_LENGTH
    x_shifts: tuple[int, ...] = tuple(range(-4, 5))
    y_shifts: tuple[int, ...] = tuple(range(-4, 5))
    spacings: tuple[int, ...] = tuple(range(-2, 3))

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _check_alphabet(self.alphabet, self.max_length))
        for name in ("x_shifts", "y_shifts", "spacings"):
            object.__setattr__(self, name, _check_axis(name, getattr(self, name)))

    @property
    def n_words(self) -> int:
        return vocabulary_size(len(self.alphabet), self.max_length)

    @property
    def size(self) -> int:
        return self.n_words * len(self.x_shifts) * len(self.y_shifts) * len(self.spacings)

    def to_dict(self) -> dict:
        return {
            "alphabet": list(self.alphabet),
            "max_length": self.max_length,
            "x_shifts": list(self.x_shifts),
            "y_shifts": list(self.y_shifts),
            "spacings": list(self.spacings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorGrid":
        return cls(alphabet=tuple(d.get("alphabet", DEFAULT_ALPHABET)),
                   max_length=int(d.get("max_length", DEFAULT_MAX_LENGTH)),
                   x_shifts=tuple(d.get("x_shifts", range(-4, 5))),
                   y_shifts=tuple(d.get("y_shifts", range(-4, 5))),
                   spacings=tuple(d.get("spacings", range(-2, 3))))


@dataclass(frozen=True)
class FactorAssignment:
    id: int
    word: Word
    x_shift: int
    y_shift: int
    spacing: int

    def to_row(self) -> dict:
        return {
            "id": self.id,
            "word": self.word.letters,
            "word_index": self.word.index,
            "length": self.word.length,
            "x_shift": self.x_shift,
            "y_shift": self.y_shift,
            "spacing": self.spacing,
        }

    @classmethod
    def from_row(cls, row: dict) -> "FactorAssignment":
        return cls(int(row["id"]), Word(int(row["word_index"]), row["word"]),
                   int(row["x_shift"]), int(row["y_shift"]), int(row["spacing"]))


def enumerate_assignments(grid: FactorGrid = FactorGrid()) -> list[FactorAssignment]:
    """Cartesian product words x x_shifts x y_shifts x spacings.

    Word index is the slowest-varying axis and spacing the fastest; ids are
    positions in this order.
    """
    words = enumerate_words(grid.alphabet, grid.max_length)
    combos = itertools.product(words, grid.x_shifts, grid.y_shifts, grid.spacings)
    return [FactorAssignment(i, w, x, y, s) for i, (w, x, y, s) in enumerate(combos)]


def manifest_lines(assignments: Iterable[FactorAssignment]) -> list[str]:
    return [json.dumps(a.to_row(), sort_keys=True, separators=(",", ":")) for a in assignments]


def write_manifest(path, assignments: Iterable[FactorAssignment]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in manifest_lines(assignments):
            fh.write(line + "\n")


def read_manifest(path) -> list[FactorAssignment]:
    with open(path, encoding="utf-8") as fh:
        return [FactorAssignment.from_row(json.loads(line)) for line in fh if line.strip()]
