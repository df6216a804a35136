import json

import pytest
from hypothesis import given, strategies as st

from comporth.corpus import (
    FactorAssignment, FactorGrid, Word, enumerate_assignments, enumerate_words,
    index_of, manifest_lines, read_manifest, word_of, write_manifest,
)
from comporth.errors import ConfigError

from .conftest import brute_words


def test_default_vocabulary_has_62_words():
    words = enumerate_words(("A", "B"), 5)
    assert len(words) == 62
    assert words[0].letters == "A" and words[-1].letters == "BBBBB"
    assert [w.index for w in words] == list(range(62))


def test_vocabulary_matches_brute_force_order():
    assert [w.letters for w in enumerate_words(("A", "B"), 5)] == brute_words("AB", 5)
    assert [w.letters for w in enumerate_words(("A", "B", "C"), 3)] == brute_words("ABC", 3)


def test_degenerate_alphabet():
    assert enumerate_words(("A",), 1) == [Word(0, "A")]


def test_three_letter_vocabulary():
    words = enumerate_words(("A", "B"), 3)
    assert len(words) == 14
    assert {w.letters: w.index for w in words}["AB"] == 3


@pytest.mark.parametrize("alphabet, max_length", [((), 3), (("A", "B"), 0), (("A", "A"), 2)])
def test_invalid_vocabulary(alphabet, max_length):
    with pytest.raises(ConfigError):
        enumerate_words(alphabet, max_length)


@given(st.integers(0, 61))
def test_index_round_trip(i):
    assert index_of(word_of(i)) == i


def test_index_matches_enumeration():
    for w in enumerate_words():
        assert index_of(w.letters) == w.index
        assert word_of(w.index) == w.letters


def test_default_grid_size():
    grid = FactorGrid()
    assert grid.x_shifts == tuple(range(-4, 5))
    assert grid.spacings == (-2, -1, 0, 1, 2)
    assignments = enumerate_assignments(grid)
    # independent count: brute-force tuple product
    expected = sum(1 for _ in brute_words("AB", 5) for _x in range(9) for _y in range(9) for _s in range(5))
    assert len(assignments) == expected == 25_110 == grid.size


def test_singleton_grid_gives_one_image_per_word():
    grid = FactorGrid(x_shifts=(0,), y_shifts=(0,), spacings=(0,))
    assert len(enumerate_assignments(grid)) == 62


def test_single_letter_grid():
    assert len(enumerate_assignments(FactorGrid(max_length=1))) == 810


def test_assignment_order_is_word_major_spacing_minor():
    a = enumerate_assignments()
    assert [x.id for x in a] == list(range(len(a)))
    assert (a[0].word.letters, a[0].x_shift, a[0].y_shift, a[0].spacing) == ("A", -4, -4, -2)
    assert (a[1].x_shift, a[1].y_shift, a[1].spacing) == (-4, -4, -1)
    assert (a[5].x_shift, a[5].y_shift, a[5].spacing) == (-4, -3, -2)
    assert a[405].word.letters == "B"


@pytest.mark.parametrize("field, value", [
    ("x_shifts", ()), ("y_shifts", (1, 1)), ("spacings", (2, 1)), ("x_shifts", (0.5,)),
])
def test_invalid_grid(field, value):
    with pytest.raises(ConfigError):
        FactorGrid(**{field: value})


def test_manifest_is_deterministic_and_round_trips(tmp_path):
    a1, a2 = enumerate_assignments(), enumerate_assignments()
    assert manifest_lines(a1) == manifest_lines(a2)
    row = json.loads(manifest_lines(a1)[123])
    assert set(row) == {"id", "word", "word_index", "length", "x_shift", "y_shift", "spacing"}
    write_manifest(tmp_path / "m.jsonl", a1)
    write_manifest(tmp_path / "n.jsonl", a2)
    assert (tmp_path / "m.jsonl").read_bytes() == (tmp_path / "n.jsonl").read_bytes()
    assert read_manifest(tmp_path / "m.jsonl") == a1


def test_grid_dict_round_trip():
    g = FactorGrid(x_shifts=(-1, 0, 1))
    assert FactorGrid.from_dict(g.to_dict()) == g
