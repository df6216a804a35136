import os
from pathlib import Path

import numpy as np
import pytest

from comporth.corpus import FactorGrid
from comporth.renderer import generate_dataset

ROOT = Path(__file__).resolve().parents[1]


def brute_words(alphabet="AB", max_length=5):
    """Independent oracle: every string of length <= max_length, sorted by
    (length, alphabet order)."""
    words = [""]
    out = []
    for _ in range(max_length):
        words = [w + c for w in words for c in alphabet]
        out.extend(words)
    rank = {c: i for i, c in enumerate(alphabet)}
    return sorted(out, key=lambda w: (len(w), [rank[c] for c in w]))


@pytest.fixture(scope="session")
def cache_dir():
    path = Path(os.environ.get("COMPORTH_TEST_CACHE", ROOT / ".cache" / "tests"))
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def dataset():
    store, manifest = generate_dataset(FactorGrid())
    return store, manifest


@pytest.fixture(scope="session")
def evaluator(dataset, cache_dir):
    from comporth.evaluator import EvaluatorModel, train_evaluator

    path = cache_dir / "evaluator_seed0.ckpt"
    if path.exists():
        return EvaluatorModel.load(path)
    store, manifest = dataset
    model = train_evaluator(store, manifest, seed=0)
    model.save(path)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_vae(dataset, cache_dir):
    """A briefly trained 8-unit model, cached between sessions."""
    from comporth.betavae import ModelCheckpoint, VaeConfig, train

    path = cache_dir / "small_vae_l8.ckpt"
    if path.exists():
        return ModelCheckpoint.load(path)
    store, manifest = dataset
    config = VaeConfig(latent_size=8, beta=4.0, learning_rate=1e-3, max_epochs=4,
                       steps_per_epoch=100, seed=0)
    ckpt = train(config, np.arange(len(manifest)), store)
    ckpt.save(path)
    return ckpt


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed at session end."""

    def record(number, name, ok, detail=""):
        ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
