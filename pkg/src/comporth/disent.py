"""Disentanglement metrics and model-selection statistics.

Mutual information between latent units and discrete generative factors is
estimated with a plug-in histogram estimator: each unit's values are cut into
``bins`` equal-width bins over their observed range. All quantities are in
nats.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MetricError
from .numeric.rng import generator

DEFAULT_BINS = 20
SURFACE_FACTORS = ("x_shift", "y_shift", "spacing", "length")


@dataclass
class FactorSet:
    """Discrete factor values (n_images, n_factors) for a subset of images."""

    name: str
    factor_names: tuple[str, ...]
    values: np.ndarray
    ids: np.ndarray

    @property
    def n_factors(self) -> int:
        return len(self.factor_names)


def surface_factors(manifest) -> FactorSet:
    ids = np.array([a.id for a in manifest], dtype=np.int64)
    vals = np.array([[a.x_shift, a.y_shift, a.spacing, a.word.length] for a in manifest],
                    dtype=np.int64)
    return FactorSet("surface", SURFACE_FACTORS, vals, ids)


def compositional_factors(manifest, length: int | None = None) -> FactorSet:
    """Letter identity at each position, over words of the maximal length."""
    length = length or max(a.word.length for a in manifest)
    rows = [a for a in manifest if a.word.length == length]
    alphabet = sorted({ch for a in rows for ch in a.word.letters})
    code = {ch: i for i, ch in enumerate(alphabet)}
    vals = np.array([[code[ch] for ch in a.word.letters] for a in rows], dtype=np.int64)
    names = tuple(f"letter@pos{p}" for p in range(1, length + 1))
    return FactorSet("compositional", names, vals, np.array([a.id for a in rows], dtype=np.int64))


PRESETS = {"surface": surface_factors, "compositional": compositional_factors}


def make_factor_set(preset: str, manifest) -> FactorSet:
    try:
        return PRESETS[preset](manifest)
    except KeyError:
        raise MetricError(f"unknown factor preset {preset!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class MIMatrix:
    mi: np.ndarray            # (n_units, n_factors)
    entropies: np.ndarray     # (n_factors,)
    factor_names: tuple[str, ...]
    constant_units: tuple[int, ...] = ()
    bins: int = DEFAULT_BINS

    @property
    def n_units(self) -> int:
        return self.mi.shape[0]

    def to_dict(self) -> dict:
        return {
            "mi": self.mi.tolist(),
            "entropies": self.entropies.tolist(),
            "factor_names": list(self.factor_names),
            "constant_units": list(self.constant_units),
            "bins": self.bins,
        }


def discretize(codes: np.ndarray, bins: int = DEFAULT_BINS):
    """Equal-width binning per column. Returns ``(bin_index, constant_mask)``."""
    codes = np.asarray(codes, dtype=np.float64)
    lo, hi = codes.min(axis=0), codes.max(axis=0)
    span = hi - lo
    constant = span <= 0
    scaled = (codes - lo) / np.where(constant, 1.0, span)
    idx = np.minimum((scaled * bins).astype(np.int64), bins - 1)
    idx[:, constant] = 0
    return idx, constant


def _labels(col):
    return np.unique(col, return_inverse=True)[1].reshape(-1)


def entropy(labels, weights=None) -> float:
    labels = _labels(np.asarray(labels))
    w = np.ones(labels.size) if weights is None else np.asarray(weights, dtype=np.float64)
    p = np.bincount(labels, weights=w)
    p = p[p > 0] / p.sum()
    return float(-np.sum(p * np.log(p)))


def discrete_mi(a, b, weights=None) -> float:
    """Plug-in mutual information of two discrete label arrays."""
    a, b = _labels(np.asarray(a)), _labels(np.asarray(b))
    w = np.ones(a.size) if weights is None else np.asarray(weights, dtype=np.float64)
    na, nb = a.max() + 1, b.max() + 1
    joint = np.bincount(a * nb + b, weights=w, minlength=na * nb).reshape(na, nb)
    joint /= joint.sum()
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    val = np.sum(joint[nz] * (np.log(joint[nz]) - np.log(np.outer(pa, pb)[nz])))
    return float(max(val, 0.0))


def mi_matrix_from_codes(codes, factors, factor_names: Sequence[str] | None = None,
                         bins: int = DEFAULT_BINS, weights=None) -> MIMatrix:
    """MI between every latent column of ``codes`` (n, J) and every factor
    column of ``factors`` (n, K)."""
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors)
    if codes.ndim != 2 or factors.ndim != 2 or codes.shape[0] != factors.shape[0]:
        raise MetricError(f"codes {codes.shape} and factors {factors.shape} must be (n, .) with equal n")
    if bins < 2:
        raise MetricError(f"bins must be >= 2, got {bins}")
    names = tuple(factor_names or (f"f{k}" for k in range(factors.shape[1])))
    binned, constant = discretize(codes, bins)
    mi = np.zeros((codes.shape[1], factors.shape[1]))
    for j in range(codes.shape[1]):
        if constant[j]:
            continue
        for k in range(factors.shape[1]):
            mi[j, k] = discrete_mi(binned[:, j], factors[:, k], weights)
    ent = np.array([entropy(factors[:, k], weights) for k in range(factors.shape[1])])
    return MIMatrix(mi, ent, names, tuple(int(j) for j in np.flatnonzero(constant)), bins)


def mi_matrix(model, store, factors: FactorSet, bins: int = DEFAULT_BINS,
              batch_size: int = 256) -> MIMatrix:
    """Encode the images of ``factors`` with ``model`` (latent means) and
    estimate the unit-by-factor MI matrix."""
    codes = np.concatenate([model.encode(store.batch(factors.ids[i:i + batch_size])).mu
                            for i in range(0, len(factors.ids), batch_size)])
    return mi_matrix_from_codes(codes, factors.values, factors.factor_names, bins)


def mig(m: MIMatrix) -> float:
    """Mean over factors of the normalized gap between the two most
    informative units."""
    if m.n_units < 2:
        raise MetricError("MIG needs at least two latent units")
    keep = m.entropies > 0
    if not keep.all():
        dropped = [n for n, k in zip(m.factor_names, keep) if not k]
        warnings.warn(f"MIG: excluding zero-entropy factors {dropped}", RuntimeWarning)
    if not keep.any():
        raise MetricError("MIG: every factor has zero entropy")
    top = np.sort(m.mi[:, keep], axis=0)[::-1]
    return float(np.mean((top[0] - top[1]) / m.entropies[keep]))


def default_activity_threshold(m: MIMatrix) -> float:
    return 0.01 * float(m.entropies.max()) if m.entropies.size else 0.0


def mir(m: MIMatrix, activity_threshold: float | None = None) -> float:
    """Mean share of each active unit's information that goes to its best
    factor, rescaled so 1/K maps to 0 and 1 stays 1."""
    k = m.mi.shape[1]
    if k < 2:
        raise MetricError("MIR is undefined for a single factor")
    thr = default_activity_threshold(m) if activity_threshold is None else activity_threshold
    totals = m.mi.sum(axis=1)
    active = totals > thr
    if not active.any():
        raise MetricError(f"MIR: no unit carries more than {thr:.4g} nats")
    ratios = m.mi[active].max(axis=1) / totals[active]
    return float((ratios.mean() - 1.0 / k) / (1.0 - 1.0 / k))


# --- model selection and statistics ----------------------------------------

def pareto_indices(points) -> list[int]:
    """Indices (ascending) of points not dominated in (loss lower, score higher).

    ``q`` dominates ``p`` when ``q.loss <= p.loss`` and ``q.score >= p.score``
    with at least one strict inequality.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return []
    order = np.lexsort((-pts[:, 1], pts[:, 0]))
    keep = np.zeros(n, dtype=bool)
    best_before = -np.inf  # best score among strictly smaller losses
    i = 0
    while i < n:
        j = i
        loss = pts[order[i], 0]
        while j < n and pts[order[j], 0] == loss:
            j += 1
        group = order[i:j]
        group_best = pts[group[0], 1]
        for g in group:
            s = pts[g, 1]
            keep[g] = s == group_best and s > best_before
        best_before = max(best_before, group_best)
        i = j
    return [int(i) for i in np.flatnonzero(keep)]


def pareto_front(points) -> list[tuple[float, float]]:
    """Non-dominated ``(loss, score)`` points in their input order."""
    pts = [tuple(map(float, p)) for p in points]
    return [pts[i] for i in pareto_indices(pts)]


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise MetricError("pearson correlation needs non-zero variance in both inputs")
    return float(np.clip(np.dot(xc, yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def pearson_corr(x, y, permutations: int = 10_000, seed: int = 0, chunk: int = 2_000):
    """Pearson correlation with a two-sided permutation p-value.

    ``p = (1 + #{|r_perm| >= |r|}) / (permutations + 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"x and y must be 1-d of equal length, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise MetricError("pearson correlation needs at least 3 points")
    r = pearson_r(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    rng = generator(seed, 0)
    hits = 0
    done = 0
    tol = 1e-12 * max(1.0, abs(r))
    while done < permutations:
        m = min(chunk, permutations - done)
        perm = rng.permuted(np.tile(np.arange(x.size), (m, 1)), axis=1)
        rp = (yc[perm] @ xc) / denom
        hits += int(np.sum(np.abs(rp) >= abs(r) - tol))
        done += m
    return r, (1 + hits) / (permutations + 1)


def sem(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float("nan")
    return float(v.std(ddof=1) / np.sqrt(v.size))


def linear_fit(x, y) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)``."""
    slope, intercept = np.polyfit(np.asarray(x, np.float64), np.asarray(y, np.float64), 1)
    return float(slope), float(intercept)
