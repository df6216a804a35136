"""Experiment plans: grid search over beta-VAE configs and splits, model
selection, and the report tables that summarise a sweep.

Everything a plan produces lives under ``<root>/<plan-hash>/``::

    plan.json
    data/images.u8, data/manifest.jsonl
    splits/<family>__<key>.json
    evaluator.ckpt
    runs/<run-id>/model.ckpt, record.json, eval.csv
    reports/...
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import disent
from .betavae import (GRID_BETAS, GRID_LATENT_SIZES, GRID_LEARNING_RATES, ModelCheckpoint, VaeConfig,
                      evaluate_loss, train)
from .corpus import FactorGrid, read_manifest, write_manifest
from .errors import CompOrthError, ConfigError
from .evaluator import EvaluatorModel, score_batch, train_evaluator
from .numeric import ops
from .numeric.rng import generator
from .renderer import ImageStore, generate_dataset
from .splits import FAMILIES, make_splits, read_split, write_split

log = logging.getLogger(__name__)

CHANCE = 1 / 62
REPORT_ONLY_FIELDS = ("selection_preset", "permutations")
ROOT_ENV = "COMPORTH_ROOT"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_hash(obj, n: int = 12) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:n]


def default_root() -> Path:
    return Path(os.environ.get(ROOT_ENV, "comporth_runs"))


@dataclass
class ExperimentPlan:
    name: str = "desk"
    seed: int = 0
    grid: FactorGrid = field(default_factory=FactorGrid)
    betas: tuple[float, ...] = (1.0, 4.0, 32.0)
    latent_sizes: tuple[int, ...] = (16, 32)
    learning_rates: tuple[float, ...] = (1e-4,)
    vae: dict = field(default_factory=lambda: {"max_epochs": 200})
    families: tuple[str, ...] = FAMILIES
    # optional subset of split keys per family (key strings, e.g. "x+0_y+0")
    split_keys: dict = field(default_factory=dict)
    holdout_fraction: float = 0.1
    evaluator: dict = field(default_factory=lambda: {"seed": 0, "max_epochs": 30})
    metric_bins: int = disent.DEFAULT_BINS
    metric_presets: tuple[str, ...] = ("surface", "compositional")
    selection_preset: str = "compositional"
    permutations: int = 10_000

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = FactorGrid.from_dict(self.grid)
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown split family {fam!r}")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must be in (0, 1)")
        if self.selection_preset not in self.metric_presets:
            raise ConfigError("selection_preset must be one of metric_presets")
        self.configs()  # validate

    def configs(self) -> list[VaeConfig]:
        base = dict(self.vae)
        base["seed"] = self.seed
        return [VaeConfig.from_dict({**base, "beta": float(b), "latent_size": int(l), "learning_rate": float(lr)})
                for b, l, lr in itertools.product(self.betas, self.latent_sizes, self.learning_rates)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        for k in ("betas", "latent_sizes", "learning_rates", "families", "metric_presets"):
            d[k] = list(d[k])
        d["split_keys"] = {k: list(v) for k, v in sorted(self.split_keys.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        for k in ("betas", "latent_sizes", "learning_rates", "families", "metric_presets"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def hash(self) -> str:
        """Identifies the set of runs; report-only settings are left out so
        changing them never orphans finished runs."""
        d = self.to_dict()
        for k in REPORT_ONLY_FIELDS:
            d.pop(k)
        return short_hash(d)


PLAN_PRESETS = {
    # full sweep: 8 betas x 5 latent sizes x 3 learning rates, every split
    "full": {"name": "full", "betas": list(GRID_BETAS), "latent_sizes": list(GRID_LATENT_SIZES),
             "learning_rates": list(GRID_LEARNING_RATES), "vae": {"max_epochs": 1000}},
    # desk scale: 6 configs, capped epochs of fixed length
    "desk": {"name": "desk", "betas": [1, 4, 32], "latent_sizes": [16, 32], "learning_rates": [1e-4],
             "vae": {"max_epochs": 200, "steps_per_epoch": 100}},
    # one config on a subset of spatial splits, length 5 and every compositional split,
    # at a step budget one CPU core finishes in a few hours
    "confirm": {"name": "confirm", "betas": [4], "latent_sizes": [32], "learning_rates": [1e-4],
                "vae": {"max_epochs": 30, "steps_per_epoch": 100},
                "split_keys": {"spatial": ["x+0_y+0", "x-4_y+4", "x+4_y-4"], "length": ["len5"]},
                "permutations": 10_000},
}


def run_id(config: VaeConfig, family: str, key_str: str, seed: int) -> str:
    return short_hash({"config": config.to_dict(), "family": family, "key": key_str, "seed": seed}, 16)


def config_id(config: VaeConfig) -> str:
    return short_hash({k: v for k, v in config.to_dict().items()}, 10)


@dataclass
class RunRecord:
    run_id: str
    config_id: str
    config: dict
    family: str
    key: dict
    key_str: str
    seed: int
    status: str = "ok"
    error: str = ""
    epochs: int = 0
    final_train_loss: float = float("nan")
    final_monitor_loss: float = float("nan")
    monitor_recon_loss: float = float("nan")
    leftout_recon_loss: float = float("nan")
    leftout_mse: float = float("nan")
    leftout_accuracy: float = float("nan")
    leftout_top1: float = float("nan")
    n_left_out: int = 0
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def mir(self, preset: str) -> float:
        return self.metrics.get(preset, {}).get("mir", float("nan"))

    def mig(self, preset: str) -> float:
        return self.metrics.get(preset, {}).get("mig", float("nan"))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


class Workspace:
    """Filesystem layout and cached artefacts for one plan."""

    def __init__(self, plan: ExperimentPlan, root=None):
        self.plan = plan
        self.dir = Path(root or default_root()) / plan.hash
        self._store = None
        self._manifest = None
        self._evaluator = None

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def init(self) -> "Workspace":
        self.dir.mkdir(parents=True, exist_ok=True)
        plan_file = self.path("plan.json")
        text = json.dumps(self.plan.to_dict(), sort_keys=True, indent=2) + "\n"
        if not plan_file.exists() or plan_file.read_text() != text:
            plan_file.write_text(text)
        return self

    def data(self):
        if self._store is None:
            images, manifest = self.path("data", "images.u8"), self.path("data", "manifest.jsonl")
            if images.exists() and manifest.exists():
                self._store, self._manifest = ImageStore.load(images), read_manifest(manifest)
            else:
                self._store, self._manifest = generate_dataset(self.plan.grid)
                images.parent.mkdir(parents=True, exist_ok=True)
                self._store.save(images)
                write_manifest(manifest, self._manifest)
        return self._store, self._manifest

    def splits(self):
        _, manifest = self.data()
        out = []
        split_dir = self.path("splits")
        split_dir.mkdir(parents=True, exist_ok=True)
        for s in make_splits(manifest, self.plan.families):
            wanted = self.plan.split_keys.get(s.family)
            if wanted is not None and s.key_str not in wanted:
                continue
            path = split_dir / s.filename
            if not path.exists():
                write_split(split_dir, s)
            out.append(s)
        for fam, keys in self.plan.split_keys.items():
            have = {s.key_str for s in out if s.family == fam}
            missing = set(keys) - have
            if missing:
                raise ConfigError(f"plan lists unknown {fam} split keys {sorted(missing)}")
        return out

    def evaluator(self) -> EvaluatorModel:
        if self._evaluator is None:
            path = self.path("evaluator.ckpt")
            if path.exists():
                self._evaluator = EvaluatorModel.load(path)
            else:
                store, manifest = self.data()
                cfg = self.plan.evaluator
                self._evaluator = train_evaluator(store, manifest, seed=cfg.get("seed", 0),
                                                  max_epochs=cfg.get("max_epochs", 30))
                self._evaluator.save(path)
        return self._evaluator

    def run_dir(self, rid: str) -> Path:
        return self.path("runs", rid)

    def records(self) -> list[RunRecord]:
        out = []
        for p in sorted(self.path("runs").glob("*/record.json")):
            out.append(RunRecord.from_dict(json.loads(p.read_text())))
        return out


def inner_fold(left_in: Sequence[int], fraction: float, seed: int, key: str):
    """Seeded split of ``left_in`` into (fit ids, held-out ids)."""
    ids = np.asarray(left_in, dtype=np.int64)
    rng = generator(seed, int(hashlib.sha256(key.encode()).hexdigest()[:12], 16))
    perm = rng.permutation(ids.size)
    n_hold = max(1, int(round(fraction * ids.size)))
    return np.sort(ids[perm[n_hold:]]), np.sort(ids[perm[:n_hold]])


def evaluate_left_out(model, evaluator, store, manifest, ids, batch_size: int = 256):
    """Per-image rows plus mean BCE/MSE, accuracy and top-1 over ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.array([manifest[i].word.index for i in ids], dtype=np.int64)
    bce = mse = 0.0
    probs, tops = [], []
    for i in range(0, ids.size, batch_size):
        x = store.batch(ids[i:i + batch_size])
        logits = model.decode_logits(model.encode(x).mu)
        rec = ops.sigmoid(logits)
        bce += ops.bce_logits_sum(logits, x)
        mse += ops.squared_error_sum(rec, x)
        p, t = score_batch(evaluator, rec, labels[i:i + batch_size])
        probs.append(p)
        tops.append(t)
    probs, tops = np.concatenate(probs), np.concatenate(tops)
    n = ids.size
    return {
        "ids": ids, "labels": labels, "target_prob": probs, "top1": tops,
        "recon_loss": bce / n, "mse": mse / n, "accuracy": float(probs.mean()),
        "top1_rate": float(np.mean(tops == labels)),
    }


def compute_metrics(model, store, manifest, presets, bins) -> dict:
    out = {}
    for preset in presets:
        fs = disent.make_factor_set(preset, manifest)
        m = disent.mi_matrix(model, store, fs, bins)
        entry = {"mi_matrix": m.to_dict(), "bins": bins,
                 "activity_threshold": disent.default_activity_threshold(m)}
        for name, fn in (("mig", disent.mig), ("mir", disent.mir)):
            try:
                entry[name] = fn(m)
            except CompOrthError as exc:
                entry[name] = float("nan")
                entry[f"{name}_error"] = str(exc)
        out[preset] = entry
    return out


def write_eval_csv(path, result, manifest, family, key_str, vocab) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "word", "family", "key", "target_prob", "top1_word"])
        for i, p, t in zip(result["ids"], result["target_prob"], result["top1"]):
            w.writerow([int(i), manifest[i].word.letters, family, key_str, f"{p:.6f}", vocab[int(t)]])


def _vocab(manifest):
    v = {}
    for a in manifest:
        v[a.word.index] = a.word.letters
    return [v[i] for i in range(len(v))]


def run_one(ws: Workspace, config: VaeConfig, split) -> RunRecord:
    plan = ws.plan
    rid = run_id(config, split.family, split.key_str, plan.seed)
    rec = RunRecord(rid, config_id(config), config.to_dict(), split.family, dict(split.key),
                    split.key_str, plan.seed)
    t0 = time.perf_counter()
    out_dir = ws.run_dir(rid)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        store, manifest = ws.data()
        evaluator = ws.evaluator()
        fit_ids, hold_ids = inner_fold(split.left_in, plan.holdout_fraction, plan.seed,
                                       f"{split.family}/{split.key_str}")
        ckpt = train(config, fit_ids, store, monitor_ids=hold_ids)
        ckpt.save(out_dir / "model.ckpt")
        last = ckpt.history[-1]
        rec.epochs = ckpt.epoch
        rec.final_train_loss = last["loss"]
        hold = store.batch(hold_ids[:config.monitor_size])
        rec.final_monitor_loss, rec.monitor_recon_loss, _ = evaluate_loss(ckpt.model, hold, config.beta)
        res = evaluate_left_out(ckpt.model, evaluator, store, manifest, split.left_out)
        write_eval_csv(out_dir / "eval.csv", res, manifest, split.family, split.key_str, _vocab(manifest))
        rec.leftout_recon_loss, rec.leftout_mse = res["recon_loss"], res["mse"]
        rec.leftout_accuracy, rec.leftout_top1 = res["accuracy"], res["top1_rate"]
        rec.n_left_out = int(res["ids"].size)
        rec.metrics = compute_metrics(ckpt.model, store, manifest, plan.metric_presets, plan.metric_bins)
    except Exception as exc:  # a failed run is recorded; the sweep goes on
        log.error("run %s (%s %s) failed: %s", rid, split.family, split.key_str, exc)
        rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - t0
    (out_dir / "record.json").write_text(json.dumps(rec.to_dict(), sort_keys=True, indent=1) + "\n")
    return rec


def planned_runs(ws: Workspace):
    return [(cfg, s) for cfg in ws.plan.configs() for s in ws.splits()]


def _worker(args):
    plan_dict, root, cfg_dict, split_file = args
    ws = Workspace(ExperimentPlan.from_dict(plan_dict), root)
    return run_one(ws, VaeConfig.from_dict(cfg_dict), read_split(split_file)).to_dict()


def _needs_run(ws: Workspace, rid: str, retry_failed: bool) -> bool:
    path = ws.run_dir(rid) / "record.json"
    if not path.exists():
        return True
    return retry_failed and json.loads(path.read_text())["status"] != "ok"


def run_grid(ws: Workspace, workers: int = 1, limit: int | None = None,
             retry_failed: bool = False) -> list[RunRecord]:
    """Train and evaluate every (config, split) pair not already recorded.

    Returns the records of all planned runs (old and new). ``limit`` caps
    how many new runs start in this call; failed runs are only retried when
    ``retry_failed`` is set.
    """
    ws.init()
    store, manifest = ws.data()
    ws.evaluator()
    todo = []
    for cfg, split in planned_runs(ws):
        if _needs_run(ws, run_id(cfg, split.family, split.key_str, ws.plan.seed), retry_failed):
            todo.append((cfg, split))
    if limit is not None:
        todo = todo[:limit]
    log.info("%d runs to do", len(todo))
    if workers <= 1:
        for i, (cfg, split) in enumerate(todo, 1):
            log.info("[%d/%d] beta=%g latent=%d lr=%g %s %s", i, len(todo), cfg.beta, cfg.latent_size,
                     cfg.learning_rate, split.family, split.key_str)
            run_one(ws, cfg, split)
    else:
        root = ws.dir.parent
        jobs = [(ws.plan.to_dict(), str(root), cfg.to_dict(), str(ws.path("splits", s.filename)))
                for cfg, s in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_worker, jobs))
    wanted = {run_id(c, s.family, s.key_str, ws.plan.seed) for c, s in planned_runs(ws)}
    return [r for r in ws.records() if r.run_id in wanted]


# --- selection and reports -------------------------------------------------

def _ok(records):
    return [r for r in records if r.status == "ok"]


def config_summary(records, preset: str) -> list[dict]:
    """Per config: mean held-out recon loss and mean MIR/MIG over its runs."""
    groups: dict[str, list[RunRecord]] = {}
    for r in _ok(records):
        groups.setdefault(r.config_id, []).append(r)
    rows = []
    for cid in sorted(groups):
        rs = groups[cid]
        cfg = rs[0].config
        rows.append({
            "config_id": cid, "beta": cfg["beta"], "latent_size": cfg["latent_size"],
            "learning_rate": cfg["learning_rate"], "n_runs": len(rs),
            "recon_loss": float(np.mean([r.monitor_recon_loss for r in rs])),
            "mir": float(np.nanmean([r.mir(preset) for r in rs])),
            "mig": float(np.nanmean([r.mig(preset) for r in rs])),
        })
    return rows


def select_pareto(records, preset: str = "compositional") -> list[str]:
    """Config ids on the (recon loss, MIR) Pareto front."""
    rows = [r for r in config_summary(records, preset) if np.isfinite(r["mir"])]
    idx = disent.pareto_indices([(r["recon_loss"], r["mir"]) for r in rows])
    return [rows[i]["config_id"] for i in idx]


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else repr(round(v, 10))
    return str(v)


def _write_csv(path, rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def _sort_key(family, key):
    if family == "spatial":
        return (key["x_shift"], key["y_shift"])
    if family == "length":
        return (key["length"],)
    return (key["letter"], key["position"])


def accuracy_tables(records, selected: Sequence[str] | None = None) -> dict[str, list[dict]]:
    """Per family, per split key: accuracy across (selected) models."""
    ok = [r for r in _ok(records) if selected is None or r.config_id in selected]
    out = {}
    for fam in FAMILIES:
        by_key: dict[str, list[RunRecord]] = {}
        for r in ok:
            if r.family == fam:
                by_key.setdefault(r.key_str, []).append(r)
        rows = []
        for k, rs in sorted(by_key.items(), key=lambda kv: _sort_key(fam, kv[1][0].key)):
            acc = [r.leftout_accuracy for r in rs]
            rows.append({"family": fam, "key": k, "n_models": len(rs),
                         "mean_accuracy": float(np.mean(acc)), "sem_accuracy": disent.sem(acc),
                         "mean_top1": float(np.mean([r.leftout_top1 for r in rs])),
                         "mean_recon_loss": float(np.mean([r.leftout_recon_loss for r in rs])),
                         "chance": CHANCE})
        if rows:
            out[fam] = rows
    return out


def family_means(records, selected=None) -> dict:
    """Family-level mean accuracy, averaged splits-first and models-first."""
    ok = [r for r in _ok(records) if selected is None or r.config_id in selected]
    out = {}
    for fam in FAMILIES:
        rs = [r for r in ok if r.family == fam]
        if not rs:
            continue
        per_model: dict[str, list[float]] = {}
        per_key: dict[str, list[float]] = {}
        for r in rs:
            per_model.setdefault(r.config_id, []).append(r.leftout_accuracy)
            per_key.setdefault(r.key_str, []).append(r.leftout_accuracy)
        out[fam] = {
            "models_then_splits": float(np.mean([np.mean(v) for v in per_model.values()])),
            "splits_then_models": float(np.mean([np.mean(v) for v in per_key.values()])),
            "worst_split": min(per_key, key=lambda k: np.mean(per_key[k])),
            "worst_split_accuracy": float(min(np.mean(v) for v in per_key.values())),
            "n_runs": len(rs),
        }
    return out


def correlation_report(records, selected=None, preset="compositional", permutations=10_000, seed=0) -> dict:
    """MIR vs compositional-split accuracy: points, per-model means and SEMs,
    linear fit and permutation-tested Pearson correlation."""
    ok = [r for r in _ok(records) if r.family == "compositional"
          and (selected is None or r.config_id in selected) and np.isfinite(r.mir(preset))]
    points = [{"config_id": r.config_id, "key": r.key_str, "mir": r.mir(preset),
               "accuracy": r.leftout_accuracy} for r in
              sorted(ok, key=lambda r: (r.config_id, _sort_key("compositional", r.key)))]
    models = []
    for cid in sorted({p["config_id"] for p in points}):
        ps = [p for p in points if p["config_id"] == cid]
        models.append({"config_id": cid, "n": len(ps),
                       "mean_mir": float(np.mean([p["mir"] for p in ps])),
                       "sem_mir": disent.sem([p["mir"] for p in ps]),
                       "mean_accuracy": float(np.mean([p["accuracy"] for p in ps])),
                       "sem_accuracy": disent.sem([p["accuracy"] for p in ps])})
    summary = {"preset": preset, "n_points": len(points), "permutations": permutations,
               "rho": float("nan"), "p_value": float("nan"), "slope": float("nan"),
               "intercept": float("nan")}
    x = np.array([p["mir"] for p in points])
    y = np.array([p["accuracy"] for p in points])
    if len(points) >= 3 and x.std() > 0 and y.std() > 0:
        summary["rho"], summary["p_value"] = disent.pearson_corr(x, y, permutations, seed)
        summary["slope"], summary["intercept"] = disent.linear_fit(x, y)
    else:
        summary["note"] = "fewer than 3 points or zero variance; correlation undefined"
    return {"points": points, "models": models, "summary": summary}


def _json_clean(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    return obj


def report(records, out_dir, preset: str = "compositional", permutations: int = 10_000,
           seed: int = 0) -> dict:
    """Write report tables derived only from ``records``; returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: r.run_id)
    selected = select_pareto(records, preset)
    configs = config_summary(records, preset)
    for row in configs:
        row["on_pareto"] = row["config_id"] in selected
    _write_csv(out_dir / "loss_vs_mir.csv", configs,
               ["config_id", "beta", "latent_size", "learning_rate", "n_runs", "recon_loss", "mir", "mig",
                "on_pareto"])
    tables = accuracy_tables(records, selected)
    cols = ["family", "key", "n_models", "mean_accuracy", "sem_accuracy", "mean_top1", "mean_recon_loss",
            "chance"]
    for fam, rows in tables.items():
        _write_csv(out_dir / f"accuracy_{fam}.csv", rows, cols)
    by_model = [{"config_id": r.config_id, "beta": r.config["beta"], "latent_size": r.config["latent_size"],
                 "learning_rate": r.config["learning_rate"], "family": r.family, "key": r.key_str,
                 "accuracy": r.leftout_accuracy, "top1": r.leftout_top1, "chance": CHANCE}
                for r in sorted(_ok(records), key=lambda r: (r.config_id, r.family, _sort_key(r.family, r.key)))]
    _write_csv(out_dir / "accuracy_by_model.csv", by_model,
               ["config_id", "beta", "latent_size", "learning_rate", "family", "key", "accuracy", "top1", "chance"])
    corr = correlation_report(records, selected, preset, permutations, seed)
    _write_csv(out_dir / "mir_vs_accuracy_points.csv", corr["points"], ["config_id", "key", "mir", "accuracy"])
    _write_csv(out_dir / "mir_vs_accuracy_models.csv", corr["models"],
               ["config_id", "n", "mean_mir", "sem_mir", "mean_accuracy", "sem_accuracy"])
    summary = {
        "n_records": len(records),
        "n_failed": sum(r.status != "ok" for r in records),
        "chance": CHANCE,
        "selection_preset": preset,
        "pareto_configs": selected,
        "family_means_pareto": family_means(records, selected),
        "family_means_all": family_means(records),
        "mir_vs_accuracy": corr["summary"],
    }
    (out_dir / "summary.json").write_text(json.dumps(_json_clean(summary), sort_keys=True, indent=2) + "\n")
    return summary
