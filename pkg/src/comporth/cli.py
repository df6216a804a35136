"""Command-line entry point: ``comporth <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import disent, orchestrator as orch
from .betavae import ModelCheckpoint, VaeConfig, evaluate_loss, train
from .corpus import FactorGrid, read_manifest
from .errors import CompOrthError, ConfigError
from .evaluator import EvaluatorModel, train_evaluator
from .numeric.rng import generator
from .perturb import DEFAULT_LEVELS, emit_grid, perturb_unit
from .renderer import ImageStore, export_bitmaps, generate_dataset, write_dataset
from .splits import FAMILIES, make_splits, read_split, write_split

log = logging.getLogger("comporth")


def load_data(data_dir):
    """(store, manifest) from a generated directory, or rendered afresh."""
    if data_dir is None:
        return generate_dataset()
    d = Path(data_dir)
    return ImageStore.load(d / "images.u8"), read_manifest(d / "manifest.jsonl")


def apply_overrides(base: dict, sets) -> dict:
    """Apply ``KEY=VALUE`` overrides; dotted keys reach into nested objects
    and values are parsed as JSON when possible."""
    out = json.loads(json.dumps(base))
    for item in sets or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key!r}: {part!r} is not an object")
        node[leaf] = value
    return out


def load_plan(source: str, sets=None) -> orch.ExperimentPlan:
    if source in orch.PLAN_PRESETS:
        base = orch.PLAN_PRESETS[source]
    else:
        base = json.loads(Path(source).read_text())
    return orch.ExperimentPlan.from_dict(apply_overrides(base, sets))


def _dump(obj, path=None):
    text = json.dumps(orch._json_clean(obj), sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_generate(a):
    grid = FactorGrid.from_dict(json.loads(Path(a.grid).read_text())) if a.grid else FactorGrid()
    store, manifest = generate_dataset(grid)
    images, man = write_dataset(a.out, store, manifest)
    if a.bitmaps:
        export_bitmaps(Path(a.out) / "bitmaps", store, manifest)
    print(f"{len(manifest)} images -> {images}, {man}")


def cmd_split(a):
    _, manifest = load_data(a.data)
    splits = make_splits(manifest, a.families)
    for s in splits:
        write_split(a.out, s)
    print(f"{len(splits)} splits -> {a.out}")


def cmd_train_evaluator(a):
    store, manifest = load_data(a.data)
    model = train_evaluator(store, manifest, seed=a.seed, max_epochs=a.max_epochs)
    model.save(a.out)
    print(f"evaluator top-1 {model.history[-1]['train_top1']:.4f} -> {a.out}")


def cmd_train(a):
    store, _ = load_data(a.data)
    base = json.loads(Path(a.config).read_text()) if a.config else VaeConfig().to_dict()
    config = VaeConfig.from_dict(apply_overrides(base, a.set))
    split = read_split(a.split)
    fit_ids, hold_ids = orch.inner_fold(split.left_in, a.holdout, config.seed,
                                        f"{split.family}/{split.key_str}")

    def progress(entry):
        log.info("epoch %d loss %.3f", entry["epoch"], entry["loss"])

    ckpt = train(config, fit_ids, store, monitor_ids=hold_ids, progress=progress)
    ckpt.save(a.out)
    print(f"trained {ckpt.epoch} epochs, final loss {ckpt.history[-1]['loss']:.3f} -> {a.out}")


def cmd_eval(a):
    store, manifest = load_data(a.data)
    model = ModelCheckpoint.load(a.vae).model
    evaluator = EvaluatorModel.load(a.evaluator)
    split = read_split(a.split)
    res = orch.evaluate_left_out(model, evaluator, store, manifest, split.left_out)
    Path(a.report).parent.mkdir(parents=True, exist_ok=True)
    orch.write_eval_csv(a.report, res, manifest, split.family, split.key_str, orch._vocab(manifest))
    print(f"{split.family} {split.key_str}: accuracy {res['accuracy']:.4f} top-1 {res['top1_rate']:.4f} "
          f"(chance {orch.CHANCE:.4f}) -> {a.report}")


def cmd_metrics(a):
    store, manifest = load_data(a.data)
    model = ModelCheckpoint.load(a.vae).model
    out = orch.compute_metrics(model, store, manifest, [a.factors], a.bins)[a.factors]
    _dump(out, a.out)
    print(f"MIG {out['mig']:.4f} MIR {out['mir']:.4f} -> {a.out}")


def _parse_units(text, latent_size):
    if text == "all":
        return list(range(latent_size))
    try:
        units = [int(u) for u in text.split(",") if u.strip()]
    except ValueError:
        raise ConfigError(f"--units must be 'all' or comma-separated integers, got {text!r}")
    return units


def cmd_perturb(a):
    store, manifest = load_data(a.data)
    model = ModelCheckpoint.load(a.vae).model
    pool = np.asarray(read_split(a.split).left_out if a.split else range(len(manifest)))
    ids = np.sort(generator(a.seed, 0).choice(pool, size=min(a.samples, pool.size), replace=False))
    levels = [float(v) for v in a.levels.split(",")] if a.levels else DEFAULT_LEVELS
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = store.batch(ids)
    index = []
    for unit in _parse_units(a.units, model.latent_size):
        grid = perturb_unit(model, images, unit, levels, ids, a.mode)
        path = emit_grid(grid, out / f"unit_{unit:03d}.pgm", originals=images[..., 0])
        index.append({"unit": unit, "file": path.name, "baseline_column": grid.baseline_column,
                      "levels": list(grid.levels), "baseline_values": grid.baseline_values.tolist()})
    _dump({"sample_ids": ids.tolist(), "words": [manifest[i].word.letters for i in ids],
           "mode": a.mode, "units": index}, out / "traversals.json")
    print(f"{len(index)} traversal grids -> {out}")


def cmd_grid(a):
    plan = load_plan(a.plan, a.set)
    ws = orch.Workspace(plan, a.root)
    records = orch.run_grid(ws, workers=a.workers, limit=a.limit, retry_failed=a.retry_failed)
    done = sum(r.status == "ok" for r in records)
    failed = sum(r.status != "ok" for r in records)
    total = len(orch.planned_runs(ws))
    print(f"{ws.dir}: {done} ok, {failed} failed, {total - done - failed} pending of {total}")


def cmd_pareto(a):
    plan = load_plan(a.plan, a.set)
    ws = orch.Workspace(plan, a.root)
    preset = a.preset or plan.selection_preset
    records = ws.records()
    selected = orch.select_pareto(records, preset)
    rows = orch.config_summary(records, preset)
    _dump({"preset": preset, "pareto_configs": selected,
           "configs": [dict(r, on_pareto=r["config_id"] in selected) for r in rows]}, a.out)


def cmd_report(a):
    plan = load_plan(a.plan, a.set)
    ws = orch.Workspace(plan, a.root)
    out = a.out or ws.path("reports")
    summary = orch.report(ws.records(), out, a.preset or plan.selection_preset, plan.permutations, plan.seed)
    _dump(summary)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comporth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def data_arg(sp):
        sp.add_argument("--data", help="directory written by 'generate' (default: render in memory)")

    def plan_args(sp):
        sp.add_argument("--plan", default="desk",
                        help=f"plan JSON file or preset ({', '.join(orch.PLAN_PRESETS)})")
        sp.add_argument("--root", help=f"output root (default: ${orch.ROOT_ENV} or ./comporth_runs)")
        set_arg(sp)

    def set_arg(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a field (repeatable; dotted keys for nested fields, e.g. vae.max_epochs=5)")

    sp = sub.add_parser("generate", help="render the corpus and write the manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--grid", help="JSON file with a factor grid")
    sp.add_argument("--bitmaps", action="store_true", help="also write one PBM per image")
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("split", help="write split files")
    data_arg(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--families", nargs="+", choices=FAMILIES, default=list(FAMILIES))
    sp.set_defaults(fn=cmd_split)

    sp = sub.add_parser("train-evaluator", help="train the word classifier")
    data_arg(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-epochs", type=int, default=30)
    sp.set_defaults(fn=cmd_train_evaluator)

    sp = sub.add_parser("train", help="train one beta-VAE on a split's left-in set")
    data_arg(sp)
    sp.add_argument("--config", help="VaeConfig JSON (default: built-in defaults)")
    sp.add_argument("--split", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--holdout", type=float, default=0.1, help="held-out fraction for early stopping")
    set_arg(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="score left-out reconstructions with the evaluator")
    data_arg(sp)
    sp.add_argument("--evaluator", required=True)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--report", required=True, help="per-image CSV output")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("metrics", help="MI matrix, MIG and MIR for one model")
    data_arg(sp)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--factors", choices=sorted(disent.PRESETS), required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--bins", type=int, default=disent.DEFAULT_BINS)
    sp.set_defaults(fn=cmd_metrics)

    sp = sub.add_parser("perturb", help="latent traversal grids as PGM images")
    data_arg(sp)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--units", default="all", help="'all' or comma-separated unit indices")
    sp.add_argument("--samples", type=int, default=8)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--split", help="draw samples from this split's left-out set")
    sp.add_argument("--levels", help="comma-separated traversal values")
    sp.add_argument("--mode", choices=("absolute", "additive"), default="absolute")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_perturb)

    sp = sub.add_parser("grid", help="run (or resume) every config x split of a plan")
    plan_args(sp)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--limit", type=int, help="start at most this many new runs")
    sp.add_argument("--retry-failed", action="store_true", help="rerun runs recorded as failed")
    sp.set_defaults(fn=cmd_grid)

    sp = sub.add_parser("pareto", help="configs on the reconstruction/MIR Pareto front")
    plan_args(sp)
    sp.add_argument("--preset", choices=sorted(disent.PRESETS))
    sp.add_argument("--out", help="JSON output (default: stdout)")
    sp.set_defaults(fn=cmd_pareto)

    sp = sub.add_parser("report", help="write report tables from stored run records")
    plan_args(sp)
    sp.add_argument("--preset", choices=sorted(disent.PRESETS))
    sp.add_argument("--out", help="report directory (default: <plan dir>/reports)")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.fn(args)
    except CompOrthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
