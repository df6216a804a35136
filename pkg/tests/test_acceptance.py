"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed in the terminal summary."""
import itertools
import os
import shutil
import time
from pathlib import Path

import numpy as np
from scipy import stats

from comporth import disent, orchestrator as orch
from comporth.betavae import BetaVAE, ModelCheckpoint, VaeConfig, train
from comporth.corpus import FactorGrid, enumerate_assignments, enumerate_words, manifest_lines
from comporth.evaluator import top1_accuracy
from comporth.numeric import ops
from comporth.perturb import DEFAULT_LEVELS, grid_raster, perturb_all
from comporth.renderer import generate_dataset
from comporth.splits import compositional_splits, length_splits, make_splits, spatial_splits

from .conftest import ROOT, brute_words
from .gradcheck import numeric_grad, rel_error

CONFIRM_ROOT = Path(os.environ.get("COMPORTH_CONFIRM_ROOT", ROOT / ".cache" / "confirm"))


def test_c01_corpus_exactness(criterion):
    t0 = time.perf_counter()
    words = enumerate_words("AB", 5)
    dt = time.perf_counter() - t0
    letters = [w.letters for w in words]
    ok = len(words) == 62 and letters == brute_words("AB", 5) and dt < 1.0
    criterion(1, "corpus exactness", ok, f"{len(words)} words (expect 62), oracle match, {dt * 1e3:.1f} ms")
    assert ok


def _oracle_splits():
    """Brute-force split cardinalities from a plain nested-loop enumeration."""
    rows = [(w, x, y, s) for w in brute_words("AB", 5) for x in range(-4, 5)
            for y in range(-4, 5) for s in range(-2, 3)]
    spatial = {(x, y): sum(1 for r in rows if (r[1], r[2]) == (x, y))
               for x in range(-4, 5) for y in range(-4, 5)}
    length = {n: sum(1 for r in rows if len(r[0]) == n) for n in range(1, 6)}
    comp = {}
    for letter, pos in itertools.product("AB", range(1, 6)):
        comp[letter, pos] = len({r[0] for r in rows if len(r[0]) >= pos and r[0][pos - 1] == letter})
    return spatial, length, comp


def test_c02_split_cardinalities(criterion, dataset):
    _, manifest = dataset
    o_spatial, o_length, o_comp = _oracle_splits()
    sp = spatial_splits(manifest)
    ln = length_splits(manifest)
    cp = compositional_splits(manifest)
    ok_sp = len(sp) == 81 and all(len(s.left_out) == 310 == o_spatial[s.key["x_shift"], s.key["y_shift"]]
                                  for s in sp)
    ok_ln = len(ln) == 5 and all(len(s.left_out) == o_length[s.key["length"]] for s in ln)
    comp_words = {(s.key["letter"], s.key["position"]): len({manifest[i].word.letters for i in s.left_out})
                  for s in cp}
    formula = {k: sum(2 ** (n - 1) for n in range(k[1], 6)) for k in o_comp}
    ok_cp = len(cp) == 10 and comp_words == o_comp == formula
    ok = ok_sp and ok_ln and ok_cp and comp_words["A", 2] == 30 and comp_words["B", 5] == 16
    criterion(2, "split cardinalities", ok,
              f"spatial {len(sp)}x310={ok_sp}, length {len(ln)}={ok_ln}, compositional {len(cp)}={ok_cp} "
              f"(A@2 {comp_words['A', 2]} words, B@5 {comp_words['B', 5]} words)")
    assert ok


def _kernel_errors(rng):
    errs = {}
    x = rng.standard_normal((2, 6, 6, 3))
    w = rng.standard_normal((4, 4, 3, 5))
    b = rng.standard_normal(5)
    out = ops.conv2d(x, w, b, 2, 1)
    r = rng.standard_normal(out.shape)
    dx, dw, db = ops.conv2d_grad(r, x, w, b, 2, 1)
    f = lambda xx, ww, bb: np.sum(ops.conv2d(xx, ww, bb, 2, 1) * r)
    errs["conv2d"] = max(rel_error(dx, numeric_grad(lambda v: f(v, w, b), x)),
                         rel_error(dw, numeric_grad(lambda v: f(x, v, b), w)),
                         rel_error(db, numeric_grad(lambda v: f(x, w, v), b)))
    y = rng.standard_normal((2, 3, 3, 5))
    wt = rng.standard_normal((4, 4, 3, 5))
    bt = rng.standard_normal(3)
    rt = rng.standard_normal(ops.conv2d_transpose(y, wt, bt, 2, 1).shape)
    dy, dwt, dbt = ops.conv2d_transpose_grad(rt, y, wt, bt, 2, 1)
    g = lambda yy, ww, bb: np.sum(ops.conv2d_transpose(yy, ww, bb, 2, 1) * rt)
    errs["conv2d_transpose"] = max(rel_error(dy, numeric_grad(lambda v: g(v, wt, bt), y)),
                                   rel_error(dwt, numeric_grad(lambda v: g(y, v, bt), wt)),
                                   rel_error(dbt, numeric_grad(lambda v: g(y, wt, v), bt)))
    xd, wd, bd = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
    rd = rng.standard_normal((3, 5))
    ddx, ddw, ddb = ops.dense_grad(rd, xd, wd, bd)
    h = lambda xx, ww, bb: np.sum(ops.dense(xx, ww, bb) * rd)
    errs["dense"] = max(rel_error(ddx, numeric_grad(lambda v: h(v, wd, bd), xd)),
                        rel_error(ddw, numeric_grad(lambda v: h(xd, v, bd), wd)),
                        rel_error(ddb, numeric_grad(lambda v: h(xd, wd, v), bd)))
    a = rng.standard_normal((3, 7))
    a = np.where(np.abs(a) < 0.05, 0.1, a)
    ra = rng.standard_normal(a.shape)
    errs["relu"] = rel_error(ops.relu_grad(ra, a), numeric_grad(lambda v: np.sum(ops.relu(v) * ra), a))
    errs["sigmoid"] = rel_error(ops.sigmoid_grad(ra, ops.sigmoid(a)),
                                numeric_grad(lambda v: np.sum(ops.sigmoid(v) * ra), a))
    errs["softmax"] = rel_error(ops.softmax_grad(ra, ops.softmax(a)),
                                numeric_grad(lambda v: np.sum(ops.softmax(v) * ra), a))
    t = (rng.random(a.shape) > 0.5).astype(float)
    p = rng.uniform(0.05, 0.95, a.shape)
    errs["bce"] = rel_error(ops.bce_sum_grad(p, t), numeric_grad(lambda v: ops.bce_sum(v, t), p))
    errs["bce_logits"] = rel_error(ops.bce_logits_sum_grad(a, t),
                                   numeric_grad(lambda v: ops.bce_logits_sum(v, t), a))
    errs["squared_error"] = rel_error(ops.squared_error_sum_grad(p, t),
                                      numeric_grad(lambda v: ops.squared_error_sum(v, t), p))
    mu, lv = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    dmu, dlv = ops.gaussian_kl_grad(mu, lv)
    errs["gaussian_kl"] = max(rel_error(dmu, numeric_grad(lambda v: ops.gaussian_kl(v, lv), mu)),
                              rel_error(dlv, numeric_grad(lambda v: ops.gaussian_kl(mu, v), lv)))
    labels = np.array([0, 2, 6])
    _, dz = ops.softmax_cross_entropy(a, labels)
    errs["softmax_cross_entropy"] = rel_error(
        dz, numeric_grad(lambda v: ops.softmax_cross_entropy(v, labels)[0], a))
    return errs


def _elbo_error(dataset, rng):
    store, _ = dataset
    model = BetaVAE(4, seed=2, dtype=np.float64)
    for name in model.store.names():
        if name.endswith(".b"):
            model.store[name] = rng.normal(0, 0.1, model.store[name].shape)
    x = store.batch([100, 9000], dtype=np.float64)
    noise = rng.standard_normal((2, 4))
    _, _, _, grads = model.loss_and_grads(x, 4.0, noise)
    worst = 0.0
    for name in model.store.names():
        p = model.store[name]
        coords = rng.choice(p.size, size=min(p.size, 6), replace=False)
        num = numeric_grad(lambda _: model.loss_and_grads(x, 4.0, noise, need_grads=False)[0], p, coords=coords)
        worst = max(worst, rel_error(grads[name].reshape(-1)[coords], num.reshape(-1)[coords]))
    return worst


def _adjoint_error(rng):
    worst = 0.0
    for k, s, p, hw, c in [(4, 2, 1, 8, 3), (4, 2, 1, 8, 16), (5, 2, 2, 9, 1), (3, 1, 1, 6, 4)]:
        x = rng.standard_normal((2, hw, hw, c))
        w = rng.standard_normal((k, k, c, 6))
        y = rng.standard_normal(ops.conv2d(x, w, None, s, p).shape)
        lhs = np.sum(ops.conv2d(x, w, None, s, p) * y)
        rhs = np.sum(x * ops.conv2d_transpose(y, w, None, s, p, out_hw=(hw, hw)))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


def test_c03_numeric_gradients(criterion, dataset):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    kernels = _kernel_errors(rng)
    elbo = _elbo_error(dataset, rng)
    adj = _adjoint_error(rng)
    dt = time.perf_counter() - t0
    worst_kernel = max(kernels, key=kernels.get)
    ok = max(kernels.values()) < 1e-4 and elbo < 1e-4 and adj < 1e-10 and dt < 60
    criterion(3, "numeric-core gradients", ok,
              f"worst kernel {worst_kernel} {kernels[worst_kernel]:.1e}, ELBO {elbo:.1e} (< 1e-4), "
              f"adjointness {adj:.1e} (< 1e-10), {dt:.1f} s")
    assert ok


def test_c04_evaluator(criterion, dataset, evaluator):
    store, manifest = dataset
    labels = [a.word.index for a in manifest]
    acc = top1_accuracy(evaluator, store.batch(np.arange(store.count)), labels)
    chance = orch.CHANCE
    ok = acc >= 0.995 and abs(chance - 0.0161) < 5e-5
    criterion(4, "evaluator", ok, f"top-1 on originals {acc:.4f} (>= 0.995), chance {chance:.4f}")
    assert ok


def confirm_workspace(evaluator_ckpt):
    plan = orch.ExperimentPlan.from_dict(orch.PLAN_PRESETS["confirm"])
    ws = orch.Workspace(plan, CONFIRM_ROOT).init()
    if not ws.path("evaluator.ckpt").exists():
        # same seed and data as the workspace would use, so the checkpoint is identical
        shutil.copy(evaluator_ckpt, ws.path("evaluator.ckpt"))
    return ws


def test_c05_behavioural_ordering(criterion, evaluator, cache_dir):
    ws = confirm_workspace(cache_dir / "evaluator_seed0.ckpt")
    records = orch.run_grid(ws)
    means = orch.family_means(records)
    spatial = means["spatial"]["splits_then_models"]
    length5 = next(r.leftout_accuracy for r in records if r.family == "length" and r.key["length"] == 5)
    comp = means["compositional"]
    comp_mean, comp_worst = comp["splits_then_models"], comp["worst_split_accuracy"]
    checks = {
        "spatial > length-5": spatial > length5,
        "spatial > worst compositional": spatial > comp_worst,
        "spatial >= 0.70": spatial >= 0.70,
        "spatial - compositional mean >= 0.15": spatial - comp_mean >= 0.15,
    }
    ok = all(checks.values()) and all(r.status == "ok" for r in records)
    failed = [k for k, v in checks.items() if not v]
    criterion(5, "behavioural ordering", ok,
              f"spatial {spatial:.3f}, length-5 {length5:.3f}, compositional mean {comp_mean:.3f}, "
              f"worst {comp['worst_split']} {comp_worst:.3f}; runs {len(records)}"
              + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


def test_c06_metric_oracles(criterion):
    rng = np.random.default_rng(6)
    n = 10_000
    f = np.column_stack([rng.integers(0, m, n) for m in (3, 4, 5)])
    perfect = disent.mi_matrix_from_codes(f.astype(float), f)
    # every unit is the same symmetric function of three equal-cardinality factors
    g = rng.integers(0, 4, (n, 3))
    uniform = disent.mi_matrix_from_codes(np.repeat(g.sum(axis=1, keepdims=True), 4, axis=1).astype(float), g)
    # three units per factor, each a separately jittered copy of one factor only
    jitter = rng.uniform(-0.2, 0.2, (n, 9))
    multi = disent.mi_matrix_from_codes(np.repeat(f, 3, axis=1) + jitter, f, bins=5)
    dup = disent.mi_matrix_from_codes(np.repeat(f[:, :2], 2, axis=1).astype(float), f[:, :2])
    vals = {
        "perfect MIG": disent.mig(perfect), "perfect MIR": disent.mir(perfect),
        "uniform MIR": disent.mir(uniform), "multi-unit MIR": disent.mir(multi),
        "duplicated MIG": disent.mig(dup),
    }
    ok = (vals["perfect MIG"] >= 0.95 and vals["perfect MIR"] >= 0.95 and vals["uniform MIR"] <= 0.05
          and vals["multi-unit MIR"] >= 0.95 and vals["duplicated MIG"] <= 0.05)
    criterion(6, "disentanglement-metric oracles", ok, ", ".join(f"{k} {v:.3f}" for k, v in vals.items()))
    assert ok


def _brute_pareto(points):
    return [i for i, p in enumerate(points)
            if not any(q[0] <= p[0] and q[1] >= p[1] and (q[0] < p[0] or q[1] > p[1]) for q in points)]


def test_c07_pareto(criterion):
    rng = np.random.default_rng(7)
    mismatches = 0
    for trial in range(1000):
        n = int(rng.integers(0, 40))
        if trial % 2:
            pts = rng.integers(0, 8, (n, 2)).astype(float).tolist()
        else:
            pts = rng.random((n, 2)).tolist()
        mismatches += disent.pareto_indices(pts) != _brute_pareto(pts)
    criterion(7, "Pareto front", mismatches == 0, f"{mismatches} mismatches over 1000 random sets")
    assert mismatches == 0


def test_c08_correlation(criterion, cache_dir, evaluator):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(50)
    rho, p = disent.pearson_corr(x, 3 * x + 1, permutations=10_000, seed=0)
    pvals = []
    for rerun in range(200):
        a, b = rng.standard_normal(100), rng.standard_normal(100)
        pvals.append(disent.pearson_corr(a, b, permutations=1_000, seed=rerun)[1])
    ks = stats.kstest(pvals, "uniform").statistic
    ws = confirm_workspace(cache_dir / "evaluator_seed0.ckpt")
    records = ws.records()
    emitted = False
    if records:
        out = ws.path("reports")
        orch.report(records, out, ws.plan.selection_preset, ws.plan.permutations, ws.plan.seed)
        emitted = all((out / f).exists() for f in ("mir_vs_accuracy_points.csv", "mir_vs_accuracy_models.csv", "summary.json"))
    ok = abs(rho - 1.0) <= 1e-12 and p == 1 / 10_001 and ks < 0.1 and emitted
    criterion(8, "correlation machinery", ok,
              f"linear rho-1 = {rho - 1:.1e}, p {p:.2e} (min {1 / 10_001:.2e}), KS {ks:.3f} (< 0.1), "
              f"MIR-vs-accuracy report emitted: {emitted}")
    assert ok


def test_c09_perturbation(criterion, dataset, cache_dir, evaluator):
    store, manifest = dataset
    ws = confirm_workspace(cache_dir / "evaluator_seed0.ckpt")
    rec = next((r for r in ws.records() if r.status == "ok" and r.config["latent_size"] == 32), None)
    if rec is not None:
        model, source = ModelCheckpoint.load(ws.run_dir(rec.run_id) / "model.ckpt").model, "trained"
    else:
        model, source = BetaVAE(32, seed=9), "untrained"
    ids = [0, 5000, 12000, 20000, 25000]
    x = store.batch(ids)
    t0 = time.perf_counter()
    grids = perturb_all(model, x, sample_ids=ids)
    dt = time.perf_counter() - t0
    baseline = model.decode(model.encode(x).mu)[..., 0]
    exact = all(np.array_equal(g.images[:, g.baseline_column], baseline) for g in grids)
    layout = all(g.shape == (len(ids), len(DEFAULT_LEVELS) + 1) and
                 grid_raster(g).shape == (len(ids) * 65 - 1, (len(DEFAULT_LEVELS) + 1) * 65 - 1)
                 for g in grids)
    ok = len(grids) == 32 and exact and layout and dt < 300
    criterion(9, "perturbation harness", ok,
              f"{len(grids)} panels of {len(ids)} samples x {len(DEFAULT_LEVELS)} levels + baseline "
              f"({source} model), baseline bit-exact {exact}, {dt:.1f} s")
    assert ok


def test_c10_determinism(criterion, tmp_path, cache_dir, evaluator):
    m1 = "".join(manifest_lines(enumerate_assignments(FactorGrid())))
    m2 = "".join(manifest_lines(enumerate_assignments(FactorGrid())))
    s1, _ = generate_dataset()
    s2, _ = generate_dataset()
    s1.save(tmp_path / "a.u8")
    s2.save(tmp_path / "b.u8")
    data_same = m1 == m2 and (tmp_path / "a.u8").read_bytes() == (tmp_path / "b.u8").read_bytes()

    plan = dict(name="determinism", grid={"x_shifts": [0, 1], "y_shifts": [0], "spacings": [0]},
                betas=[4.0], latent_sizes=[4], families=["spatial"], permutations=200,
                vae={"max_epochs": 2, "steps_per_epoch": 2, "batch_size": 16, "monitor_size": 16})
    trees = []
    for sub in ("a", "b"):
        ws = orch.Workspace(orch.ExperimentPlan.from_dict(plan), tmp_path / sub).init()
        shutil.copy(cache_dir / "evaluator_seed0.ckpt", ws.path("evaluator.ckpt"))
        orch.report(orch.run_grid(ws), ws.path("reports"), permutations=200)
        trees.append({p.relative_to(ws.dir).as_posix(): p.read_bytes() for p in sorted(ws.dir.rglob("*"))
                      if p.is_file() and p.name != "record.json"})
    n_ckpt = sum(k.endswith(".ckpt") for k in trees[0])
    n_rep = sum(k.startswith("reports/") for k in trees[0])
    runs_same = trees[0] == trees[1]
    ok = data_same and runs_same and n_ckpt >= 3 and n_rep >= 5
    criterion(10, "determinism", ok,
              f"manifest+images identical {data_same}; {len(trees[0])} plan files incl. {n_ckpt} checkpoints, "
              f"{n_rep} reports identical {runs_same}")
    assert ok
