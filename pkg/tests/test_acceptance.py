"""The ten acceptance criteria, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; every criterion
prints one PASS/FAIL line (also repeated in the terminal summary).
Criteria 7, 8 and 9 share one set of trained arms.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from oracles import brute_force_pq, perturb, random_mask_pair
from hierseg import bundled_tree
from hierseg.cli import main as cli
from hierseg.experiments import ExperimentConfig, experiment_generalization, experiment_pretrain_finetune
from hierseg.gradcheck import random_cut, run_gradcheck
from hierseg.hierarchy import validate_cut
from hierseg.losses import BACKGROUND, IGNORE, TargetField, ce_loss, combined_loss, ft_loss, mce_loss, mft_loss, softmax
from hierseg.metrics import MaskPair, panoptic_quality
from hierseg.pipeline import read_log
from hierseg.seeding import derive_seed

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
SEEDS = (1, 2, 3)


@pytest.fixture(scope="module")
def tree():
    return bundled_tree()


def test_criterion_01_gradient_check(tree):
    start = time.perf_counter()
    report = run_gradcheck(tree, ("ce", "mce", "ft", "mft"), n_batches=100, h=1e-5, seed=0,
                           tol_loss=1e-4, tol_net=1e-3)
    elapsed = time.perf_counter() - start
    ok = report.passed and elapsed < 120
    errors = ", ".join(f"{k} {v:.1e}" for k, v in report.errors.items())
    record(1, ok, f"max rel errors {errors}; {elapsed:.0f}s")
    assert report.passed, report.lines()
    assert elapsed < 120


def singleton_case(tree, rng):
    cut = random_cut(tree, rng, leaves_only=True)
    n = int(rng.integers(1, 51))
    labels = rng.integers(0, cut.m, size=n)
    roll = rng.random(n)
    labels[roll < 0.2] = BACKGROUND
    labels[roll > 0.9] = IGNORE
    return softmax(rng.normal(0, 2, size=(n, tree.n_leaves + 1))), TargetField(labels, cut)


def test_criterion_02_reduction_identities(tree):
    rng = np.random.default_rng(2)
    worst_ce, worst_ft, identical = 0.0, 0.0, 0
    for _ in range(1000):
        probs, targets = singleton_case(tree, rng)
        ce, g_ce = ce_loss(probs, targets, tree)
        mce, g_mce = mce_loss(probs, targets, tree)
        ft, g_ft = ft_loss(probs, targets, tree)
        mft, g_mft = mft_loss(probs, targets, tree)
        worst_ce = max(worst_ce, abs(ce - mce), np.abs(g_ce - g_mce).max())
        worst_ft = max(worst_ft, abs(ft - mft), np.abs(g_ft - g_mft).max())
        identical += ce == mce
    ok = worst_ce <= 1e-12 and worst_ft <= 1e-12
    record(2, ok, f"|MCE-CE| max {worst_ce:.1e} ({identical}/1000 bit-identical), |MFT-FT| max {worst_ft:.1e}")
    assert ok


def coarse_case(tree, rng):
    while True:
        cut = random_cut(tree, rng)
        if any(len(s) > 1 for s in cut.leaves_per_member):
            break
    n = int(rng.integers(1, 51))
    labels = rng.integers(0, cut.m, size=n)
    labels[rng.random(n) < 0.15] = BACKGROUND
    return rng.dirichlet(np.ones(tree.n_leaves + 1), size=n), TargetField(labels, cut)


def redistribute(probs, cut, rng):
    """Move mass around inside every S_k, keeping each member sum fixed."""
    out = probs.copy()
    for leaves in cut.leaves_per_member:
        cols = sorted(leaves)
        total = probs[:, cols].sum(axis=1, keepdims=True)
        out[:, cols] = total * rng.dirichlet(np.ones(len(cols)), size=probs.shape[0])
    return out


def test_criterion_03_sub_class_invariance(tree):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        probs, targets = coarse_case(tree, rng)
        moved = redistribute(probs, targets.cut, rng)
        for fn in (mce_loss, mft_loss, combined_loss):
            worst = max(worst, abs(fn(probs, targets, tree)[0] - fn(moved, targets, tree)[0]))
    ok = worst <= 1e-12
    record(3, ok, f"max loss change under redistribution {worst:.1e} over 1000 trials")
    assert ok


def test_criterion_04_equal_gradient_within_member(tree):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(300):
        probs, targets = coarse_case(tree, rng)
        for fn in (mce_loss, mft_loss):
            _, grad = fn(probs, targets, tree, wrt="probs")
            for leaves in targets.cut.leaves_per_member:
                block = grad[:, sorted(leaves)]
                worst = max(worst, float((block.max(axis=1) - block.min(axis=1)).max()))
    ok = worst <= 1e-12
    record(4, ok, f"max spread of pre-softmax gradients inside one member {worst:.1e}")
    assert ok


def test_criterion_05_pq_oracle():
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(500):
        truth = random_mask_pair(rng)
        # mostly near-misses, sometimes an unrelated map of the same shape
        pred = perturb(rng, truth) if rng.random() < 0.7 else random_mask_pair(rng, truth.shape)
        report = panoptic_quality(pred, truth, n_classes=3)
        for cls, (tp, fp, fn, pq, _) in brute_force_pq(pred, truth, 3).items():
            c = report.per_class[cls - 1]
            mismatches += (c.tp, c.fp, c.fn, c.pq) != (tp, fp, fn, pq)
    self_ok = 0
    for _ in range(100):
        x = random_mask_pair(rng)
        while not x.instance_map.any():
            x = random_mask_pair(rng)
        self_ok += panoptic_quality(x, x, n_classes=3).mean_pq == 1.0
    ok = mismatches == 0 and self_ok == 100
    record(5, ok, f"{mismatches} mismatches vs brute force on 500 pairs; PQ(X,X)=1 on {self_ok}/100")
    assert ok


def test_criterion_06_hand_checked_pq():
    truth_i, truth_c = np.zeros((8, 8), int), np.zeros((8, 8), int)
    truth_i[0:2, 0:5], truth_c[0:2, 0:5] = 1, 1
    truth_i[5:7, 5:8], truth_c[5:7, 5:8] = 2, 1
    pred_i, pred_c = np.zeros((8, 8), int), np.zeros((8, 8), int)
    pred_i[0:2, 0:3], pred_c[0:2, 0:3] = 1, 1
    pred_i[3:5, 0:2], pred_c[3:5, 0:2] = 3, 1
    c = panoptic_quality(MaskPair(pred_i, pred_c), MaskPair(truth_i, truth_c)).per_class[0]
    ok = (c.tp, c.fp, c.fn) == (1, 1, 1) and c.ious == [0.6] and c.pq == 0.3
    record(6, ok, f"TP {c.tp} (IoU {c.ious}), FP {c.fp}, FN {c.fn} -> PQ {c.pq!r}")
    assert ok


# --- desk-scale experiments -------------------------------------------------


@pytest.fixture(scope="module")
def experiments(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    cfg = ExperimentConfig.load(CONFIG)
    cache = {}
    start = time.perf_counter()
    fine = experiment_pretrain_finetune(cfg, seeds=SEEDS, out_dir=out, cache=cache)
    general = experiment_generalization(cfg, seeds=SEEDS, out_dir=out, cache=cache)
    return {"cfg": cfg, "out": out, "cache": cache, "fine": fine, "general": general,
            "elapsed": time.perf_counter() - start}


def _scores(comp):
    return ", ".join(f"seed {s}: {comp.scores(comp.treatment)[s]:.3f} vs {comp.scores(comp.baseline)[s]:.3f}"
                     for s in SEEDS)


def test_criterion_07_pretraining_helps_on_b(experiments):
    comp = experiments["fine"]
    ok = comp.wins >= 2 and comp.mean("A->B") >= comp.mean("B-only") and experiments["elapsed"] < 1800
    record(7, ok, f"A->B vs B-only on B test: {_scores(comp)}; means {comp.mean('A->B'):.3f} vs "
                  f"{comp.mean('B-only'):.3f}; {comp.wins}/3 wins; {experiments['elapsed']:.0f}s")
    assert comp.wins >= 2
    assert comp.mean("A->B") >= comp.mean("B-only")
    assert experiments["elapsed"] < 1800


def test_criterion_08_fine_tuning_generalizes_to_c(experiments):
    comp = experiments["general"]
    ok = comp.wins >= 2
    record(8, ok, f"A->B vs A-only on all of C: {_scores(comp)}; {comp.wins}/3 wins")
    assert ok


def _val_at(rows, episode, epoch):
    for r in rows:
        if int(r["episode"]) == episode and int(r["epoch"]) == epoch and r["event"].startswith("epoch"):
            return float(r["val_loss"])
    raise AssertionError(f"no validation row for episode {episode} epoch {epoch}")


def test_criterion_09_loss_drop_at_dataset_switch(experiments):
    out = experiments["out"]
    lines, ok = [], True
    for seed in SEEDS:
        ab = read_log(out / f"seed{seed}" / "A-B" / "metrics.tsv")
        scratch = read_log(out / f"seed{seed}" / "B" / "metrics.tsv")
        first_b = _val_at(ab, 1, 1)
        scratch_same = _val_at(scratch, 0, 1)
        scratch_best = min(float(r["val_loss"]) for r in scratch if r["event"].startswith("epoch"))
        ok &= first_b < scratch_same
        lines.append(f"seed {seed}: {first_b:.3f} < {scratch_same:.3f} (scratch best {scratch_best:.3f})")
    record(9, ok, "val loss after 1 epoch on B, A->B vs from scratch: " + "; ".join(lines))
    assert ok


def test_criterion_10_end_to_end_determinism(experiments, tmp_path):
    cfg = experiments["cfg"]
    seed = SEEDS[0]
    runs = []
    for attempt in ("first", "second"):
        root = tmp_path / attempt
        for name in ("A", "B"):
            spec = cfg.datasets[name]
            cut = "leaves" if spec["cut"] == "leaves" else ",".join(spec["cut"])
            assert cli(["gen-data", "--cut", cut, "--seed", str(derive_seed(seed, "data", name)),
                        "--images", str(spec["images"]), "--size", str(cfg.patch_size),
                        "--out", str(root / "data" / name), "--name", name]) == 0
        loss = cfg.loss_params()
        schedule = {
            "seed": seed,
            "patience": cfg.patience,
            "widths": list(cfg.widths),
            "loss": {"lambda_ce": loss.lambda_ce, "lambda_ft": loss.lambda_ft, "alpha": loss.tversky.alpha,
                     "gamma": loss.tversky.gamma, "epsilon": loss.tversky.epsilon},
            "episodes": [dict(cfg.episodes[n], dataset=f"data/{n}") for n in ("A", "B")],
        }
        (root / "schedule.json").write_text(json.dumps(schedule))
        assert cli(["train", "--schedule", str(root / "schedule.json"), "--out", str(root / "run")]) == 0
        assert cli(["eval", "--checkpoint", str(root / "run" / "final.ckpt"), "--data", str(root / "data" / "B"),
                    "--split", "test", "--report", str(root / "report.tsv")]) == 0
        runs.append(root)

    files = ["data/A/manifest.json", "data/B/manifest.json", "run/final.ckpt", "run/metrics.tsv", "report.tsv"]
    same = [f for f in files if (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()]
    # the library run of criterion 7 must agree with the command-line run too
    lib = experiments["out"] / f"seed{seed}"
    cross = {
        "manifest A": (lib / "data" / "A" / "manifest.json", runs[0] / "data/A/manifest.json"),
        "manifest B": (lib / "data" / "B" / "manifest.json", runs[0] / "data/B/manifest.json"),
        "checkpoint": (lib / "A-B" / "final.ckpt", runs[0] / "run/final.ckpt"),
        "metrics log": (lib / "A-B" / "metrics.tsv", runs[0] / "run/metrics.tsv"),
    }
    agree = [k for k, (a, b) in cross.items() if a.read_bytes() == b.read_bytes()]
    ok = len(same) == len(files) and len(agree) == len(cross)
    record(10, ok, f"{len(same)}/{len(files)} artifacts byte-identical across reruns; "
                   f"{len(agree)}/{len(cross)} identical to the library run")
    assert same == files
    assert agree == list(cross)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
