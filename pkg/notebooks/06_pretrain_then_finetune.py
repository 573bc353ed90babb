"""
Pretraining on a coarse dataset
===============================

Both desk experiments on the synthetic triad: does an A->B schedule beat
B alone on B's test split, and does it beat A alone on the unseen C?
Pass a seed count (default 1) and an output directory. Three seeds take
roughly five minutes on one core.
"""

import logging
import sys
from pathlib import Path

from hierseg.experiments import ExperimentConfig, experiment_generalization, experiment_pretrain_finetune
from hierseg.pipeline import read_log

logging.basicConfig(level=logging.INFO, format="%(message)s")
seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 1
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs/desk")
cfg = ExperimentConfig.load(Path(__file__).resolve().parents[1] / "configs" / "desk.json")

cache = {}
fine = experiment_pretrain_finetune(cfg, seeds=seeds, out_dir=out, cache=cache)
general = experiment_generalization(cfg, seeds=seeds, out_dir=out, cache=cache)
print(fine.summary())
print(general.summary())

# validation loss around the switch from A to B
for seed in range(1, seeds + 1):
    rows = [r for r in read_log(out / f"seed{seed}" / "A-B" / "metrics.tsv") if r["val_loss"]]
    scratch = [r for r in read_log(out / f"seed{seed}" / "B" / "metrics.tsv") if r["val_loss"]]
    first_b = next(float(r["val_loss"]) for r in rows if r["episode"] == "1" and r["epoch"] == "1")
    scratch_1 = next(float(r["val_loss"]) for r in scratch if r["epoch"] == "1")
    print(f"seed {seed}: val loss after one B epoch {first_b:.3f} (pretrained) vs {scratch_1:.3f} (scratch)")
