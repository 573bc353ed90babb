"""
Controls
========

Two sanity runs. With A = B the two finetune arms see the same data and
should land close together. With C drawn from A's own distribution,
fine-tuning on B should not cost much PQ on C.
"""

import sys
from pathlib import Path

from hierseg.experiments import ExperimentConfig, experiment_generalization, experiment_pretrain_finetune

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 1
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs/controls")
configs = Path(__file__).resolve().parents[1] / "configs"

same = experiment_pretrain_finetune(ExperimentConfig.load(configs / "control_a_equals_b.json"), seeds, out / "a_equals_b")
print(same.summary())
print("gap:", round(same.mean("A->B") - same.mean("B-only"), 4))

domain = experiment_generalization(ExperimentConfig.load(configs / "control_same_domain.json"), seeds, out / "same_domain")
print(domain.summary())
print("drop on C after fine-tuning:", round(domain.mean("A-only") - domain.mean("A->B"), 4))
