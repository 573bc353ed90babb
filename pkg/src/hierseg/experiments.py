"""Two-arm experiments on synthetic dataset triads.

``pretrain_finetune``: does pretraining on A (coarse cut, many images)
before fine-tuning on B (fine cut, few images) beat training on B alone,
measured on B's test split?

``generalization``: does fine-tuning an A-trained model on B help on a
third dataset C (its own cut, shifted appearance) that is never trained on?

Both share a cache of trained arms so the A episode is trained once per
seed and reused by every arm that starts with it.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .diffnet import MicroUNet, save_checkpoint
from .hierarchy import ClassTree, bundled_tree, load_hierarchy, validate_cut
from .pipeline import Episode, RunResult, Schedule, evaluate, run_schedule, write_log
from .losses import CombinedLossParams, TverskyParams
from .seeding import derive_seed
from .synthdata import Dataset, default_appearance, generate_dataset, load_dataset, shift_appearance

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("arm", "seed", "test_dataset", "mean_pq")


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    datasets: dict
    episodes: dict
    tree: Optional[str] = None
    patch_size: int = 64
    patience: int = 5
    loss: dict = field(default_factory=dict)
    widths: tuple[int, int, int] = (8, 16, 32)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        d = json.loads(path.read_text())
        if d.get("tree"):
            tree_path = Path(d["tree"])
            d["tree"] = str(tree_path if tree_path.is_absolute() else path.parent / tree_path)
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"datasets", "episodes", "tree", "patch_size", "patience", "loss", "widths"}
        unknown = set(d) - known - {"comment"}
        if unknown:
            raise ExperimentError(f"unknown experiment config keys: {sorted(unknown)}")
        d = {k: v for k, v in d.items() if k in known}
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def class_tree(self) -> ClassTree:
        return load_hierarchy(self.tree) if self.tree else bundled_tree()

    def loss_params(self) -> CombinedLossParams:
        loss = self.loss
        return CombinedLossParams(
            lambda_ce=float(loss.get("lambda_ce", 1.0)),
            lambda_ft=float(loss.get("lambda_ft", 1.0)),
            tversky=TverskyParams(
                alpha=float(loss.get("alpha", 0.7)),
                gamma=float(loss.get("gamma", 4.0 / 3.0)),
                epsilon=float(loss.get("epsilon", 1e-6)),
            ),
        )


@dataclass
class Comparison:
    kind: str
    baseline: str
    treatment: str
    rows: list[tuple[str, int, str, float]]

    def scores(self, arm: str) -> dict[int, float]:
        return {seed: pq for a, seed, _, pq in self.rows if a == arm}

    def mean(self, arm: str) -> float:
        return float(np.mean(list(self.scores(arm).values())))

    @property
    def wins(self) -> int:
        """Seeds on which the treatment arm is at least as good."""
        base, treat = self.scores(self.baseline), self.scores(self.treatment)
        return sum(treat[s] >= base[s] for s in base)

    @property
    def n_seeds(self) -> int:
        return len(self.scores(self.baseline))

    def summary(self) -> str:
        return (
            f"{self.kind}: {self.treatment} mean PQ {self.mean(self.treatment):.4f} vs "
            f"{self.baseline} {self.mean(self.baseline):.4f}; "
            f"{self.treatment} >= {self.baseline} on {self.wins}/{self.n_seeds} seeds"
        )

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            for arm, seed, test, pq in self.rows:
                writer.writerow([arm, seed, test, repr(float(pq))])


def _cut_names(tree: ClassTree, spec) -> list[str]:
    if spec == "leaves":
        return tree.leaf_names
    return list(spec)


def prepare_datasets(cfg: ExperimentConfig, seed: int, out_dir, names: Sequence[str]) -> dict[str, Dataset]:
    """Generate (once) and load the named datasets for one seed.

    A dataset entry may say ``"same_as": "A"`` to reuse another entry's
    images, seed and cut, and ``"appearance_shift": s`` to apply a
    seed-dependent stain shift of strength ``s``.
    """
    tree = cfg.class_tree()
    base = default_appearance(tree)
    out = {}
    for name in names:
        spec = cfg.datasets[name]
        source = spec.get("same_as", name)
        src = cfg.datasets[source]
        folder = Path(out_dir) / f"seed{seed}" / "data" / source
        if not (folder / "manifest.json").is_file():
            appearance = base
            if src.get("appearance_shift"):
                appearance = shift_appearance(base, derive_seed(seed, "shift", source), float(src["appearance_shift"]))
            generate_dataset(
                tree,
                validate_cut(tree, _cut_names(tree, src["cut"])),
                appearance,
                derive_seed(seed, "data", source),
                int(src["images"]),
                cfg.patch_size,
                folder,
                name=source,
            )
        out[name] = load_dataset(folder)
    return out


def train_arm(cfg: ExperimentConfig, seed: int, arm: Sequence[str], datasets: dict[str, Dataset], out_dir,
              cache: Optional[dict] = None) -> RunResult:
    """Train the episode sequence ``arm`` (dataset names), reusing cached prefixes."""
    arm = tuple(arm)
    cache = {} if cache is None else cache
    key = (seed, arm)
    if key in cache:
        return cache[key]
    episodes = tuple(
        Episode(dataset=str(datasets[name].path), **cfg.episodes[cfg.datasets[name].get("same_as", name)])
        for name in arm
    )
    schedule = Schedule(episodes=episodes, patience=cfg.patience, seed=seed, loss=cfg.loss_params(),
                        widths=cfg.widths)
    by_path = {str(datasets[name].path): datasets[name] for name in arm}

    prefix = cache.get((seed, arm[:-1])) if len(arm) > 1 else None
    if prefix is not None:
        net = MicroUNet(prefix.net.config)
        net.set_state(prefix.episode_states[-1])
        tail = run_schedule(schedule, net, datasets=by_path, first_episode=len(arm) - 1)
        for row in tail.log:
            row["step"] += prefix.steps
        result = RunResult(
            net=tail.net,
            tree=tail.tree,
            log=prefix.log + tail.log,
            steps=prefix.steps + tail.steps,
            episode_states=prefix.episode_states + tail.episode_states,
        )
    else:
        result = run_schedule(schedule, datasets=by_path)

    _store(cache, seed, arm, result, out_dir)
    # every leading part of the arm is itself a finished run
    for n in range(1, len(arm)):
        if (seed, arm[:n]) not in cache:
            rows = [r for r in result.log if r["episode"] < n]
            net = MicroUNet(result.net.config)
            net.set_state(result.episode_states[n - 1])
            partial = RunResult(net=net, tree=result.tree, log=rows, steps=rows[-1]["step"],
                                episode_states=result.episode_states[:n])
            _store(cache, seed, arm[:n], partial, out_dir)
    return result


def _store(cache: dict, seed: int, arm: tuple, result: RunResult, out_dir) -> None:
    folder = Path(out_dir) / f"seed{seed}" / "-".join(arm)
    folder.mkdir(parents=True, exist_ok=True)
    write_log(folder / "metrics.tsv", result.log)
    result.checkpoint = folder / "final.ckpt"
    save_checkpoint(result.checkpoint, result.net, tree_fingerprint=result.tree.fingerprint,
                    leaf_names=result.tree.leaf_names, step=result.steps)
    cache[(seed, arm)] = result


def _seeds(seeds: Union[int, Sequence[int]]) -> list[int]:
    return list(range(1, seeds + 1)) if isinstance(seeds, int) else list(seeds)


def experiment_pretrain_finetune(cfg: ExperimentConfig, seeds: Union[int, Sequence[int]] = 3, out_dir="runs",
                                 cache: Optional[dict] = None) -> Comparison:
    """{B only} vs {A then B}, both scored on B's test split."""
    cache = {} if cache is None else cache
    rows = []
    for seed in _seeds(seeds):
        ds = prepare_datasets(cfg, seed, out_dir, ["A", "B"])
        for label, arm in (("B-only", ("B",)), ("A->B", ("A", "B"))):
            run = train_arm(cfg, seed, arm, ds, out_dir, cache)
            pq = evaluate(run.net, ds["B"], "test").mean_pq
            log.info("seed %d %s: PQ on B test %.4f", seed, label, pq)
            rows.append((label, seed, "B:test", pq))
    comp = Comparison("pretrain_finetune", "B-only", "A->B", rows)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    comp.write(Path(out_dir) / "finetune_table.tsv")
    return comp


def experiment_generalization(cfg: ExperimentConfig, seeds: Union[int, Sequence[int]] = 3, out_dir="runs",
                              cache: Optional[dict] = None) -> Comparison:
    """{A only} vs {A then B}, both scored on every image of unseen C."""
    cache = {} if cache is None else cache
    rows = []
    for seed in _seeds(seeds):
        ds = prepare_datasets(cfg, seed, out_dir, ["A", "B", "C"])
        for label, arm in (("A-only", ("A",)), ("A->B", ("A", "B"))):
            run = train_arm(cfg, seed, arm, ds, out_dir, cache)
            pq = evaluate(run.net, ds["C"], "all").mean_pq
            log.info("seed %d %s: PQ on C %.4f", seed, label, pq)
            rows.append((label, seed, "C:all", pq))
    comp = Comparison("generalization", "A-only", "A->B", rows)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    comp.write(Path(out_dir) / "generalize_table.tsv")
    return comp
