"""Episode-based training over several datasets, evaluation and experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .diffnet import AdamState, MicroUNet, NetConfig, adam_step, load_checkpoint, save_checkpoint
from .diffnet.model import forward_backward
from .diffnet.optim import NonFiniteGradient
from .hierarchy import ClassTree
from .losses import BACKGROUND, CombinedLossParams, TargetField, TverskyParams, combined_loss, softmax
from .metrics import MaskPair, PQReport, aggregate_reports, classify_instances, label_instances, panoptic_quality, write_report
from .seeding import derive_seed
from .synthdata import Dataset, apply_augmentation, draw_augmentation, load_dataset

log = logging.getLogger(__name__)

LOG_COLUMNS = ("episode", "epoch", "step", "dataset", "train_loss", "val_loss", "event", "cut")


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during training."""


class ScheduleError(ValueError):
    """Inconsistent schedule: mismatched trees, bad values, missing data."""


@dataclass(frozen=True)
class Episode:
    dataset: str
    max_epochs: int = 10
    learning_rate: float = 3e-3
    batch_size: int = 4
    augment: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ScheduleError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ScheduleError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Schedule:
    episodes: tuple[Episode, ...]
    patience: int = 5
    seed: int = 0
    loss: CombinedLossParams = field(default_factory=CombinedLossParams)
    evaluate: tuple[str, ...] = ()
    widths: tuple[int, int, int] = (8, 16, 32)

    def __post_init__(self):
        if self.patience < 1:
            raise ScheduleError(f"patience must be >= 1, got {self.patience}")
        if not self.episodes:
            raise ScheduleError("a schedule needs at least one episode")

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "Schedule":
        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() or base is None else base / p)

        loss = d.get("loss", {})
        return cls(
            episodes=tuple(Episode(**{**e, "dataset": resolve(e["dataset"])}) for e in d["episodes"]),
            patience=int(d.get("patience", 5)),
            seed=int(d.get("seed", 0)),
            loss=CombinedLossParams(
                lambda_ce=float(loss.get("lambda_ce", 1.0)),
                lambda_ft=float(loss.get("lambda_ft", 1.0)),
                tversky=TverskyParams(
                    alpha=float(loss.get("alpha", 0.7)),
                    gamma=float(loss.get("gamma", 4.0 / 3.0)),
                    epsilon=float(loss.get("epsilon", 1e-6)),
                ),
            ),
            evaluate=tuple(resolve(p) for p in d.get("evaluate", [])),
            widths=tuple(int(w) for w in d.get("widths", (8, 16, 32))),
        )

    @classmethod
    def load(cls, path) -> "Schedule":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"{path}: malformed schedule at line {exc.lineno}: {exc.msg}") from None
        except OSError as exc:
            raise ScheduleError(f"cannot read schedule {path}: {exc}") from None
        try:
            return cls.from_dict(d, base=path.parent)
        except (KeyError, TypeError) as exc:
            raise ScheduleError(f"{path}: bad schedule ({exc})") from None


@dataclass
class RunResult:
    net: MicroUNet
    tree: ClassTree
    log: list[dict]
    steps: int
    episode_states: list[dict]
    checkpoint: Optional[Path] = None


def pixel_targets(masks: Sequence[MaskPair], cut) -> TargetField:
    labels = np.concatenate([m.class_map.reshape(-1) for m in masks]) - 1
    labels[labels < 0] = BACKGROUND
    return TargetField(labels, cut)


def _loss_fn(targets: TargetField, tree: ClassTree, params: CombinedLossParams):
    def fn(scores: np.ndarray):
        flat = scores.reshape(-1, scores.shape[-1])
        loss, grad = combined_loss(softmax(flat), targets, tree, params)
        return loss, grad.reshape(scores.shape)

    return fn


def dataset_loss(net: MicroUNet, ds: Dataset, split: str, params: CombinedLossParams, batch_size: int = 16) -> float:
    """Mean combined loss over every pixel of a split, no augmentation."""
    idx = ds.indices(split)
    if idx.size == 0:
        raise ScheduleError(f"split {split!r} of {ds.name} is empty")
    total, count = 0.0, 0
    for start in range(0, idx.size, batch_size):
        chunk = idx[start : start + batch_size]
        out, _ = net.graph(ds.images[chunk])
        flat = out.value.reshape(-1, out.value.shape[-1])
        targets = pixel_targets([ds.masks[i] for i in chunk], ds.cut)
        loss, _ = combined_loss(softmax(flat), targets, ds.tree, params)
        total += loss * flat.shape[0]
        count += flat.shape[0]
    return total / count


def _record(log_rows, **row):
    log_rows.append({k: row.get(k, "") for k in LOG_COLUMNS})


def run_schedule(
    schedule: Schedule,
    net: Optional[MicroUNet] = None,
    *,
    resume=None,
    out_dir=None,
    datasets: Optional[dict[str, Dataset]] = None,
    first_episode: int = 0,
) -> RunResult:
    """Train one network through every episode in order.

    Each epoch shuffles the episode's training split, trains with the
    combined loss at that dataset's cut and then measures validation loss.
    An episode ends after ``patience`` epochs without improvement or at
    ``max_epochs``; either way the best-validation weights are restored
    before the next episode starts.  Nothing is re-initialised between
    episodes.

    ``first_episode`` skips leading episodes (their weights must already
    be in ``net``); random streams are keyed by episode index so the
    remaining episodes run exactly as in a full run.
    """
    datasets = dict(datasets or {})
    for ep in schedule.episodes:
        if ep.dataset not in datasets:
            datasets[ep.dataset] = load_dataset(ep.dataset)
    trees = {datasets[ep.dataset].tree.fingerprint for ep in schedule.episodes}
    if len(trees) != 1:
        raise ScheduleError(f"episode datasets use {len(trees)} different class trees")
    tree = datasets[schedule.episodes[0].dataset].tree

    if resume is not None:
        net, header = load_checkpoint(resume)
        if header["tree_fingerprint"] != tree.fingerprint:
            raise ScheduleError(f"checkpoint {resume} was trained on tree {header['tree_fingerprint']}, not {tree.fingerprint}")
    if net is None:
        net = MicroUNet(NetConfig(tree.n_leaves + 1, schedule.widths), seed=derive_seed(schedule.seed, "init"))
    if net.config.n_outputs != tree.n_leaves + 1:
        raise ScheduleError(f"network emits {net.config.n_outputs} channels but the tree needs {tree.n_leaves + 1}")

    rows: list[dict] = []
    steps = 0
    states = []
    for e_idx, ep in enumerate(schedule.episodes):
        if e_idx < first_episode:
            continue
        ds = datasets[ep.dataset]
        cut_fp = ds.cut.fingerprint
        train_idx = ds.indices("train")
        if train_idx.size == 0:
            raise ScheduleError(f"{ds.name} has no training images")
        opt = AdamState(lr=ep.learning_rate)
        start_val = dataset_loss(net, ds, "val", schedule.loss)
        _record(rows, episode=e_idx, epoch=0, step=steps, dataset=ds.name, val_loss=repr(float(start_val)),
                event="episode_start", cut=cut_fp)
        best_val, best_state, stale = math.inf, net.get_state(), 0
        for epoch in range(1, ep.max_epochs + 1):
            order = np.random.default_rng(derive_seed(schedule.seed, "shuffle", e_idx, epoch)).permutation(train_idx)
            for b_start in range(0, order.size, ep.batch_size):
                chunk = order[b_start : b_start + ep.batch_size]
                images, masks = [], []
                for i in chunk:
                    img, pair = ds.images[i], ds.masks[i]
                    if ep.augment:
                        params = draw_augmentation(derive_seed(schedule.seed, "augment", e_idx, epoch, int(i)))
                        img, pair = apply_augmentation(img, pair, params)
                    images.append(img)
                    masks.append(pair)
                targets = pixel_targets(masks, ds.cut)
                loss, grads = forward_backward(net, np.stack(images), _loss_fn(targets, tree, schedule.loss))
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite training loss in episode {e_idx}, epoch {epoch}")
                try:
                    adam_step(opt, net.params, grads)
                except NonFiniteGradient as exc:
                    raise TrainingError(str(exc)) from None
                steps += 1
                _record(rows, episode=e_idx, epoch=epoch, step=steps, dataset=ds.name, train_loss=repr(float(loss)),
                        event="step", cut=cut_fp)
            val = dataset_loss(net, ds, "val", schedule.loss)
            if not math.isfinite(val):
                raise TrainingError(f"non-finite validation loss in episode {e_idx}, epoch {epoch}")
            improved = val < best_val
            if improved:
                best_val, best_state, stale = val, net.get_state(), 0
            else:
                stale += 1
            _record(rows, episode=e_idx, epoch=epoch, step=steps, dataset=ds.name, val_loss=repr(float(val)),
                    event="epoch" if improved else "epoch_no_improve", cut=cut_fp)
            log.info("episode %d epoch %d val %.5f%s", e_idx, epoch, val, "" if improved else " (no improvement)")
            if stale >= schedule.patience:
                _record(rows, episode=e_idx, epoch=epoch, step=steps, dataset=ds.name, event="early_stop", cut=cut_fp)
                break
        net.set_state(best_state)
        _record(rows, episode=e_idx, epoch=epoch, step=steps, dataset=ds.name, val_loss=repr(float(best_val)),
                event="restore_best", cut=cut_fp)
        states.append(net.get_state())

    result = RunResult(net=net, tree=tree, log=rows, steps=steps, episode_states=states)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_log(out / "metrics.tsv", rows)
        result.checkpoint = out / "final.ckpt"
        save_checkpoint(result.checkpoint, net, tree_fingerprint=tree.fingerprint, leaf_names=tree.leaf_names,
                        step=steps)
    return result


def write_log(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


# --- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    dataset: str
    split: str
    reports: list[tuple[str, PQReport]]
    pooled: PQReport
    class_names: tuple[str, ...]

    @property
    def mean_pq(self) -> float:
        value = self.pooled.mean_pq
        return 0.0 if value is None else value


def predict_masks(net: MicroUNet, images: np.ndarray, tree: ClassTree, cut, batch_size: int = 16) -> list[MaskPair]:
    """Instances are 4-connected components of pixels whose background
    probability is below one half; each is classified at ``cut``."""
    out = []
    for start in range(0, len(images), batch_size):
        scores, _ = net.graph(images[start : start + batch_size])
        probs = softmax(scores.value)
        for p in probs:
            instances = label_instances(p[..., -1] < 0.5)
            classes = classify_instances(instances, p, tree, cut)
            out.append(MaskPair(instances, classes))
    return out


def evaluate(
    checkpoint: Union[str, Path, MicroUNet],
    dataset: Union[str, Path, Dataset],
    split: str = "test",
    *,
    predictions: Optional[Sequence[MaskPair]] = None,
    report_path=None,
) -> EvalResult:
    """Panoptic quality of a network on one split, at the dataset's cut.

    ``predictions`` bypasses the network (used to check the metric
    plumbing against ground truth).
    """
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    idx = ds.indices(split)
    if idx.size == 0:
        raise ScheduleError(f"split {split!r} of {ds.name} is empty")
    if predictions is None:
        if isinstance(checkpoint, MicroUNet):
            net = checkpoint
        else:
            net, header = load_checkpoint(checkpoint)
            if header["tree_fingerprint"] != ds.tree.fingerprint:
                raise ScheduleError(
                    f"checkpoint tree {header['tree_fingerprint']} does not match dataset tree {ds.tree.fingerprint}"
                )
        predictions = predict_masks(net, ds.images[idx], ds.tree, ds.cut)
    reports = []
    for i, pred in zip(idx, predictions):
        name = ds.manifest.files[i]["image"]
        reports.append((name, panoptic_quality(pred, ds.masks[i], n_classes=ds.cut.m)))
    if report_path is not None:
        pooled = write_report(report_path, reports, ds.cut.names)
    else:
        pooled = aggregate_reports(rep for _, rep in reports)
    return EvalResult(dataset=ds.name, split=split, reports=reports, pooled=pooled, class_names=ds.cut.names)
