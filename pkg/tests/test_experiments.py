import csv

import pytest

from hierseg.experiments import (
    ExperimentConfig,
    ExperimentError,
    experiment_generalization,
    experiment_pretrain_finetune,
    prepare_datasets,
    train_arm,
)
from hierseg.pipeline import read_log

SMALL = {
    "patch_size": 64,
    "patience": 2,
    "datasets": {
        "A": {"cut": ["epithelial", "inflammatory", "connective", "dead"], "images": 12},
        "B": {"cut": "leaves", "images": 8},
        "C": {"cut": ["epithelial", "lymphocyte", "connective"], "images": 4, "appearance_shift": 1.0},
    },
    "episodes": {"A": {"max_epochs": 2}, "B": {"max_epochs": 2}},
}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = ExperimentConfig.from_dict(SMALL)
    cache = {}
    fine = experiment_pretrain_finetune(cfg, seeds=2, out_dir=out, cache=cache)
    general = experiment_generalization(cfg, seeds=2, out_dir=out, cache=cache)
    return cfg, out, cache, fine, general


def test_tables(runs):
    _, out, _, fine, general = runs
    for name, comp, arms, test in (("finetune_table.tsv", fine, {"B-only", "A->B"}, "B:test"),
                                   ("generalize_table.tsv", general, {"A-only", "A->B"}, "C:all")):
        with open(out / name) as fh:
            rows = list(csv.DictReader(fh, delimiter="\t"))
        assert list(rows[0]) == ["arm", "seed", "test_dataset", "mean_pq"]
        assert {r["arm"] for r in rows} == arms
        assert len(rows) == 4 and all(r["test_dataset"] == test for r in rows)
        assert comp.n_seeds == 2 and 0 <= comp.wins <= 2
        assert "seeds" in comp.summary()


def test_cache_reuses_the_pretraining_episode(runs):
    cfg, out, cache, _, general = runs
    assert set(cache) == {(s, arm) for s in (1, 2) for arm in (("A",), ("B",), ("A", "B"))}
    full = cache[(1, ("A", "B"))]
    alone = cache[(1, ("A",))]
    assert alone.log == [r for r in full.log if r["episode"] == 0]
    for k in alone.net.params:
        assert alone.net.params[k].tobytes() == full.episode_states[0][k].tobytes()
    logged = read_log(out / "seed1" / "A-B" / "metrics.tsv")
    steps = [int(r["step"]) for r in logged]
    assert steps == sorted(steps)
    assert (out / "seed1" / "A" / "final.ckpt").is_file()


def test_prefix_run_matches_a_fresh_full_run(runs, tmp_path):
    cfg, out, cache, _, _ = runs
    data = prepare_datasets(cfg, 1, out, ["A", "B"])
    fresh = train_arm(cfg, 1, ("A", "B"), data, tmp_path)
    cached = cache[(1, ("A", "B"))]
    assert [{k: v for k, v in r.items()} for r in fresh.log] == cached.log
    assert all(fresh.net.params[k].tobytes() == cached.net.params[k].tobytes() for k in fresh.net.params)


def test_datasets_share_appearance_except_shifted(runs):
    cfg, out, _, _, _ = runs
    data = prepare_datasets(cfg, 1, out, ["A", "B", "C"])
    assert data["A"].manifest.appearance_hash == data["B"].manifest.appearance_hash
    assert data["C"].manifest.appearance_hash != data["A"].manifest.appearance_hash
    assert data["A"].manifest.seed != data["B"].manifest.seed


def test_same_as_reuses_data(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "datasets": {"A": {"cut": "leaves", "images": 4}, "B": {"same_as": "A"}},
        "episodes": {"A": {"max_epochs": 1}},
    })
    data = prepare_datasets(cfg, 1, tmp_path, ["A", "B"])
    assert data["A"].path == data["B"].path


def test_unknown_keys_rejected():
    with pytest.raises(ExperimentError, match="bogus"):
        ExperimentConfig.from_dict({"datasets": {}, "episodes": {}, "bogus": 1})


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("desk.json", "control_same_domain.json", "control_a_equals_b.json", "paper_scale.json"):
        cfg = ExperimentConfig.load(root / name)
        assert set(cfg.datasets) >= {"A", "B"}
