import json
import os

import numpy as np
import pytest

from gtattack.cli import main as cli_main
from gtattack.experiment import (
    ConfigError,
    ExperimentConfig,
    ResultsTable,
    ablation_grid,
    cmd_attack,
    cmd_generate,
    cmd_report,
    cmd_train,
    load_report_csv,
    toggles_label,
)
from gtattack.graphs import load_dataset
from gtattack.models import RelaxToggles, load_checkpoint


def tiny_config(tmp_path, kind="cluster", **over):
    doc = {
        "dataset": {
            "kind": kind,
            "seed": 5,
            "n_train": 4,
            "n_val": 2,
            "n_test": 3,
        },
        "models": [
            {"arch": "gcn", "epochs": 1, "lr": 0.003, "seed": 0},
        ],
        "budgets": [0.02, 0.05],
        "seeds": [0, 1],
        "n_attack_graphs": 2,
        "attack": {"steps": 4, "block_size": 100, "n_discrete_samples": 2, "base_lr": 500.0},
        "out": str(tmp_path / "run"),
    }
    if kind == "cluster":
        doc["dataset"]["nodes_per_cluster_range"] = [4, 5]
    else:
        doc["dataset"]["n_nodes_range"] = [6, 9]
        doc["attack"]["max_candidates"] = 16
    doc.update(over)
    return doc


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------------------
# config validation


def test_budgets_must_ascend(tmp_path):
    doc = tiny_config(tmp_path, budgets=[0.05, 0.01])
    with pytest.raises(ConfigError, match="ascending"):
        ExperimentConfig.from_doc(doc)


def test_seeds_must_be_nonempty(tmp_path):
    doc = tiny_config(tmp_path, seeds=[])
    with pytest.raises(ConfigError, match="seeds"):
        ExperimentConfig.from_doc(doc)


def test_results_table_rejects_out_of_range_accuracy():
    t = ResultsTable()
    with pytest.raises(ValueError):
        t.add("gcn", "adaptive", 0.01, "all", 0, 120.0)


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_dataset(tmp_path):
    cfg = ExperimentConfig.from_doc(tiny_config(tmp_path))
    ds = cmd_generate(cfg)
    assert len(ds.graphs) == 9
    reloaded = load_dataset(os.path.join(cfg.out, "dataset"))
    assert reloaded.split == ds.split
    np.testing.assert_array_equal(reloaded.graphs[0].adjacency, ds.graphs[0].adjacency)


def test_generate_deterministic(tmp_path):
    cfg1 = ExperimentConfig.from_doc(tiny_config(tmp_path, out=str(tmp_path / "a")))
    cfg2 = ExperimentConfig.from_doc(tiny_config(tmp_path, out=str(tmp_path / "b")))
    cmd_generate(cfg1)
    cmd_generate(cfg2)
    f1 = open(os.path.join(cfg1.out, "dataset", "graph_00000.json"), "rb").read()
    f2 = open(os.path.join(cfg2.out, "dataset", "graph_00000.json"), "rb").read()
    assert f1 == f2


def test_tree_dataset_label_balance(tmp_path):
    doc = tiny_config(tmp_path, kind="tree")
    doc["dataset"].update(n_train=6, n_val=2, n_test=2)
    cfg = ExperimentConfig.from_doc(doc)
    ds = cmd_generate(cfg)
    labels = [g.graph_label for g in ds.graphs]
    assert labels.count(0) == 5 and labels.count(1) == 5


# ---------------------------------------------------------------------------
# train


def test_train_zero_epochs_saves_random_init(tmp_path):
    doc = tiny_config(tmp_path)
    doc["models"][0]["epochs"] = 0
    cfg = ExperimentConfig.from_doc(doc)
    models = cmd_train(cfg)
    path = os.path.join(cfg.out, "checkpoints", "gcn.json")
    assert os.path.exists(path)
    fresh = load_checkpoint(path)
    from gtattack.models import build_model

    ref = build_model("gcn", "node", 8, 6, seed=0)
    for k in ref.params:
        np.testing.assert_array_equal(fresh.params[k].data, ref.params[k].data)


def test_train_checkpoint_bytes_deterministic(tmp_path):
    doc = tiny_config(tmp_path)
    cfg_a = ExperimentConfig.from_doc({**doc, "out": str(tmp_path / "a")})
    cfg_b = ExperimentConfig.from_doc({**doc, "out": str(tmp_path / "b")})
    cmd_train(cfg_a)
    cmd_train(cfg_b)
    b1 = open(os.path.join(cfg_a.out, "checkpoints", "gcn.json"), "rb").read()
    b2 = open(os.path.join(cfg_b.out, "checkpoints", "gcn.json"), "rb").read()
    assert b1 == b2


# ---------------------------------------------------------------------------
# attack sweep + report


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("sweep")
    doc = tiny_config(tmp_path)
    cfg = ExperimentConfig.from_doc(write_and_load(tmp_path, doc))
    cmd_train(cfg)
    table = cmd_attack(cfg)
    return cfg, table


def write_and_load(tmp_path, doc):
    return doc


def test_attack_table_shape(swept):
    cfg, table = swept
    # per (model, budget, seed): adaptive + random rows
    adaptive = [r for r in table.rows if r["attack"] == "adaptive"]
    assert len(adaptive) == len(cfg.budgets) * len(cfg.seeds)
    rand = [r for r in table.rows if r["attack"] == "random"]
    assert len(rand) == len(adaptive)
    clean = [r for r in table.rows if r["attack"] == "clean"]
    assert len(clean) == len(cfg.seeds)
    assert all(0 <= r["accuracy"] <= 100 for r in table.rows)


def test_attack_writes_perturbations(swept):
    cfg, _ = swept
    files = os.listdir(os.path.join(cfg.out, "perturbations"))
    # 1 model x 2 budgets x 2 seeds x 2 graphs x {adaptive, random}
    assert len(files) == 16


def test_report_csv_golden_columns(swept):
    cfg, _ = swept
    written = cmd_report(cfg.out)
    rows = load_report_csv(written[0])
    assert list(rows[0].keys()) == ["budget", "model", "attack", "mean", "std"]
    # sorted by model, attack, budget
    keys = [(r["model"], r["attack"], float(r["budget"])) for r in rows if r["attack"] != "strongest"]
    assert keys == sorted(keys)
    strongest = [r for r in rows if r["attack"] == "strongest"]
    assert len(strongest) == len(cfg.budgets)  # one per attacked budget


def test_report_strongest_is_min_over_kinds(swept):
    cfg, table = swept
    written = cmd_report(cfg.out)
    rows = load_report_csv(written[0])
    for budget in cfg.budgets:
        means = [float(r["mean"]) for r in rows
                 if float(r["budget"]) == budget and r["attack"] not in ("strongest", "clean")]
        strongest = [float(r["mean"]) for r in rows
                     if float(r["budget"]) == budget and r["attack"] == "strongest"]
        assert strongest[0] == pytest.approx(min(means))


def test_report_empty_dir_errors(tmp_path):
    with pytest.raises(ConfigError, match="no results"):
        cmd_report(str(tmp_path))


def test_attack_cells_reproducible(swept):
    cfg, table = swept
    # re-run one cell: same seed, same accuracy
    from gtattack.attack import run_attack
    from gtattack.experiment import _attack_config, _candidates_for, _load_models

    ds = load_dataset(os.path.join(cfg.out, "dataset"))
    models = _load_models(cfg)
    targets = ds.split["test"][: cfg.n_attack_graphs]
    budget, seed = cfg.budgets[0], cfg.seeds[0]
    accs = []
    for gid in targets:
        acfg = _attack_config(cfg, budget, seed)
        res = run_attack(models["gcn"], ds.graphs[gid], acfg, graph_id=gid)
        accs.append(res.attacked_metric)
    want = table.cell(model="gcn", attack="adaptive", budget=budget, seed=seed)
    assert float(np.mean(accs)) == want[0]


# ---------------------------------------------------------------------------
# ablation grids


def test_ablation_grid_structure_rows():
    grid = ablation_grid("graphormer", "structure")
    labels = [toggles_label(t) for t in grid]
    assert labels == [
        "graphormer_deg+graphormer_spd",
        "graphormer_deg",
        "graphormer_spd",
    ]


def test_ablation_grid_injection_rows():
    grid = ablation_grid("graphormer", "injection")
    assert len(grid) == 5
    assert toggles_label(grid[3]) == "node_prob_bias"
    assert "node_prob_bias" not in toggles_label(grid[4])


def test_ablation_grid_gcn_defaults():
    assert len(ablation_grid("gcn", "structure")) == 1


# ---------------------------------------------------------------------------
# CLI


def test_cli_generate_and_report_roundtrip(tmp_path, capsys):
    doc = tiny_config(tmp_path)
    cfg_path = write_config(tmp_path, doc)
    assert cli_main(["generate", "--config", cfg_path]) == 0
    assert cli_main(["train", "--config", cfg_path]) == 0
    assert cli_main(["attack", "--config", cfg_path, "--seed", "0", "--budget", "0.02"]) == 0
    assert cli_main(["report", "--config", cfg_path]) == 0
    out = capsys.readouterr().out
    assert "results.csv" in out


def test_cli_bad_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli_main(["generate", "--config", str(path)]) == 2


def test_cli_unknown_model_exits_2(tmp_path):
    cfg_path = write_config(tmp_path, tiny_config(tmp_path))
    assert cli_main(["train", "--config", cfg_path, "--model", "nope"]) == 2


def test_cli_unknown_toggle_exits_2(tmp_path):
    cfg_path = write_config(tmp_path, tiny_config(tmp_path))
    assert cli_main(["attack", "--config", cfg_path, "--toggles", "bogus"]) == 2
