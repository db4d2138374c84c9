"""Experiment harness: dataset generation, training, attack sweeps, reports.

Everything is driven by one JSON config document (see ``ExperimentConfig``)
and writes into an output directory:

    out/
      dataset/            one JSON per graph + split.json
      checkpoints/        <arch>.json model checkpoints + <arch>.history.json
      perturbations/      one JSON per (model, budget, seed, graph) attack run
      results.json        flat list of table rows + config hash
      report/             CSV files derived from results.json
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    AttackConfig,
    PerturbationResult,
    build_candidate_set,
    random_baseline,
    run_attack,
    transfer_attack,
)
from .generators import make_cluster_dataset, make_tree_dataset
from .graphs import Dataset, load_dataset, save_dataset
from .models import GraphModel, RelaxToggles, build_model, load_checkpoint, save_checkpoint
from .train import TrainConfig, evaluate_accuracy, train_model

__all__ = [
    "ExperimentConfig",
    "ResultsTable",
    "ConfigError",
    "cmd_generate",
    "cmd_train",
    "cmd_attack",
    "cmd_ablate",
    "cmd_report",
    "toggles_label",
    "ablation_grid",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exits with code 2)."""


@dataclass
class ModelSpec:
    arch: str
    epochs: int = 6
    lr: float = 3e-3
    seed: int = 0
    train_subset: int | None = None
    hparams: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    dataset: dict
    models: list[ModelSpec]
    budgets: list[float]
    seeds: list[int]
    out: str
    attack: dict = field(default_factory=dict)
    n_attack_graphs: int = 20
    ablate_budget: float | None = None
    n_workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if list(self.budgets) != sorted(self.budgets):
            raise ConfigError("budgets must be ascending")
        if self.dataset.get("kind") not in ("cluster", "tree"):
            raise ConfigError("dataset.kind must be 'cluster' or 'tree'")

    @classmethod
    def from_doc(cls, doc: dict) -> "ExperimentConfig":
        try:
            models = [ModelSpec(**m) for m in doc["models"]]
            return cls(
                dataset=doc["dataset"],
                models=models,
                budgets=list(doc["budgets"]),
                seeds=list(doc["seeds"]),
                out=doc["out"],
                attack=doc.get("attack", {}),
                n_attack_graphs=doc.get("n_attack_graphs", 20),
                ablate_budget=doc.get("ablate_budget"),
                n_workers=doc.get("n_workers", 1),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_doc(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def hash(self) -> str:
        doc = {
            "dataset": self.dataset,
            "models": [vars(m) for m in self.models],
            "budgets": self.budgets,
            "seeds": self.seeds,
            "attack": self.attack,
            "n_attack_graphs": self.n_attack_graphs,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def task(self) -> str:
        return "node" if self.dataset["kind"] == "cluster" else "graph"


# ---------------------------------------------------------------------------
# results table


@dataclass
class ResultsTable:
    """Flat rows keyed by (model, attack, budget, toggles, seed) -> accuracy."""

    rows: list[dict] = field(default_factory=list)
    config_hash: str = ""

    def add(self, model: str, attack: str, budget: float, toggles: str, seed: int,
            accuracy: float) -> None:
        if not 0.0 <= accuracy <= 100.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 100]")
        self.rows.append({
            "model": model, "attack": attack, "budget": budget,
            "toggles": toggles, "seed": seed, "accuracy": accuracy,
        })

    def cell(self, **kw) -> list[float]:
        return [r["accuracy"] for r in self.rows if all(r[k] == v for k, v in kw.items())]

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump({"config_hash": self.config_hash, "rows": self.rows}, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "ResultsTable":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(rows=doc["rows"], config_hash=doc.get("config_hash", ""))


def toggles_label(t: RelaxToggles) -> str:
    on = [k for k, v in sorted(t.to_dict().items()) if v]
    return "+".join(on) if on else "none"


# ---------------------------------------------------------------------------
# commands


def _dataset_dir(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out, "dataset")


def cmd_generate(cfg: ExperimentConfig) -> Dataset:
    """Generate the synthetic dataset and write it to out/dataset."""
    spec = dict(cfg.dataset)
    kind = spec.pop("kind")
    if kind == "cluster":
        ds = make_cluster_dataset(**spec)
    else:
        ds = make_tree_dataset(**spec)
    save_dataset(ds, _dataset_dir(cfg))
    return ds


def _load_or_generate(cfg: ExperimentConfig) -> Dataset:
    path = _dataset_dir(cfg)
    if os.path.exists(os.path.join(path, "split.json")):
        return load_dataset(path)
    return cmd_generate(cfg)


def cmd_train(cfg: ExperimentConfig, only_model: str | None = None) -> dict[str, GraphModel]:
    """Train every configured model; write checkpoints and histories."""
    ds = _load_or_generate(cfg)
    ckpt_dir = os.path.join(cfg.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    feature_dim = ds.graphs[0].feature_dim
    n_classes = 6 if cfg.task == "node" else 1
    if cfg.task == "node":
        n_classes = int(max(int(g.node_labels.max()) for g in ds.graphs) + 1)
    models: dict[str, GraphModel] = {}
    for spec in cfg.models:
        if only_model and spec.arch != only_model:
            continue
        model = build_model(spec.arch, cfg.task, feature_dim, n_classes,
                            seed=spec.seed, **spec.hparams)
        train_ds = ds
        if spec.train_subset:
            sub = dict(ds.split)
            sub["train"] = ds.split["train"][: spec.train_subset]
            train_ds = Dataset(graphs=ds.graphs, split=sub, task=ds.task)
        history = train_model(model, train_ds, TrainConfig(epochs=spec.epochs, lr=spec.lr,
                                                           seed=spec.seed))
        history["test_acc"] = evaluate_accuracy(model, ds.part("test"))
        save_checkpoint(model, os.path.join(ckpt_dir, f"{spec.arch}.json"))
        with open(os.path.join(ckpt_dir, f"{spec.arch}.history.json"), "w") as fh:
            json.dump(history, fh, sort_keys=True)
        models[spec.arch] = model
    return models


def _load_models(cfg: ExperimentConfig) -> dict[str, GraphModel]:
    ckpt_dir = os.path.join(cfg.out, "checkpoints")
    models = {}
    for spec in cfg.models:
        path = os.path.join(ckpt_dir, f"{spec.arch}.json")
        if not os.path.exists(path):
            raise ConfigError(f"missing checkpoint {path}; run train first")
        models[spec.arch] = load_checkpoint(path)
    return models


def _attack_config(cfg: ExperimentConfig, budget: float, seed: int,
                   toggles: RelaxToggles | None = None) -> AttackConfig:
    base = dict(cfg.attack)
    base.pop("budget_fraction", None)
    toggle_doc = base.pop("toggles", None)
    if toggles is None:
        toggles = RelaxToggles.from_dict(toggle_doc) if toggle_doc else RelaxToggles()
    if cfg.task == "node":
        base.setdefault("loss_kind", "tanh_margin")
        base.setdefault("mode", "structure")
    else:
        base.setdefault("loss_kind", "raw_score")
        base.setdefault("mode", "injection")
        base.setdefault("constraint", "tree_only")
    return AttackConfig(budget_fraction=budget, seed=seed, toggles=toggles, **base)


def _attack_targets(cfg: ExperimentConfig, ds: Dataset) -> list[int]:
    return ds.split["test"][: cfg.n_attack_graphs]


def _perturbation_path(cfg: ExperimentConfig, model: str, budget: float, seed: int,
                       graph_id: int, kind: str, label: str = "") -> str:
    tag = f".{label}" if label else ""
    name = f"{model}.b{budget:g}.s{seed}.g{graph_id}.{kind}{tag}.json"
    return os.path.join(cfg.out, "perturbations", name)


def _candidates_for(cfg: ExperimentConfig, ds: Dataset, graph_id: int):
    if cfg.task == "node":
        return None
    max_c = cfg.attack.get("max_candidates", 128)
    return build_candidate_set(ds, graph_id, exclude_roots=True,
                               max_candidates=max_c, seed=graph_id)


def _attack_cell(model: GraphModel, graph, acfg: AttackConfig, cands,
                 gid: int) -> tuple[PerturbationResult, PerturbationResult]:
    res = run_attack(model, graph, acfg, candidates=cands, graph_id=gid)
    rres = random_baseline(model, graph, acfg, candidates=cands, graph_id=gid)
    return res, rres


def cmd_attack(cfg: ExperimentConfig, progress: bool = False) -> ResultsTable:
    """Adaptive + random + transfer sweep over (model, budget, seed).

    Cells parallelize over (graph, seed) when n_workers > 1; each run owns
    its RNG so results do not depend on scheduling.
    """
    ds = _load_or_generate(cfg)
    models = _load_models(cfg)
    targets = _attack_targets(cfg, ds)
    os.makedirs(os.path.join(cfg.out, "perturbations"), exist_ok=True)
    table = ResultsTable(config_hash=cfg.hash())
    label = toggles_label(_attack_config(cfg, cfg.budgets[0], cfg.seeds[0]).toggles)

    clean_by_model: dict[str, float] = {}
    for arch, model in models.items():
        clean_by_model[arch] = float(np.mean([
            _clean_metric(model, ds.graphs[gid]) for gid in targets
        ]))
        for seed in cfg.seeds:
            table.add(arch, "clean", 0.0, label, seed, clean_by_model[arch])

    stored: dict[tuple, list[PerturbationResult]] = {}
    for arch, model in models.items():
        for budget in cfg.budgets:
            tasks = [
                (model, ds.graphs[gid], _attack_config(cfg, budget, seed),
                 _candidates_for(cfg, ds, gid), gid)
                for seed in cfg.seeds for gid in targets
            ]
            if cfg.n_workers > 1:
                import multiprocessing as mp

                with mp.get_context("fork").Pool(cfg.n_workers) as pool:
                    outcomes = pool.starmap(_attack_cell, tasks)
            else:
                outcomes = [_attack_cell(*t) for t in tasks]
            idx = 0
            for seed in cfg.seeds:
                adaptive, rand = [], []
                for gid in targets:
                    res, rres = outcomes[idx]
                    idx += 1
                    res.save(_perturbation_path(cfg, arch, budget, seed, gid, "adaptive"))
                    rres.save(_perturbation_path(cfg, arch, budget, seed, gid, "random"))
                    adaptive.append(res)
                    rand.append(rres)
                stored[(arch, budget, seed)] = adaptive
                table.add(arch, "adaptive", budget, label, seed,
                          float(np.mean([r.attacked_metric for r in adaptive])))
                table.add(arch, "random", budget, label, seed,
                          float(np.mean([r.attacked_metric for r in rand])))
                if progress:
                    print(f"attacked {arch} budget={budget} seed={seed}", file=sys.stderr)

    # transfer: evaluate every other model's stored perturbations
    for target_arch, model in models.items():
        for budget in cfg.budgets:
            for seed in cfg.seeds:
                per_source = []
                for source_arch in models:
                    if source_arch == target_arch:
                        continue
                    metrics = []
                    for res in stored[(source_arch, budget, seed)]:
                        cands = _candidates_for(cfg, ds, res.graph_id)
                        metrics.append(transfer_attack(res, model, ds.graphs[res.graph_id],
                                                       candidates=cands))
                    acc = float(np.mean(metrics))
                    table.add(target_arch, f"transfer:{source_arch}", budget, label, seed, acc)
                    per_source.append(acc)
                if per_source:
                    table.add(target_arch, "transfer", budget, label, seed,
                              float(min(per_source)))

    table.save(os.path.join(cfg.out, "results.json"))
    return table


def _clean_metric(model: GraphModel, graph) -> float:
    return evaluate_accuracy(model, [graph])


def ablation_grid(arch: str, mode: str) -> list[RelaxToggles]:
    """Toggle combinations mirroring the per-model ablation tables."""
    def t(**kw):
        base = {f: False for f in RelaxToggles().to_dict()}
        base.update(kw)
        return RelaxToggles.from_dict(base)

    if mode == "structure":
        axes = {
            "graphormer": [("graphormer_deg", "graphormer_spd")],
            "san": [("san_attention", "san_lap_pert")],
            "grit": [("grit_rrwp_grad", "grit_deg_grad")],
        }
        if arch not in axes:
            return [RelaxToggles()]
        a, b = axes[arch][0]
        return [t(**{a: True, b: True}), t(**{a: True}), t(**{b: True})]
    # injection: model axes x node probability bias
    axes = {
        "graphormer": ("graphormer_deg", "graphormer_spd"),
        "san": ("san_attention", "san_lap_pert"),
        "grit": ("grit_rrwp_grad", "grit_deg_grad"),
    }
    if arch not in axes:
        return [RelaxToggles()]
    a, b = axes[arch]
    return [
        t(**{a: True, b: True, "node_prob_bias": True}),
        t(**{a: True, "node_prob_bias": True}),
        t(**{b: True, "node_prob_bias": True}),
        t(node_prob_bias=True),
        t(**{a: True, b: True}),
    ]


def cmd_ablate(cfg: ExperimentConfig, progress: bool = False) -> ResultsTable:
    """Fixed-budget sweep over toggle combinations plus random/clean rows."""
    ds = _load_or_generate(cfg)
    models = _load_models(cfg)
    targets = _attack_targets(cfg, ds)
    budget = cfg.ablate_budget if cfg.ablate_budget is not None else cfg.budgets[-1]
    mode = "structure" if cfg.task == "node" else "injection"
    os.makedirs(os.path.join(cfg.out, "perturbations"), exist_ok=True)
    table = ResultsTable(config_hash=cfg.hash())

    for arch, model in models.items():
        clean = float(np.mean([_clean_metric(model, ds.graphs[gid]) for gid in targets]))
        for seed in cfg.seeds:
            table.add(arch, "clean", budget, "-", seed, clean)
        for seed in cfg.seeds:
            accs = []
            for gid in targets:
                cands = _candidates_for(cfg, ds, gid)
                acfg = _attack_config(cfg, budget, seed, RelaxToggles())
                accs.append(random_baseline(model, ds.graphs[gid], acfg, candidates=cands,
                                            graph_id=gid).attacked_metric)
            table.add(arch, "random", budget, "-", seed, float(np.mean(accs)))
        for toggles in ablation_grid(arch, mode):
            label = toggles_label(toggles)
            for seed in cfg.seeds:
                accs = []
                for gid in targets:
                    cands = _candidates_for(cfg, ds, gid)
                    acfg = _attack_config(cfg, budget, seed, toggles)
                    res = run_attack(model, ds.graphs[gid], acfg, candidates=cands, graph_id=gid)
                    res.save(_perturbation_path(cfg, arch, budget, seed, gid, "adaptive", label))
                    accs.append(res.attacked_metric)
                table.add(arch, "adaptive", budget, label, seed, float(np.mean(accs)))
                if progress:
                    print(f"ablated {arch} toggles={label} seed={seed}", file=sys.stderr)

    table.save(os.path.join(cfg.out, "ablation.json"))
    return table


REPORT_COLUMNS = ["budget", "model", "attack", "mean", "std"]


def cmd_report(results_dir: str, out_dir: str | None = None) -> list[str]:
    """Aggregate results.json/ablation.json into CSV files.

    One CSV per sweep: columns budget, model, attack, mean, std (rows
    sorted by model, attack, budget), plus a strongest-attack-per-budget
    series (minimum mean accuracy over attack kinds).  Missing cells warn
    loudly instead of being interpolated.
    """
    written = []
    report_dir = out_dir or os.path.join(results_dir, "report")
    found = False
    for name in ("results", "ablation"):
        path = os.path.join(results_dir, f"{name}.json")
        if not os.path.exists(path):
            continue
        found = True
        table = ResultsTable.load(path)
        os.makedirs(report_dir, exist_ok=True)
        out_path = os.path.join(report_dir, f"{name}.csv")
        _write_csv(table, out_path, with_toggles=(name == "ablation"))
        written.append(out_path)
    if not found:
        raise ConfigError(f"no results.json or ablation.json under {results_dir}")
    return written


def _write_csv(table: ResultsTable, path: str, with_toggles: bool) -> None:
    groups: dict[tuple, list[float]] = {}
    for r in table.rows:
        key = (r["model"], r["attack"], r["budget"], r["toggles"])
        groups.setdefault(key, []).append(r["accuracy"])

    seeds_per_group = {len(v) for v in groups.values()}
    if len(seeds_per_group) > 1:
        print(f"warning: uneven seed coverage across cells: {sorted(seeds_per_group)}",
              file=sys.stderr)

    lines = []
    header = REPORT_COLUMNS + (["toggles"] if with_toggles else [])
    lines.append(",".join(header))
    rows = []
    for (model, attack, budget, toggles), accs in groups.items():
        rows.append((model, attack, float(budget), toggles,
                     float(np.mean(accs)), float(np.std(accs))))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    for model, attack, budget, toggles, mean, std in rows:
        cells = [f"{budget:g}", model, attack, f"{mean:.4f}", f"{std:.4f}"]
        if with_toggles:
            cells.append(toggles)
        lines.append(",".join(cells))

    # strongest attack per (model, budget): min mean accuracy over attack kinds
    strongest: dict[tuple, float] = {}
    for model, attack, budget, toggles, mean, std in rows:
        if attack == "clean":
            continue
        key = (model, budget)
        strongest[key] = min(strongest.get(key, np.inf), mean)
    for (model, budget), mean in sorted(strongest.items()):
        cells = [f"{budget:g}", model, "strongest", f"{mean:.4f}", "0.0000"]
        if with_toggles:
            cells.append("-")
        lines.append(",".join(cells))

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_report_csv(path: str) -> list[dict]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]
