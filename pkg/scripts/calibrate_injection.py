"""Calibration sweep for the node-injection protocol (dev utility)."""

import sys
import time

import numpy as np

from gtattack.attack import AttackConfig, build_candidate_set, random_baseline, run_attack
from gtattack.generators import make_tree_dataset
from gtattack.models import RelaxToggles, build_model, save_checkpoint
from gtattack.train import TrainConfig, evaluate_accuracy, train_model

OUT = sys.argv[1] if len(sys.argv) > 1 else "/tmp/calib_inj"

t0 = time.time()
ds = make_tree_dataset(seed=9)
print(f"dataset: {len(ds.graphs)} trees, avg n = {np.mean([g.n for g in ds.graphs]):.1f} "
      f"({time.time()-t0:.0f}s)", flush=True)

PLANS = {
    "graphormer": dict(epochs=4, lr=1e-2),
    "grit": dict(epochs=4, lr=1e-2),
}

models = {}
for arch, plan in PLANS.items():
    t0 = time.time()
    model = build_model(arch, "graph", ds.graphs[0].feature_dim, 1, seed=0)
    hist = train_model(model, ds, TrainConfig(epochs=plan["epochs"], lr=plan["lr"], seed=0))
    test = evaluate_accuracy(model, ds.part("test"))
    print(f"{arch:11s} val={[round(v,1) for v in hist['val_acc']]} test={test:.1f}% "
          f"({time.time()-t0:.0f}s)", flush=True)
    save_checkpoint(model, f"{OUT}.{arch}.json")
    models[arch] = model

targets = ds.split["test"][:6]
for base_lr in (500.0, 2000.0):
    print(f"--- base_lr {base_lr}", flush=True)
    for arch, model in models.items():
        t0 = time.time()
        rows = {"on": [], "off": [], "rand": []}
        for gid in targets:
            cands = build_candidate_set(ds, gid, max_candidates=128, seed=gid)
            g = ds.graphs[gid]
            base = dict(budget_fraction=0.10, loss_kind="raw_score", mode="injection",
                        constraint="tree_only", block_size=150, base_lr=base_lr, seed=0,
                        max_candidates=128)
            on = AttackConfig(toggles=RelaxToggles(), **base)
            off = AttackConfig(toggles=RelaxToggles(node_prob_bias=False), **base)
            rows["on"].append(run_attack(model, g, on, candidates=cands, graph_id=gid).attacked_metric)
            rows["off"].append(run_attack(model, g, off, candidates=cands, graph_id=gid).attacked_metric)
            rows["rand"].append(random_baseline(model, g, on, candidates=cands, graph_id=gid).attacked_metric)
        clean = np.mean([evaluate_accuracy(model, [ds.graphs[g]]) for g in targets])
        print(f"{arch:11s} clean={clean:.1f} on={np.mean(rows['on']):.1f} "
              f"off={np.mean(rows['off']):.1f} random={np.mean(rows['rand']):.1f} "
              f"({time.time()-t0:.0f}s)", flush=True)
