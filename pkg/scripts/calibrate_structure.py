"""Calibration sweep for the structure-attack protocol (dev utility).

Trains the four models on the cluster dataset and compares adaptive vs
random attacks at 1% budget for a few PRBCD step sizes.
"""

import sys
import time

import numpy as np

from gtattack.attack import AttackConfig, random_baseline, run_attack
from gtattack.generators import make_cluster_dataset
from gtattack.graphs import Dataset
from gtattack.models import build_model, save_checkpoint
from gtattack.train import TrainConfig, evaluate_accuracy, train_model

OUT = sys.argv[1] if len(sys.argv) > 1 else "/tmp/calib"

t0 = time.time()
ds = make_cluster_dataset(seed=7)
print(f"dataset: {len(ds.graphs)} graphs, avg n = {np.mean([g.n for g in ds.graphs]):.1f} "
      f"avg m = {np.mean([g.num_edges for g in ds.graphs]):.1f} ({time.time()-t0:.0f}s)", flush=True)

PLANS = {
    "gcn": dict(epochs=6, lr=3e-3, subset=None),
    "graphormer": dict(epochs=3, lr=1e-2, subset=None),
    "san": dict(epochs=3, lr=3e-3, subset=None),
    "grit": dict(epochs=4, lr=1e-2, subset=300),
}

models = {}
for arch, plan in PLANS.items():
    t0 = time.time()
    model = build_model(arch, "node", ds.graphs[0].feature_dim, 6, seed=0)
    train_ds = ds
    if plan["subset"]:
        split = dict(ds.split)
        split["train"] = ds.split["train"][: plan["subset"]]
        train_ds = Dataset(graphs=ds.graphs, split=split, task=ds.task)
    hist = train_model(model, train_ds, TrainConfig(epochs=plan["epochs"], lr=plan["lr"], seed=0))
    test = evaluate_accuracy(model, ds.part("test"))
    print(f"{arch:11s} val={[round(v,1) for v in hist['val_acc']]} test={test:.1f}% "
          f"({time.time()-t0:.0f}s)", flush=True)
    save_checkpoint(model, f"{OUT}.{arch}.json")
    models[arch] = model

targets = ds.split["test"][:6]
for base_lr in (500.0, 2000.0, 8000.0):
    print(f"--- base_lr {base_lr}", flush=True)
    for arch, model in models.items():
        t0 = time.time()
        adv, rnd = [], []
        for gid in targets:
            cfg = AttackConfig(budget_fraction=0.01, seed=0, base_lr=base_lr)
            res = run_attack(model, ds.graphs[gid], cfg, graph_id=gid)
            adv.append(res.attacked_metric)
            rnd.append(random_baseline(model, ds.graphs[gid], cfg, graph_id=gid).attacked_metric)
        clean = np.mean([evaluate_accuracy(model, [ds.graphs[g]]) for g in targets])
        print(f"{arch:11s} clean={clean:.1f} adaptive={np.mean(adv):.1f} random={np.mean(rnd):.1f} "
              f"gap={np.mean(rnd)-np.mean(adv):+.1f} ({time.time()-t0:.0f}s)", flush=True)
