"""End-to-end attack runs: adaptive PRBCD, random baseline, transfer replay."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..graphs import EdgeFlipMatrix, Graph, apply_flips, is_connected
from ..models import GraphModel, SpectralReference
from ..train import graph_score_correct, node_accuracy
from .config import AttackConfig, PerturbationResult, allowed_pairs, budget_from_fraction
from .injection import (
    CandidateSet,
    is_tree,
    mst_projection,
    nia_augment,
    node_probability,
    prune_disconnected,
)
from .losses import attack_loss
from .structure import BlockState, init_block, prbcd_step, resample_block, sample_discrete

__all__ = ["AttackRun", "run_attack", "random_baseline", "transfer_attack"]

# injection-mode floor for block values: above the pruning epsilon, so every
# sampled candidate edge stays in the pruned graph and keeps its gradient
BLOCK_KEEP_EPS = 1e-7


class AttackRun:
    """Shared state for one (model, graph, config) attack: budgets, masks,
    the relaxed objective, and true-model evaluation of discrete flips."""

    def __init__(self, model: GraphModel, graph: Graph, config: AttackConfig,
                 candidates: CandidateSet | None = None, graph_id: int = 0):
        self.model = model
        self.graph = graph
        self.config = config
        self.graph_id = graph_id
        if config.mode == "injection":
            if candidates is None:
                raise ValueError("injection mode needs a candidate set")
            if not is_connected(graph.adjacency):
                raise ValueError("injection attacks require a connected original graph")
            self.base_adj, self.base_feats, self.n_orig = nia_augment(graph, candidates)
        else:
            self.base_adj = graph.adjacency
            self.base_feats = graph.features
            self.n_orig = graph.n
        self.n_aug = self.base_adj.shape[0]
        self.delta = budget_from_fraction(config.budget_fraction, graph.num_edges)
        self.allowed = allowed_pairs(graph, config, n_aug=self.n_aug)
        self.block_size = min(config.block_size, len(self.allowed))
        if self.delta > self.block_size:
            raise ValueError(f"budget {self.delta} exceeds block size {self.block_size}")
        self.labels = graph.node_labels if model.task == "node" else graph.graph_label
        self.spectral_ref = None
        if model.arch == "san" and config.mode == "structure" and config.toggles.san_lap_pert:
            self.spectral_ref = SpectralReference.of(graph.adjacency)
        self.lr = config.base_lr * max(self.delta, 1) / max(self.block_size, 1)

    # -- relaxed objective ----------------------------------------------------
    def objective(self, block: BlockState):
        """Closure mapping block values (leaf tensor) to the attack loss."""

        def fn(values: Tensor) -> Tensor:
            flips = EdgeFlipMatrix(self.n_aug, block.pairs, values)
            atilde = apply_flips(self.base_adj, flips)
            toggles = self.config.toggles
            if self.config.mode == "structure":
                kw = {"spectral_ref": self.spectral_ref} if self.model.arch == "san" else {}
                logits = self.model.forward(atilde, self.base_feats, toggles, **kw)
                return attack_loss(logits, self.labels, self.config.loss_kind, self.model.task)
            sub, kept = prune_disconnected(atilde, self.n_orig)
            probs = node_probability(sub, self.config.node_prob_iters)
            kw = {}
            if self.model.arch == "san":
                base_sub = self.base_adj[np.ix_(kept, kept)]
                if toggles.san_lap_pert:
                    kw["spectral_ref"] = SpectralReference.of(base_sub)
            logits = self.model.forward(sub, self.base_feats[kept], toggles,
                                        node_probs=probs, **kw)
            if self.model.task == "node":
                logits = ad.gather_rows(logits, np.arange(self.n_orig))
            return attack_loss(logits, self.labels, self.config.loss_kind, self.model.task)

        return fn

    # -- discrete evaluation ----------------------------------------------------
    def _flip_discrete(self, flips: np.ndarray) -> np.ndarray:
        adj = self.base_adj.copy()
        for i, j in np.asarray(flips, dtype=np.int64).reshape(-1, 2):
            adj[i, j] = 1.0 - adj[i, j]
            adj[j, i] = adj[i, j]
        return adj

    def evaluate_discrete(self, flips: np.ndarray,
                          edge_value: dict | None = None) -> tuple[float, float, list]:
        """True-model evaluation of a discrete flip set.

        Returns (attack loss, metric, effective flips).  In tree-only mode
        non-tree samples are projected to the maximum-probability spanning
        tree first, using ``edge_value`` as the probability of flipped
        edges (1.0 when absent, e.g. for the random baseline).
        """
        flips = np.asarray(flips, dtype=np.int64).reshape(-1, 2)
        with ad.no_grad():
            if self.config.mode == "structure":
                adj = self._flip_discrete(flips)
                logits = self.model.forward_discrete(adj, self.base_feats).data
                effective = [list(map(int, f)) for f in flips]
                return (*self._score(logits), effective)

            adj = self._flip_discrete(flips)
            comp_kept = self._discrete_component(adj)
            sub = adj[np.ix_(comp_kept, comp_kept)]
            feats = self.base_feats[comp_kept]
            kept_flips = [
                (i, j) for i, j in flips
                if i in self._kept_set(comp_kept) and j in self._kept_set(comp_kept)
            ]
            if self.config.constraint == "tree_only" and not is_tree(sub):
                weights = sub.copy()
                pos = {(int(i), int(j)): (edge_value or {}).get((int(i), int(j)), 1.0)
                       for i, j in kept_flips}
                back = {v: k for k, v in enumerate(comp_kept)}
                for (i, j), val in pos.items():
                    ki, kj = back[i], back[j]
                    weights[ki, kj] = weights[kj, ki] = val
                sub = mst_projection(weights)
                kept_flips = [
                    (int(comp_kept[a]), int(comp_kept[b]))
                    for a, b in zip(*np.nonzero(np.triu(sub, k=1)))
                    if self.base_adj[comp_kept[a], comp_kept[b]] == 0.0
                ]
            logits = self.model.forward_discrete(sub, feats).data
            if self.model.task == "node":
                logits = logits[: self.n_orig]
            loss, metric = self._score(logits)
            return loss, metric, [list(map(int, f)) for f in kept_flips]

    def _kept_set(self, kept: np.ndarray) -> set:
        if not hasattr(self, "_kept_cache") or self._kept_cache[0] is not kept:
            self._kept_cache = (kept, set(int(x) for x in kept))
        return self._kept_cache[1]

    def _discrete_component(self, adj: np.ndarray) -> np.ndarray:
        from ..graphs import connected_components

        comp = connected_components(adj)
        return np.flatnonzero(comp == comp[0])

    def _score(self, logits: np.ndarray) -> tuple[float, float]:
        loss = attack_loss(Tensor(logits), self.labels, self.config.loss_kind,
                           self.model.task).item()
        if self.model.task == "node":
            metric = node_accuracy(logits, self.labels)
        else:
            metric = graph_score_correct(float(logits.reshape(-1)[0]), self.labels)
        return loss, metric

    def clean(self) -> tuple[float, float]:
        loss, metric, _ = self.evaluate_discrete(np.zeros((0, 2), dtype=np.int64))
        return loss, metric


def run_attack(model: GraphModel, graph: Graph, config: AttackConfig,
               candidates: CandidateSet | None = None, graph_id: int = 0) -> PerturbationResult:
    """Full adaptive attack: PRBCD over a sampled block, then discretization.

    Deterministic given ``config.seed``.
    """
    run = AttackRun(model, graph, config, candidates, graph_id)
    rng = np.random.default_rng(config.seed)
    _, clean_metric = run.clean()

    if run.delta == 0 or len(run.allowed) == 0:
        return PerturbationResult(
            graph_id=graph_id, budget=0, budget_fraction=config.budget_fraction,
            flips=[], clean_metric=clean_metric, attacked_metric=clean_metric,
            loss_trace=[], seed=config.seed, toggles=config.toggles.to_dict(),
            mode=config.mode, constraint=config.constraint, attack_kind="adaptive",
        )

    fresh = BLOCK_KEEP_EPS if config.mode == "injection" else 0.0
    block = init_block(run.n_aug, run.allowed, run.block_size, rng, fresh_value=fresh)
    trace: list[float] = []
    for step in range(config.steps):
        block, objective_value = prbcd_step(run.objective(block), block, run.delta, run.lr)
        if fresh:
            np.maximum(block.values, fresh, out=block.values)
        trace.append(objective_value)
        if (step + 1) % config.resample_every == 0 and step < config.steps - 1:
            block = resample_block(block, config.keep_fraction, rng, run.allowed,
                                   fresh_value=fresh)

    edge_value = {(int(i), int(j)): float(v)
                  for (i, j), v in zip(block.pairs, block.values) if v > 0.0}
    _, loss, metric, effective = sample_discrete(
        block, run.delta, config.n_discrete_samples,
        lambda flips: run.evaluate_discrete(flips, edge_value), rng,
    )
    return PerturbationResult(
        graph_id=graph_id, budget=run.delta, budget_fraction=config.budget_fraction,
        flips=effective, clean_metric=clean_metric, attacked_metric=metric,
        loss_trace=trace, seed=config.seed, toggles=config.toggles.to_dict(),
        mode=config.mode, constraint=config.constraint, attack_kind="adaptive",
    )


def random_baseline(model: GraphModel, graph: Graph, config: AttackConfig,
                    candidates: CandidateSet | None = None, graph_id: int = 0) -> PerturbationResult:
    """Budget-matched random attack with the adaptive run's evaluation count.

    Evaluates steps + 1 + n_discrete_samples random budget-sized flip sets
    on the true model and keeps the strongest.
    """
    run = AttackRun(model, graph, config, candidates, graph_id)
    rng = np.random.default_rng(config.seed)
    _, clean_metric = run.clean()
    n_evals = config.steps + 1 + config.n_discrete_samples
    best: tuple | None = None
    k = min(run.delta, len(run.allowed))
    if k == 0:
        best = (np.inf, clean_metric, [])
    else:
        for _ in range(n_evals):
            pick = np.sort(rng.choice(len(run.allowed), size=k, replace=False))
            loss, metric, effective = run.evaluate_discrete(run.allowed[pick])
            if best is None or loss < best[0]:
                best = (loss, metric, effective)
    return PerturbationResult(
        graph_id=graph_id, budget=run.delta, budget_fraction=config.budget_fraction,
        flips=best[2], clean_metric=clean_metric, attacked_metric=best[1],
        loss_trace=[], seed=config.seed, toggles=config.toggles.to_dict(),
        mode=config.mode, constraint=config.constraint, attack_kind="random",
    )


def transfer_attack(source: PerturbationResult, model: GraphModel, graph: Graph,
                    candidates: CandidateSet | None = None) -> float:
    """Evaluate a stored perturbation against a different (true) model.

    Returns the attacked metric for ``model`` on the same graph identity.
    """
    config = AttackConfig(
        budget_fraction=source.budget_fraction or 1e-9,
        loss_kind="tanh_margin" if model.task == "node" else "raw_score",
        mode=source.mode, constraint=source.constraint, seed=source.seed,
    )
    run = AttackRun(model, graph, config, candidates, source.graph_id)
    _, metric, _ = run.evaluate_discrete(np.asarray(source.flips, dtype=np.int64).reshape(-1, 2))
    return metric
