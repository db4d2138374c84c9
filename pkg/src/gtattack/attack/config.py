"""Attack configuration, constraint masks, and result records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..graphs import Graph, upper_triangle_pairs
from ..models import RelaxToggles

__all__ = [
    "AttackConfig",
    "PerturbationResult",
    "constraint_mask",
    "allowed_pairs",
    "budget_from_fraction",
]


@dataclass
class AttackConfig:
    """Everything a single attack run needs besides model and graph.

    ``base_lr`` scales the ascent step as base_lr * budget / block_size
    (constant schedule).  Defaults follow the evaluation protocol: 125
    steps, 20 discrete samples, resampling half the block every 10 steps.
    """

    budget_fraction: float = 0.01
    steps: int = 125
    block_size: int = 20000
    n_discrete_samples: int = 20
    loss_kind: str = "tanh_margin"  # tanh_margin | raw_score
    toggles: RelaxToggles = field(default_factory=RelaxToggles)
    constraint: str = "none"  # none | protect_labeled | tree_only
    mode: str = "structure"  # structure | injection
    base_lr: float = 500.0
    resample_every: int = 10
    keep_fraction: float = 0.5
    node_prob_iters: int = 3
    sample_f_region: bool = False
    max_candidates: int | None = 128
    seed: int = 0

    def __post_init__(self):
        if self.budget_fraction <= 0:
            raise ValueError("budget_fraction must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.loss_kind not in ("tanh_margin", "raw_score"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.constraint not in ("none", "protect_labeled", "tree_only"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.mode not in ("structure", "injection"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["toggles"] = self.toggles.to_dict()
        return d


def budget_from_fraction(fraction: float, num_edges: int) -> int:
    """Delta = round(fraction * clean edge count)."""
    return int(round(fraction * num_edges))


def constraint_mask(graph: Graph, kind: str, n_aug: int | None = None,
                    sample_f: bool = False):
    """Vectorized predicate over index pairs (i < j) for one constraint kind.

    ``protect_labeled`` forbids any pair touching a labeled node.
    ``tree_only`` (injection) forbids pairs inside the original block B,
    keeping tree-to-candidate pairs E (and optionally candidate pairs F).
    """
    n = graph.n
    if kind == "none":
        return lambda pairs: np.ones(len(pairs), dtype=bool)
    if kind == "protect_labeled":
        if graph.labeled_mask is None:
            raise ValueError("protect_labeled requires a labeled_mask on the graph")
        labeled = graph.labeled_mask

        def pred(pairs):
            pairs = np.asarray(pairs).reshape(-1, 2)
            return ~(labeled[pairs[:, 0]] | labeled[pairs[:, 1]])

        return pred
    if kind == "tree_only":
        if n_aug is None:
            raise ValueError("tree_only requires the augmented size n_aug")

        def pred(pairs):
            pairs = np.asarray(pairs).reshape(-1, 2)
            in_b = (pairs[:, 0] < n) & (pairs[:, 1] < n)
            in_f = (pairs[:, 0] >= n) & (pairs[:, 1] >= n)
            ok = ~in_b
            if not sample_f:
                ok &= ~in_f
            return ok

        return pred
    raise ValueError(f"unknown constraint {kind!r}")


def allowed_pairs(graph: Graph, config: AttackConfig, n_aug: int | None = None) -> np.ndarray:
    """All samplable index pairs under the run's mode and constraint."""
    size = n_aug if config.mode == "injection" else graph.n
    pairs = upper_triangle_pairs(size)
    pred = constraint_mask(graph, config.constraint, n_aug=n_aug, sample_f=config.sample_f_region)
    if config.mode == "injection" and config.constraint != "tree_only":
        # default injection sampling stays out of the F block unless asked
        keep = pred(pairs)
        if not config.sample_f_region:
            in_f = (pairs[:, 0] >= graph.n) & (pairs[:, 1] >= graph.n)
            keep &= ~in_f
        return pairs[keep]
    return pairs[pred(pairs)]


@dataclass
class PerturbationResult:
    """Outcome of one attack run on one graph."""

    graph_id: int
    budget: int
    budget_fraction: float
    flips: list[list[int]]
    clean_metric: float
    attacked_metric: float
    loss_trace: list[float]
    seed: int
    toggles: dict
    mode: str
    constraint: str
    attack_kind: str = "adaptive"  # adaptive | random | transfer

    def to_doc(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "budget": self.budget,
            "budget_fraction": self.budget_fraction,
            "flips": [[int(i), int(j)] for i, j in self.flips],
            "clean_metric": self.clean_metric,
            "attacked_metric": self.attacked_metric,
            "loss_trace": self.loss_trace,
            "seed": self.seed,
            "toggles": self.toggles,
            "mode": self.mode,
            "constraint": self.constraint,
            "attack_kind": self.attack_kind,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PerturbationResult":
        return cls(**doc)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_doc(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "PerturbationResult":
        with open(path) as fh:
            return cls.from_doc(json.load(fh))
