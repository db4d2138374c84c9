"""Gradient-based adaptive attacks: PRBCD structure attacks and node injection."""

from .config import (
    AttackConfig,
    PerturbationResult,
    allowed_pairs,
    budget_from_fraction,
    constraint_mask,
)
from .injection import (
    CandidateSet,
    build_candidate_set,
    is_tree,
    mst_projection,
    nia_augment,
    node_probability,
    prune_disconnected,
)
from .losses import attack_loss
from .projection import project_budget
from .runner import AttackRun, random_baseline, run_attack, transfer_attack
from .structure import BlockState, init_block, prbcd_step, resample_block, sample_discrete

__all__ = [
    "AttackConfig",
    "PerturbationResult",
    "AttackRun",
    "BlockState",
    "CandidateSet",
    "allowed_pairs",
    "attack_loss",
    "budget_from_fraction",
    "build_candidate_set",
    "constraint_mask",
    "init_block",
    "is_tree",
    "mst_projection",
    "nia_augment",
    "node_probability",
    "project_budget",
    "prune_disconnected",
    "prbcd_step",
    "random_baseline",
    "resample_block",
    "run_attack",
    "sample_discrete",
    "transfer_attack",
]
