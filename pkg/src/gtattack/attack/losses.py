"""Attack losses (the attacker minimizes these)."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["attack_loss"]


def attack_loss(logits: Tensor, labels, kind: str, task: str) -> Tensor:
    """Scalar attack loss, to be minimized by the attacker.

    tanh_margin (node tasks): mean over nodes of tanh(z_true - best_other);
    saturates on already-misclassified nodes so budget is not wasted there.
    raw_score (binary graph tasks): the raw logit for label 1, its negation
    for label 0, so minimizing pushes the score across the boundary.
    """
    if kind == "tanh_margin":
        if task != "node":
            raise ValueError("tanh_margin loss requires a node-classification task")
        labels = np.asarray(labels, dtype=np.int64)
        n = logits.shape[0]
        rows = np.arange(n)
        masked = logits.data.copy()
        masked[rows, labels] = -np.inf
        best_other = np.argmax(masked, axis=1)
        margin = ad.sub(
            ad.take_pairs(logits, rows, labels),
            ad.take_pairs(logits, rows, best_other),
        )
        return ad.tmean(ad.ttanh(margin))
    if kind == "raw_score":
        if task != "graph":
            raise ValueError("raw_score loss requires a binary graph-classification task")
        label = int(labels)
        score = ad.tsum(logits)
        return score if label == 1 else ad.neg(score)
    raise ValueError(f"unknown attack loss kind {kind!r}")
