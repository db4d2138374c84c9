"""Shared model machinery: toggles, parameter store, attention/pooling helpers."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = [
    "RelaxToggles",
    "GraphModel",
    "linear",
    "layer_norm",
    "pool_weighted",
    "attention_nodeprob_bias",
    "log_prob_row",
]


@dataclass(frozen=True)
class RelaxToggles:
    """Which continuous relaxations are active (ablation axes).

    The GRIT toggles gate gradient flow only; all others change how the
    relaxed forward treats a continuous adjacency.  Discrete inputs give
    the same forward values for every combination.
    """

    graphormer_deg: bool = True
    graphormer_spd: bool = True
    san_attention: bool = True
    san_lap_pert: bool = True
    grit_rrwp_grad: bool = True
    grit_deg_grad: bool = True
    node_prob_bias: bool = True

    @classmethod
    def none(cls) -> "RelaxToggles":
        return cls(**{f.name: False for f in fields(cls)})

    def to_dict(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RelaxToggles":
        return cls(**{f.name: bool(d.get(f.name, True)) for f in fields(cls)})


class GraphModel:
    """Base class: a named parameter dict plus checkpoint (de)serialization.

    Subclasses implement ``_build`` (parameter creation), ``forward``
    (relaxed path over a continuous adjacency) and ``forward_discrete``
    (the unrelaxed target model on a discrete graph).
    """

    arch = "base"

    def __init__(self, task: str, feature_dim: int, n_classes: int, seed: int = 0, **hparams):
        if task not in ("node", "graph"):
            raise ValueError(f"task must be 'node' or 'graph', got {task!r}")
        self.task = task
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.seed = seed
        self.hparams = dict(self.default_hparams())
        unknown = set(hparams) - set(self.hparams)
        if unknown:
            raise ValueError(f"{self.arch}: unknown hparams {sorted(unknown)}")
        self.hparams.update(hparams)
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(seed))

    # -- subclass hooks -----------------------------------------------------
    def default_hparams(self) -> dict:
        return {}

    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def forward(self, atilde, features, toggles=RelaxToggles(), node_probs=None, **kw) -> Tensor:
        raise NotImplementedError

    def forward_discrete(self, adjacency: np.ndarray, features: np.ndarray, **kw) -> Tensor:
        raise NotImplementedError

    # -- parameters ----------------------------------------------------------
    def _param(self, name: str, shape: tuple[int, ...], rng, kind: str = "glorot") -> Tensor:
        if kind == "glorot":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            fan_out = shape[-1]
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            data = rng.normal(0.0, scale, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "small":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            raise ValueError(kind)
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def p(self, name: str) -> Tensor:
        return self.params[name]

    # -- checkpoints ----------------------------------------------------------
    def to_doc(self) -> dict:
        return {
            "arch": self.arch,
            "task": self.task,
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "hparams": self.hparams,
            "params": {k: v.data.reshape(-1).tolist() for k, v in self.params.items()},
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }

    def load_doc(self, doc: dict) -> None:
        for k, t in self.params.items():
            flat = np.asarray(doc["params"][k], dtype=np.float64)
            t.data = flat.reshape(tuple(doc["shapes"][k]))


# ---------------------------------------------------------------------------
# helpers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    return out if b is None else ad.add(out, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ad.tmean(x, axis=1, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.tmean(ad.mul(centered, centered), axis=1, keepdims=True)
    inv = ad.rsqrt_safe(ad.add(var, Tensor(np.full(var.shape, eps))))
    return ad.add(ad.mul(ad.mul(centered, inv), gamma), beta)


def pool_weighted(node_reps: Tensor, node_probs: Tensor | None, mode: str) -> Tensor:
    """Probability-weighted sum/mean pooling; probs of 1 reduce to plain pooling."""
    if mode not in ("sum", "mean"):
        raise ValueError(f"pool mode must be 'sum' or 'mean', got {mode!r}")
    n = node_reps.shape[0]
    if node_probs is None:
        node_probs = Tensor(np.ones(n))
    pvals = node_probs.data
    if np.any(pvals < 0.0) or np.any(pvals > 1.0):
        raise ValueError("node probabilities must lie in [0, 1]")
    weighted = ad.mul(node_reps, ad.reshape(node_probs, (n, 1)))
    total = ad.tsum(weighted, axis=0)
    if mode == "sum":
        return total
    mass = ad.tsum(node_probs)
    if mass.item() == 0.0:
        raise ValueError("pool_weighted: mean pooling with zero total probability")
    return ad.div(total, mass)


def log_prob_row(node_probs: Tensor) -> Tensor:
    """log p as a (1, n) row for biasing attention scores columnwise."""
    n = node_probs.shape[0]
    return ad.reshape(ad.tlog(node_probs), (1, n))


def attention_nodeprob_bias(w: Tensor, node_probs: Tensor) -> Tensor:
    """softmax(w + log p) == p_j e^{w_ij} / sum_k p_k e^{w_ik}, rowwise.

    Nodes with probability 0 are excluded exactly.
    """
    pvals = node_probs.data
    if np.any(pvals < 0.0) or np.any(pvals > 1.0):
        raise ValueError("node probabilities must lie in [0, 1]")
    if not np.any(pvals > 0.0):
        raise ValueError("attention_nodeprob_bias: all node probabilities are zero")
    return ad.softmax(ad.add(w, log_prob_row(node_probs)))
