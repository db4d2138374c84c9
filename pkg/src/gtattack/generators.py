"""Synthetic dataset generators.

Two families, matching the structure of the evaluation tasks:

* ``generate_sbm_cluster`` — stochastic-block-model community graphs where
  exactly one node per cluster reveals its cluster id through a one-hot
  feature channel; the node task is to recover every node's cluster.
* ``generate_retweet_tree`` — label-rooted random trees whose root feature
  distribution depends on the binary graph label, with a smaller
  label-dependent shift on the non-root (user) features.

Generators are pure functions of their seed.
"""

from __future__ import annotations

import numpy as np

from .graphs import Dataset, Graph, is_connected

__all__ = [
    "generate_sbm_cluster",
    "generate_retweet_tree",
    "make_cluster_dataset",
    "make_tree_dataset",
]

MAX_CONNECTIVITY_RETRIES = 200


def _sbm_once(
    rng: np.random.Generator,
    n_clusters: int,
    nodes_per_cluster_range: tuple[int, int],
    p_intra: float,
    p_inter: float,
    feature_dim: int,
    noise_scale: float,
) -> Graph:
    lo, hi = nodes_per_cluster_range
    sizes = rng.integers(lo, hi + 1, size=n_clusters)
    labels = np.repeat(np.arange(n_clusters), sizes)
    n = int(sizes.sum())
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, p_intra, p_inter)
    u = rng.random((n, n))
    u = np.triu(u, k=1)
    a = np.zeros((n, n))
    a[np.triu_indices(n, k=1)] = (u < probs)[np.triu_indices(n, k=1)].astype(float)
    a = a + a.T

    feats = np.zeros((n, feature_dim))
    noise_dims = feature_dim - n_clusters
    if noise_dims > 0:
        feats[:, n_clusters:] = noise_scale * rng.standard_normal((n, noise_dims))
    mask = np.zeros(n, dtype=bool)
    offset = 0
    for c, size in enumerate(sizes):
        pick = offset + int(rng.integers(0, size))
        feats[pick, c] = 1.0
        mask[pick] = True
        offset += size
    return Graph(adjacency=a, features=feats, node_labels=labels, labeled_mask=mask)


def generate_sbm_cluster(
    seed: int,
    n_clusters: int = 6,
    nodes_per_cluster_range: tuple[int, int] = (15, 25),
    p_intra: float = 0.4,
    p_inter: float = 0.05,
    feature_dim: int = 8,
    noise_scale: float = 0.1,
) -> Graph:
    """Connected SBM graph with one labeled node per cluster.

    Regenerates (bounded retries) until the sampled graph is connected.
    """
    if not (0.0 <= p_inter < p_intra <= 1.0):
        raise ValueError("require 0 <= p_inter < p_intra <= 1")
    if feature_dim < n_clusters:
        raise ValueError("feature_dim must be >= n_clusters (one-hot label channels)")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_CONNECTIVITY_RETRIES):
        g = _sbm_once(
            rng, n_clusters, nodes_per_cluster_range, p_intra, p_inter, feature_dim, noise_scale
        )
        if is_connected(g.adjacency):
            return g
    raise RuntimeError(
        f"generate_sbm_cluster: no connected sample in {MAX_CONNECTIVITY_RETRIES} retries"
    )


def generate_retweet_tree(
    seed: int,
    n_nodes_range: tuple[int, int] = (24, 48),
    feature_dim: int = 8,
    label: int = 0,
    root_shift: float = 0.2,
    user_shift: float = 0.07,
    power_frac: float = 0.03,
    power_scale: float = 3.0,
) -> Graph:
    """Random recursive tree rooted at node 0 with label-dependent features.

    The topology depends only on the seed (not the label), so the same seed
    with a different label yields the same tree with shifted features.  The
    per-node shifts are deliberately small: the label is only readable from
    the root plus the aggregated user features, so classifiers keep modest
    margins and injected nodes carry meaningful counter-evidence.  A small
    fraction of "power users" carry the same signal at ``power_scale``
    amplitude (user features are heavy-tailed in the wild), which makes
    them both informative during training and high-leverage injection
    candidates.
    """
    lo, hi = n_nodes_range
    if lo < 2:
        raise ValueError("trees need at least 2 nodes")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    a = np.zeros((n, n))
    for v in range(1, n):
        parent = int(rng.integers(0, v))
        a[v, parent] = 1.0
        a[parent, v] = 1.0
    sign = 1.0 if label == 1 else -1.0
    feats = rng.standard_normal((n, feature_dim))
    feats[0] += sign * root_shift
    feats[1:] += sign * user_shift
    power = 1 + np.flatnonzero(rng.random(n - 1) < power_frac)
    feats[power] *= power_scale
    return Graph(adjacency=a, features=feats, graph_label=int(label))


def make_cluster_dataset(
    seed: int,
    n_train: int = 600,
    n_val: int = 60,
    n_test: int = 60,
    **gen_kwargs,
) -> Dataset:
    """Node-classification dataset of independent SBM cluster graphs."""
    total = n_train + n_val + n_test
    root = np.random.SeedSequence(seed)
    child_seeds = root.generate_state(total)
    graphs = [generate_sbm_cluster(int(s), **gen_kwargs) for s in child_seeds]
    split = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, total)),
    }
    return Dataset(graphs=graphs, split=split, task="node-classification")


def make_tree_dataset(
    seed: int,
    n_train: int = 200,
    n_val: int = 40,
    n_test: int = 60,
    **gen_kwargs,
) -> Dataset:
    """Binary graph-classification dataset of label-balanced retweet trees."""
    total = n_train + n_val + n_test
    root = np.random.SeedSequence(seed)
    child_seeds = root.generate_state(total)
    graphs = [
        generate_retweet_tree(int(s), label=i % 2, **gen_kwargs) for i, s in enumerate(child_seeds)
    ]
    split = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, total)),
    }
    return Dataset(graphs=graphs, split=split, task="binary-graph-classification")
