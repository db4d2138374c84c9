"""Graph data model, Laplacian/degree derivations, edge-flip application, I/O.

Adjacency matrices are dense, symmetric, zero-diagonal, with entries in
[0, 1].  A graph is *discrete* when every entry is exactly 0 or 1; the
relaxed attack machinery produces continuous adjacencies as
:class:`~gtattack.autodiff.Tensor` objects so gradients can flow back to
the edge-flip values.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "Graph",
    "EdgeFlipMatrix",
    "Dataset",
    "GraphValidationError",
    "GraphParseError",
    "degrees",
    "laplacian_sym",
    "laplacian_sym_tensor",
    "apply_flips",
    "save_graph",
    "load_graph",
    "save_dataset",
    "load_dataset",
    "upper_triangle_pairs",
    "is_discrete",
    "connected_components",
    "is_connected",
]

SYMMETRY_TOL = 1e-12


class GraphValidationError(ValueError):
    """A graph violated a structural invariant (symmetry, range, diagonal)."""


class GraphParseError(ValueError):
    """A graph file could not be parsed; message carries field context."""


@dataclass
class Graph:
    """Undirected attributed graph.

    ``labeled_mask`` marks the feature-revealed nodes of the cluster task
    (the nodes the constrained attack protects).
    """

    adjacency: np.ndarray
    features: np.ndarray
    node_labels: np.ndarray | None = None
    graph_label: int | None = None
    labeled_mask: np.ndarray | None = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphValidationError(f"adjacency must be square, got {a.shape}")
        if self.features.shape[0] != a.shape[0]:
            raise GraphValidationError(
                f"features rows {self.features.shape[0]} != node count {a.shape[0]}"
            )
        if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL:
            raise GraphValidationError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0.0):
            raise GraphValidationError("adjacency diagonal must be exactly zero")
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise GraphValidationError("adjacency entries must lie in [0, 1]")
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
            if self.node_labels.shape != (a.shape[0],):
                raise GraphValidationError("node_labels length mismatch")
        if self.labeled_mask is not None:
            self.labeled_mask = np.asarray(self.labeled_mask, dtype=bool)
            if self.labeled_mask.shape != (a.shape[0],):
                raise GraphValidationError("labeled_mask length mismatch")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def is_discrete(a: np.ndarray) -> bool:
    return bool(np.all((a == 0.0) | (a == 1.0)))


@dataclass
class EdgeFlipMatrix:
    """Sparse symmetric [0,1] edge-flip matrix: index pairs (i < j) + values.

    ``values`` may be a plain array or a Tensor; when it is a Tensor,
    :func:`apply_flips` keeps the result differentiable w.r.t. the values.
    """

    n: int
    pairs: np.ndarray  # (k, 2) int64, i < j, unique
    values: np.ndarray | Tensor

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(self.pairs) and not np.all(self.pairs[:, 0] < self.pairs[:, 1]):
            raise GraphValidationError("edge-flip pairs must satisfy i < j")
        if len(np.unique(self.pairs[:, 0] * self.n + self.pairs[:, 1])) != len(self.pairs):
            raise GraphValidationError("edge-flip pairs must be unique")
        vals = self.values.data if isinstance(self.values, Tensor) else np.asarray(self.values)
        if vals.shape != (len(self.pairs),):
            raise GraphValidationError("edge-flip values length mismatch")

    def value_array(self) -> np.ndarray:
        return self.values.data if isinstance(self.values, Tensor) else self.values


@dataclass
class Dataset:
    graphs: list[Graph]
    split: dict[str, list[int]]
    task: str  # "node-classification" | "binary-graph-classification"

    def __post_init__(self):
        if self.task not in ("node-classification", "binary-graph-classification"):
            raise GraphValidationError(f"unknown task {self.task!r}")
        seen: set[int] = set()
        for part in ("train", "val", "test"):
            idxs = self.split.get(part, [])
            if seen & set(idxs):
                raise GraphValidationError("dataset splits overlap")
            seen |= set(idxs)
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) > 1:
            raise GraphValidationError(f"non-uniform feature dims {sorted(dims)}")

    def part(self, name: str) -> list[Graph]:
        return [self.graphs[i] for i in self.split[name]]


# ---------------------------------------------------------------------------
# derivations


def degrees(g: Graph | np.ndarray) -> np.ndarray:
    """Row sums of the adjacency; continuous adjacency gives continuous degrees."""
    a = g.adjacency if isinstance(g, Graph) else np.asarray(g)
    return a.sum(axis=1)


def laplacian_sym(a: np.ndarray) -> np.ndarray:
    """Normalized symmetric Laplacian I - D^-1/2 A D^-1/2 (numpy path).

    Degree-0 rows use scaling factor 0, which leaves them as identity rows,
    so graphs with isolated nodes still have a well-defined spectrum.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.sum(axis=1)
    s = np.where(d > 0.0, 1.0 / np.sqrt(np.where(d > 0.0, d, 1.0)), 0.0)
    lap = -a * np.outer(s, s)
    np.fill_diagonal(lap, 1.0)
    return lap


def laplacian_sym_tensor(a: Tensor) -> Tensor:
    """Differentiable normalized Laplacian of a continuous adjacency."""
    n = a.shape[0]
    d = ad.tsum(a, axis=1)
    s = ad.rsqrt_safe(d)
    scale = ad.mul(ad.reshape(s, (n, 1)), ad.reshape(s, (1, n)))
    off = ad.neg(ad.mul(a, scale))
    eye = np.eye(n, dtype=bool)
    return ad.masked_fill(off, eye, 1.0)


def apply_flips(g: Graph | np.ndarray, b: EdgeFlipMatrix) -> Tensor:
    """Continuous adjacency from flipping: A + (1 - 2A) * B, symmetric.

    B entries of 0 leave A untouched; 1 flips the edge; fractional values
    interpolate.  Gradients flow from the result back to ``b.values``.
    """
    a = g.adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)
    n = a.shape[0]
    values = b.values if isinstance(b.values, Tensor) else Tensor(b.values)
    if len(b.pairs) == 0:
        return Tensor(a.copy())
    rows = np.concatenate([b.pairs[:, 0], b.pairs[:, 1]])
    cols = np.concatenate([b.pairs[:, 1], b.pairs[:, 0]])
    both = ad.concat([values, values], axis=0)
    dense_b = ad.scatter_pairs(both, (n, n), rows, cols)
    delta = ad.mul(Tensor(1.0 - 2.0 * a), dense_b)
    return ad.add(Tensor(a), delta)


def upper_triangle_pairs(n: int) -> np.ndarray:
    """All index pairs (i, j) with i < j, ordered row-major."""
    iu = np.triu_indices(n, k=1)
    return np.stack(iu, axis=1).astype(np.int64)


def connected_components(a: np.ndarray, edge_eps: float = 1e-9) -> np.ndarray:
    """Component id per node, edges being entries > edge_eps."""
    n = a.shape[0]
    comp = np.full(n, -1, dtype=np.int64)
    cid = 0
    adj = a > edge_eps
    for start in range(n):
        if comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = cid
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                if comp[v] < 0:
                    comp[v] = cid
                    stack.append(int(v))
        cid += 1
    return comp


def is_connected(a: np.ndarray) -> bool:
    return a.shape[0] <= 1 or int(connected_components(a).max()) == 0


# ---------------------------------------------------------------------------
# file I/O (JSON; edges stored as upper triangle only)


def _graph_to_doc(g: Graph) -> dict:
    iu, ju = np.triu_indices(g.n, k=1)
    mask = g.adjacency[iu, ju] != 0.0
    edges = [[int(i), int(j), float(g.adjacency[i, j])] for i, j in zip(iu[mask], ju[mask])]
    return {
        "n": g.n,
        "edges": edges,
        "features": g.features.tolist(),
        "node_labels": None if g.node_labels is None else g.node_labels.tolist(),
        "graph_label": None if g.graph_label is None else int(g.graph_label),
        "labeled_mask": None if g.labeled_mask is None else g.labeled_mask.astype(int).tolist(),
    }


def _graph_from_doc(doc: dict, context: str) -> Graph:
    for key in ("n", "edges", "features"):
        if key not in doc:
            raise GraphParseError(f"{context}: missing field {key!r}")
    n = doc["n"]
    if not isinstance(n, int) or n < 0:
        raise GraphParseError(f"{context}: field 'n' must be a non-negative int")
    a = np.zeros((n, n), dtype=np.float64)
    for k, e in enumerate(doc["edges"]):
        if not (isinstance(e, list) and len(e) == 3):
            raise GraphParseError(f"{context}: edges[{k}] must be [i, j, weight]")
        i, j, w = e
        if not (0 <= i < n and 0 <= j < n):
            raise GraphParseError(f"{context}: edges[{k}] index out of range")
        if i >= j:
            raise GraphParseError(f"{context}: edges[{k}] must have i < j (upper triangle)")
        a[i, j] = w
        a[j, i] = w
    feats = np.asarray(doc["features"], dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise GraphParseError(f"{context}: features must be an n x d matrix")
    try:
        return Graph(
            adjacency=a,
            features=feats,
            node_labels=doc.get("node_labels"),
            graph_label=doc.get("graph_label"),
            labeled_mask=doc.get("labeled_mask"),
        )
    except GraphValidationError as exc:
        raise GraphParseError(f"{context}: {exc}") from exc


def save_graph(g: Graph, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_graph_to_doc(g), fh, sort_keys=True)


def load_graph(path: str) -> Graph:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{path}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise GraphParseError(f"{path}: top-level value must be an object")
    return _graph_from_doc(doc, path)


def save_dataset(ds: Dataset, directory: str) -> None:
    """One JSON file per graph plus split.json."""
    os.makedirs(directory, exist_ok=True)
    for i, g in enumerate(ds.graphs):
        save_graph(g, os.path.join(directory, f"graph_{i:05d}.json"))
    with open(os.path.join(directory, "split.json"), "w") as fh:
        json.dump({"task": ds.task, **ds.split}, fh, sort_keys=True)


def load_dataset(directory: str) -> Dataset:
    split_path = os.path.join(directory, "split.json")
    try:
        with open(split_path) as fh:
            split_doc = json.load(fh)
    except FileNotFoundError:
        raise GraphParseError(f"{split_path}: missing split file")
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{split_path}: line {exc.lineno}: {exc.msg}") from exc
    names = sorted(f for f in os.listdir(directory) if f.startswith("graph_") and f.endswith(".json"))
    graphs = [load_graph(os.path.join(directory, f)) for f in names]
    split = {k: split_doc[k] for k in ("train", "val", "test")}
    return Dataset(graphs=graphs, split=split, task=split_doc["task"])
