"""Distance-bias transformer: degree embeddings + shortest-path attention bias.

Both positional components are lookup tables indexed by integers, so the
relaxed path linearly interpolates them: degrees interpolate between the
two nearest embedding rows, and shortest-path distances are measured on
reciprocal edge weights (see :mod:`gtattack.paths`) before interpolating
the per-head bias table.  Graph-level tasks add a virtual node that
attends everywhere through its own learnable bias and serves as the
readout.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .._kernels import bfs_hops
from ..autodiff import Tensor
from ..paths import interp_table, rspd_matrix, spd_bias
from .common import GraphModel, RelaxToggles, layer_norm, linear, log_prob_row

__all__ = ["Graphormer", "degree_pe"]


def degree_pe(deg: Tensor, table: Tensor, relaxed: bool) -> Tensor:
    """Degree positional embeddings.

    Relaxed: linear interpolation between the rows of the two nearest
    integer degrees (exact rows at integer degrees, clamping at the top).
    Unrelaxed: rounded integer lookup with no gradient to the degree.
    """
    if relaxed:
        return interp_table(table, deg)
    idx = np.clip(np.rint(deg.data), 0, table.shape[0] - 1).astype(np.int64)
    return ad.gather_rows(table, idx)


class Graphormer(GraphModel):
    arch = "graphormer"

    def default_hparams(self) -> dict:
        return {"hidden": 32, "heads": 2, "layers": 2, "max_degree": 64, "max_spd": 20}

    def _build(self, rng) -> None:
        d = self.hparams["hidden"]
        heads = self.hparams["heads"]
        if d % heads:
            raise ValueError("hidden must be divisible by heads")
        self._param("x.w", (self.feature_dim, d), rng)
        self._param("x.b", (d,), rng, "zeros")
        self._param("deg_table", (self.hparams["max_degree"] + 1, d), rng, "small")
        for hh in range(heads):
            self._param(f"spd.h{hh}.table", (self.hparams["max_spd"] + 1, 1), rng, "small")
            self._param(f"spd.h{hh}.unreachable", (1,), rng, "small")
            self._param(f"spd.h{hh}.virtual", (1,), rng, "small")
        if self.task == "graph":
            self._param("virtual_emb", (1, d), rng, "small")
        for l in range(self.hparams["layers"]):
            for hh in range(heads):
                dh = d // heads
                self._param(f"l{l}.h{hh}.wq", (d, dh), rng)
                self._param(f"l{l}.h{hh}.wk", (d, dh), rng)
                self._param(f"l{l}.h{hh}.wv", (d, dh), rng)
            self._param(f"l{l}.wo", (d, d), rng)
            self._param(f"l{l}.ln1.g", (d,), rng, "ones")
            self._param(f"l{l}.ln1.b", (d,), rng, "zeros")
            self._param(f"l{l}.ln2.g", (d,), rng, "ones")
            self._param(f"l{l}.ln2.b", (d,), rng, "zeros")
            self._param(f"l{l}.ffn.w1", (d, 2 * d), rng)
            self._param(f"l{l}.ffn.b1", (2 * d,), rng, "zeros")
            self._param(f"l{l}.ffn.w2", (2 * d, d), rng)
            self._param(f"l{l}.ffn.b2", (d,), rng, "zeros")
        self._param("out.w", (d, self.n_classes), rng)
        self._param("out.b", (self.n_classes,), rng, "zeros")

    def _head_bias(self, spd: Tensor, hh: int) -> Tensor:
        n = spd.shape[0]
        bias = spd_bias(spd, self.p(f"spd.h{hh}.table"), self.p(f"spd.h{hh}.unreachable"))
        bias = ad.reshape(bias, (n, n))
        if self.task != "graph":
            return bias
        # append the virtual node: its incident biases are a learned scalar
        bv = self.p(f"spd.h{hh}.virtual")
        col = ad.mul(Tensor(np.ones((n, 1))), ad.reshape(bv, (1, 1)))
        row = ad.mul(Tensor(np.ones((1, n + 1))), ad.reshape(bv, (1, 1)))
        return ad.concat([ad.concat([bias, col], axis=1), row], axis=0)

    def _encode(self, a: Tensor, x: Tensor, spd: Tensor, relaxed_deg: bool,
                node_probs: Tensor | None) -> Tensor:
        n = a.shape[0]
        d = self.hparams["hidden"]
        heads = self.hparams["heads"]
        dh = d // heads
        deg = ad.tsum(a, axis=1)
        h = ad.add(linear(x, self.p("x.w"), self.p("x.b")),
                   degree_pe(deg, self.p("deg_table"), relaxed_deg))
        if self.task == "graph":
            h = ad.concat([h, self.p("virtual_emb")], axis=0)
        big_n = h.shape[0]

        lp = None
        if node_probs is not None:
            p_full = node_probs
            if self.task == "graph":
                p_full = ad.concat([node_probs, Tensor(np.ones(1))], axis=0)
            lp = log_prob_row(p_full)

        biases = [self._head_bias(spd, hh) for hh in range(heads)]
        scale = 1.0 / np.sqrt(dh)
        for l in range(self.hparams["layers"]):
            outs = []
            for hh in range(heads):
                q = ad.matmul(h, self.p(f"l{l}.h{hh}.wq"))
                k = ad.matmul(h, self.p(f"l{l}.h{hh}.wk"))
                v = ad.matmul(h, self.p(f"l{l}.h{hh}.wv"))
                w = ad.add(ad.mul(ad.matmul(q, ad.transpose(k)), scale), biases[hh])
                if lp is not None:
                    w = ad.add(w, lp)
                outs.append(ad.matmul(ad.softmax(w), v))
            attn = ad.matmul(ad.concat(outs, axis=1), self.p(f"l{l}.wo"))
            h = layer_norm(ad.add(h, attn), self.p(f"l{l}.ln1.g"), self.p(f"l{l}.ln1.b"))
            ffn = linear(ad.relu(linear(h, self.p(f"l{l}.ffn.w1"), self.p(f"l{l}.ffn.b1"))),
                         self.p(f"l{l}.ffn.w2"), self.p(f"l{l}.ffn.b2"))
            h = layer_norm(ad.add(h, ffn), self.p(f"l{l}.ln2.g"), self.p(f"l{l}.ln2.b"))

        if self.task == "node":
            return linear(h, self.p("out.w"), self.p("out.b"))
        virtual = ad.gather_rows(h, np.array([big_n - 1]))
        return linear(virtual, self.p("out.w"), self.p("out.b"))

    def forward(self, atilde, features, toggles=RelaxToggles(), node_probs=None,
                spd_override: Tensor | None = None, **kw) -> Tensor:
        """Relaxed forward; ``spd_override`` substitutes the distance matrix
        (used by gradient checks that must hold the shortest paths fixed)."""
        a = atilde if isinstance(atilde, Tensor) else Tensor(atilde)
        x = features if isinstance(features, Tensor) else Tensor(features)
        if spd_override is not None:
            spd = spd_override
        elif toggles.graphormer_spd:
            spd = rspd_matrix(a)
        else:
            spd = Tensor(bfs_hops(np.rint(a.data)))
        p = node_probs if toggles.node_prob_bias else None
        return self._encode(a, x, spd, toggles.graphormer_deg, p)

    def forward_discrete(self, adjacency: np.ndarray, features: np.ndarray, **kw) -> Tensor:
        spd = Tensor(bfs_hops(np.asarray(adjacency)))
        return self._encode(Tensor(adjacency), Tensor(features), spd, False, None)
