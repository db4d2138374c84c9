"""Random-walk transformer with pair representations and a degree scaler.

Positional information enters through stacked random-walk probability
slices P = [I, M, M^2, ...] with M = D^-1 A, which are continuous in the
adjacency, so no forward relaxation is needed; the two toggles only sever
gradient flow (through P, and through the log(1+deg) scaler) while leaving
forward values untouched.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .common import GraphModel, RelaxToggles, layer_norm, linear, log_prob_row, pool_weighted

__all__ = ["GRIT", "rrwp"]


def rrwp(atilde: Tensor | np.ndarray, k: int) -> Tensor:
    """Random-walk probability stack, shape (n, n, k).

    Slice 0 is the identity, slice t is M^t with M = D^-1 A; rows of
    degree-0 nodes are all zero (safe division).
    """
    if k < 2:
        raise ValueError("rrwp needs k >= 2")
    a = atilde if isinstance(atilde, Tensor) else Tensor(atilde)
    n = a.shape[0]
    d = ad.tsum(a, axis=1)
    inv = ad.mul(ad.rsqrt_safe(d), ad.rsqrt_safe(d))  # 1/d where d > 0 else 0
    m = ad.mul(a, ad.reshape(inv, (n, 1)))
    slices = [Tensor(np.eye(n)), m]
    power = m
    for _ in range(k - 2):
        power = ad.matmul(power, m)
        slices.append(power)
    return ad.concat([ad.reshape(s, (n, n, 1)) for s in slices], axis=2)


class GRIT(GraphModel):
    arch = "grit"

    def default_hparams(self) -> dict:
        return {"hidden": 24, "pair_dim": 8, "heads": 2, "layers": 2, "walk_length": 8}

    def _build(self, rng) -> None:
        d = self.hparams["hidden"]
        de = self.hparams["pair_dim"]
        k = self.hparams["walk_length"]
        heads = self.hparams["heads"]
        if d % heads:
            raise ValueError("hidden must be divisible by heads")
        dh = d // heads
        self._param("x.w", (self.feature_dim, d), rng)
        self._param("x.b", (d,), rng, "zeros")
        self._param("pe_node.w", (k, d), rng)
        self._param("pe_pair.w", (k, de), rng)
        self._param("pe_pair.b", (de,), rng, "zeros")
        for l in range(self.hparams["layers"]):
            self._param(f"l{l}.wq", (d, de), rng)
            self._param(f"l{l}.wk", (d, de), rng)
            self._param(f"l{l}.ew", (de, de), rng)
            self._param(f"l{l}.eb", (de, de), rng)
            self._param(f"l{l}.eback", (de, de), rng)
            for hh in range(heads):
                self._param(f"l{l}.h{hh}.wv", (d, dh), rng)
                self._param(f"l{l}.h{hh}.score", (de, 1), rng)
                self._param(f"l{l}.h{hh}.ev", (de, dh), rng)
            self._param(f"l{l}.wo", (d, d), rng)
            self._param(f"l{l}.theta1", (d,), rng, "ones")
            self._param(f"l{l}.theta2", (d,), rng, "small")
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

    def forward(self, atilde, features, toggles=RelaxToggles(), node_probs=None, **kw) -> Tensor:
        a = atilde if isinstance(atilde, Tensor) else Tensor(atilde)
        x = features if isinstance(features, Tensor) else Tensor(features)
        n = a.shape[0]
        d = self.hparams["hidden"]
        heads = self.hparams["heads"]
        k = self.hparams["walk_length"]
        de = self.hparams["pair_dim"]

        p = rrwp(a, k)
        if not toggles.grit_rrwp_grad:
            p = ad.stop_gradient(p)
        p2d = ad.reshape(p, (n * n, k))
        diag_idx = np.arange(n) * n + np.arange(n)
        node_pe = ad.matmul(ad.gather_rows(p2d, diag_idx), self.p("pe_node.w"))
        h = ad.add(linear(x, self.p("x.w"), self.p("x.b")), node_pe)
        e2d = linear(p2d, self.p("pe_pair.w"), self.p("pe_pair.b"))

        deg = ad.tsum(a, axis=1)
        if not toggles.grit_deg_grad:
            deg = ad.stop_gradient(deg)
        log_deg = ad.reshape(ad.tlog(ad.add(deg, Tensor(np.ones(n)))), (n, 1))

        lp = None
        if node_probs is not None and toggles.node_prob_bias:
            lp = log_prob_row(node_probs)

        for l in range(self.hparams["layers"]):
            # pair-conditioned activation: relu((q_i + k_j) * (W e_ij) + W' e_ij)
            q = ad.matmul(h, self.p(f"l{l}.wq"))
            kk = ad.matmul(h, self.p(f"l{l}.wk"))
            qk = ad.outer_add(q, kk)
            ew = ad.reshape(ad.matmul(e2d, self.p(f"l{l}.ew")), (n, n, de))
            eb = ad.reshape(ad.matmul(e2d, self.p(f"l{l}.eb")), (n, n, de))
            pairact = ad.relu(ad.add(ad.mul(qk, ew), eb))
            pair2d = ad.reshape(pairact, (n * n, de))
            outs = []
            for hh in range(heads):
                w = ad.reshape(ad.matmul(pair2d, self.p(f"l{l}.h{hh}.score")), (n, n))
                if lp is not None:
                    w = ad.add(w, lp)
                alpha = ad.softmax(w)
                v_h = ad.matmul(h, self.p(f"l{l}.h{hh}.wv"))
                ev_h = ad.reshape(ad.matmul(pair2d, self.p(f"l{l}.h{hh}.ev")), (n, n, -1))
                agg = ad.add(
                    ad.matmul(alpha, v_h),
                    ad.tsum(ad.mul(ad.reshape(alpha, (n, n, 1)), ev_h), axis=1),
                )
                outs.append(agg)
            attn = ad.matmul(ad.concat(outs, axis=1), self.p(f"l{l}.wo"))
            scaled = ad.add(
                ad.mul(attn, self.p(f"l{l}.theta1")),
                ad.mul(log_deg, ad.mul(attn, self.p(f"l{l}.theta2"))),
            )
            h = layer_norm(ad.add(h, scaled), self.p(f"l{l}.ln1.g"), self.p(f"l{l}.ln1.b"))
            ffn = linear(ad.relu(linear(h, self.p(f"l{l}.ffn.w1"), self.p(f"l{l}.ffn.b1"))),
                         self.p(f"l{l}.ffn.w2"), self.p(f"l{l}.ffn.b2"))
            h = layer_norm(ad.add(h, ffn), self.p(f"l{l}.ln2.g"), self.p(f"l{l}.ln2.b"))
            e2d = ad.add(e2d, ad.matmul(pair2d, self.p(f"l{l}.eback")))

        if self.task == "node":
            return linear(h, self.p("out.w"), self.p("out.b"))
        pooled = pool_weighted(h, node_probs, "mean")
        return linear(ad.reshape(pooled, (1, d)), self.p("out.w"), self.p("out.b"))

    def forward_discrete(self, adjacency: np.ndarray, features: np.ndarray, **kw) -> Tensor:
        return self.forward(Tensor(adjacency), features)
