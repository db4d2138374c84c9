"""Spectral-PE transformer with separate real/fake-edge attention branches.

Node positional encodings come from the k smallest Laplacian eigenpairs,
processed by a small transformer encoder.  During attacks the
eigendecomposition is approximated to first order around a clean base
(see :mod:`gtattack.spectral`); the dual attention relaxes the binary
real/fake edge decision by pushing log(A) / log(1-A) biases into the two
branch softmaxes, which reproduces the hard branches exactly on discrete
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..graphs import laplacian_sym, laplacian_sym_tensor
from ..spectral import (
    EigenDecomposition,
    degenerate_alignment,
    eig_sym,
    perturb_eigenvalues,
    perturb_eigenvectors,
    perturbation_operator,
)
from .common import GraphModel, RelaxToggles, layer_norm, linear, log_prob_row, pool_weighted

__all__ = ["SAN", "SpectralReference"]


@dataclass
class SpectralReference:
    """Clean Laplacian and its decomposition, the base point for perturbation."""

    lap: np.ndarray
    decomp: EigenDecomposition

    @classmethod
    def of(cls, adjacency: np.ndarray) -> "SpectralReference":
        lap = laplacian_sym(adjacency)
        return cls(lap=lap, decomp=eig_sym(lap))


def _cols(t: Tensor, idx: np.ndarray) -> Tensor:
    return ad.transpose(ad.gather_rows(ad.transpose(t), idx))


class SAN(GraphModel):
    arch = "san"

    def default_hparams(self) -> dict:
        return {
            "hidden": 32,
            "pe_dim": 8,
            "eigenpairs": 8,
            "heads": 2,
            "layers": 2,
            "gamma": 1.0,
        }

    def _build(self, rng) -> None:
        d = self.hparams["hidden"]
        dp = self.hparams["pe_dim"]
        heads = self.hparams["heads"]
        if d % heads:
            raise ValueError("hidden must be divisible by heads")
        if d <= dp:
            raise ValueError("hidden must exceed pe_dim")
        self._param("x.w", (self.feature_dim, d - dp), rng)
        self._param("x.b", (d - dp,), rng, "zeros")
        # eigen-token encoder (1-layer transformer over k tokens per node)
        self._param("lpe.tok.w", (2, dp), rng)
        self._param("lpe.tok.b", (dp,), rng, "zeros")
        for name in ("wq", "wk", "wv"):
            self._param(f"lpe.{name}", (dp, dp), rng)
        self._param("lpe.ffn.w1", (dp, 2 * dp), rng)
        self._param("lpe.ffn.b1", (2 * dp,), rng, "zeros")
        self._param("lpe.ffn.w2", (2 * dp, dp), rng)
        self._param("lpe.ffn.b2", (dp,), rng, "zeros")
        dh = d // heads
        for l in range(self.hparams["layers"]):
            for hh in range(heads):
                for name in ("wq_real", "wk_real", "wq_fake", "wk_fake", "wv"):
                    self._param(f"l{l}.h{hh}.{name}", (d, dh), rng)
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

    # -- positional encodings -------------------------------------------------
    def lpe(self, eigenvalues: Tensor, eigenvectors: Tensor) -> Tensor:
        """Per-node PE from the k smallest eigenpairs (zero-padded if k > n)."""
        n = eigenvectors.shape[0]
        k = self.hparams["eigenpairs"]
        dp = self.hparams["pe_dim"]
        keep = min(k, n)
        lam_k = ad.gather_rows(ad.reshape(eigenvalues, (n, 1)), np.arange(keep))
        u_k = _cols(eigenvectors, np.arange(keep))
        if keep < k:
            lam_k = ad.concat([lam_k, Tensor(np.zeros((k - keep, 1)))], axis=0)
            u_k = ad.concat([u_k, Tensor(np.zeros((n, k - keep)))], axis=1)
        # tokens: (n, k, 2) rows of (lambda_t, U_{i,t})
        lam_grid = ad.add(Tensor(np.zeros((n, k))), ad.reshape(lam_k, (1, k)))
        tokens = ad.concat(
            [ad.reshape(lam_grid, (n, k, 1)), ad.reshape(u_k, (n, k, 1))], axis=2
        )
        t2d = linear(ad.reshape(tokens, (n * k, 2)), self.p("lpe.tok.w"), self.p("lpe.tok.b"))
        t3d = ad.reshape(t2d, (n, k, dp))
        q = ad.reshape(ad.matmul(t2d, self.p("lpe.wq")), (n, k, dp))
        kk = ad.reshape(ad.matmul(t2d, self.p("lpe.wk")), (n, k, dp))
        v = ad.reshape(ad.matmul(t2d, self.p("lpe.wv")), (n, k, dp))
        scores = ad.mul(ad.bmm(q, ad.transpose(kk)), 1.0 / np.sqrt(dp))
        mixed = ad.add(t3d, ad.bmm(ad.softmax(scores), v))
        m2d = ad.reshape(mixed, (n * k, dp))
        ffn = linear(ad.relu(linear(m2d, self.p("lpe.ffn.w1"), self.p("lpe.ffn.b1"))),
                     self.p("lpe.ffn.w2"), self.p("lpe.ffn.b2"))
        return ad.tmean(ad.reshape(ad.add(m2d, ffn), (n, k, dp)), axis=1)

    # -- attention -------------------------------------------------------------
    def _dual_attention(self, h: Tensor, a: Tensor, layer: int, hh: int,
                        relaxed: bool, lp: Tensor | None) -> Tensor:
        d = self.hparams["hidden"]
        dh = d // self.hparams["heads"]
        gamma = self.hparams["gamma"]
        scale = 1.0 / np.sqrt(dh)
        qr = ad.matmul(h, self.p(f"l{layer}.h{hh}.wq_real"))
        kr = ad.matmul(h, self.p(f"l{layer}.h{hh}.wk_real"))
        qf = ad.matmul(h, self.p(f"l{layer}.h{hh}.wq_fake"))
        kf = ad.matmul(h, self.p(f"l{layer}.h{hh}.wk_fake"))
        v = ad.matmul(h, self.p(f"l{layer}.h{hh}.wv"))
        w_real = ad.mul(ad.matmul(qr, ad.transpose(kr)), scale)
        w_fake = ad.mul(ad.matmul(qf, ad.transpose(kf)), scale)
        if relaxed:
            w_real = ad.add(w_real, ad.tlog(a))
            w_fake = ad.add(w_fake, ad.tlog(ad.sub(1.0, a)))
        else:
            real_support = a.data > 0.5
            w_real = ad.masked_fill(w_real, ~real_support, -np.inf)
            w_fake = ad.masked_fill(w_fake, real_support, -np.inf)
        if lp is not None:
            w_real = ad.add(w_real, lp)
            w_fake = ad.add(w_fake, lp)
        alpha = ad.add(
            ad.mul(ad.softmax(w_real), 1.0 / (1.0 + gamma)),
            ad.mul(ad.softmax(w_fake), gamma / (1.0 + gamma)),
        )
        return ad.matmul(alpha, v)

    def _encode(self, a: Tensor, x: Tensor, eigenvalues: Tensor, eigenvectors: Tensor,
                relaxed_attention: bool, node_probs: Tensor | None,
                prob_bias: bool = True) -> Tensor:
        d = self.hparams["hidden"]
        pe = self.lpe(eigenvalues, eigenvectors)
        h = ad.concat([linear(x, self.p("x.w"), self.p("x.b")), pe], axis=1)
        lp = log_prob_row(node_probs) if (node_probs is not None and prob_bias) else None
        for l in range(self.hparams["layers"]):
            outs = [
                self._dual_attention(h, a, l, hh, relaxed_attention, lp)
                for hh in range(self.hparams["heads"])
            ]
            attn = ad.matmul(ad.concat(outs, axis=1), self.p(f"l{l}.wo"))
            h = layer_norm(ad.add(h, attn), self.p(f"l{l}.ln1.g"), self.p(f"l{l}.ln1.b"))
            ffn = linear(ad.relu(linear(h, self.p(f"l{l}.ffn.w1"), self.p(f"l{l}.ffn.b1"))),
                         self.p(f"l{l}.ffn.w2"), self.p(f"l{l}.ffn.b2"))
            h = layer_norm(ad.add(h, ffn), self.p(f"l{l}.ln2.g"), self.p(f"l{l}.ln2.b"))
        if self.task == "node":
            return linear(h, self.p("out.w"), self.p("out.b"))
        pooled = pool_weighted(h, node_probs, "mean")
        return linear(ad.reshape(pooled, (1, d)), self.p("out.w"), self.p("out.b"))

    # -- entry points ------------------------------------------------------------
    def forward(self, atilde, features, toggles=RelaxToggles(), node_probs=None,
                spectral_ref: SpectralReference | None = None, **kw) -> Tensor:
        a = atilde if isinstance(atilde, Tensor) else Tensor(atilde)
        x = features if isinstance(features, Tensor) else Tensor(features)
        if toggles.san_lap_pert and spectral_ref is not None:
            delta = ad.sub(laplacian_sym_tensor(a), Tensor(spectral_ref.lap))
            base = degenerate_alignment(spectral_ref.decomp, delta.data)
            op = perturbation_operator(base)
            lam = perturb_eigenvalues(base, delta)
            u = perturb_eigenvectors(base, delta, op)
        else:
            decomp = eig_sym(laplacian_sym(a.data))
            lam, u = Tensor(decomp.eigenvalues), Tensor(decomp.eigenvectors)
        return self._encode(a, x, lam, u, toggles.san_attention, node_probs,
                            prob_bias=toggles.node_prob_bias)

    def forward_discrete(self, adjacency: np.ndarray, features: np.ndarray,
                         decomp: EigenDecomposition | None = None, **kw) -> Tensor:
        if decomp is None:
            decomp = eig_sym(laplacian_sym(adjacency))
        return self._encode(
            Tensor(adjacency), Tensor(features),
            Tensor(decomp.eigenvalues), Tensor(decomp.eigenvectors),
            relaxed_attention=False, node_probs=None,
        )
