"""Adam optimizer for the training harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, Tensor], AdamState]:
    """One Adam update with bias correction; parameters are updated in place.

    Missing gradient entries count as zero.  The update is a pure function
    of (params, grads, state), so identical calls produce identical results.
    """
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        garr = np.zeros_like(p.data) if g is None else np.asarray(
            g.data if isinstance(g, Tensor) else g, dtype=np.float64
        )
        if garr.shape != p.data.shape:
            raise ValueError(
                f"adam_step: gradient shape {garr.shape} != param shape {p.data.shape} for {name!r}"
            )
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * garr
        v *= beta2
        v += (1.0 - beta2) * garr * garr
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return params, state
