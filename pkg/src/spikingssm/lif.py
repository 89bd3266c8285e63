"""Iterative leaky integrate-and-fire neuron, the ground-truth oracle.

All functions operate on the last axis as time and broadcast over any
leading batch axes. Arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

RESET_MODES = ("hard", "soft", "none")


@dataclass(frozen=True)
class NeuronParams:
    tau: float = 0.2
    v_th: float = 1.0
    u_r: float = 0.0
    reset_mode: str = "hard"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.v_th > 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if not self.u_r < self.v_th:
            raise ValueError("u_r must be below v_th")
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}")


class MembraneTrace(NamedTuple):
    pre_reset: np.ndarray
    post_reset: np.ndarray


def _as_finite(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError(f"{name} must be a non-empty sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def spike_from_potential(pre_reset, v_th: float) -> np.ndarray:
    """Heaviside firing with the boundary convention H(0) = 1."""
    if not v_th > 0:
        raise ValueError("v_th must be positive")
    return (np.asarray(pre_reset) >= v_th).astype(np.float64)


def lif_run(inputs, params: NeuronParams = NeuronParams()) -> tuple[np.ndarray, MembraneTrace]:
    """Step the neuron through ``inputs`` from a zero initial potential.

    Returns ``(spikes, MembraneTrace(pre_reset, post_reset))`` with the same
    shape as ``inputs``.
    """
    x = _as_finite(inputs, "inputs")
    tau, v_th, u_r = params.tau, params.v_th, params.u_r
    steps = x.shape[-1]
    xt = np.moveaxis(x, -1, 0)
    pre = np.empty_like(xt)
    post = np.empty_like(xt)
    spikes = np.empty_like(xt)
    u = np.zeros(xt.shape[1:])
    for t in range(steps):
        v = tau * u + xt[t]
        s = (v >= v_th).astype(np.float64)
        if params.reset_mode == "hard":
            u = np.where(s > 0, u_r, v)
        elif params.reset_mode == "soft":
            u = v - s * v_th
        else:
            u = v
        pre[t], post[t], spikes[t] = v, u, s
    return (
        np.moveaxis(spikes, 0, -1),
        MembraneTrace(np.moveaxis(pre, 0, -1), np.moveaxis(post, 0, -1)),
    )


def unrolled_pre_reset(inputs, spikes, tau: float, u_r: float = 0.0) -> np.ndarray:
    """Closed-form hard-reset potential from a known spike history.

    u'_t = sum_{i<=t} tau^(t-i) * I_i * prod_{j=i}^{t-1} (1 - s_j), summed
    sequentially with i ascending. Quadratic in length; meant as a cross-check.
    """
    if u_r != 0.0:
        raise ValueError("closed form assumes a zero reset potential")
    x = _as_finite(inputs, "inputs")
    s = np.asarray(spikes, dtype=np.float64)
    if s.shape != x.shape:
        raise ValueError("inputs and spikes must have equal shapes")
    steps = x.shape[-1]
    keep = 1.0 - s
    out = np.zeros_like(x)
    for t in range(steps):
        # factor[i] = prod_{j=i}^{t-1} keep_j, with factor[t] = 1
        factor = np.ones(x.shape[:-1] + (t + 1,))
        if t > 0:
            factor[..., :t] = np.cumprod(keep[..., t - 1 :: -1], axis=-1)[..., ::-1]
        powers = tau ** np.arange(t, -1, -1, dtype=np.float64)
        terms = powers * x[..., : t + 1] * factor
        out[..., t] = np.cumsum(terms, axis=-1)[..., -1]
    return out


def leak_targets(post_reset: np.ndarray, tau: float) -> np.ndarray:
    """tau * u_{t-1} aligned to step t, with u_0 = 0."""
    out = np.zeros_like(post_reset)
    out[..., 1:] = tau * post_reset[..., :-1]
    return out
