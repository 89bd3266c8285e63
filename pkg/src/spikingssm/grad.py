"""Surrogate gradients, reference backward passes for spiking layers, and AdamW.

The backward functions here are the float64 reference implementations of
the four training modes:

* ``bptt``: full backpropagation through time, including the gradient that
  flows through the reset of the membrane potential.
* ``bptt_detached``: BPTT with the spike detached from the reset path.
* ``sltt``: only the spatial component ``delta_t * g'`` is kept.
* ``sdn``: same graph as SLTT; the leak term comes from the frozen SDN.

The torch autograd functions used for training live in
:mod:`spikingssm.spiking` and are tested against these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lif import NeuronParams

TRAIN_MODES = ("bptt", "bptt_detached", "sltt", "sdn")
THRESHOLD_FORMS = ("fixed", "scaled")


def surrogate_grad(x, alpha: float = 1.0):
    """Piecewise quadratic surrogate derivative: alpha - alpha^2 |x| on |x| <= 1/alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) <= 1.0 / alpha, alpha - alpha * alpha * np.abs(x), 0.0)


def surrogate_primitive(x, alpha: float = 1.0):
    """Smooth step whose derivative is :func:`surrogate_grad`."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = np.asarray(x, dtype=np.float64)
    inside = -0.5 * alpha * alpha * np.abs(x) * x + alpha * x + 0.5
    return np.where(x < -1.0 / alpha, 0.0, np.where(x > 1.0 / alpha, 1.0, inside))


@dataclass
class GradSignal:
    """Gradients leaving a spiking layer for an upstream ``delta``."""

    delta: np.ndarray
    dx: np.ndarray
    dv_th: float
    extras: dict = field(default_factory=dict)


def backward_spiking(
    mode: str,
    delta,
    inputs,
    pre_reset,
    spikes,
    params: NeuronParams = NeuronParams(),
    alpha: float = 1.0,
    threshold_form: str = "fixed",
) -> GradSignal:
    """Gradients of the loss w.r.t. layer inputs and threshold.

    ``pre_reset`` is u'_t as produced by the forward graph of ``mode``. For
    the ``scaled`` threshold form (sltt/sdn only) the forward consumed
    ``inputs / v_th`` at unit threshold, so ``pre_reset`` is in scaled units.
    ``dv_th`` sums over every axis.
    """
    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if threshold_form not in THRESHOLD_FORMS:
        raise ValueError(f"unknown threshold form {threshold_form!r}")
    delta = np.asarray(delta, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    u = np.asarray(pre_reset, dtype=np.float64)
    s = np.asarray(spikes, dtype=np.float64)
    if not (delta.shape == x.shape == u.shape == s.shape):
        raise ValueError("delta, inputs, trace and spikes must share a shape")
    v_th, tau, u_r = params.v_th, params.tau, params.u_r

    if threshold_form == "scaled":
        if mode in ("bptt", "bptt_detached"):
            raise ValueError("scaled threshold form applies to sltt/sdn graphs only")
        g = surrogate_grad(u - 1.0, alpha)
        dx = delta * g / v_th
        dv = float(np.sum(delta * g * (-x / v_th**2)))
        return GradSignal(delta, dx, dv, {"g": g})

    g = surrogate_grad(u - v_th, alpha)
    if mode in ("sltt", "sdn"):
        return GradSignal(delta, delta * g, float(np.sum(-delta * g)), {"g": g})

    # reverse sweep; grad_u holds dL/du_t = tau * dL/du'_{t+1}
    steps = x.shape[-1]
    dx = np.zeros_like(x)
    grad_u = np.zeros(x.shape[:-1])
    dv = np.zeros_like(x)
    for t in range(steps - 1, -1, -1):
        gt, st, ut, dt = g[..., t], s[..., t], u[..., t], delta[..., t]
        if mode == "bptt":
            du = dt * gt + grad_u * (1.0 - st + (u_r - ut) * gt)
            dv[..., t] = (dt + grad_u * (u_r - ut)) * (-gt)
        else:
            du = dt * gt + grad_u * (1.0 - st)
            dv[..., t] = dt * (-gt)
        dx[..., t] = du
        grad_u = tau * du
    return GradSignal(delta, dx, float(np.sum(dv)), {"g": g})


def threshold_grad_scaled(delta, sg_values, x, v_th: float) -> float:
    """dL/dv_th = sum_t delta_t * g'_t * (-x_t / v_th^2) for input-scaled thresholds."""
    if not v_th > 0:
        raise ValueError("v_th must be positive")
    delta = np.asarray(delta, dtype=np.float64)
    return float(np.sum(delta * np.asarray(sg_values) * (-np.asarray(x) / v_th**2)))


def relaxed_forward(
    mode: str,
    inputs,
    v_th: float,
    leak,
    alpha: float = 1.0,
    threshold_form: str = "fixed",
) -> np.ndarray:
    """Smooth stand-in for the sltt/sdn forward graph.

    The Heaviside is replaced by :func:`surrogate_primitive` and the leak term
    ``leak`` (tau*u_{t-1} from the SDN or from the recorded trace) is held
    fixed, so the analytic gradient of ``sum(delta * out)`` is exactly what
    :func:`backward_spiking` returns for these modes.
    """
    if mode not in ("sltt", "sdn"):
        raise ValueError("relaxed forward is defined for the sltt and sdn graphs")
    x = np.asarray(inputs, dtype=np.float64)
    leak = np.asarray(leak, dtype=np.float64)
    if threshold_form == "scaled":
        return surrogate_primitive(leak + x / v_th - 1.0, alpha)
    return surrogate_primitive(leak + x - v_th, alpha)


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def optimizer_step(
    params: dict,
    grads: dict,
    lr: float,
    weight_decay: float,
    state: AdamWState,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> dict:
    """One AdamW update with decoupled weight decay. Returns new arrays."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"shape mismatch for {name!r}")
        m = state.exp_avg.get(name, np.zeros_like(g))
        v = state.exp_avg_sq.get(name, np.zeros_like(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.exp_avg[name], state.exp_avg_sq[name] = m, v
        new = np.asarray(p, dtype=np.float64) * (1.0 - lr * weight_decay)
        denom = np.sqrt(v) / np.sqrt(bc2) + eps
        out[name] = new - (lr / bc1) * m / denom
    return out
