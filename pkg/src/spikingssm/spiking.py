"""Torch spiking activations for the four training modes.

Tensors are ``(..., L)`` with time last. The iterative modes step through
time in Python; the SDN mode fires every step at once from the frozen SDN's
leak prediction. Backward passes follow :mod:`spikingssm.grad`.
"""

from __future__ import annotations

import time

import torch
from torch import nn

from .grad import TRAIN_MODES


def surrogate_grad_torch(x: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    return torch.clamp(alpha - alpha * alpha * x.abs(), min=0.0)


class SpikeFn(torch.autograd.Function):
    """Heaviside with H(0) = 1 forward, piecewise-quadratic surrogate backward."""

    @staticmethod
    def forward(ctx, x, alpha):
        ctx.save_for_backward(x)
        ctx.alpha = alpha
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * surrogate_grad_torch(x, ctx.alpha), None


def spike(x: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    return SpikeFn.apply(x, alpha)


class _Timer:
    """Accumulates wall time per stage name when attached to a layer."""

    def __init__(self):
        self.ms: dict[str, float] = {}

    def add(self, name: str, seconds: float) -> None:
        self.ms[name] = self.ms.get(name, 0.0) + 1e3 * seconds


class IterativeLIF(torch.autograd.Function):
    """Hard/zero-reset LIF stepped over time, fixed threshold form.

    ``mode`` selects the backward graph: bptt, bptt_detached or sltt.
    """

    @staticmethod
    def forward(ctx, x, v_th, tau, u_r, mode, alpha, timer):
        xt = x.movedim(-1, 0).contiguous()
        pre = torch.empty_like(xt)
        spikes = torch.empty_like(xt)
        u = torch.zeros_like(xt[0])
        li = fire = 0.0
        for t in range(xt.shape[0]):
            t0 = time.perf_counter()
            v = torch.add(xt[t], u, alpha=tau)
            t1 = time.perf_counter()
            s = (v >= v_th).to(v.dtype)
            t2 = time.perf_counter()
            u = v * (1.0 - s)
            if u_r:
                u = u + s * u_r
            li += (t1 - t0) + (time.perf_counter() - t2)
            fire += t2 - t1
            pre[t] = v
            spikes[t] = s
        if timer is not None:
            timer.add("leak_integrate", li)
            timer.add("fire", fire)
        ctx.save_for_backward(pre, spikes, v_th)
        ctx.tau, ctx.u_r, ctx.mode, ctx.alpha, ctx.timer = tau, u_r, mode, alpha, timer
        return spikes.movedim(0, -1)

    @staticmethod
    def backward(ctx, grad_s):
        start = time.perf_counter()
        pre, spikes, v_th = ctx.saved_tensors
        tau, u_r, mode, alpha = ctx.tau, ctx.u_r, ctx.mode, ctx.alpha
        delta = grad_s.movedim(-1, 0)
        g = surrogate_grad_torch(pre - v_th, alpha)
        dg = delta * g
        if mode == "sltt":
            dx = dg
            dv = -dg.sum()
        else:
            if mode == "bptt":
                carry = 1.0 - spikes + (u_r - pre) * g
            else:
                carry = 1.0 - spikes
            dx = torch.empty_like(dg)
            grad_u = torch.zeros_like(dg[0])
            grad_us = torch.empty_like(dg)
            for t in range(dg.shape[0] - 1, -1, -1):
                grad_us[t] = grad_u
                du = dg[t] + grad_u * carry[t]
                dx[t] = du
                grad_u = tau * du
            if mode == "bptt":
                dv = -((delta + grad_us * (u_r - pre)) * g).sum()
            else:
                dv = -dg.sum()
        if ctx.timer is not None:
            ctx.timer.add("leak_integrate", time.perf_counter() - start)
        return dx.movedim(0, -1), dv.reshape(v_th.shape), None, None, None, None, None


def iterative_lif(x, v_th, tau=0.2, u_r=0.0, mode="bptt", alpha=1.0, timer=None):
    if mode not in ("bptt", "bptt_detached", "sltt"):
        raise ValueError(f"{mode!r} is not an iterative mode")
    if not torch.is_tensor(v_th):
        v_th = torch.tensor(float(v_th), dtype=x.dtype)
    return IterativeLIF.apply(x, v_th, tau, u_r, mode, alpha, timer)


def sdn_spike(x: torch.Tensor, v_th, sdn: nn.Module, alpha: float = 1.0, timer=None):
    """Parallel firing with input scaling: u' = SDN(x/v_th) + x/v_th, s = H(u' - 1).

    The SDN prediction is computed without gradient, so the backward is
    dL/dx = delta*g'/v_th and dL/dv_th = sum delta*g'*(-x/v_th^2).
    Returns ``(spikes, pre_reset)``.
    """
    if not torch.is_tensor(v_th):
        v_th = torch.tensor(float(v_th), dtype=x.dtype)
    t0 = time.perf_counter()
    shape = x.shape
    with torch.no_grad():
        pred = sdn((x.detach() / v_th.detach()).reshape(-1, shape[-1])).reshape(shape)
    pre = pred + x / v_th
    t1 = time.perf_counter()
    s = spike(pre - 1.0, alpha)
    if timer is not None:
        timer.add("leak_integrate", t1 - t0)
        timer.add("fire", time.perf_counter() - t1)
    return s, pre


class SpikingNeuron(nn.Module):
    """LIF activation with a per-layer (optionally learnable) threshold.

    ``mode`` is one of the training modes; ``"iterative"`` is accepted as an
    alias for the plain stepped forward used at inference.
    """

    def __init__(self, tau: float = 0.2, v_th: float = 1.0, learnable: bool = True, alpha: float = 1.0):
        super().__init__()
        self.tau, self.alpha = tau, alpha
        self.v_th = nn.Parameter(torch.tensor(float(v_th)), requires_grad=learnable)
        self.timer: _Timer | None = None
        self.last_pre: torch.Tensor | None = None

    def threshold(self) -> torch.Tensor:
        return self.v_th.clamp(min=1e-3)

    def forward(self, x: torch.Tensor, mode: str, sdn: nn.Module | None = None) -> torch.Tensor:
        v_th = self.threshold()
        if mode == "iterative":
            mode = "bptt"
        if mode == "sdn":
            if sdn is None:
                raise ValueError("parallel SDN mode requires a loaded SDN")
            s, pre = sdn_spike(x, v_th, sdn, self.alpha, self.timer)
            self.last_pre = pre.detach() * v_th.detach()
            return s
        if mode not in TRAIN_MODES:
            raise ValueError(f"unknown mode {mode!r}")
        s = iterative_lif(x, v_th, self.tau, 0.0, mode, self.alpha, self.timer)
        self.last_pre = None
        return s
