"""Diagonal state space model (S4D): init, ZOH discretization, and the
recurrent and convolutional evaluation paths.

Parameters use the conjugate-symmetric convention: N/2 complex modes are
stored and outputs are ``2 * Re(sum_n C_n h_n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .numerics import Rng, causal_convolve, causal_convolve_torch


@dataclass
class SsmParams:
    """Continuous-time parameters for H channels, each with N/2 modes."""

    A: np.ndarray  # (H, N/2) complex
    B: np.ndarray  # (H, N/2) complex
    C: np.ndarray  # (H, N/2) complex
    log_delta: np.ndarray  # (H,)

    @property
    def delta(self) -> np.ndarray:
        return np.exp(self.log_delta)

    @property
    def state_size(self) -> int:
        return 2 * self.A.shape[-1]


@dataclass
class DiscreteSsm:
    A_bar: np.ndarray
    B_bar: np.ndarray


def s4d_lin_init(H: int, N: int, delta_range=(0.001, 0.1), rng: Rng | None = None) -> SsmParams:
    if N % 2:
        raise ValueError("state size N must be even")
    dmin, dmax = delta_range
    if not 0 < dmin < dmax:
        raise ValueError("need 0 < delta_min < delta_max")
    rng = rng or Rng(0)
    g = rng.generator
    n = np.arange(N // 2)
    A = np.broadcast_to(-0.5 + 1j * math.pi * n, (H, N // 2)).copy()
    B = np.ones((H, N // 2), dtype=np.complex128)
    C = (g.standard_normal((H, N // 2)) + 1j * g.standard_normal((H, N // 2))) / math.sqrt(2)
    log_delta = g.uniform(math.log(dmin), math.log(dmax), size=H)
    return SsmParams(A=A, B=B, C=C, log_delta=log_delta)


def discretize_zoh(A, B, delta) -> DiscreteSsm:
    """A_bar = exp(delta*A), B_bar = (A_bar - 1)/A * B, with the A -> 0 limit delta*B."""
    A = np.asarray(A, dtype=np.complex128)
    B = np.asarray(B, dtype=np.complex128)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim and delta.ndim < A.ndim:
        delta = delta[..., None]
    if np.any(A.real > 0):
        raise ValueError("unstable mode: Re(A) must be non-positive")
    dA = delta * A
    A_bar = np.exp(dA)
    small = np.abs(A) < 1e-12
    safe_A = np.where(small, 1.0, A)
    B_bar = np.where(small, delta * B, (A_bar - 1.0) / safe_A * B)
    return DiscreteSsm(A_bar=A_bar, B_bar=B_bar)


def discretize_params(p: SsmParams) -> DiscreteSsm:
    return discretize_zoh(p.A, p.B, p.delta)


def ssm_forward_recurrent(d: DiscreteSsm, C, x, conj_double: bool = True) -> np.ndarray:
    """Step h_t = A_bar*h_{t-1} + B_bar*x_t, y_t = (2)Re(C.h_t).

    ``d`` and ``C`` carry a trailing mode axis; ``x`` has time last and any
    leading axes broadcastable against the parameter leading axes.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    C = np.asarray(C, dtype=np.complex128)
    scale = 2.0 if conj_double else 1.0
    steps = x.shape[-1]
    lead = np.broadcast_shapes(x.shape[:-1], d.A_bar.shape[:-1])
    h = np.zeros(lead + d.A_bar.shape[-1:], dtype=np.complex128)
    y = np.empty(lead + (steps,))
    for t in range(steps):
        h = d.A_bar * h + d.B_bar * x[..., t, None]
        y[..., t] = scale * np.sum(C * h, axis=-1).real
    return y


def ssm_kernel(d: DiscreteSsm, C, length: int, conj_double: bool = True) -> np.ndarray:
    """K_j = (2)Re(sum_n C_n A_bar_n^j B_bar_n), j = 0..length-1, by direct powering."""
    if length < 1:
        raise ValueError("length must be >= 1")
    C = np.asarray(C, dtype=np.complex128)
    powers = d.A_bar[..., None] ** np.arange(length)  # (..., modes, L)
    k = np.sum((C * d.B_bar)[..., None] * powers, axis=-2)
    return (2.0 if conj_double else 1.0) * k.real


def ssm_forward_conv(d: DiscreteSsm, C, x, conj_double: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return causal_convolve(ssm_kernel(d, C, x.shape[-1], conj_double), x)


class S4DLayer(nn.Module):
    """Trainable per-channel S4D convolution, input and output (B, H, L).

    B is fixed at 1; C, delta (in log space) and A are trainable.
    """

    def __init__(self, H: int, N: int = 64, delta_range=(0.001, 0.1), seed: int = 0):
        super().__init__()
        p = s4d_lin_init(H, N, delta_range, Rng(seed))
        self.H, self.N = H, N
        self.log_dt = nn.Parameter(torch.tensor(p.log_delta, dtype=torch.float32))
        self.log_A_real = nn.Parameter(torch.tensor(np.log(-p.A.real), dtype=torch.float32))
        self.A_imag = nn.Parameter(torch.tensor(p.A.imag, dtype=torch.float32))
        C = np.stack([p.C.real, p.C.imag], axis=-1)
        self.C = nn.Parameter(torch.tensor(C, dtype=torch.float32))

    @classmethod
    def from_params(cls, p: SsmParams, dtype=torch.float64) -> "S4DLayer":
        layer = cls(p.A.shape[0], p.state_size)
        with torch.no_grad():
            layer.log_dt.data = torch.tensor(p.log_delta)
            layer.log_A_real.data = torch.tensor(np.log(-p.A.real))
            layer.A_imag.data = torch.tensor(p.A.imag)
            layer.C.data = torch.tensor(np.stack([p.C.real, p.C.imag], axis=-1))
        return layer.to(dtype)

    def kernel(self, length: int) -> torch.Tensor:
        dt = torch.exp(self.log_dt)[:, None]
        A = torch.complex(-torch.exp(self.log_A_real), self.A_imag)
        C = torch.view_as_complex(self.C.contiguous())
        dtA = A * dt
        CB = C * (torch.exp(dtA) - 1.0) / A
        steps = torch.arange(length, device=dt.device, dtype=dt.dtype)
        vander = torch.exp(dtA[..., None] * steps)
        return 2.0 * torch.einsum("hn,hnl->hl", CB, vander).real

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return causal_convolve_torch(self.kernel(x.shape[-1]), x)
