"""Seedable randomness and FFT-based causal convolution."""

from __future__ import annotations

import math

import numpy as np
import torch

RNG_ALGORITHM = "PCG64"


class Rng:
    """Seedable 64-bit generator with splittable per-worker substreams.

    Wraps ``numpy.random.Generator(PCG64)``. Normal samples come from numpy's
    ziggurat transform, which is deterministic for a given seed across
    platforms. Substreams are derived with ``SeedSequence.spawn`` so they do
    not overlap.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else 0
        else:
            self.seed = int(seed)
            self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["Rng"]:
        return [Rng(s) for s in self._seq.spawn(n)]

    def get_state(self) -> dict:
        return self.generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = state

    def torch_seed(self) -> int:
        """Draw a seed for torch's global generator from this stream."""
        return int(self.generator.integers(0, 2**62))


def rng_normal(rng: Rng, n: int | tuple, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if not (math.isfinite(mean) and math.isfinite(std)):
        raise ValueError("mean and std must be finite")
    if std < 0:
        raise ValueError("std must be non-negative")
    shape = (n,) if isinstance(n, int) else tuple(n)
    if any(d < 1 for d in shape):
        raise ValueError("sample count must be >= 1")
    z = rng.generator.standard_normal(shape)
    return mean + std * z


def fft_size(length: int) -> int:
    """Smallest power of two >= 2*length - 1."""
    return 1 << max(0, (2 * length - 2).bit_length())


def causal_convolve(kernel: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """out[..., t] = sum_{k<=t} kernel[..., t-k] * signal[..., k] via FFT.

    Broadcasts over leading axes. Real inputs only.
    """
    kernel = np.asarray(kernel)
    signal = np.asarray(signal)
    if kernel.shape[-1] != signal.shape[-1]:
        raise ValueError(
            f"length mismatch: kernel {kernel.shape[-1]} vs signal {signal.shape[-1]}"
        )
    length = signal.shape[-1]
    n = fft_size(length)
    kf = np.fft.rfft(kernel, n=n)
    sf = np.fft.rfft(signal, n=n)
    out = np.fft.irfft(kf * sf, n=n)[..., :length]
    return out.astype(np.result_type(kernel.dtype, signal.dtype, np.float32), copy=False)


def causal_convolve_direct(kernel: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """O(L^2) reference for :func:`causal_convolve`."""
    kernel = np.asarray(kernel, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    length = signal.shape[-1]
    out = np.zeros(np.broadcast_shapes(kernel.shape, signal.shape))
    for t in range(length):
        out[..., t] = np.sum(kernel[..., t::-1] * signal[..., : t + 1], axis=-1)
    return out


def causal_convolve_torch(kernel: torch.Tensor, signal: torch.Tensor) -> torch.Tensor:
    """Differentiable batched FFT causal convolution along the last axis."""
    length = signal.shape[-1]
    if kernel.shape[-1] != length:
        raise ValueError("length mismatch")
    n = fft_size(length)
    kf = torch.fft.rfft(kernel, n=n)
    sf = torch.fft.rfft(signal, n=n)
    return torch.fft.irfft(kf * sf, n=n)[..., :length]
