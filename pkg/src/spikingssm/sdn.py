"""Surrogate Dynamic Network: a tiny causal conv net predicting tau*u_{t-1}.

Training-mode layout::

    encoder   Conv1d(1->8, k=1, no bias)
    conv      Conv1d(8->8, k=8, pad=8, groups=8), keep first L steps
    bn1, relu
    residual  h + BN(Conv1d(8->8, k=1)), relu
    decoder   Conv1d(8->1, k=1)

With padding 8 on both sides and truncation to the first L outputs, the
prediction at step t sees inputs t-8 .. t-1 only. The encoder carries no
bias so that it folds exactly into the grouped conv (a bias would leak into
the zero-padded region).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class SDN(nn.Module):
    def __init__(self, channels: int = 8, kernel_size: int = 8, padding: int = 8):
        super().__init__()
        self.channels, self.kernel_size, self.padding = channels, kernel_size, padding
        self.encoder = nn.Conv1d(1, channels, 1, bias=False)
        self.conv = nn.Conv1d(channels, channels, kernel_size, padding=padding, groups=channels)
        self.bn1 = nn.BatchNorm1d(channels, momentum=0.1)
        self.mix = nn.Conv1d(channels, channels, 1)
        self.bn2 = nn.BatchNorm1d(channels, momentum=0.1)
        self.decoder = nn.Conv1d(channels, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _as_channels(x)
        length = x.shape[-1]
        # encoder then grouped conv == one 1->C conv with the product weights;
        # the single-input-channel form is several times faster on CPU
        w = self.conv.weight * self.encoder.weight
        h = F.conv1d(x, w, self.conv.bias, padding=self.padding)[..., :length]
        h = F.relu(self.bn1(h))
        h = F.relu(h + self.bn2(_pointwise(self.mix, h)))
        out = _pointwise(self.decoder, h)
        return out[:, 0] if squeeze else out


def _pointwise(conv: nn.Conv1d, h: torch.Tensor) -> torch.Tensor:
    out = torch.einsum("oc,bcl->bol", conv.weight[..., 0], h)
    return out + conv.bias[:, None]


_CHUNK_POSITIONS = 32768


class FusedSDN(nn.Module):
    """Inference form: encoder folded into the grouped conv, BNs folded away."""

    def __init__(self, channels: int = 8, kernel_size: int = 8, padding: int = 8):
        super().__init__()
        self.channels, self.kernel_size, self.padding = channels, kernel_size, padding
        self.conv = nn.Conv1d(1, channels, kernel_size, padding=padding)
        self.mix = nn.Conv1d(channels, channels, 1)
        self.decoder = nn.Conv1d(channels, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _as_channels(x)
        rows, length = x.shape[0], x.shape[-1]
        x = x[:, 0]
        # position-major windows keep each chunk's activations in cache
        step = max(1, _CHUNK_POSITIONS // length)
        out = torch.cat([self._rows(x[i : i + step]) for i in range(0, rows, step)])
        return out if squeeze else out[:, None]

    def _rows(self, x: torch.Tensor) -> torch.Tensor:
        rows, length = x.shape
        k, pad = self.kernel_size, self.padding
        win = F.pad(x, (pad, k - 1)).unfold(1, k, 1)[:, :length].reshape(-1, k)
        w = self.conv.weight[:, 0, :].t()
        h = torch.addmm(self.conv.bias, win, w).relu()
        h = (h + torch.addmm(self.mix.bias, h, self.mix.weight[..., 0].t())).relu()
        out = torch.addmm(self.decoder.bias, h, self.decoder.weight[..., 0].t())
        return out.reshape(rows, length)


def _as_channels(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.shape[-1] == 0:
        raise ValueError("empty input sequence")
    if x.dim() == 1:
        x = x[None]
    if x.dim() == 2:
        return x[:, None, :], True
    if x.dim() == 3 and x.shape[1] == 1:
        return x, False
    raise ValueError(f"expected (B, L) or (B, 1, L) input, got {tuple(x.shape)}")


def sdn_init(seed: int = 0, dtype=torch.float32) -> SDN:
    """Fresh training-mode SDN with torch's default fan-in uniform init."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SDN()
    return model.to(dtype)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def sdn_forward(model: nn.Module, x) -> np.ndarray | torch.Tensor:
    """Predicted leak trace; numpy in, numpy out. Uses the model's current mode."""
    if isinstance(x, torch.Tensor):
        return model(x)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(np.asarray(x), dtype=dtype))
    return out.numpy()


def _fold_bn(weight: torch.Tensor, bias: torch.Tensor, bn: nn.BatchNorm1d):
    scale = bn.weight / torch.sqrt(bn.running_var + bn.eps)
    w = weight * scale[:, None, None]
    b = (bias - bn.running_mean) * scale + bn.bias
    return w, b


@torch.no_grad()
def sdn_fuse(model: nn.Module) -> FusedSDN:
    """Fold encoder and batch norms into plain convs using running statistics."""
    if isinstance(model, FusedSDN):
        raise ValueError("model is already fused")
    if not isinstance(model, SDN):
        raise TypeError("expected an SDN")
    dtype = model.conv.weight.dtype
    fused = FusedSDN(model.channels, model.kernel_size, model.padding).to(dtype)
    # encoder (C,1,1) times grouped conv (C,1,k) -> (C,1,k) reading the single input channel
    w = model.conv.weight * model.encoder.weight
    w, b = _fold_bn(w, model.conv.bias, model.bn1)
    fused.conv.weight.copy_(w)
    fused.conv.bias.copy_(b)
    w, b = _fold_bn(model.mix.weight, model.mix.bias, model.bn2)
    fused.mix.weight.copy_(w)
    fused.mix.bias.copy_(b)
    fused.decoder.weight.copy_(model.decoder.weight)
    fused.decoder.bias.copy_(model.decoder.bias)
    return fused.eval()


def parallel_spike(pred, x, v_th: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Fire from a predicted leak trace: u' = pred + x/v_th, s = H(u' - 1).

    ``pred`` must come from the SDN evaluated on ``x / v_th`` (unit threshold).
    """
    if not v_th > 0:
        raise ValueError("v_th must be positive")
    x = np.asarray(x, dtype=np.float64)
    pre = np.asarray(pred, dtype=np.float64) + x / v_th
    return (pre >= 1.0).astype(np.float64), pre


def predict_spikes(model: nn.Module, x, v_th: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Full parallel path: scale, run the SDN, fire."""
    x = np.asarray(x, dtype=np.float64)
    pred = sdn_forward(model, x / v_th)
    return parallel_spike(pred, x, v_th)
