"""SpikingSSM network: encoder, stacked spiking S4D blocks, pooled decoder,
plus the sequence-classification training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .lif import NeuronParams, lif_run
from .s4d import S4DLayer
from .sdn import SDN, sdn_fuse
from .spiking import SpikingNeuron, _Timer, sdn_spike

log = logging.getLogger(__name__)

EVAL_MODES = {"parallel_sdn": "sdn", "iterative": "iterative"}


@dataclass
class NetConfig:
    depth: int = 2
    H: int = 64
    N: int = 64
    norm: str = "layer"
    prenorm: bool = False
    dropout: float = 0.1
    tau: float = 0.2
    v_th: float = 1.0
    learn_threshold: bool = True
    alpha: float = 1.0
    delta_min: float = 0.001
    delta_max: float = 0.1
    d_input: int = 1
    n_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.H < 1 or self.N < 2 or self.N % 2:
            raise ValueError("depth, H must be >= 1 and N a positive even number")
        if self.norm not in ("batch", "layer"):
            raise ValueError("norm must be 'batch' or 'layer'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0 < self.delta_min < self.delta_max:
            raise ValueError("need 0 < delta_min < delta_max")

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class ChannelNorm(nn.Module):
    """LayerNorm or BatchNorm over the channel axis of (B, H, L) tensors."""

    def __init__(self, H: int, kind: str):
        super().__init__()
        self.kind = kind
        self.norm = nn.LayerNorm(H) if kind == "layer" else nn.BatchNorm1d(H)

    def forward(self, x):
        if self.kind == "layer":
            return self.norm(x.transpose(1, 2)).transpose(1, 2)
        return self.norm(x)


class SpikingBlock(nn.Module):
    """S4D -> LIF -> position-wise dense mix -> dropout -> residual -> norm."""

    def __init__(self, cfg: NetConfig, index: int):
        super().__init__()
        self.prenorm = cfg.prenorm
        self.ssm = S4DLayer(cfg.H, cfg.N, (cfg.delta_min, cfg.delta_max), seed=cfg.seed * 1000 + index)
        self.neuron = SpikingNeuron(cfg.tau, cfg.v_th, cfg.learn_threshold, cfg.alpha)
        self.mix = nn.Linear(cfg.H, cfg.H)
        self.dropout = nn.Dropout(cfg.dropout)
        self.norm = ChannelNorm(cfg.H, cfg.norm)
        self.timer: _Timer | None = None
        self.last_spikes: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, mode: str, sdn: nn.Module | None = None) -> torch.Tensor:
        timer = self.timer
        t0 = time.perf_counter()
        z = self.norm(x) if self.prenorm else x
        t1 = time.perf_counter()
        y = self.ssm(z)
        t2 = time.perf_counter()
        s = self.neuron(y, mode, sdn)
        self.last_spikes = s.detach()
        t3 = time.perf_counter()
        out = self.dropout(F.linear(s.transpose(1, 2), self.mix.weight, self.mix.bias).transpose(1, 2))
        t4 = time.perf_counter()
        x = x + out
        if not self.prenorm:
            x = self.norm(x)
        if timer is not None:
            timer.add("ssm", t2 - t1)
            timer.add("output_linear", t4 - t3)
            timer.add("norm", (t1 - t0) + (time.perf_counter() - t4))
        return x


class SpikingSSM(nn.Module):
    """Encoder -> blocks -> (final norm if prenorm) -> time mean-pool -> decoder.

    The SDN is held as a plain attribute, not a submodule, so it contributes
    no parameters and receives no gradient.
    """

    def __init__(self, cfg: NetConfig, sdn: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.encoder = nn.Linear(cfg.d_input, cfg.H)
            self.blocks = nn.ModuleList(SpikingBlock(cfg, i) for i in range(cfg.depth))
            self.final_norm = ChannelNorm(cfg.H, cfg.norm) if cfg.prenorm else None
            self.decoder = nn.Linear(cfg.H, cfg.n_classes)
        self.set_sdn(sdn)
        self.timer: _Timer | None = None

    def set_sdn(self, sdn: nn.Module | None) -> None:
        """Attach a frozen SDN; a training-layout SDN is fused first."""
        if isinstance(sdn, SDN):
            sdn = sdn_fuse(sdn.eval())
        if sdn is not None:
            sdn.eval()
            for p in sdn.parameters():
                p.requires_grad_(False)
        object.__setattr__(self, "sdn", sdn)

    def attach_timer(self, timer: _Timer | None) -> None:
        self.timer = timer
        for b in self.blocks:
            b.timer = timer
            b.neuron.timer = timer

    def forward(self, x: torch.Tensor, mode: str = "sdn") -> torch.Tensor:
        """``x``: (B, L) or (B, L, d_input). Returns logits (B, n_classes)."""
        mode = EVAL_MODES.get(mode, mode)
        if x.dim() == 2:
            x = x[..., None]
        if x.dim() != 3 or x.shape[-1] != self.cfg.d_input:
            raise ValueError(f"expected (B, L, {self.cfg.d_input}) input, got {tuple(x.shape)}")
        if mode == "sdn" and self.sdn is None:
            raise ValueError("parallel SDN mode requires a loaded SDN")
        t0 = time.perf_counter()
        h = self.encoder(x).transpose(1, 2)
        t1 = time.perf_counter()
        for block in self.blocks:
            h = block(h, mode, self.sdn)
        t2 = time.perf_counter()
        if self.final_norm is not None:
            h = self.final_norm(h)
        logits = self.decoder(h.mean(dim=-1))
        if self.timer is not None:
            self.timer.add("encoder", t1 - t0)
            self.timer.add("decoder", time.perf_counter() - t2)
        return logits

    def spike_tensors(self) -> list[torch.Tensor]:
        return [b.last_spikes for b in self.blocks if b.last_spikes is not None]


def param_groups(net: SpikingSSM, lr: float, weight_decay: float) -> list[dict]:
    """SSM dynamics (A, delta) at min(lr, 1e-3) without decay; the rest at lr with decay."""
    ssm, other = [], []
    for name, p in net.named_parameters():
        if not p.requires_grad:
            continue
        if name.endswith(("log_dt", "log_A_real", "A_imag")):
            ssm.append(p)
        else:
            other.append(p)
    return [
        {"params": other, "lr": lr, "weight_decay": weight_decay},
        {"params": ssm, "lr": min(lr, 1e-3), "weight_decay": 0.0},
    ]


def _batches(n: int, batch_size: int, gen: torch.Generator | None):
    order = torch.randperm(n, generator=gen) if gen is not None else torch.arange(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


@torch.no_grad()
def evaluate(net: SpikingSSM, inputs, labels, mode: str = "parallel_sdn", batch_size: int = 200) -> dict:
    """Accuracy and network-mean spiking rate over a labelled set."""
    net.eval()
    inputs = torch.as_tensor(inputs, dtype=torch.float32)
    labels = torch.as_tensor(labels, dtype=torch.long)
    correct = 0
    spikes = 0.0
    neuron_steps = 0
    for idx in _batches(len(labels), batch_size, None):
        logits = net(inputs[idx], mode)
        correct += int((logits.argmax(-1) == labels[idx]).sum())
        for s in net.spike_tensors():
            spikes += float(s.sum())
            neuron_steps += s.numel()
    return {
        "accuracy": correct / len(labels),
        "mean_spiking_rate": spikes / neuron_steps if neuron_steps else 0.0,
    }


def train_task(
    net: SpikingSSM,
    train: tuple,
    test: tuple | None = None,
    mode: str = "sdn",
    epochs: int = 10,
    lr: float = 0.01,
    batch_size: int = 50,
    weight_decay: float = 0.01,
    seed: int = 0,
    eval_mode: str = "parallel_sdn",
    on_epoch=None,
) -> list[dict]:
    """Cross-entropy training with AdamW and a cosine schedule.

    ``train`` and ``test`` are ``(inputs, labels)`` pairs. Returns one log row
    per epoch. Raises ``FloatingPointError`` on a non-finite loss.
    """
    x_train = torch.as_tensor(train[0], dtype=torch.float32)
    y_train = torch.as_tensor(train[1], dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(param_groups(net, lr, weight_decay))
    total_steps = epochs * math.ceil(len(y_train) / batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, total_steps))
    history = []
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        for epoch in range(1, epochs + 1):
            net.train()
            start = time.perf_counter()
            loss_sum, correct = 0.0, 0
            for idx in _batches(len(y_train), batch_size, gen):
                logits = net(x_train[idx], mode)
                loss = F.cross_entropy(logits, y_train[idx])
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite task loss at epoch {epoch}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                sched.step()
                loss_sum += loss.item() * len(idx)
                correct += int((logits.argmax(-1) == y_train[idx]).sum())
            row = {
                "epoch": epoch,
                "train_loss": loss_sum / len(y_train),
                "train_accuracy": correct / len(y_train),
                "seconds": time.perf_counter() - start,
            }
            if test is not None:
                metrics = evaluate(net, test[0], test[1], eval_mode)
                row["test_accuracy"] = metrics["accuracy"]
                row["mean_spiking_rate"] = metrics["mean_spiking_rate"]
            history.append(row)
            log.info("task epoch %d %s", epoch, row)
            if on_epoch is not None:
                on_epoch(row)
    return history


def block_spike_rates(net: SpikingSSM) -> list[float]:
    return [float(s.mean()) for s in net.spike_tensors()]


def membrane_samples(net: SpikingSSM, x: torch.Tensor, mode: str = "parallel_sdn") -> list[np.ndarray]:
    """Per-layer u' - v_th for one forward pass (iterative mode re-runs each layer's LIF)."""
    mode = EVAL_MODES.get(mode, mode)
    net.eval()
    out = []
    with torch.no_grad():
        if x.dim() == 2:
            x = x[..., None]
        h = net.encoder(x).transpose(1, 2)
        for block in net.blocks:
            z = block.norm(h) if block.prenorm else h
            y = block.ssm(z)
            v_th = block.neuron.threshold()
            if mode == "sdn":
                _, pre = sdn_spike(y, v_th, net.sdn)
                out.append(((pre - 1.0) * v_th).numpy().ravel())
            else:
                _, trace = lif_run(y.double().numpy(), NeuronParams(tau=block.neuron.tau, v_th=float(v_th)))
                out.append((trace.pre_reset - float(v_th)).ravel())
            h = block(h, mode, net.sdn)
    return out
