"""Oracle-generated datasets, SDN training, evaluation and generalization sweeps."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .lif import NeuronParams, leak_targets, lif_run
from .numerics import Rng, rng_normal
from .sdn import sdn_init

log = logging.getLogger(__name__)

_GEN_CHUNK = 4096


@dataclass
class SdnDataset:
    """Inputs at effective threshold 1 and their leak targets tau*u_{t-1}.

    ``spikes`` holds the oracle spike train; it is recomputed from the
    float32 inputs and never stored on disk.
    """

    inputs: np.ndarray  # (count, L) float32
    targets: np.ndarray  # (count, L) float32
    meta: dict
    spikes: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.inputs.shape[0]

    @property
    def length(self) -> int:
        return self.inputs.shape[1]

    def oracle_spikes(self) -> np.ndarray:
        if self.spikes is None:
            self.spikes, _ = oracle_targets(self.inputs, self.meta["tau"])
        return self.spikes


def oracle_targets(inputs: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """(spikes uint8, tau*u_{t-1} float32) from the hard-reset oracle at v_th=1."""
    params = NeuronParams(tau=tau, v_th=1.0, u_r=0.0, reset_mode="hard")
    spikes = np.empty(inputs.shape, dtype=np.uint8)
    targets = np.empty(inputs.shape, dtype=np.float32)
    for lo in range(0, inputs.shape[0], _GEN_CHUNK):
        chunk = inputs[lo : lo + _GEN_CHUNK].astype(np.float64)
        s, trace = lif_run(chunk, params)
        spikes[lo : lo + _GEN_CHUNK] = s
        targets[lo : lo + _GEN_CHUNK] = leak_targets(trace.post_reset, tau)
    return spikes, targets


def generate_dataset(
    count: int,
    length: int,
    params: NeuronParams = NeuronParams(),
    dist: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> SdnDataset:
    """Sample N(mean, std) currents, scale by 1/v_th, label with the oracle."""
    if count <= 0 or length <= 0:
        raise ValueError("count and length must be positive")
    if params.reset_mode != "hard" or params.u_r != 0.0:
        raise ValueError("datasets are generated with a hard reset to 0")
    rng = Rng(seed)
    mean, std = dist
    inputs = np.empty((count, length), dtype=np.float32)
    for lo in range(0, count, _GEN_CHUNK):
        n = min(_GEN_CHUNK, count - lo)
        inputs[lo : lo + n] = rng_normal(rng, (n, length), mean, std) / params.v_th
    spikes, targets = oracle_targets(inputs, params.tau)
    meta = {
        "tau": params.tau,
        "v_th": params.v_th,
        "mean": mean,
        "std": std,
        "seed": seed,
        "count": count,
        "length": length,
    }
    return SdnDataset(inputs, targets, meta, spikes)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seconds: float = 0.0

    def rows(self) -> list[dict]:
        return list(self.epochs)


@torch.no_grad()
def eval_sdn(model: nn.Module | Callable, dataset: SdnDataset, batch_size: int = 1000) -> dict:
    """MSE against tau*u_{t-1} and micro-averaged spike agreement with the oracle."""
    if isinstance(model, nn.Module):
        model.eval()
        dtype = next(model.parameters()).dtype
    else:
        dtype = torch.float32
    spikes = dataset.oracle_spikes()
    sq_err = 0.0
    agree = 0
    for lo in range(0, dataset.count, batch_size):
        x = torch.as_tensor(dataset.inputs[lo : lo + batch_size], dtype=dtype)
        y = torch.as_tensor(dataset.targets[lo : lo + batch_size], dtype=dtype)
        pred = model(x)
        if pred.shape != x.shape:
            raise ValueError(f"prediction shape {tuple(pred.shape)} != input {tuple(x.shape)}")
        sq_err += float(((pred - y).double() ** 2).sum())
        fired = (pred + x >= 1.0).numpy()
        agree += int((fired == spikes[lo : lo + batch_size].astype(bool)).sum())
    n = dataset.inputs.size
    return {"mse": sq_err / n, "spike_accuracy": agree / n}


def train_sdn(
    dataset: SdnDataset,
    epochs: int = 100,
    lr: float = 1e-2,
    batch_size: int = 32,
    seed: int = 0,
    weight_decay: float = 0.0,
    test: SdnDataset | None = None,
    model: nn.Module | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[nn.Module, TrainReport]:
    """MSE training with AdamW and a cosine learning-rate schedule.

    Single-worker and deterministic for a fixed seed. Raises
    ``FloatingPointError`` if the loss turns non-finite.
    """
    model = model if model is not None else sdn_init(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    steps_per_epoch = math.ceil(dataset.count / batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, epochs * steps_per_epoch))
    inputs = torch.from_numpy(dataset.inputs)
    targets = torch.from_numpy(dataset.targets)
    report = TrainReport(
        config={
            "epochs": epochs,
            "lr": lr,
            "batch_size": batch_size,
            "seed": seed,
            "weight_decay": weight_decay,
            "optimizer": "AdamW",
            "schedule": "cosine",
            "train_count": dataset.count,
            "length": dataset.length,
        }
    )
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        model.train()
        order = torch.randperm(dataset.count, generator=gen)
        total = 0.0
        for lo in range(0, dataset.count, batch_size):
            idx = order[lo : lo + batch_size]
            pred = model(inputs[idx])
            loss = torch.mean((pred - targets[idx]) ** 2)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite SDN loss at epoch {epoch}, batch starting {lo}; "
                    f"lr={sched.get_last_lr()[0]:.3g}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        row = {"epoch": epoch, "train_mse": total / dataset.count}
        if test is not None:
            metrics = eval_sdn(model, test)
            row["test_mse"] = metrics["mse"]
            row["test_spike_accuracy"] = metrics["spike_accuracy"]
        report.epochs.append(row)
        log.info("sdn epoch %d %s", epoch, row)
        if on_epoch is not None:
            on_epoch(row)
    report.seconds = time.perf_counter() - start
    model.eval()
    return model, report


SWEEP_AXES = ("length", "distribution", "tau")


def generalization_sweep(
    model: nn.Module,
    axis: str,
    values: list,
    base_length: int = 1024,
    base_dist: tuple[float, float] = (0.0, 1.0),
    base_tau: float = 0.2,
    total_steps: int = 10_000 * 1024,
    seed: int = 12345,
) -> list[dict]:
    """Evaluate a frozen SDN on freshly generated datasets along one axis.

    Each dataset holds about ``total_steps`` neuron-steps, so long sequences
    use fewer samples. Distribution values are ``(mean, std)`` pairs.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    rows = []
    for i, value in enumerate(values):
        length, dist, tau = base_length, base_dist, base_tau
        if axis == "length":
            length = int(value)
        elif axis == "distribution":
            dist = tuple(value)
        else:
            tau = float(value)
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"tau {tau} outside [0, 1]")
        count = max(1, total_steps // length)
        data = generate_dataset(count, length, NeuronParams(tau=tau), dist, seed + i)
        metrics = eval_sdn(model, data)
        rows.append({"value": value, "accuracy": metrics["spike_accuracy"], "mse": metrics["mse"]})
        log.info("sweep %s=%s %s", axis, value, metrics)
    return rows
