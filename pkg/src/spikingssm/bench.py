"""Training-step latency across sequence lengths for iterative and SDN modes.

Times are host wall-clock (``time.perf_counter``); nothing is split into
CPU and device time.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .network import NetConfig, SpikingSSM, param_groups
from .sdn import sdn_init
from .spiking import _Timer

log = logging.getLogger(__name__)

BENCH_MODES = ("bptt", "bptt_detached", "sltt", "sdn")
BREAKDOWN_STAGES = ("encoder", "ssm", "leak_integrate", "fire", "output_linear", "norm", "decoder")
WALL_NOTE = "wall-clock time only (perf_counter); no separate CPU/device split"

# a step must span this many clock ticks to be timed meaningfully
MIN_TICKS = 1000


class TimerResolutionError(RuntimeError):
    pass


@dataclass
class BenchSpec:
    lengths: tuple = (1024, 2048, 4096, 8192)
    batch: int = 64
    repetitions: int = 3
    warmup: int = 2
    modes: tuple = ("bptt", "sltt", "sdn")
    workers: int = 1

    def __post_init__(self):
        if not self.lengths or any(int(L) <= 0 for L in self.lengths):
            raise ValueError("lengths must be positive")
        if self.repetitions < 3:
            raise ValueError("need at least 3 repetitions")
        if self.warmup < 0 or self.batch < 1 or self.workers < 1:
            raise ValueError("warmup >= 0, batch >= 1 and workers >= 1 required")
        bad = set(self.modes) - set(BENCH_MODES)
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    breakdown: list = field(default_factory=list)
    workers: int = 1
    config: dict = field(default_factory=dict)

    def median(self, mode: str, length: int) -> float:
        for r in self.rows:
            if r["mode"] == mode and r["length"] == length:
                return r["median_ms"]
        raise KeyError((mode, length))

    def speedups(self, reference: str = "bptt") -> dict[int, float]:
        """Iterative time / SDN time per length."""
        lengths = sorted({r["length"] for r in self.rows})
        return {L: self.median(reference, L) / self.median("sdn", L) for L in lengths}

    def monotone(self, reference: str = "bptt") -> bool:
        ratios = [v for _, v in sorted(self.speedups(reference).items())]
        return all(b > a for a, b in zip(ratios, ratios[1:]))

    def stage_ms(self, mode: str, length: int) -> dict[str, float]:
        return {
            r["module"]: r["cpu_ms"] for r in self.breakdown if r["mode"] == mode and r["length"] == length
        }


def _step_fn(net: SpikingSSM, mode: str, x: torch.Tensor, y: torch.Tensor, opt):
    def step():
        opt.zero_grad(set_to_none=True)
        loss = F.cross_entropy(net(x, mode), y)
        loss.backward()
        opt.step()

    return step


def run_bench(
    spec: BenchSpec,
    net_config: NetConfig,
    sdn: nn.Module | None = None,
    seed: int = 0,
) -> BenchReport:
    """Median/p10/p90 of one full training step (forward, backward, AdamW)
    per (mode, length), plus a per-stage breakdown averaged over the timed steps.

    Every mode gets a network built from the same config and seed. Raises
    ``TimerResolutionError`` when a step is too short for the clock.
    """
    torch.set_num_threads(spec.workers)
    resolution = time.get_clock_info("perf_counter").resolution
    if sdn is None:
        sdn = sdn_init(seed)
    report = BenchReport(workers=spec.workers, config=net_config.to_dict())
    gen = torch.Generator().manual_seed(seed)
    for length in spec.lengths:
        length = int(length)
        x = torch.randn(spec.batch, length, net_config.d_input, generator=gen)
        y = torch.randint(0, net_config.n_classes, (spec.batch,), generator=gen)
        for mode in spec.modes:
            net = SpikingSSM(net_config, sdn if mode == "sdn" else None)
            net.train()
            opt = torch.optim.AdamW(param_groups(net, 1e-3, 0.0))
            step = _step_fn(net, mode, x, y, opt)
            for _ in range(spec.warmup):
                step()
            timer = _Timer()
            net.attach_timer(timer)
            times = []
            for _ in range(spec.repetitions):
                t0 = time.perf_counter()
                step()
                times.append(time.perf_counter() - t0)
            net.attach_timer(None)
            if min(times) < MIN_TICKS * resolution:
                raise TimerResolutionError(
                    f"{mode} step at L={length} took {min(times):.3g}s, under {MIN_TICKS} ticks of "
                    f"a {resolution:.3g}s clock; increase batch or length"
                )
            ms = np.asarray(times) * 1e3
            row = {
                "mode": mode,
                "length": length,
                "batch": spec.batch,
                "median_ms": float(np.median(ms)),
                "p10_ms": float(np.percentile(ms, 10)),
                "p90_ms": float(np.percentile(ms, 90)),
            }
            report.rows.append(row)
            for stage in BREAKDOWN_STAGES:
                report.breakdown.append(
                    {
                        "mode": mode,
                        "length": length,
                        "module": stage,
                        "cpu_ms": timer.ms.get(stage, 0.0) / spec.repetitions,
                    }
                )
            log.info("bench %s", row)
    return report


def write_bench_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {WALL_NOTE}; workers={report.workers}\n")
        w = csv.DictWriter(fh, fieldnames=["mode", "length", "batch", "median_ms", "p10_ms", "p90_ms"])
        w.writeheader()
        for r in report.rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})


def write_breakdown_csv(report: BenchReport, path, length: int | None = None) -> None:
    """Stage times for one length (default: the longest)."""
    if length is None:
        length = max(r["length"] for r in report.breakdown)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {WALL_NOTE}; L={length}; mean per step; stepped-LIF backward counts as leak_integrate\n")
        w = csv.writer(fh)
        w.writerow(["mode", "module", "cpu_ms"])
        for r in report.breakdown:
            if r["length"] == length:
                w.writerow([r["mode"], r["module"], f"{r['cpu_ms']:.4f}"])
