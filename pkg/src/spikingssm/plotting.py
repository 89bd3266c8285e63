"""Matplotlib figures written next to the CSV reports (Agg backend, PNG)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sdn_training(rows: Sequence[dict], path) -> Path:
    epochs = [r["epoch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.semilogy(epochs, [r["train_mse"] for r in rows], label="train")
    if "test_mse" in rows[0]:
        ax1.semilogy(epochs, [r["test_mse"] for r in rows], label="test")
        ax2.plot(epochs, [100 * r["test_spike_accuracy"] for r in rows])
    ax1.set(xlabel="epoch", ylabel="MSE")
    ax1.legend()
    ax2.set(xlabel="epoch", ylabel="spike accuracy (%)")
    return _save(fig, path)


def plot_sweep(rows: Sequence[dict], axis: str, path) -> Path:
    labels = [str(r["value"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(len(rows)), [100 * r["accuracy"] for r in rows], marker="o")
    ax.set_xticks(range(len(rows)), labels, rotation=30)
    ax.set(xlabel=axis, ylabel="spike accuracy (%)")
    return _save(fig, path)


def plot_bench(report, path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    modes = sorted({r["mode"] for r in report.rows})
    for mode in modes:
        rows = sorted((r for r in report.rows if r["mode"] == mode), key=lambda r: r["length"])
        ax1.loglog([r["length"] for r in rows], [r["median_ms"] for r in rows], marker="o", label=mode)
    ax1.set(xlabel="sequence length", ylabel="step time (ms)")
    ax1.legend()
    if "sdn" in modes:
        for ref in (m for m in modes if m != "sdn"):
            ratios = report.speedups(ref)
            ax2.semilogx(list(ratios), list(ratios.values()), marker="o", label=f"{ref} / sdn")
        ax2.set(xlabel="sequence length", ylabel="speedup")
        ax2.legend()
    return _save(fig, path)


def plot_histograms(hists, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for h in hists:
        centers = 0.5 * (h.edges[:-1] + h.edges[1:])
        ax.plot(centers, h.counts / max(1, h.counts.sum()), label=f"layer {h.layer} (band {h.band_fraction:.2f})")
    ax.axvspan(-1.0, 1.0, color="grey", alpha=0.15)
    ax.set(xlabel="u' - v_th", ylabel="fraction")
    ax.legend()
    return _save(fig, path)


def plot_task_history(history: Sequence[dict], path) -> Path:
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r["train_accuracy"] for r in history], label="train")
    if "test_accuracy" in history[0]:
        ax.plot(epochs, [r["test_accuracy"] for r in history], label="test")
    ax.set(xlabel="epoch", ylabel="accuracy")
    ax.legend()
    return _save(fig, path)
