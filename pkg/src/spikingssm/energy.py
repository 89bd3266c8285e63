"""Spiking-rate statistics, MAC/AC counting, energy estimates and
membrane-potential histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

E_MAC_PJ = 4.6
E_AC_PJ = 0.9


@dataclass(frozen=True)
class OpCounts:
    mac: float = 0.0
    ac: float = 0.0

    def __post_init__(self):
        if self.mac < 0 or self.ac < 0:
            raise ValueError("operation counts must be non-negative")

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.mac + other.mac, self.ac + other.ac)


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = E_MAC_PJ * 1e-12
    e_ac: float = E_AC_PJ * 1e-12

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ValueError("per-op energies must be positive")


def spiking_rate(spikes) -> float:
    """Spikes per neuron per step; the network mean of per-neuron rates.

    Every neuron sees the same number of steps, so this is the overall mean.
    """
    s = np.asarray(spikes)
    if s.size == 0:
        raise ValueError("empty spike tensor")
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("spike tensor must be binary")
    return float(s.mean())


def per_neuron_rates(spikes) -> np.ndarray:
    """Rates along the last (time) axis."""
    s = np.asarray(spikes)
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("spike tensor must be binary")
    return s.mean(axis=-1)


@dataclass(frozen=True)
class LinearLayer:
    d_in: int
    d_out: int
    spike_input: bool = True
    rate: float = 1.0


def count_ops(layers: Iterable[LinearLayer], length: int) -> OpCounts:
    """Dense real inputs cost L*d_in*d_out MAC; spike inputs cost rate*L*d_in*d_out AC.

    Biases, norms and elementwise ops are not counted.
    """
    mac = ac = 0.0
    for layer in layers:
        if not 0.0 <= layer.rate <= 1.0:
            raise ValueError("spiking rate must lie in [0, 1]")
        dense = float(length) * layer.d_in * layer.d_out
        if layer.spike_input:
            ac += layer.rate * dense
        else:
            mac += dense
    return OpCounts(mac, ac)


def feature_mix_layers(depth: int, d_in: int, d_out: int, rates: Sequence[float] | float | None) -> list[LinearLayer]:
    """``depth`` identical feature-mix layers; ``rates=None`` means real (MAC) inputs."""
    if rates is None:
        return [LinearLayer(d_in, d_out, spike_input=False) for _ in range(depth)]
    if np.isscalar(rates):
        rates = [float(rates)] * depth
    if len(rates) != depth:
        raise ValueError("need one rate per layer")
    return [LinearLayer(d_in, d_out, True, float(r)) for r in rates]


def energy(counts: OpCounts, model: EnergyModel = EnergyModel()) -> float:
    """Joules: mac * e_mac + ac * e_ac."""
    return counts.mac * model.e_mac + counts.ac * model.e_ac


SG_BAND_DEFAULT = (-3.0, 3.0)


@dataclass
class MembraneHistogram:
    layer: int
    edges: np.ndarray
    counts: np.ndarray
    band_fraction: float
    spiking_rate: float | None = None


def membrane_histogram(
    samples: Sequence[np.ndarray],
    bins: int = 200,
    value_range: tuple[float, float] = SG_BAND_DEFAULT,
    alpha: float = 1.0,
    rates: Sequence[float] | None = None,
) -> list[MembraneHistogram]:
    """Histogram u' - v_th per layer; values outside the range land in the edge bins.

    ``band_fraction`` is the share of neuron-steps where the surrogate
    gradient is non-zero, |u' - v_th| <= 1/alpha.
    """
    out = []
    for i, vals in enumerate(samples):
        vals = np.asarray(vals, dtype=np.float64).ravel()
        edges = np.linspace(value_range[0], value_range[1], bins + 1)
        counts, _ = np.histogram(np.clip(vals, value_range[0], value_range[1]), bins=edges)
        band = float(np.mean(np.abs(vals) <= 1.0 / alpha)) if vals.size else 0.0
        rate = None if rates is None else float(rates[i])
        out.append(MembraneHistogram(i, edges, counts, band, rate))
    return out


def write_histogram_csv(hists: Sequence[MembraneHistogram], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "bin_left", "bin_right", "count"])
        for h in hists:
            for left, right, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow([h.layer, f"{left:.6g}", f"{right:.6g}", int(c)])


def write_energy_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["label", "mac", "ac", "energy_j"])
        w.writeheader()
        for r in rows:
            w.writerow(r)
