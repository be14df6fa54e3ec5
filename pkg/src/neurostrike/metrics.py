"""Impact metrics over recorded spike trains.

Spike count, temporal dispersion (percentage of 1 ms bins in which any
neuron of the population fires — the "percentage of instants with
spikes"), Pearson correlation, and raster export with attacked-vs-
baseline diff tags.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MetricsError(Exception):
    pass


class DegenerateVarianceError(MetricsError):
    """Pearson input with zero variance."""


@dataclass(frozen=True)
class SpikeRecord:
    """Time-sorted spike events from one simulation run."""

    neuron_ids: np.ndarray  # (n_events,) int
    times_ms: np.ndarray  # (n_events,) float, ascending
    duration_ms: float
    n_neurons: int

    def __post_init__(self):
        ids = np.asarray(self.neuron_ids, dtype=np.int64)
        times = np.asarray(self.times_ms, dtype=np.float64)
        object.__setattr__(self, "neuron_ids", ids)
        object.__setattr__(self, "times_ms", times)
        if ids.shape != times.shape or ids.ndim != 1:
            raise MetricsError("neuron_ids and times_ms must be equal-length 1-D arrays")
        if self.duration_ms <= 0:
            raise MetricsError("duration must be positive")
        if len(times):
            if times[0] < 0 or times[-1] >= self.duration_ms:
                raise MetricsError("spike times must lie in [0, duration)")
            if np.any(np.diff(times) < 0):
                raise MetricsError("spike times must be ascending")
            if ids.min() < 0 or ids.max() >= self.n_neurons:
                raise MetricsError("neuron ids must lie in [0, n_neurons)")

    @property
    def events(self) -> list[tuple[int, float]]:
        return [(int(i), float(t)) for i, t in zip(self.neuron_ids, self.times_ms)]

    def per_neuron_counts(self) -> np.ndarray:
        return np.bincount(self.neuron_ids, minlength=self.n_neurons)


def count_spikes(rec: SpikeRecord) -> int:
    return len(rec.neuron_ids)


def temporal_dispersion(rec: SpikeRecord, bin_ms: float = 1.0) -> float:
    """Percentage of ``bin_ms`` bins containing at least one spike from
    any neuron (population-wide occupancy)."""
    if bin_ms <= 0:
        raise MetricsError("bin_ms must be positive")
    n_bins = rec.duration_ms / bin_ms
    if abs(n_bins - round(n_bins)) > 1e-9:
        raise MetricsError("bin_ms must divide the record duration")
    n_bins = round(n_bins)
    if n_bins == 0:
        raise MetricsError("record duration shorter than one bin")
    occupied = len(np.unique(np.floor(rec.times_ms / bin_ms).astype(np.int64)))
    return 100.0 * occupied / n_bins


# Alias: the source material uses both names for the same quantity.
percentage_of_instants_with_spikes = temporal_dispersion


def pearson(x, y) -> float:
    """Product-moment correlation coefficient, two-pass, float64."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise MetricsError("pearson needs two equal-length 1-D vectors")
    if len(x) < 2:
        raise MetricsError("pearson needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVarianceError("zero variance in pearson input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


TAG_PRESERVED = "spontaneous-preserved"
TAG_NEW = "attack-new"
TAG_SUPPRESSED = "suppressed"


def raster_rows(attacked: SpikeRecord, baseline: SpikeRecord) -> list[tuple[int, float, str]]:
    """Diff the attacked run against the spontaneous baseline.

    Spikes are matched by exact (neuron, time) identity, meaningful
    because the engine is deterministic.  Tags: present in both →
    spontaneous-preserved; attacked only → attack-new; baseline only →
    suppressed.  Rows are time-sorted, suppressed spikes at their
    baseline times.
    """
    atk = set(zip(attacked.neuron_ids.tolist(), attacked.times_ms.tolist()))
    base = set(zip(baseline.neuron_ids.tolist(), baseline.times_ms.tolist()))
    rows = []
    for nid, t in atk:
        rows.append((nid, t, TAG_PRESERVED if (nid, t) in base else TAG_NEW))
    for nid, t in base - atk:
        rows.append((nid, t, TAG_SUPPRESSED))
    rows.sort(key=lambda r: (r[1], r[0], r[2]))
    return rows


def export_raster(attacked: SpikeRecord, baseline: SpikeRecord, path: str | Path) -> None:
    """Write the diff raster as CSV ``neuron_id,time_ms,tag``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron_id", "time_ms", "tag"])
        for nid, t, tag in raster_rows(attacked, baseline):
            writer.writerow([nid, repr(t), tag])
