"""Classical-latency samples and the optical link loss model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = "latency_ms"


class LatencyFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatencyDistribution:
    """Empirical one-way latencies in milliseconds."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).ravel()
        if s.size == 0:
            raise ValueError("latency distribution needs at least one sample")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("latency samples must be finite and positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "_sorted", np.sort(s))

    @property
    def sorted(self):
        return self._sorted

    @property
    def min(self):
        return float(self._sorted[0])

    @property
    def max(self):
        return float(self._sorted[-1])

    @property
    def mean(self):
        return float(self.samples.mean())

    def __len__(self):
        return self.samples.size

    def quantile(self, q):
        """Inverse empirical CDF, linear between order statistics; q in [0, 1]."""
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise ValueError("quantile level must lie in [0, 1]")
        s = self._sorted
        pos = q * (s.size - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, s.size - 1)
        out = s[lo] + (pos - lo) * (s[hi] - s[lo])
        return float(out) if out.ndim == 0 else out

    def histogram(self, bin_width):
        """``(edges, density)`` with bins of ``bin_width`` ms from 0 to the max sample."""
        if bin_width <= 0:
            raise ValueError("bin_width must be positive")
        top = math.ceil(self.max / bin_width) * bin_width
        edges = np.arange(0.0, top + 0.5 * bin_width, bin_width)
        if edges.size < 2:
            edges = np.array([0.0, bin_width])
        density, edges = np.histogram(self.samples, bins=edges, density=True)
        return edges, density

    def cdf(self, x):
        return np.searchsorted(self._sorted, x, side="right") / self._sorted.size


def sample_latency(dist, rng=None, size=None):
    """Draw latencies (ms) by inverse-CDF sampling of the empirical data."""
    rng = np.random.default_rng(rng)
    return dist.quantile(rng.random(size))


def load_latency_csv(path):
    """Read a ``latency_ms`` CSV (header then one positive decimal per row)."""
    path = Path(path)
    values = []
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise LatencyFormatError(f"{path}: file is empty")
    first_row, header = rows[0]
    if [h.strip() for h in header] != [CSV_HEADER]:
        raise LatencyFormatError(f"{path}:{first_row}: expected header {CSV_HEADER!r}, got {','.join(header)!r}")
    for lineno, row in rows[1:]:
        if len(row) != 1:
            raise LatencyFormatError(f"{path}:{lineno}: expected one column, got {len(row)}")
        text = row[0].strip()
        try:
            v = float(text)
        except ValueError:
            raise LatencyFormatError(f"{path}:{lineno}: not a number: {text!r}") from None
        if not math.isfinite(v) or v <= 0:
            raise LatencyFormatError(f"{path}:{lineno}: latency must be positive, got {text}")
        values.append(v)
    if not values:
        raise LatencyFormatError(f"{path}: no latency samples after the header")
    return LatencyDistribution(np.array(values))


def write_latency_csv(path, samples):
    """Write samples in the ``latency_ms`` format; ``repr`` keeps floats exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for v in np.asarray(samples, dtype=float).ravel():
            fh.write(repr(float(v)) + "\n")


def synthetic_latencies(count, rng=None, *, median_ms=12.0, sigma=0.5):
    """Log-normal stand-in for metro IP one-way latencies (ms)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if median_ms <= 0 or sigma <= 0:
        raise ValueError("median_ms and sigma must be positive")
    rng = np.random.default_rng(rng)
    return rng.lognormal(mean=math.log(median_ms), sigma=sigma, size=count)


@dataclass(frozen=True)
class LinkConfig:
    """Two-arm source-to-memory link; losses in dB, lengths in km."""

    source_rate: float = 1.3e6
    fiber_length_a: float = 0.0
    fiber_length_b: float = 0.0
    intermediate_nodes_a: int = 0
    intermediate_nodes_b: int = 0
    loss_intermediate_db: float = 8.0
    loss_endpoint_db: float = 4.0
    fiber_atten_db_per_km: float = 0.2

    def __post_init__(self):
        if not self.source_rate > 0:
            raise ValueError("source_rate must be positive")
        for name in ("fiber_length_a", "fiber_length_b", "intermediate_nodes_a", "intermediate_nodes_b",
                     "loss_intermediate_db", "loss_endpoint_db", "fiber_atten_db_per_km"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def arm_loss_db(self, arm):
        if arm == "a":
            length, hops = self.fiber_length_a, self.intermediate_nodes_a
        elif arm == "b":
            length, hops = self.fiber_length_b, self.intermediate_nodes_b
        else:
            raise ValueError("arm must be 'a' or 'b'")
        # endpoint loss charged at the source and at the arm's memory node
        return (2.0 * self.loss_endpoint_db + hops * self.loss_intermediate_db
                + self.fiber_atten_db_per_km * length)

    def transmittance(self, arm):
        return 10.0 ** (-self.arm_loss_db(arm) / 10.0)


def pair_rate(link):
    """Heralded base-pair rate (pairs/s) shared by the two memory nodes."""
    return link.source_rate * link.transmittance("a") * link.transmittance("b")


# Low-loss topology used for the ~1e5 pairs/s throughput check: adjacent
# nodes, no fibre or switches, 4 dB per arm split evenly between the source
# add/drop and the memory node.
LOW_LOSS_LINK = LinkConfig(loss_endpoint_db=2.0)
