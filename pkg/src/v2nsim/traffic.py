"""Traffic-intensity tables and seed-reproducible vehicle arrival traces.

An intensity table holds, per PoP, a contiguous sequence of 5-minute windows
with a rate in vehicles/hour. Arrival traces expand a table into time-sorted
(t, pop) events through piecewise-homogeneous Poisson sampling: each (pop,
window) pair gets its own PCG64 substream derived from (seed, pop, window
index), so traces do not depend on iteration order and identical inputs give
bit-identical traces.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_WINDOW_SECONDS = 300.0
RNG_ALGORITHM = "pcg64"

INTENSITY_CSV_HEADER = ["window_start_s", "pop_id", "lambda_veh_per_hour"]
TRACE_CSV_HEADER = ["t_s", "pop_id"]


@dataclass(frozen=True)
class IntensityTable:
    """Per-PoP traffic intensities on a fixed window grid.

    ``entries`` is a tuple of (window_start_s, pop_id, veh_per_hour) sorted by
    (pop_id, window_start_s); each PoP's windows must tile a contiguous span.
    """

    entries: tuple
    window_seconds: float = DEFAULT_WINDOW_SECONDS

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        ordered = tuple(sorted(self.entries, key=lambda e: (e[1], e[0])))
        object.__setattr__(self, "entries", ordered)
        per_pop = {}
        for start, pop, rate in ordered:
            if pop < 0:
                raise ValueError(f"negative pop_id {pop}")
            if rate < 0:
                raise ValueError(f"negative intensity {rate} for PoP {pop} at {start}s")
            per_pop.setdefault(pop, []).append(start)
        for pop, starts in per_pop.items():
            for a, b in zip(starts, starts[1:]):
                if b - a != self.window_seconds:
                    kind = "overlapping" if b - a < self.window_seconds else "gap in"
                    raise ValueError(f"{kind} windows for PoP {pop}: {a}s then {b}s")

    @property
    def pop_count(self) -> int:
        return 1 + max(e[1] for e in self.entries) if self.entries else 0

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.window_seconds).encode())
        for start, pop, rate in self.entries:
            h.update(f"{start!r},{pop},{rate!r};".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class TrafficTrace:
    """Time-sorted (t_s, pop_id) arrival events plus generation metadata."""

    events: tuple
    seed: int
    source_hash: str = ""

    def __post_init__(self):
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("trace events must be sorted by time")

    @property
    def pop_count(self) -> int:
        return 1 + max(p for _, p in self.events) if self.events else 0

    def window(self, start_s: float, end_s: float) -> "TrafficTrace":
        """Events with start_s <= t < end_s; metadata carries over."""
        kept = tuple(ev for ev in self.events if start_s <= ev[0] < end_s)
        return replace(self, events=kept)


def load_intensity_csv(path) -> IntensityTable:
    """Parse and validate an intensity CSV (header window_start_s,pop_id,lambda_veh_per_hour).

    Gaps within a PoP's timeline are rejected; upstream interpolation is out
    of scope here.
    """
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != INTENSITY_CSV_HEADER:
            raise ValueError(f"expected header {','.join(INTENSITY_CSV_HEADER)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 columns, got {len(row)}")
            try:
                entries.append((float(row[0]), int(row[1]), float(row[2])))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed row {row}") from exc
    if not entries:
        raise ValueError("intensity file holds no windows")
    starts = sorted({s for s, _, _ in entries})
    diffs = sorted({round(b - a, 9) for a, b in zip(starts, starts[1:])})
    window_seconds = diffs[0] if diffs else DEFAULT_WINDOW_SECONDS
    return IntensityTable(entries=tuple(entries), window_seconds=window_seconds)


def write_intensity_csv(table: IntensityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INTENSITY_CSV_HEADER)
        for start, pop, rate in table.entries:
            writer.writerow([repr(float(start)), pop, repr(float(rate))])


def synth_intensity(
    pops: int,
    days: int,
    peak_veh_per_hour: float,
    trough_veh_per_hour: float,
    phase_per_pop_hours: float = 0.0,
    seed: int = 0,
) -> IntensityTable:
    """Daily sinusoid between trough and peak plus seeded window noise.

    PoP p is the same curve shifted by p*phase_per_pop_hours; the noise
    sequence is shared across PoPs (so a zero phase yields identical PoPs)
    and scales with the peak-trough swing (so a flat profile stays exactly
    constant). Rates are clipped at zero.
    """
    if not (peak_veh_per_hour >= trough_veh_per_hour >= 0):
        raise ValueError("need peak >= trough >= 0")
    if pops < 1 or days < 1:
        raise ValueError("pops and days must be >= 1")
    n_windows = int(round(days * 86400 / DEFAULT_WINDOW_SECONDS))
    swing = peak_veh_per_hour - trough_veh_per_hour
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    noise = rng.normal(0.0, 0.05 * swing, size=n_windows) if swing > 0 else np.zeros(n_windows)
    entries = []
    for p in range(pops):
        phase_s = p * phase_per_pop_hours * 3600.0
        for w in range(n_windows):
            t = w * DEFAULT_WINDOW_SECONDS
            base = trough_veh_per_hour + swing * 0.5 * (1.0 - math.cos(2 * math.pi * (t - phase_s) / 86400.0))
            entries.append((t, p, max(0.0, base + noise[w])))
    return IntensityTable(entries=tuple(entries))


def generate_arrivals(table: IntensityTable, seed: int) -> TrafficTrace:
    """Expand an intensity table into one seeded arrival trace.

    Within each window a fresh exponential inter-arrival stream (rate
    veh_per_hour/3600 per second) starts at the window opening; samples past
    the window end are discarded. Event times are rounded to microseconds so
    CSV round-trips are lossless. Ties sort by pop id, then generation order.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    per_pop_windows = {}
    for start, pop, rate in table.entries:
        per_pop_windows.setdefault(pop, []).append((start, rate))
    events = []
    for pop in sorted(per_pop_windows):
        for w_idx, (start, rate) in enumerate(sorted(per_pop_windows[pop])):
            if rate <= 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence((seed, pop, w_idx)))
            rate_per_s = rate / 3600.0
            end = start + table.window_seconds
            t = start + rng.exponential(1.0 / rate_per_s)
            while t < end:
                events.append((round(t, 6), pop))
                t += rng.exponential(1.0 / rate_per_s)
    events.sort(key=lambda ev: (ev[0], ev[1]))
    return TrafficTrace(events=tuple(events), seed=seed, source_hash=table.digest())


def replicate(table: IntensityTable, base_seed: int, k: int) -> list:
    """k independent traces of one table, seeds base_seed..base_seed+k-1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [generate_arrivals(table, base_seed + i) for i in range(k)]


def write_trace(trace: TrafficTrace, path) -> None:
    """Write a trace CSV; metadata rides in leading comment lines."""
    with open(path, "w", newline="") as fh:
        fh.write("# v2nsim-trace v1\n")
        fh.write(f"# rng={RNG_ALGORITHM}\n")
        fh.write(f"# seed={trace.seed}\n")
        fh.write(f"# source_hash={trace.source_hash}\n")
        fh.write(",".join(TRACE_CSV_HEADER) + "\n")
        for t, pop in trace.events:
            fh.write(f"{t:.6f},{pop}\n")


def read_trace(path) -> TrafficTrace:
    seed = 0
    source_hash = ""
    events = []
    with open(path, newline="") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("seed="):
                    seed = int(body[5:])
                elif body.startswith("source_hash="):
                    source_hash = body[len("source_hash="):]
                continue
            if header is None:
                if line.split(",") != TRACE_CSV_HEADER:
                    raise ValueError(f"expected header {','.join(TRACE_CSV_HEADER)!r}, got {line!r}")
                header = line
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: malformed row {line!r}")
            events.append((float(parts[0]), int(parts[1])))
    if header is None:
        raise ValueError("trace file has no header")
    return TrafficTrace(events=tuple(events), seed=seed, source_hash=source_hash)
