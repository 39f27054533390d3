"""Per-PoP M/G/1-PS queue model and a discrete-event PS verification simulator.

Each PoP decodes and analyzes one video frame at a time across its active
CPUs. With C active CPUs a frame takes tau_d(C) + tau_a(C) milliseconds, so
the service rate is mu(C) = 1 / (tau_d(C) + tau_a(C)) frames/ms. Every
assigned vehicle streams tasks at a fixed rate (29.5 fps by default), and
the PoP behaves as an M/G/1 processor-sharing server: the mean sojourn time
is 1 / (mu(C) - lambda*N) while stable, infinite otherwise.

Delays and rates use milliseconds internally; the simulation clock used by
callers is in seconds. Overload is the distinguished value ``OVERLOAD``
(float infinity), never an exception, so reward code can map it to zero.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

# A PoP that cannot keep up (mu <= lambda*N) reports this as its delay/load.
OVERLOAD = float("inf")

# Frame-time tables for 1..5 Intel Xeon CPUs on H.265/HEVC streams, ms/frame.
_DEFAULT_DECODE_MS = (8.47, 4.41, 3.05, 2.37, 2.03)
_DEFAULT_ANALYZE_MS = (37.0, 18.50, 12.33, 9.25, 7.40)

# 29.5 fps per vehicle, stored as frames per millisecond.
DEFAULT_TASK_RATE = 0.0295

PROFILE_CSV_HEADER = ["cpus", "decode_ms_per_frame", "analyze_ms_per_frame"]


@dataclass(frozen=True)
class ServiceProfile:
    """Frame-time tables tau_d/tau_a (ms/frame) indexed by CPU count 1..max_cpus."""

    decode_ms_per_frame: tuple = _DEFAULT_DECODE_MS
    analyze_ms_per_frame: tuple = _DEFAULT_ANALYZE_MS
    task_rate_per_vehicle: float = DEFAULT_TASK_RATE

    def __post_init__(self):
        td, ta = self.decode_ms_per_frame, self.analyze_ms_per_frame
        if len(td) != len(ta) or len(td) < 1:
            raise ValueError("decode/analyze tables must be equal-length and non-empty")
        for name, table in (("decode", td), ("analyze", ta)):
            if any(x <= 0 for x in table):
                raise ValueError(f"{name} frame times must be strictly positive")
            if any(a <= b for a, b in zip(table, table[1:])):
                raise ValueError(f"{name} frame times must strictly decrease with CPUs")
        if self.task_rate_per_vehicle <= 0:
            raise ValueError("task_rate_per_vehicle must be positive")

    @property
    def max_cpus(self) -> int:
        return len(self.decode_ms_per_frame)

    def truncate(self, max_cpus: int) -> "ServiceProfile":
        """Same profile limited to CPU counts 1..max_cpus."""
        if not 1 <= max_cpus <= self.max_cpus:
            raise ValueError(f"max_cpus {max_cpus} outside [1, {self.max_cpus}]")
        return ServiceProfile(
            decode_ms_per_frame=self.decode_ms_per_frame[:max_cpus],
            analyze_ms_per_frame=self.analyze_ms_per_frame[:max_cpus],
            task_rate_per_vehicle=self.task_rate_per_vehicle,
        )


def default_profile() -> ServiceProfile:
    """Profile with the published decode/analyze frame-time table (C = 1..5)."""
    return ServiceProfile()


def load_profile_csv(path) -> ServiceProfile:
    """Read a service profile from a CSV with columns cpus,decode_ms_per_frame,analyze_ms_per_frame."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PROFILE_CSV_HEADER:
            raise ValueError(f"expected header {','.join(PROFILE_CSV_HEADER)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 columns, got {len(row)}")
            rows.append((int(row[0]), float(row[1]), float(row[2])))
    rows.sort()
    if [c for c, _, _ in rows] != list(range(1, len(rows) + 1)):
        raise ValueError("cpus column must cover 1..max_cpus exactly once")
    return ServiceProfile(
        decode_ms_per_frame=tuple(td for _, td, _ in rows),
        analyze_ms_per_frame=tuple(ta for _, _, ta in rows),
    )


def write_profile_csv(profile: ServiceProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_CSV_HEADER)
        for c in range(1, profile.max_cpus + 1):
            writer.writerow(
                [c, repr(profile.decode_ms_per_frame[c - 1]), repr(profile.analyze_ms_per_frame[c - 1])]
            )


def service_rate(profile: ServiceProfile, c: int) -> float:
    """Frame service rate mu(c) = 1/(tau_d(c)+tau_a(c)) in frames/ms; mu(0) = 0.

    The exact ratio is used rather than any rounded display value: rounding
    changes which (c, n) pairs are classified as stable.
    """
    if c < 0 or c > profile.max_cpus:
        raise ValueError(f"cpu count {c} outside [0, {profile.max_cpus}]")
    if c == 0:
        return 0.0
    return 1.0 / (profile.decode_ms_per_frame[c - 1] + profile.analyze_ms_per_frame[c - 1])


def processing_delay(profile: ServiceProfile, c: int, n: float) -> float:
    """Mean sojourn 1/(mu(c) - lambda*n) in ms, or OVERLOAD when unstable.

    Accepts fractional n so forecast-driven sizing can evaluate non-integer
    vehicle counts.
    """
    if n < 0:
        raise ValueError("vehicle count must be non-negative")
    mu = service_rate(profile, c)
    lam_total = profile.task_rate_per_vehicle * n
    if mu <= lam_total:
        return OVERLOAD
    return 1.0 / (mu - lam_total)


def load(profile: ServiceProfile, c: int, n: float) -> float:
    """CPU load rho = lambda*n/mu(c); 0 when idle, OVERLOAD when c = 0 with work."""
    if n < 0:
        raise ValueError("vehicle count must be non-negative")
    if n == 0:
        return 0.0
    mu = service_rate(profile, c)
    if mu <= 0.0:
        return OVERLOAD
    return profile.task_rate_per_vehicle * n / mu


@dataclass(frozen=True)
class PopQueue:
    """Immutable snapshot of one PoP: active CPUs plus resident vehicles.

    ``vehicles`` maps vehicle id -> (departure time in seconds, remote flag).
    All mutators return a new snapshot, so states can be shared freely.
    """

    profile: ServiceProfile
    pop_id: int
    cpus: int = 1
    vehicles: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.cpus <= self.profile.max_cpus:
            raise ValueError(f"cpus {self.cpus} outside [0, {self.profile.max_cpus}]")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def remote_count(self) -> int:
        return sum(1 for _, remote in self.vehicles.values() if remote)

    @property
    def load(self) -> float:
        return load(self.profile, self.cpus, self.n_vehicles)

    @property
    def proc_delay(self) -> float:
        return processing_delay(self.profile, self.cpus, self.n_vehicles)

    def admit(self, vehicle_id, departure_s: float, remote: bool) -> "PopQueue":
        if vehicle_id in self.vehicles:
            raise ValueError(f"vehicle {vehicle_id!r} already assigned to PoP {self.pop_id}")
        vehicles = dict(self.vehicles)
        vehicles[vehicle_id] = (departure_s, remote)
        return replace(self, vehicles=vehicles)

    def expire(self, now_s: float) -> "PopQueue":
        """Drop every vehicle whose departure time lies strictly before now."""
        keep = {v: rec for v, rec in self.vehicles.items() if rec[0] >= now_s}
        if len(keep) == len(self.vehicles):
            return self
        return replace(self, vehicles=keep)

    def with_cpus(self, cpus: int) -> "PopQueue":
        return replace(self, cpus=cpus)


def simulate_ps_queue(
    discipline: str,
    arrival_rate: float,
    service_time_mean: float,
    horizon: int,
    seed: int,
) -> np.ndarray:
    """Event-driven single-server processor-sharing simulation.

    Poisson arrivals at ``arrival_rate`` tasks/ms; service requirements are
    either all equal to ``service_time_mean`` (``"deterministic"``) or
    exponential with that mean (``"exponential"``). All tasks in the system
    share capacity equally. Returns the sojourn time of each of the first
    ``horizon`` arrivals after the system drains, in milliseconds.

    The loop tracks the cumulative per-task service credit S(t); a task
    arriving at credit S0 with requirement x finishes when S reaches S0 + x,
    which turns every completion lookup into a min-heap peek.
    """
    if discipline not in ("deterministic", "exponential"):
        raise ValueError(f"unknown service discipline {discipline!r}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if arrival_rate <= 0:
        raise ValueError("arrival_rate must be positive")
    if service_time_mean <= 0:
        raise ValueError("service_time_mean must be positive")
    rho = arrival_rate * service_time_mean
    if rho >= 1.0:
        raise ValueError(f"unstable load rho = {rho:.3f} >= 1")

    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / arrival_rate, size=horizon))
    if discipline == "deterministic":
        sizes = np.full(horizon, service_time_mean)
    else:
        sizes = rng.exponential(service_time_mean, size=horizon)

    sojourn = np.empty(horizon)
    completions = []  # heap of (credit threshold, task index)
    credit = 0.0
    now = 0.0
    next_arrival = 0

    while next_arrival < horizon or completions:
        n_active = len(completions)
        t_arr = arrivals[next_arrival] if next_arrival < horizon else math.inf
        t_done = now + (completions[0][0] - credit) * n_active if n_active else math.inf
        if next_arrival < horizon and t_arr <= t_done:
            if n_active:
                credit += (t_arr - now) / n_active
            now = t_arr
            heapq.heappush(completions, (credit + sizes[next_arrival], next_arrival))
            next_arrival += 1
        else:
            threshold, idx = heapq.heappop(completions)
            credit = threshold
            now = t_done
            sojourn[idx] = now - arrivals[idx]
    return sojourn
