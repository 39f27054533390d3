"""Greedy task placement and the non-learning scaling baselines.

Placement is shared by every solution: the arriving vehicle's tasks go to
the PoP minimizing transmission surcharge plus expected processing delay.
Three scaling baselines are provided: a constant CPU vector fitted by
exhaustive search (CNST), a proportional-integral load controller (PI),
and a Holt-Winters forecast sizer (TES).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .environment import RewardConfig, SystemState, pre_draw_departures
from .queueing import OVERLOAD, ServiceProfile, load, processing_delay, service_rate
from .traffic import TrafficTrace

# Load reported to the PI controller when a PoP has work but zero CPUs.
PI_OVERLOAD_LOAD = 2.0


def greedy_place(
    state: SystemState,
    origin: int,
    profile: ServiceProfile,
    transmission_ms: float,
    include_candidate: bool = True,
) -> int:
    """PoP minimizing transmission surcharge plus expected processing delay.

    By default the candidate vehicle is counted into each PoP's occupancy
    (N+1) so the chosen queue is evaluated as it would be after admission;
    set include_candidate=False to rank by the current delay instead.
    Overloaded PoPs rank behind all stable ones and among themselves by
    surcharge, so an all-overloaded system keeps the vehicle at its origin.
    Ties break toward the lowest PoP index.
    """
    extra = 1 if include_candidate else 0
    best_key = None
    best_pop = 0
    for p, (n, c) in enumerate(state.per_pop):
        surcharge = 0.0 if p == origin else transmission_ms
        delay = processing_delay(profile, c, n + extra)
        if delay == OVERLOAD:
            key = (1, surcharge, p)
        else:
            key = (0, surcharge + delay, p)
        if best_key is None or key < best_key:
            best_key = key
            best_pop = p
    return best_pop


class GreedyPlacement:
    """Stateless placement agent around greedy_place."""

    def __init__(self, profile: ServiceProfile, transmission_ms: float = 20.0, include_candidate: bool = True):
        self.profile = profile
        self.transmission_ms = transmission_ms
        self.include_candidate = include_candidate

    def place(self, obs) -> int:
        return greedy_place(
            obs.state, obs.origin, self.profile, self.transmission_ms, self.include_candidate
        )


class LocalPlacement:
    """Always processes at the origin PoP."""

    def place(self, obs) -> int:
        return obs.origin


class CnstAgent:
    """Holds every PoP at a fixed CPU vector; with no vector it never scales."""

    def __init__(self, cpus=None):
        self.cpus = None if cpus is None else tuple(int(c) for c in cpus)

    def scale(self, obs):
        if self.cpus is None:
            return (0,) * obs.state.pop_count
        if len(self.cpus) != obs.state.pop_count:
            raise ValueError("CPU vector length does not match PoP count")
        return tuple(target - c for target, (_, c) in zip(self.cpus, obs.state.per_pop))


def _reward_grid(cfg: RewardConfig, d: np.ndarray) -> np.ndarray:
    """Vectorized reward over a delay array; non-finite delays score 0."""
    out = np.zeros_like(d)
    finite = np.isfinite(d)
    x = d[finite] / cfg.d_tgt_ms
    base = x * np.exp(-0.5 * (x * x - 1.0))
    if cfg.variant == "base":
        out[finite] = base
    else:
        from .environment import reward_truncnorm

        vals = np.array([reward_truncnorm(v, cfg.d_tgt_ms, cfg.sigma_ms) for v in d[finite]])
        out[finite] = vals
    return out


def cnst_search(
    trace: TrafficTrace,
    profile: ServiceProfile,
    reward_cfg: RewardConfig,
    dwell_seed: int = 0,
    pop_count: int | None = None,
    initial_cpus: int = 1,
    include_candidate: bool = True,
    dwell_mean_s: float = 30.0,
    budget: int | None = None,
) -> tuple:
    """Constant CPU vector with the highest total reward under greedy placement.

    Exhaustively simulates every vector in {0..max_cpus}^P. All candidates
    share the pre-drawn departures, so the sweep can run them in lockstep as
    one vectorized pass over the trace; per-candidate totals equal what
    run_episode would produce with a CnstAgent holding that vector. Ties go
    to the lexicographically smallest vector.
    """
    candidates, totals = cnst_sweep_totals(
        trace,
        profile,
        reward_cfg,
        dwell_seed,
        pop_count,
        initial_cpus,
        include_candidate,
        dwell_mean_s,
        budget,
    )
    return tuple(int(c) for c in candidates[int(np.argmax(totals))])


def cnst_sweep_totals(
    trace: TrafficTrace,
    profile: ServiceProfile,
    reward_cfg: RewardConfig,
    dwell_seed: int = 0,
    pop_count: int | None = None,
    initial_cpus: int = 1,
    include_candidate: bool = True,
    dwell_mean_s: float = 30.0,
    budget: int | None = None,
):
    """All constant CPU vectors (lexicographic) and their episode total rewards."""
    if not trace.events:
        raise ValueError("cannot search on an empty trace")
    pops = pop_count if pop_count is not None else trace.pop_count
    maxc = profile.max_cpus
    n_candidates = (maxc + 1) ** pops
    if budget is None and pops > 5:
        raise ValueError(f"{n_candidates} candidate episodes at P={pops}; pass an explicit budget to proceed")
    if budget is not None and n_candidates > budget:
        raise ValueError(f"{n_candidates} candidate episodes exceed budget {budget}")

    candidates = np.array(list(itertools.product(range(maxc + 1), repeat=pops)), dtype=np.int64)
    k = len(candidates)
    lam = profile.task_rate_per_vehicle
    trans = reward_cfg.transmission_ms
    mu_of = np.array([service_rate(profile, c) for c in range(maxc + 1)])
    mu_cand = mu_of[candidates]  # (K, P)
    mu_initial = np.full((k, pops), mu_of[initial_cpus])

    departures = pre_draw_departures(trace, dwell_seed, dwell_mean_s)
    n_veh = np.zeros((k, pops))
    n_remote = np.zeros((k, pops))
    active = {}  # vid -> (placements (K,), remote (K,))
    expiry = []  # heap of (departure, vid)
    total = np.zeros(k)
    rows = np.arange(k)
    extra = 1 if include_candidate else 0

    for i, (t, origin) in enumerate(trace.events):
        while expiry and expiry[0][0] < t:
            _, vid = heapq.heappop(expiry)
            placed, remote = active.pop(vid)
            n_veh[rows, placed] -= 1
            n_remote[rows, placed] -= remote

        mu_now = mu_initial if i == 0 else mu_cand
        denom = mu_now - lam * (n_veh + extra)
        feasible = denom > 0
        score = np.where(feasible, 1.0 / np.where(feasible, denom, 1.0), np.inf)
        score += np.where(np.arange(pops)[None, :] == origin, 0.0, trans)
        # all-overloaded rows fall back to the surcharge ranking of greedy_place
        fallback = origin if trans > 0 else 0
        placed = np.where(feasible.any(axis=1), np.argmin(score, axis=1), fallback)

        remote = (placed != origin).astype(float)
        n_veh[rows, placed] += 1
        n_remote[rows, placed] += remote
        active[i] = (placed, remote)
        heapq.heappush(expiry, (departures[i], i))

        denom_r = mu_cand - lam * n_veh
        stable = denom_r > 0
        d = np.where(stable, 1.0 / np.where(stable, denom_r, 1.0), np.inf)
        occupied = n_veh > 0
        d = np.where(occupied, d + trans * n_remote / np.maximum(n_veh, 1.0), d)
        # idle PoPs: score the hypothetical sojourn 1/mu, or 1.0 when dark
        idle_powered = ~occupied & (candidates > 0)
        d = np.where(idle_powered, 1.0 / np.where(mu_cand > 0, mu_cand, 1.0), d)
        r = _reward_grid(reward_cfg, d)
        r[~occupied & (candidates == 0)] = 1.0
        total += r.mean(axis=1)

    return candidates, total


@dataclass(frozen=True)
class PiParams:
    """Gains and load setpoint of the PI scaler."""

    alpha: float = 4.0
    beta: float = 0.0
    rho_tgt: float = 0.7

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("gains must be non-negative")
        if not 0 < self.rho_tgt < 1:
            raise ValueError("rho_tgt must lie in (0, 1)")


def pi_step(rho_now: float, rho_prev: float, params: PiParams) -> int:
    """One controller evaluation: +1/-1 CPU when the drive term leaves (-1, 1)."""
    delta = params.alpha * (rho_now - params.rho_tgt) + params.beta * (rho_now - rho_prev)
    if delta > 1.0:
        return 1
    if delta < -1.0:
        return -1
    return 0


class PiAgent:
    """Keeps each PoP's CPU load near the setpoint, one CPU step at a time."""

    def __init__(self, profile: ServiceProfile, params: PiParams = PiParams(), pop_count: int = 1):
        self.profile = profile
        self.params = params
        self._prev = [0.0] * pop_count

    def scale(self, obs):
        deltas = []
        for p, (n, c) in enumerate(obs.state.per_pop):
            rho = load(self.profile, c, n)
            if rho == OVERLOAD:
                rho = PI_OVERLOAD_LOAD
            deltas.append(pi_step(rho, self._prev[p], self.params))
            self._prev[p] = rho
        return tuple(deltas)


@dataclass(frozen=True)
class TesParams:
    """Cadence and smoothing constants of the forecast scaler.

    The flow series counts placements per interval_s seconds; forecasts look
    horizon intervals ahead; the additive seasonal ring spans one day unless
    season_intervals overrides it. residence_s converts the flow forecast
    into a concurrent-vehicle estimate for CPU sizing (Little's law: with a
    per-interval placement rate f, roughly f * residence_s / interval_s
    vehicles are resident at once). Sizing directly against a 1-second flow
    count would provision for ~0.05 "vehicles" while several reside.
    """

    interval_s: float = 1.0
    horizon: int = 1
    alpha: float = 0.02
    beta: float = 0.002
    gamma: float = 0.1
    season_intervals: int | None = None
    residence_s: float = 30.0

    def __post_init__(self):
        if self.interval_s <= 0 or self.horizon < 1:
            raise ValueError("interval_s must be positive and horizon >= 1")
        if self.residence_s <= 0:
            raise ValueError("residence_s must be positive")
        for g in (self.alpha, self.beta, self.gamma):
            if not 0 <= g <= 1:
                raise ValueError("smoothing constants must lie in [0, 1]")

    @property
    def season(self) -> int:
        return self.season_intervals or max(1, int(round(86400.0 / self.interval_s)))


def tes_scale(
    forecast_max_n: float,
    profile: ServiceProfile,
    cfg: RewardConfig,
    remote_present: bool,
) -> int:
    """Minimal CPU count keeping the expected delay within the target budget.

    The budget loses the transmission surcharge when the PoP currently hosts
    remote traffic. If even max_cpus cannot meet the budget, max_cpus it is.
    """
    if forecast_max_n < 0:
        raise ValueError("forecast must be non-negative")
    if forecast_max_n == 0:
        return 0
    budget = cfg.d_tgt_ms - (cfg.transmission_ms if remote_present else 0.0)
    for c in range(1, profile.max_cpus + 1):
        if processing_delay(profile, c, forecast_max_n) <= budget:
            return c
    return profile.max_cpus


class TesAgent:
    """Triple-exponential-smoothing traffic forecaster driving CPU sizing.

    Counts the vehicles placed on each PoP per interval, advances the
    additive Holt-Winters recurrences at every interval boundary, and sizes
    each PoP for the maximum flow forecast over the lookahead horizon.
    Level initializes to the first closed flow; trend and the seasonal ring
    start at zero.
    """

    def __init__(
        self,
        profile: ServiceProfile,
        reward_cfg: RewardConfig,
        pop_count: int,
        params: TesParams = TesParams(),
    ):
        self.profile = profile
        self.reward_cfg = reward_cfg
        self.params = params
        self.pop_count = pop_count
        L = params.season
        self._level = [0.0] * pop_count
        self._trend = [0.0] * pop_count
        self._ring = [[0.0] * L for _ in range(pop_count)]
        self._counts = [0] * pop_count
        self._closed = 0  # intervals folded into the state so far
        self._boundary = None  # start of the interval now accumulating

    def _sync(self, now_s: float) -> None:
        m = self.params.interval_s
        if self._boundary is None:
            self._boundary = math.floor(now_s / m) * m
            return
        if now_s < self._boundary:
            raise ValueError(f"observation at {now_s}s precedes interval start {self._boundary}s")
        L = self.params.season
        alpha, beta, gamma = self.params.alpha, self.params.beta, self.params.gamma
        while self._boundary + m <= now_s:
            slot = self._closed % L
            for p in range(self.pop_count):
                f = float(self._counts[p])
                ring = self._ring[p]
                if self._closed == 0:
                    self._level[p] = f
                else:
                    s_prev, b_prev = self._level[p], self._trend[p]
                    c_prev = ring[slot]
                    s = alpha * (f - c_prev) + (1.0 - alpha) * (s_prev + b_prev)
                    b = beta * (s - s_prev) + (1.0 - beta) * b_prev
                    ring[slot] = gamma * (f - s_prev - b_prev) + (1.0 - gamma) * c_prev
                    self._level[p] = s
                    self._trend[p] = b
                self._counts[p] = 0
            self._closed += 1
            self._boundary += m

    def observe(self, obs, placed_pop: int) -> None:
        self._sync(obs.t_s)
        self._counts[placed_pop] += 1

    def forecast(self, pop: int) -> list:
        """Flow forecasts for the next horizon intervals, floored at zero."""
        if self._closed == 0:
            return [0.0] * self.params.horizon
        L = self.params.season
        s, b = self._level[pop], self._trend[pop]
        ring = self._ring[pop]
        return [
            max(0.0, s + h * b + ring[(self._closed - 1 + h) % L])
            for h in range(1, self.params.horizon + 1)
        ]

    def scale(self, obs):
        self._sync(obs.t_s)
        if self._closed == 0:
            return (0,) * self.pop_count  # nothing observed yet: hold
        occupancy_per_flow = self.params.residence_s / self.params.interval_s
        deltas = []
        for p, (_, c) in enumerate(obs.state.per_pop):
            n_star = max(self.forecast(p)) * occupancy_per_flow
            target = tes_scale(n_star, self.profile, self.reward_cfg, obs.remote_present[p])
            deltas.append(target - c)
        return tuple(deltas)
