"""Arrival-driven MDP environment over a set of PoP queues.

Each trace event triggers one transition: expire departed vehicles, report
the (N_p, C_p) state, apply the agent's placement and CPU-delta action,
then score every PoP with a delay-shaped reward and hand back the average.
Dwell times are pre-drawn from their own seeded stream indexed by arrival
order, so placement decisions can never perturb departure sampling and
clairvoyant solvers can share identical departures.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .queueing import OVERLOAD, PopQueue, ServiceProfile, processing_delay, service_rate
from .traffic import TrafficTrace

SQRT_TWO_PI = math.sqrt(2.0 * math.pi)

EPISODE_CSV_PREFIX = ["step", "t_s", "origin_pop", "placed_pop", "delay_ms", "avg_reward"]


@dataclass(frozen=True)
class RewardConfig:
    """Target delay, inter-PoP transmission surcharge, and reward shape."""

    d_tgt_ms: float = 50.0
    transmission_ms: float = 20.0
    variant: str = "base"  # "base" | "truncnorm"
    sigma_ms: float = 10.0

    def __post_init__(self):
        if self.d_tgt_ms <= 0:
            raise ValueError("d_tgt_ms must be positive")
        if self.transmission_ms < 0:
            raise ValueError("transmission_ms must be non-negative")
        if self.variant not in ("base", "truncnorm"):
            raise ValueError(f"unknown reward variant {self.variant!r}")
        if self.variant == "truncnorm" and self.sigma_ms <= 0:
            raise ValueError("sigma_ms must be positive for the truncnorm variant")

    def reward(self, d_ms: float) -> float:
        if self.variant == "base":
            return reward_base(d_ms, self.d_tgt_ms)
        return reward_truncnorm(d_ms, self.d_tgt_ms, self.sigma_ms)


def reward_base(d_ms: float, d_tgt_ms: float) -> float:
    """(d/d_tgt) * exp(-[(d/d_tgt)^2 - 1]/2): peaks at exactly 1 when d = d_tgt.

    The overload delay (infinity) maps to 0, the limit of the expression.
    """
    if not math.isfinite(d_ms):
        return 0.0
    x = d_ms / d_tgt_ms
    return x * math.exp(-0.5 * (x * x - 1.0))


def continuity_scale(d_tgt_ms: float, sigma_ms: float) -> float:
    """Scale K that splices the truncated-normal tail onto the base reward.

    K = sigma * sqrt(2*pi) * [Phi(inf) - Phi(-d_tgt/sigma)] * R(d_tgt), so the
    two branches of the piecewise reward meet with value 1 at d = d_tgt.
    """
    if sigma_ms <= 0:
        raise ValueError("sigma_ms must be positive")
    truncation = norm.cdf(math.inf) - norm.cdf((0.0 - d_tgt_ms) / sigma_ms)
    return sigma_ms * SQRT_TWO_PI * truncation * reward_base(d_tgt_ms, d_tgt_ms)


def reward_truncnorm(d_ms: float, d_tgt_ms: float, sigma_ms: float) -> float:
    """Base reward below the target, K-scaled truncated-normal tail above it.

    The tail is the density of a normal centered at d_tgt with deviation
    sigma, truncated to [0, inf) and scaled by K for continuity at d_tgt;
    it decays much faster than the base reward, punishing under-provisioning.
    """
    if not math.isfinite(d_ms):
        return 0.0
    if d_ms < d_tgt_ms:
        return reward_base(d_ms, d_tgt_ms)
    k = continuity_scale(d_tgt_ms, sigma_ms)
    z = (d_ms - d_tgt_ms) / sigma_ms
    denom = norm.cdf(math.inf) - norm.cdf((0.0 - d_tgt_ms) / sigma_ms)
    return (k / sigma_ms) * norm.pdf(z) / denom


def per_pop_reward(pop: PopQueue, cfg: RewardConfig) -> float:
    """Reward a PoP earns from its post-action state.

    The delay scored is the mean processing sojourn plus the transmission
    surcharge averaged over the PoP's resident vehicles (the remote
    fraction). Conventions for idle PoPs: zero CPUs at zero vehicles is
    perfectly provisioned (reward 1); idle CPUs are scored at the delay a
    hypothetical task would see, 1/mu(C), which penalizes over-provisioning.
    """
    n = pop.n_vehicles
    if n == 0:
        if pop.cpus == 0:
            return 1.0
        return cfg.reward(1.0 / service_rate(pop.profile, pop.cpus))
    delay = pop.proc_delay
    if delay == OVERLOAD:
        return 0.0
    delay += cfg.transmission_ms * pop.remote_count / n
    return cfg.reward(delay)


@dataclass(frozen=True)
class SystemState:
    """MDP observation: (N_p, C_p) per PoP at the current clock."""

    per_pop: tuple  # ((n_vehicles, cpus), ...)
    clock_s: float

    @property
    def pop_count(self) -> int:
        return len(self.per_pop)

    def as_vector(self) -> np.ndarray:
        """Interleaved (N_1, C_1, ..., N_P, C_P) as float64."""
        return np.array([x for pair in self.per_pop for x in pair], dtype=float)


@dataclass(frozen=True)
class FullAction:
    """Placement PoP for the arriving vehicle plus per-PoP CPU increments."""

    placement: int
    deltas: tuple


@dataclass(frozen=True)
class Observation:
    """What agents see when a vehicle arrives: post-expiry state plus context."""

    t_s: float
    origin: int
    state: SystemState
    remote_present: tuple  # per PoP: any resident vehicle placed remotely?


@dataclass(frozen=True)
class StepOutcome:
    next_state: SystemState
    avg_reward: float
    per_pop_rewards: tuple
    vehicle_delay_ms: float
    done: bool


def pre_draw_departures(trace: TrafficTrace, dwell_seed: int, dwell_mean_s: float = 30.0) -> np.ndarray:
    """Departure time per arrival: T_i = t_i + mean * Exp(1), in arrival order."""
    rng = np.random.default_rng(np.random.SeedSequence(dwell_seed))
    dwell = dwell_mean_s * rng.exponential(1.0, size=len(trace.events))
    return np.array([t for t, _ in trace.events]) + dwell


class V2NEnv:
    """Steps through one trace, one vehicle arrival at a time."""

    def __init__(
        self,
        trace: TrafficTrace,
        profile: ServiceProfile,
        reward_cfg: RewardConfig,
        dwell_seed: int = 0,
        pop_count: int | None = None,
        initial_cpus: int = 1,
        dwell_mean_s: float = 30.0,
        departures: np.ndarray | None = None,
    ):
        if not trace.events:
            raise ValueError("cannot build an environment from an empty trace")
        self.trace = trace
        self.profile = profile
        self.reward_cfg = reward_cfg
        self.pop_count = pop_count if pop_count is not None else trace.pop_count
        if any(p >= self.pop_count for _, p in trace.events):
            raise ValueError("trace references PoPs beyond pop_count")
        if not 0 <= initial_cpus <= profile.max_cpus:
            raise ValueError("initial_cpus outside [0, max_cpus]")
        self.initial_cpus = initial_cpus
        if departures is None:
            departures = pre_draw_departures(trace, dwell_seed, dwell_mean_s)
        elif len(departures) != len(trace.events):
            raise ValueError("departure override length must match the trace")
        self.departures = np.asarray(departures, dtype=float)
        self.reset()

    def reset(self) -> SystemState:
        self.pops = [
            PopQueue(self.profile, pop_id=p, cpus=self.initial_cpus) for p in range(self.pop_count)
        ]
        self._next = 0
        self._peeked = False
        return self._state(self.trace.events[0][0])

    def _state(self, clock_s: float) -> SystemState:
        return SystemState(
            per_pop=tuple((pop.n_vehicles, pop.cpus) for pop in self.pops),
            clock_s=clock_s,
        )

    @property
    def done(self) -> bool:
        return self._next >= len(self.trace.events)

    def peek_arrival(self) -> Observation | None:
        """Expire departed vehicles, then report the pending arrival; None when done.

        Idempotent until step() consumes the arrival.
        """
        if self.done:
            return None
        t, origin = self.trace.events[self._next]
        if not self._peeked:
            self.pops = [pop.expire(t) for pop in self.pops]
            self._peeked = True
        return Observation(
            t_s=t,
            origin=origin,
            state=self._state(t),
            remote_present=tuple(pop.remote_count > 0 for pop in self.pops),
        )

    def step(self, action: FullAction) -> StepOutcome:
        """Admit the arrival, apply CPU deltas, and score every PoP."""
        if self.done:
            raise RuntimeError("step() called on an exhausted trace")
        if not self._peeked:
            raise RuntimeError("step() requires a prior peek_arrival()")
        if not 0 <= action.placement < self.pop_count:
            raise ValueError(f"placement {action.placement} outside [0, {self.pop_count})")
        if len(action.deltas) != self.pop_count:
            raise ValueError(f"expected {self.pop_count} CPU deltas, got {len(action.deltas)}")

        idx = self._next
        t, origin = self.trace.events[idx]
        remote = action.placement != origin
        self.pops[action.placement] = self.pops[action.placement].admit(
            idx, self.departures[idx], remote
        )
        for p, delta in enumerate(action.deltas):
            cpus = min(max(self.pops[p].cpus + int(delta), 0), self.profile.max_cpus)
            if cpus != self.pops[p].cpus:
                self.pops[p] = self.pops[p].with_cpus(cpus)

        rewards = tuple(per_pop_reward(pop, self.reward_cfg) for pop in self.pops)
        delay = self.pops[action.placement].proc_delay
        if delay != OVERLOAD and remote:
            delay += self.reward_cfg.transmission_ms

        self._next += 1
        self._peeked = False
        return StepOutcome(
            next_state=self._state(t),
            avg_reward=float(np.mean(rewards)),
            per_pop_rewards=rewards,
            vehicle_delay_ms=delay,
            done=self.done,
        )


@dataclass
class EpisodeRecord:
    """Everything one episode produced, column-wise over steps."""

    t_s: list
    origin: list
    placed: list
    delay_ms: list
    avg_reward: list
    cpus: list  # per step: tuple of C_p
    vehicles: list  # per step: tuple of N_p
    decision_us: list

    @property
    def total_reward(self) -> float:
        return float(sum(self.avg_reward))

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.avg_reward)) if self.avg_reward else 0.0

    def __len__(self) -> int:
        return len(self.t_s)

    def write_csv(self, path) -> None:
        pop_count = len(self.cpus[0]) if self.cpus else 0
        header = EPISODE_CSV_PREFIX + [f"c_{p}" for p in range(pop_count)]
        header += [f"n_{p}" for p in range(pop_count)] + ["decision_us"]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self.t_s)):
                row = [
                    str(i),
                    f"{self.t_s[i]:.6f}",
                    str(self.origin[i]),
                    str(self.placed[i]),
                    repr(self.delay_ms[i]),
                    repr(self.avg_reward[i]),
                ]
                row += [str(c) for c in self.cpus[i]]
                row += [str(n) for n in self.vehicles[i]]
                row.append(f"{self.decision_us[i]:.3f}")
                fh.write(",".join(row) + "\n")


def run_episode(env: V2NEnv, placement_agent, scaling_agent) -> EpisodeRecord:
    """Drive peek/decide/step until the trace is exhausted.

    Both agents decide from the same pre-action observation (decisions run
    in parallel conceptually). Agents exposing an ``observe`` hook are told
    the realized placement after each step. Decision latency is the
    wall-clock cost of the two decide calls, in microseconds.
    """
    env.reset()
    rec = EpisodeRecord([], [], [], [], [], [], [], [])
    step_idx = 0
    while (obs := env.peek_arrival()) is not None:
        try:
            t0 = time.perf_counter()
            placed = placement_agent.place(obs)
            deltas = scaling_agent.scale(obs)
            decision_us = (time.perf_counter() - t0) * 1e6
        except Exception as exc:
            raise RuntimeError(f"agent failed at step {step_idx} (t={obs.t_s:.3f}s)") from exc
        out = env.step(FullAction(placement=placed, deltas=tuple(deltas)))
        for agent in (placement_agent, scaling_agent):
            hook = getattr(agent, "observe", None)
            if hook is not None:
                hook(obs, placed)
        rec.t_s.append(obs.t_s)
        rec.origin.append(obs.origin)
        rec.placed.append(placed)
        rec.delay_ms.append(out.vehicle_delay_ms)
        rec.avg_reward.append(out.avg_reward)
        rec.cpus.append(tuple(c for _, c in out.next_state.per_pop))
        rec.vehicles.append(tuple(n for n, _ in out.next_state.per_pop))
        rec.decision_us.append(decision_us)
        step_idx += 1
    return rec
