"""Clairvoyant optimum on tiny instances, by placement enumeration.

With arrivals and dwell times known in advance, the occupancy trajectory of
every PoP is a pure function of the placement vector. CPU counts carry no
constraint or cost across steps, so for a fixed placement vector the optimal
C for each (PoP, step) cell is an independent argmax of that cell's reward.
solve() enumerates the P^V placement vectors and applies that decomposition;
naive_enumerate() brute-forces the joint placement x CPU-vector tree without
it and exists purely to validate solve().
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .environment import (
    EpisodeRecord,
    RewardConfig,
    V2NEnv,
    per_pop_reward,
    pre_draw_departures,
    run_episode,
)
from .queueing import PopQueue, ServiceProfile
from .traffic import TrafficTrace

DEFAULT_BUDGET = 10**7


class BudgetExceededError(RuntimeError):
    """Requested enumeration would exceed the configured combination budget."""


@dataclass(frozen=True)
class OracleInstance:
    """First V arrivals of a trace with departures pre-drawn and shared.

    Agents replayed on the instance see the same departures, so optimality
    gaps measure policy quality rather than sampling luck.
    """

    events: tuple  # ((t_s, origin_pop), ...)
    departures: tuple  # seconds, aligned with events
    profile: ServiceProfile
    reward_cfg: RewardConfig
    pop_count: int
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if len(self.events) != len(self.departures):
            raise ValueError("events and departures must align")
        if any(p >= self.pop_count for _, p in self.events):
            raise ValueError("event references a PoP beyond pop_count")

    @property
    def vehicles(self) -> int:
        return len(self.events)

    @property
    def max_cpus(self) -> int:
        return self.profile.max_cpus

    @classmethod
    def from_trace(
        cls,
        trace: TrafficTrace,
        vehicles: int,
        profile: ServiceProfile,
        reward_cfg: RewardConfig,
        dwell_seed: int = 0,
        pop_count: int | None = None,
        budget: int = DEFAULT_BUDGET,
        dwell_mean_s: float = 30.0,
    ) -> "OracleInstance":
        if vehicles > len(trace.events):
            raise ValueError(f"trace holds only {len(trace.events)} arrivals")
        departures = pre_draw_departures(trace, dwell_seed, dwell_mean_s)[:vehicles]
        return cls(
            events=tuple(trace.events[:vehicles]),
            departures=tuple(float(t) for t in departures),
            profile=profile,
            reward_cfg=reward_cfg,
            pop_count=pop_count if pop_count is not None else trace.pop_count,
            budget=budget,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for (t, p), dep in zip(self.events, self.departures):
            h.update(f"{t!r},{p},{dep!r};".encode())
        h.update(repr(self.profile.decode_ms_per_frame).encode())
        h.update(repr(self.profile.analyze_ms_per_frame).encode())
        h.update(f"{self.reward_cfg}".encode())
        h.update(str(self.pop_count).encode())
        return h.hexdigest()

    def prefix_trace(self) -> TrafficTrace:
        return TrafficTrace(events=self.events, seed=0, source_hash=self.digest())


@dataclass(frozen=True)
class OracleSolution:
    placements: tuple  # p'_v per arrival
    cpu_schedule: tuple  # per arrival: tuple of C_p
    total_reward: float


def _cell_reward_table(instance: OracleInstance):
    """Memoized best/per-C rewards of one PoP cell keyed by (n, remote_count)."""
    cfg = instance.reward_cfg
    profile = instance.profile
    cache_best = {}
    cache_per_c = {}

    def per_c(n: int, remote: int) -> list:
        key = (n, remote)
        if key not in cache_per_c:
            vals = []
            for c in range(instance.max_cpus + 1):
                pop = PopQueue(
                    profile,
                    pop_id=0,
                    cpus=c,
                    vehicles={i: (0.0, i < remote) for i in range(n)},
                )
                vals.append(per_pop_reward(pop, cfg))
            cache_per_c[key] = vals
        return cache_per_c[key]

    def best(n: int, remote: int):
        key = (n, remote)
        if key not in cache_best:
            vals = per_c(n, remote)
            best_c = max(range(len(vals)), key=lambda c: (vals[c], -c))
            cache_best[key] = (vals[best_c], best_c)
        return cache_best[key]

    return best, per_c


def _trajectory(instance: OracleInstance, placements):
    """Per-step (n, remote) for every PoP under the given placement vector."""
    active = []  # (departure, pop, remote)
    out = []
    for v, (t, origin) in enumerate(instance.events):
        active = [rec for rec in active if rec[0] >= t]
        pop = placements[v]
        active.append((instance.departures[v], pop, pop != origin))
        n = [0] * instance.pop_count
        remote = [0] * instance.pop_count
        for _, p, rem in active:
            n[p] += 1
            remote[p] += rem
        out.append((tuple(n), tuple(remote)))
    return out


def solve(instance: OracleInstance) -> OracleSolution:
    """Optimal placements and CPU schedule by exhaustive placement enumeration.

    Ties break to the lexicographically smallest placement vector, then to
    the smallest CPU count per cell. Totals are sums over arrivals of the
    PoP-averaged reward, matching the environment's scale.
    """
    if instance.vehicles == 0:
        return OracleSolution(placements=(), cpu_schedule=(), total_reward=0.0)
    n_vectors = instance.pop_count**instance.vehicles
    if n_vectors > instance.budget:
        raise BudgetExceededError(
            f"{n_vectors} placement vectors exceed budget {instance.budget}"
        )
    best_cell, _ = _cell_reward_table(instance)
    p_count = instance.pop_count

    best_total = None
    best_placements = None
    best_schedule = None
    for placements in itertools.product(range(p_count), repeat=instance.vehicles):
        steps = []
        schedule = []
        for n, remote in _trajectory(instance, placements):
            step = 0.0
            cpus = []
            for p in range(p_count):
                r, c = best_cell(n[p], remote[p])
                step += r
                cpus.append(c)
            steps.append(step / p_count)
            schedule.append(tuple(cpus))
        total = math.fsum(steps)  # exact, so equal step sets compare equal
        if best_total is None or total > best_total:
            best_total = total
            best_placements = placements
            best_schedule = tuple(schedule)
    return OracleSolution(
        placements=best_placements, cpu_schedule=best_schedule, total_reward=float(best_total)
    )


def naive_enumerate(instance: OracleInstance) -> OracleSolution:
    """Joint brute force: every (placement, full CPU vector) path, end to end.

    Exponentially worse than solve() and deliberately free of its per-cell
    argmax decomposition, so it can validate it. Per-step rewards are still
    memoized per (C, n, remote) cell; totals are exact sums, making the
    equality check against solve() well-defined.
    """
    if instance.vehicles == 0:
        return OracleSolution(placements=(), cpu_schedule=(), total_reward=0.0)
    p_count = instance.pop_count
    per_step = p_count * (instance.max_cpus + 1) ** p_count
    if per_step**instance.vehicles > instance.budget:
        raise BudgetExceededError(
            f"{per_step}^{instance.vehicles} joint actions exceed budget {instance.budget}"
        )
    _, per_c = _cell_reward_table(instance)
    actions = list(
        itertools.product(
            range(p_count), itertools.product(range(instance.max_cpus + 1), repeat=p_count)
        )
    )

    best = None
    for path in itertools.product(actions, repeat=instance.vehicles):
        active = []
        steps = []
        for v, (t, origin) in enumerate(instance.events):
            active = [rec for rec in active if rec[0] >= t]
            pop, cvec = path[v]
            active.append((instance.departures[v], pop, pop != origin))
            n = [0] * p_count
            remote = [0] * p_count
            for _, p, rem in active:
                n[p] += 1
                remote[p] += rem
            steps.append(
                sum(per_c(n[p], remote[p])[cvec[p]] for p in range(p_count)) / p_count
            )
        total = math.fsum(steps)
        if best is None or total > best[0]:
            best = (total, path)
    total, path = best
    return OracleSolution(
        placements=tuple(pop for pop, _ in path),
        cpu_schedule=tuple(cvec for _, cvec in path),
        total_reward=float(total),
    )


def optimality_gap(agent_total_reward: float, optimal_total_reward: float) -> float:
    """Percentage shortfall against the optimum, clipped below at zero."""
    if optimal_total_reward <= 0:
        raise ValueError("optimal total reward must be positive")
    return max(0.0, 100.0 * (optimal_total_reward - agent_total_reward) / optimal_total_reward)


def replay_agents(
    instance: OracleInstance,
    placement_agent,
    scaling_agent,
    initial_cpus: int = 1,
) -> EpisodeRecord:
    """Run an agent pair over the instance with the oracle's departures."""
    env = V2NEnv(
        instance.prefix_trace(),
        instance.profile,
        instance.reward_cfg,
        pop_count=instance.pop_count,
        initial_cpus=initial_cpus,
        departures=np.array(instance.departures),
    )
    return run_episode(env, placement_agent, scaling_agent)
