"""Simulator and agent suite for C-V2N task placement and edge CPU scaling.

The package models a metro area with P edge sites (PoPs). Vehicles arrive
according to seeded Poisson traces, each streaming a fixed-rate video task
load to whichever PoP its tasks are placed on. Every PoP is an M/G/1-PS
server whose service rate grows with the number of active CPUs. Agents
decide, per vehicle arrival, where to place the task stream and how to
scale each PoP's CPU count; rewards peak when the experienced delay hits
the configured target.
"""

from .queueing import (
    OVERLOAD,
    PopQueue,
    ServiceProfile,
    default_profile,
    load_profile_csv,
    processing_delay,
    service_rate,
    simulate_ps_queue,
)
from .traffic import (
    IntensityTable,
    TrafficTrace,
    generate_arrivals,
    load_intensity_csv,
    read_trace,
    replicate,
    synth_intensity,
    write_trace,
)
from .environment import (
    FullAction,
    Observation,
    RewardConfig,
    StepOutcome,
    SystemState,
    V2NEnv,
    continuity_scale,
    per_pop_reward,
    reward_base,
    reward_truncnorm,
    run_episode,
)
from .agents import (
    CnstAgent,
    GreedyPlacement,
    PiAgent,
    PiParams,
    TesAgent,
    TesParams,
    cnst_search,
    greedy_place,
    pi_step,
    tes_scale,
)
from .ddpg import (
    AdamState,
    DdpgAgent,
    Mlp,
    ReplayBuffer,
    adam_step,
    dod_discretize,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    polyak_update,
    save_checkpoint,
    train,
)
from .oracle import (
    BudgetExceededError,
    OracleInstance,
    naive_enumerate,
    optimality_gap,
    solve,
)

__version__ = "0.1.0"
