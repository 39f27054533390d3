"""Actor-critic scaling agents: dense nets, manual backprop, Adam, replay.

The actor maps the (normalized) system state to a real-valued CPU increment
per PoP in [-1, 1]; deterministic ordered discretization (DOD) turns that
into integers in [-C_max, C_max]. A critic scores (state, real action)
pairs; slow-moving target copies of both networks stabilize the temporal-
difference targets via Polyak averaging.

Two scopes exist. The global scope is a single agent over the interleaved
state of all PoPs emitting every delta at once. The per-PoP scope runs one
independent agent per PoP on its local (N_p, C_p); those agents are stored
stacked, with a leading ensemble axis on every weight tensor, so all P of
them forward/backward in single numpy calls. The math is identical to P
separate networks because matmul broadcasts over the leading axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .environment import FullAction, RewardConfig, SystemState, V2NEnv
from .queueing import ServiceProfile
from .traffic import TrafficTrace

CHECKPOINT_FORMAT = "v2nsim-ddpg"
CHECKPOINT_VERSION = 1


def _elu_with_deriv(z):
    """ELU output and derivative without branching.

    exp(min(z, 0)) equals 1 on the positive side and exp(z) elsewhere, which
    is exactly ELU'; the output follows as max(z, 0) + (deriv - 1).
    """
    deriv = np.exp(np.minimum(z, 0.0))
    out = np.maximum(z, 0.0)
    out += deriv
    out -= 1.0
    return out, deriv


class Mlp:
    """Fully-connected net: ELU hidden layers, tanh or linear output.

    Weight shapes are (*lead, d_in, d_out) where ``lead`` is an optional
    ensemble axis; inputs then carry shape (*lead, batch, d_in). Biases are
    (*lead, 1, d_out) so they broadcast over the batch. Initialization is
    uniform in +-1/sqrt(fan_in) from the supplied generator.
    """

    def __init__(self, sizes, output="tanh", rng=None, lead=()):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output not in ("tanh", "linear"):
            raise ValueError(f"unknown output activation {output!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = list(sizes)
        self.output = output
        self.lead = tuple(lead)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(sizes, sizes[1:]):
            bound = 1.0 / math.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(*self.lead, d_in, d_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(*self.lead, 1, d_out)))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.sizes = list(self.sizes)
        dup.output = self.output
        dup.lead = self.lead
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def forward(self, x):
        """Returns (output, cache); the cache feeds backward()."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        acts = [x]
        derivs = []  # d(activation)/d(pre-activation), None for linear output
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i < last:
                a, deriv = _elu_with_deriv(z)
            elif self.output == "tanh":
                a = np.tanh(z)
                deriv = 1.0 - a * a
            else:
                a = z
                deriv = None
            acts.append(a)
            derivs.append(deriv)
        return a, (acts, derivs)

    def backward(self, cache, grad_out):
        """Exact reverse-mode pass. Returns ([(dW, db) per layer], d_input)."""
        acts, derivs = cache
        grads = [None] * self.n_layers
        d = np.asarray(grad_out, dtype=float)
        for i in range(self.n_layers - 1, -1, -1):
            dz = d if derivs[i] is None else d * derivs[i]
            grads[i] = (
                np.swapaxes(acts[i], -1, -2) @ dz,
                dz.sum(axis=-2, keepdims=True),
            )
            d = dz @ np.swapaxes(self.weights[i], -1, -2)
        return grads, d


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)[0]


def mlp_backward(net: Mlp, x, grad_out):
    """Parameter and input gradients of net at x for the given upstream."""
    _, cache = net.forward(x)
    return net.backward(cache, grad_out)


def _flatten_grads(layer_grads) -> list:
    out = []
    for dw, db in layer_grads:
        out.extend((dw, db))
    return out


class AdamState:
    """First/second moment slots for one parameter list."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(opt: AdamState, params, grads) -> None:
    """One bias-corrected Adam update, in place on params."""
    if len(params) != len(opt.m) or len(grads) != len(opt.m):
        raise ValueError("parameter/gradient count mismatch with optimizer state")
    opt.t += 1
    bc1 = 1.0 - opt.beta1**opt.t
    bc2 = 1.0 - opt.beta2**opt.t
    # lr*(m/bc1)/(sqrt(v/bc2)+eps) folded into scalar factors of m and v
    lr_t = opt.lr * math.sqrt(bc2) / bc1
    eps_t = opt.eps * math.sqrt(bc2)
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        total = float(np.sum(g))
        if not math.isfinite(total):
            raise FloatingPointError("non-finite gradient in adam_step")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        step = np.sqrt(v)
        step += eps_t
        np.divide(m, step, out=step)
        step *= lr_t
        p -= step


def polyak_update(target: Mlp, source: Mlp, tau: float) -> None:
    """theta' <- tau*theta + (1-tau)*theta', element-wise."""
    for pt, ps in zip(target.params(), source.params()):
        pt *= 1.0 - tau
        pt += tau * ps


def dod_discretize(a_hat, c_max: int) -> np.ndarray:
    """Order-preserving, odd map from [-1, 1] onto {-c_max..c_max}.

    Components are clipped into [-1, 1], scaled by c_max, and rounded half
    away from zero.
    """
    a = np.clip(np.asarray(a_hat, dtype=float), -1.0, 1.0)
    scaled = a * c_max
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -c_max, c_max).astype(int)


class ReplayBuffer:
    """Fixed-capacity transition ring with uniform sampling."""

    def __init__(self, capacity: int, state_shape, action_shape, reward_shape=()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self.s = np.zeros((capacity, *state_shape), dtype=np.float32)
        self.a = np.zeros((capacity, *action_shape), dtype=np.float32)
        self.r = np.zeros((capacity, *reward_shape), dtype=np.float32)
        self.s2 = np.zeros((capacity, *state_shape), dtype=np.float32)

    def push(self, s, a, r, s2) -> None:
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.s[idx].astype(float),
            self.a[idx].astype(float),
            self.r[idx].astype(float),
            self.s2[idx].astype(float),
        )


@dataclass(frozen=True)
class DdpgConfig:
    """Hyperparameters; defaults follow the evaluation setup."""

    hidden: int = 64
    gamma: float = 0.99
    tau: float = 1e-3
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    exploration_sigma: float = 0.1
    batch_size: int = 64
    warmup: int | None = None  # None: one batch
    buffer_capacity: int = 1_000_000
    reward_scope: str = "averaged"  # per-PoP agents: "averaged" | "local"
    n_scale: float = 20.0  # vehicle-count feature divisor

    def __post_init__(self):
        if self.reward_scope not in ("averaged", "local"):
            raise ValueError(f"unknown reward_scope {self.reward_scope!r}")


class DdpgAgent:
    """DDPG scaling agent; scope "per_pop" stacks one agent per PoP, "global" is one joint agent."""

    def __init__(
        self,
        pop_count: int,
        max_cpus: int,
        scope: str = "per_pop",
        config: DdpgConfig | None = None,
        seed: int = 0,
    ):
        if scope not in ("per_pop", "global"):
            raise ValueError(f"unknown scope {scope!r}")
        if config is None:
            config = DdpgConfig(hidden=64 if scope == "per_pop" else 256)
        self.scope = scope
        self.pop_count = pop_count
        self.max_cpus = max_cpus
        self.config = config
        self.seed = seed

        if scope == "per_pop":
            self.feat_dim, self.act_dim, lead = 2, 1, (pop_count,)
            state_shape, action_shape, reward_shape = (pop_count, 2), (pop_count, 1), (pop_count,)
        else:
            self.feat_dim, self.act_dim, lead = 2 * pop_count, pop_count, ()
            state_shape, action_shape, reward_shape = (2 * pop_count,), (pop_count,), ()

        ss = np.random.SeedSequence(seed)
        r_actor, r_critic, r_noise, r_sample = (np.random.default_rng(c) for c in ss.spawn(4))
        h = config.hidden
        self.actor = Mlp([self.feat_dim, h, h, self.act_dim], "tanh", r_actor, lead)
        self.critic = Mlp([self.feat_dim + self.act_dim, h, h, 1], "linear", r_critic, lead)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.opt_actor = AdamState(self.actor.params(), lr=config.lr_actor)
        self.opt_critic = AdamState(self.critic.params(), lr=config.lr_critic)
        self.replay = ReplayBuffer(config.buffer_capacity, state_shape, action_shape, reward_shape)
        self._noise_rng = r_noise
        self._sample_rng = r_sample

    # ----- observation plumbing -----

    def features(self, state: SystemState) -> np.ndarray:
        """Normalized features: N scaled by 1/n_scale, C by 1/max_cpus."""
        flat = state.as_vector()
        flat[0::2] /= self.config.n_scale
        flat[1::2] /= self.max_cpus
        if self.scope == "per_pop":
            return flat.reshape(self.pop_count, 2)
        return flat

    def _batched(self, feats: np.ndarray) -> np.ndarray:
        if self.scope == "per_pop":
            return feats[:, None, :]  # (P, 1, 2)
        return feats[None, :]  # (1, 2P)

    # ----- acting -----

    def act(self, state: SystemState, explore: bool = False):
        """Actor forward pass; optional clipped Gaussian exploration, then DOD.

        Returns (real action in [-1,1]^P, integer deltas in [-C_max, C_max]^P).
        """
        y, _ = self.actor.forward(self._batched(self.features(state)))
        a_real = y.reshape(self.pop_count) if self.scope == "per_pop" else y[0]
        if explore:
            a_real = a_real + self._noise_rng.normal(0.0, self.config.exploration_sigma, self.pop_count)
        a_real = np.clip(a_real, -1.0, 1.0)
        return a_real, dod_discretize(a_real, self.max_cpus)

    def scale(self, obs):
        return tuple(self.act(obs.state, explore=False)[1])

    # ----- learning -----

    def record(self, state, a_real, avg_reward, per_pop_rewards, next_state) -> None:
        """Store one transition; the real-valued (pre-DOD) action is what replays."""
        s = self.features(state)
        s2 = self.features(next_state)
        if self.scope == "per_pop":
            a = np.asarray(a_real, dtype=float).reshape(self.pop_count, 1)
            if self.config.reward_scope == "averaged":
                r = np.full(self.pop_count, avg_reward)
            else:
                r = np.asarray(per_pop_rewards, dtype=float)
        else:
            a = np.asarray(a_real, dtype=float)
            r = avg_reward
        self.replay.push(s, a, r, s2)

    @property
    def warmup(self) -> int:
        return self.config.warmup if self.config.warmup is not None else self.config.batch_size

    def _prepare(self, batch):
        s, a, r, s2 = batch
        if self.scope == "per_pop":
            s = np.transpose(s, (1, 0, 2))
            a = np.transpose(a, (1, 0, 2))
            s2 = np.transpose(s2, (1, 0, 2))
            r = np.transpose(r)[..., None]  # (P, B, 1)
        else:
            r = r[:, None]  # (B, 1)
        return s, a, r, s2

    def critic_update(self, batch) -> float:
        """One Adam step down the mean squared TD error; targets stay fixed."""
        s, a, r, s2 = self._prepare(batch)
        b = s.shape[-2]
        a2, _ = self.target_actor.forward(s2)
        q2, _ = self.target_critic.forward(np.concatenate((s2, a2), axis=-1))
        y = r + self.config.gamma * q2
        q, cache = self.critic.forward(np.concatenate((s, a), axis=-1))
        err = q - y
        loss = float(np.mean(err * err))
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"critic loss diverged (loss={loss}, |q|max={np.abs(q).max():.3e})"
            )
        grads, _ = self.critic.backward(cache, 2.0 * err / b)
        adam_step(self.opt_critic, self.critic.params(), _flatten_grads(grads))
        return loss

    def actor_update(self, batch) -> float:
        """One Adam ascent step on mean Q(s, pi(s)), chained through the critic."""
        s, _, _, _ = self._prepare(batch)
        b = s.shape[-2]
        a_hat, cache_a = self.actor.forward(s)
        q, cache_c = self.critic.forward(np.concatenate((s, a_hat), axis=-1))
        upstream = np.full_like(q, -1.0 / b)  # descend on -mean(Q)
        _, d_input = self.critic.backward(cache_c, upstream)
        d_action = d_input[..., self.feat_dim :]
        grads, _ = self.actor.backward(cache_a, d_action)
        adam_step(self.opt_actor, self.actor.params(), _flatten_grads(grads))
        return float(np.mean(q))

    def polyak(self) -> None:
        polyak_update(self.target_actor, self.actor, self.config.tau)
        polyak_update(self.target_critic, self.critic, self.config.tau)

    def update(self):
        """After warm-up: one critic step, one actor step, one Polyak track."""
        if self.replay.size < max(self.warmup, self.config.batch_size):
            return None
        batch = self.replay.sample(self.config.batch_size, self._sample_rng)
        loss = self.critic_update(batch)
        mean_q = self.actor_update(batch)
        self.polyak()
        return loss, mean_q


def train(
    agent: DdpgAgent,
    trace: TrafficTrace,
    profile: ServiceProfile,
    reward_cfg: RewardConfig,
    episodes: int,
    dwell_seed: int = 0,
    pop_count: int | None = None,
    initial_cpus: int = 1,
    include_candidate: bool = True,
) -> list:
    """Run exploration episodes over one trace; returns per-episode mean reward.

    Placement stays greedy and runs alongside the scaling decision; every
    arrival pushes one transition (reward = PoP-averaged reward) and, once
    the replay holds a batch, triggers one critic/actor/Polyak update.
    """
    from .agents import GreedyPlacement  # local import avoids a module cycle

    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = V2NEnv(
        trace,
        profile,
        reward_cfg,
        dwell_seed=dwell_seed,
        pop_count=pop_count if pop_count is not None else agent.pop_count,
        initial_cpus=initial_cpus,
    )
    placement = GreedyPlacement(profile, reward_cfg.transmission_ms, include_candidate)
    curve = []
    for _ in range(episodes):
        env.reset()
        rewards = []
        obs = env.peek_arrival()
        while obs is not None:
            a_real, a_disc = agent.act(obs.state, explore=True)
            placed = placement.place(obs)
            out = env.step(FullAction(placement=placed, deltas=tuple(int(d) for d in a_disc)))
            nxt = env.peek_arrival()
            s2 = nxt.state if nxt is not None else out.next_state
            agent.record(obs.state, a_real, out.avg_reward, out.per_pop_rewards, s2)
            agent.update()
            rewards.append(out.avg_reward)
            obs = nxt
        curve.append(float(np.mean(rewards)) if rewards else 0.0)
    return curve


def _net_dump(net: Mlp) -> dict:
    return {
        "sizes": net.sizes,
        "output": net.output,
        "lead": list(net.lead),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_load(blob: dict) -> Mlp:
    net = Mlp(blob["sizes"], blob["output"], np.random.default_rng(0), tuple(blob["lead"]))
    net.weights = [np.array(w, dtype=float) for w in blob["weights"]]
    net.biases = [np.array(b, dtype=float) for b in blob["biases"]]
    for w, b, d_in, d_out in zip(net.weights, net.biases, net.sizes, net.sizes[1:]):
        if w.shape != (*net.lead, d_in, d_out) or b.shape != (*net.lead, 1, d_out):
            raise ValueError("checkpoint tensor shapes disagree with the manifest")
    return net


def save_checkpoint(agent: DdpgAgent, path) -> None:
    """Versioned JSON parameter dump with a shape manifest."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "scope": agent.scope,
        "pop_count": agent.pop_count,
        "max_cpus": agent.max_cpus,
        "seed": agent.seed,
        "config": asdict(agent.config),
        "actor": _net_dump(agent.actor),
        "critic": _net_dump(agent.critic),
        "target_actor": _net_dump(agent.target_actor),
        "target_critic": _net_dump(agent.target_critic),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True)


def load_checkpoint(path) -> DdpgAgent:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint: {path}")
    agent = DdpgAgent(
        pop_count=blob["pop_count"],
        max_cpus=blob["max_cpus"],
        scope=blob["scope"],
        config=DdpgConfig(**blob["config"]),
        seed=blob.get("seed", 0),
    )
    agent.actor = _net_load(blob["actor"])
    agent.critic = _net_load(blob["critic"])
    agent.target_actor = _net_load(blob["target_actor"])
    agent.target_critic = _net_load(blob["target_critic"])
    agent.opt_actor = AdamState(agent.actor.params(), lr=agent.config.lr_actor)
    agent.opt_critic = AdamState(agent.critic.params(), lr=agent.config.lr_critic)
    return agent
