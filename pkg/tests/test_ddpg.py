import json
import math
import time

import numpy as np
import pytest

from v2nsim.ddpg import (
    AdamState,
    DdpgAgent,
    DdpgConfig,
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
from v2nsim.environment import RewardConfig, SystemState
from v2nsim.queueing import default_profile
from v2nsim.traffic import IntensityTable, generate_arrivals

PROFILE = default_profile()


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_check_params(net, x, upstream, rng, probes=8, h=1e-6):
    """Central finite differences on randomly probed parameter coordinates."""
    grads, _ = mlp_backward(net, x, upstream)
    flat_params = net.params()
    flat_grads = []
    for dw, db in grads:
        flat_grads.extend((dw, db))

    def objective():
        return float(np.sum(mlp_forward(net, x) * upstream))

    worst = 0.0
    for _ in range(probes):
        k = int(rng.integers(0, len(flat_params)))
        p = flat_params[k]
        idx = tuple(int(rng.integers(0, s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        up = objective()
        p[idx] = old - h
        down = objective()
        p[idx] = old
        worst = max(worst, rel_err((up - down) / (2 * h), flat_grads[k][idx]))
    return worst


class TestMlp:
    def test_zero_net_tanh_outputs_zero(self):
        net = Mlp([3, 4, 2], "tanh", np.random.default_rng(0))
        for p in net.params():
            p[:] = 0.0
        assert np.all(mlp_forward(net, np.ones((5, 3))) == 0.0)

    def test_identity_single_layer(self):
        net = Mlp([1, 1], "linear", np.random.default_rng(0))
        net.weights[0][:] = 1.0
        net.biases[0][:] = 0.0
        x = np.array([[0.3], [-2.0]])
        assert np.allclose(mlp_forward(net, x), x)

    def test_elu_value_at_minus_one(self):
        from v2nsim.ddpg import _elu_with_deriv

        out, deriv = _elu_with_deriv(np.array([-1.0, 0.5]))
        assert out[0] == pytest.approx(math.exp(-1.0) - 1.0, abs=1e-12)  # -0.63212
        assert out[1] == 0.5
        assert deriv[0] == pytest.approx(math.exp(-1.0), abs=1e-12)
        assert deriv[1] == 1.0

    def test_dimension_mismatch(self):
        net = Mlp([3, 4, 2], "tanh", np.random.default_rng(0))
        with pytest.raises(ValueError):
            mlp_forward(net, np.ones((5, 4)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = Mlp([4, 8, 8, 2], "tanh", rng)
        x = rng.normal(size=(3, 4))
        upstream = rng.normal(size=(3, 2))
        assert fd_check_params(net, x, upstream, rng, probes=20) < 1e-4

    def test_backward_ensemble_matches_per_head(self):
        # stacked heads must reproduce independently evaluated single nets
        rng = np.random.default_rng(3)
        stack = Mlp([3, 6, 2], "tanh", rng, lead=(4,))
        x = rng.normal(size=(4, 5, 3))
        up = rng.normal(size=(4, 5, 2))
        y_stack, cache = stack.forward(x)
        g_stack, din_stack = stack.backward(cache, up)
        for head in range(4):
            solo = Mlp([3, 6, 2], "tanh", np.random.default_rng(0))
            solo.weights = [w[head].copy() for w in stack.weights]
            solo.biases = [b[head].copy() for b in stack.biases]
            y = mlp_forward(solo, x[head])
            assert np.allclose(y, y_stack[head])
            g, din = mlp_backward(solo, x[head], up[head])
            assert np.allclose(din, din_stack[head])
            for (dw_s, db_s), (dw, db) in zip(g_stack, g):
                assert np.allclose(dw_s[head], dw)
                assert np.allclose(db_s[head], db)

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(5)
        net = Mlp([3, 5, 2], "linear", rng)
        grads, din = mlp_backward(net, rng.normal(size=(2, 3)), np.zeros((2, 2)))
        assert np.all(din == 0.0)
        for dw, db in grads:
            assert np.all(dw == 0.0) and np.all(db == 0.0)

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        net = Mlp([4, 6, 1], "tanh", rng)
        x = rng.normal(size=(1, 4))
        up = np.ones((1, 1))
        _, din = mlp_backward(net, x, up)
        h = 1e-6
        for j in range(4):
            xp = x.copy()
            xp[0, j] += h
            xm = x.copy()
            xm[0, j] -= h
            num = (mlp_forward(net, xp).sum() - mlp_forward(net, xm).sum()) / (2 * h)
            assert rel_err(num, din[0, j]) < 1e-4


class TestAdam:
    def test_first_step_magnitude_is_learning_rate(self):
        p = np.array([1.0, -2.0, 0.5])
        opt = AdamState([p], lr=1e-3)
        g = np.array([0.3, -4.0, 1e-2])
        before = p.copy()
        adam_step(opt, [p], [g])
        delta = p - before
        assert np.allclose(np.abs(delta), 1e-3, rtol=1e-5)
        assert np.all(np.sign(delta) == -np.sign(g))

    def test_zero_gradient_no_change(self):
        p = np.array([1.0, 2.0])
        opt = AdamState([p], lr=1e-3)
        adam_step(opt, [p], [np.zeros(2)])
        assert np.array_equal(p, np.array([1.0, 2.0]))

    def test_deterministic(self):
        results = []
        for _ in range(2):
            p = np.array([0.5, -0.5])
            opt = AdamState([p], lr=1e-2)
            for g in ([0.1, 0.2], [-0.3, 0.4], [0.0, -0.1]):
                adam_step(opt, [p], [np.array(g)])
            results.append(p.copy())
        assert np.array_equal(results[0], results[1])

    def test_non_finite_gradient_rejected(self):
        p = np.zeros(2)
        opt = AdamState([p], lr=1e-3)
        with pytest.raises(FloatingPointError):
            adam_step(opt, [p], [np.array([1.0, np.nan])])
        with pytest.raises(FloatingPointError):
            adam_step(opt, [p], [np.array([np.inf, 1.0])])


class TestDod:
    def test_zero_maps_to_zero(self):
        assert dod_discretize([0.0], 5).tolist() == [0]

    def test_bounds(self):
        assert dod_discretize([1.0, -1.0], 5).tolist() == [5, -5]
        assert dod_discretize([1.3, -1.3], 5).tolist() == [5, -5]  # clipped first

    def test_round_half_away_from_zero(self):
        assert dod_discretize([-0.62], 5).tolist() == [-3]  # -3.1 rounds to -3
        assert dod_discretize([0.5], 1).tolist() == [1]
        assert dod_discretize([-0.5], 1).tolist() == [-1]
        assert dod_discretize([0.3], 5).tolist() == [2]  # 1.5 rounds away to 2

    def test_order_preserving_odd_surjective(self):
        grid = np.linspace(-1.0, 1.0, 2001)
        out = dod_discretize(grid, 4)
        assert np.all(np.diff(out) >= 0)
        assert np.array_equal(dod_discretize(-grid, 4), -out)
        assert set(out.tolist()) == set(range(-4, 5))


class TestReplay:
    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(5, (1,), (1,))
        for i in range(7):
            buf.push([i], [i], i, [i])
        assert buf.size == 5
        stored = set(buf.s[:, 0].astype(int).tolist())
        assert stored == {2, 3, 4, 5, 6}

    def test_sample_shapes_and_determinism(self):
        buf = ReplayBuffer(10, (2,), (1,))
        for i in range(10):
            buf.push([i, i], [i], float(i), [i, i])
        a = buf.sample(4, np.random.default_rng(3))
        b = buf.sample(4, np.random.default_rng(3))
        assert a[0].shape == (4, 2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4, (1,), (1,)).sample(2, np.random.default_rng(0))


class TestPolyak:
    def make_pair(self):
        rng = np.random.default_rng(2)
        src = Mlp([2, 3, 1], "tanh", rng)
        tgt = Mlp([2, 3, 1], "tanh", rng)
        return src, tgt

    def test_tau_one_copies(self):
        src, tgt = self.make_pair()
        polyak_update(tgt, src, 1.0)
        for a, b in zip(tgt.params(), src.params()):
            assert np.allclose(a, b)

    def test_tau_zero_freezes(self):
        src, tgt = self.make_pair()
        before = [p.copy() for p in tgt.params()]
        polyak_update(tgt, src, 0.0)
        for a, b in zip(tgt.params(), before):
            assert np.array_equal(a, b)

    def test_small_tau_step(self):
        src, tgt = self.make_pair()
        src.weights[0][:] = 1.0
        tgt.weights[0][:] = 0.0
        polyak_update(tgt, src, 1e-3)
        assert np.allclose(tgt.weights[0], 1e-3)

    def test_distance_non_increasing(self):
        src, tgt = self.make_pair()
        dist = lambda: sum(float(np.sum((a - b) ** 2)) for a, b in zip(tgt.params(), src.params()))
        prev = dist()
        for _ in range(50):
            polyak_update(tgt, src, 1e-2)
            cur = dist()
            assert cur <= prev + 1e-15
            prev = cur


def state_of(per_pop):
    return SystemState(per_pop=tuple(per_pop), clock_s=0.0)


class TestAgent:
    def test_act_deterministic_without_exploration(self):
        agent = DdpgAgent(3, 5, scope="global", seed=1, config=DdpgConfig(hidden=16))
        st = state_of([(2, 1), (0, 3), (5, 2)])
        a1, d1 = agent.act(st)
        a2, d2 = agent.act(st)
        assert np.array_equal(a1, a2) and np.array_equal(d1, d2)

    def test_zero_initialized_actor_holds(self):
        agent = DdpgAgent(2, 5, scope="per_pop", seed=0, config=DdpgConfig(hidden=8))
        for p in agent.actor.params():
            p[:] = 0.0
        a, d = agent.act(state_of([(1, 1), (4, 2)]))
        assert np.all(a == 0.0) and np.all(d == 0)

    def test_exploration_reproducible_per_seed(self):
        st = state_of([(2, 1), (0, 3)])
        runs = []
        for _ in range(2):
            agent = DdpgAgent(2, 5, scope="global", seed=11, config=DdpgConfig(hidden=8))
            runs.append([agent.act(st, explore=True)[0] for _ in range(5)])
        for a, b in zip(*runs):
            assert np.array_equal(a, b)

    def test_feature_normalization(self):
        agent = DdpgAgent(2, 5, scope="global", seed=0, config=DdpgConfig(hidden=8))
        f = agent.features(state_of([(10, 5), (20, 0)]))
        assert np.allclose(f, [0.5, 1.0, 1.0, 0.0])

    def test_critic_converges_on_supervised_target(self):
        # gamma = 0 turns the TD step into regression onto the reward
        agent = DdpgAgent(
            1, 5, scope="per_pop", seed=1, config=DdpgConfig(hidden=8, batch_size=8, gamma=0.0)
        )
        s = agent.features(state_of([(2, 1)]))
        batch = (
            np.tile(s, (8, 1, 1)),
            np.full((8, 1, 1), 0.3),
            np.full((8, 1), 0.7),
            np.tile(s, (8, 1, 1)),
        )
        first = agent.critic_update(batch)
        for _ in range(2000):
            last = agent.critic_update(batch)
        assert first > 0.1
        assert last < 1e-6

    def test_identical_batch_equals_single_transition(self):
        def one(batch_size):
            agent = DdpgAgent(
                1, 5, scope="per_pop", seed=2, config=DdpgConfig(hidden=8, batch_size=batch_size)
            )
            s = agent.features(state_of([(2, 1)]))
            batch = (
                np.tile(s, (batch_size, 1, 1)),
                np.full((batch_size, 1, 1), 0.3),
                np.full((batch_size, 1), 0.7),
                np.tile(s, (batch_size, 1, 1)),
            )
            agent.critic_update(batch)
            return agent

        a, b = one(8), one(1)
        for pa, pb in zip(a.critic.params(), b.critic.params()):
            assert np.allclose(pa, pb)

    def test_zero_rewards_zero_nets_zero_loss(self):
        agent = DdpgAgent(2, 5, scope="global", seed=3, config=DdpgConfig(hidden=8, batch_size=4))
        for net in (agent.actor, agent.critic, agent.target_actor, agent.target_critic):
            for p in net.params():
                p[:] = 0.0
        f = agent.features(state_of([(1, 1), (0, 2)]))
        batch = (np.tile(f, (4, 1)), np.zeros((4, 2)), np.zeros(4), np.tile(f, (4, 1)))
        assert agent.critic_update(batch) == 0.0

    def test_actor_climbs_linear_critic(self):
        # critic fixed at Q(s, a) = a: gradient ascent drives the action to +1
        agent = DdpgAgent(1, 5, scope="per_pop", seed=0, config=DdpgConfig(hidden=8, batch_size=4))
        lin = Mlp([3, 1], "linear", np.random.default_rng(0), lead=(1,))
        lin.weights[0][:] = np.array([[[0.0], [0.0], [1.0]]])
        lin.biases[0][:] = 0.0
        agent.critic = lin
        st = state_of([(2, 1)])
        s = agent.features(st)
        batch = (np.tile(s, (4, 1, 1)), np.zeros((4, 1, 1)), np.full((4, 1), 0.5), np.tile(s, (4, 1, 1)))
        trajectory = []
        for i in range(3000):
            agent.actor_update(batch)
            if i % 750 == 0:
                trajectory.append(float(agent.act(st)[0][0]))
        assert all(b > a for a, b in zip(trajectory, trajectory[1:]))
        assert float(agent.act(st)[0][0]) > 0.9

    def test_constant_critic_freezes_actor(self):
        agent = DdpgAgent(1, 5, scope="per_pop", seed=4, config=DdpgConfig(hidden=8, batch_size=4))
        for p in agent.critic.params():
            p[:] = 0.0
        agent.critic.biases[-1][:] = 0.7  # Q == 0.7 everywhere
        before = [p.copy() for p in agent.actor.params()]
        s = agent.features(state_of([(1, 1)]))
        batch = (np.tile(s, (4, 1, 1)), np.zeros((4, 1, 1)), np.full((4, 1), 0.5), np.tile(s, (4, 1, 1)))
        agent.actor_update(batch)
        for a, b in zip(agent.actor.params(), before):
            assert np.allclose(a, b)

    def test_composed_actor_gradient_matches_finite_differences(self):
        agent = DdpgAgent(2, 5, scope="global", seed=6, config=DdpgConfig(hidden=6, batch_size=3))
        rng = np.random.default_rng(8)
        s = rng.normal(size=(3, 4))

        def mean_q():
            a_hat, _ = agent.actor.forward(s)
            q, _ = agent.critic.forward(np.concatenate((s, a_hat), axis=-1))
            return float(np.mean(q))

        a_hat, cache_a = agent.actor.forward(s)
        q, cache_c = agent.critic.forward(np.concatenate((s, a_hat), axis=-1))
        _, d_input = agent.critic.backward(cache_c, np.full_like(q, 1.0 / 3))
        grads, _ = agent.actor.backward(cache_a, d_input[..., agent.feat_dim :])
        flat = []
        for dw, db in grads:
            flat.extend((dw, db))
        params = agent.actor.params()
        h = 1e-6
        worst = 0.0
        for _ in range(20):
            k = int(rng.integers(0, len(params)))
            idx = tuple(int(rng.integers(0, d)) for d in params[k].shape)
            old = params[k][idx]
            params[k][idx] = old + h
            up = mean_q()
            params[k][idx] = old - h
            down = mean_q()
            params[k][idx] = old
            worst = max(worst, rel_err((up - down) / (2 * h), flat[k][idx]))
        assert worst < 1e-4


def tiny_trace(events_per_hour=240.0, hours=2.0, pops=1):
    entries = tuple(
        (300.0 * w, p, events_per_hour)
        for p in range(pops)
        for w in range(int(hours * 12))
    )
    return generate_arrivals(IntensityTable(entries=entries), seed=5)


class TestTrain:
    def test_deterministic_curve(self):
        trace = tiny_trace(events_per_hour=120.0, hours=1.0)
        curves = []
        for _ in range(2):
            agent = DdpgAgent(
                1, 5, scope="per_pop", seed=9, config=DdpgConfig(hidden=8, batch_size=8)
            )
            curves.append(
                train(agent, trace, PROFILE, RewardConfig(), episodes=2, dwell_seed=4)
            )
        assert curves[0] == curves[1]

    def test_learning_progress_on_constant_load(self):
        trace = tiny_trace(events_per_hour=240.0, hours=2.0)
        agent = DdpgAgent(
            1, 5, scope="per_pop", seed=2, config=DdpgConfig(hidden=16, batch_size=16)
        )
        curve = train(agent, trace, PROFILE, RewardConfig(), episodes=24, dwell_seed=6)
        assert float(np.mean(curve[-10:])) > float(np.mean(curve[:10]))

    def test_untrained_policy_is_initialization(self):
        agent = DdpgAgent(1, 5, scope="per_pop", seed=3, config=DdpgConfig(hidden=8))
        reference = DdpgAgent(1, 5, scope="per_pop", seed=3, config=DdpgConfig(hidden=8))
        st = state_of([(1, 2)])
        assert np.array_equal(agent.act(st)[0], reference.act(st)[0])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        agent = DdpgAgent(2, 5, scope="global", seed=4, config=DdpgConfig(hidden=8))
        path = tmp_path / "ck.json"
        save_checkpoint(agent, path)
        again = load_checkpoint(path)
        st = state_of([(3, 1), (0, 4)])
        assert np.array_equal(agent.act(st)[0], again.act(st)[0])
        for a, b in zip(agent.critic.params(), again.critic.params()):
            assert np.array_equal(a, b)
        assert again.scope == "global" and again.config.hidden == 8

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_rejects_shape_mismatch(self, tmp_path):
        agent = DdpgAgent(2, 5, scope="global", seed=4, config=DdpgConfig(hidden=8))
        path = tmp_path / "ck.json"
        save_checkpoint(agent, path)
        blob = json.loads(path.read_text())
        blob["actor"]["weights"][0] = [[0.0]]
        path.write_text(json.dumps(blob))
        with pytest.raises(ValueError):
            load_checkpoint(path)


@pytest.mark.slow
class TestForwardCostScaling:
    def test_quadratic_in_hidden_width(self):
        rng = np.random.default_rng(0)
        widths = [32, 64, 128, 256, 512]
        times = []
        for w in widths:
            net = Mlp([8, w, w, 2], "tanh", rng)
            x = rng.normal(size=(1024, 8))
            net.forward(x)
            reps = max(3, int(3e7 / (1024 * w * w)))
            samples = []
            for _ in range(9):
                t0 = time.perf_counter()
                for _ in range(reps):
                    net.forward(x)
                samples.append((time.perf_counter() - t0) / reps)
            times.append(float(np.median(samples)))
        slope = float(np.polyfit(np.log(widths), np.log(times), 1)[0])
        assert 1.7 <= slope <= 2.3
