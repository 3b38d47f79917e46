"""Double-DQN learner: action selection, targets, TD updates, target sync."""
import numpy as np
import pytest

from gradcheck import max_relative_error, numeric_param_gradients
from freshrl.agent import (
    ExplorationSchedule,
    QNetworkPair,
    double_q_target,
    double_q_targets_batch,
    select_action,
    td_update,
)
from freshrl.errors import UsageError


def pin_q_values(q, values):
    """Zero the online net and pin constant Q-values via the output bias."""
    for p in q.online.params():
        p.value[...] = 0.0
    q.online.layers[-1].bias.value[...] = np.asarray(values, dtype=float)


class TestSelectAction:
    def test_greedy_takes_argmax(self):
        q = QNetworkPair(2, 3, seed=0)
        pin_q_values(q, [1.0, 3.0, 2.0])
        assert select_action(q, np.zeros(2), 0.0, np.random.default_rng(0)) == 1

    def test_full_exploration_is_uniform(self):
        q = QNetworkPair(2, 4, seed=0)
        rng = np.random.default_rng(1)
        counts = np.zeros(4)
        n = 10_000
        for _ in range(n):
            counts[select_action(q, np.zeros(2), 1.0, rng)] += 1
        sigma = np.sqrt(0.25 * 0.75 / n)
        np.testing.assert_allclose(counts / n, 0.25, atol=3 * sigma)

    def test_ties_break_to_lowest_index(self):
        q = QNetworkPair(2, 3, seed=0)
        pin_q_values(q, [0.5, 0.5, 0.5])
        assert select_action(q, np.zeros(2), 0.0, np.random.default_rng(0)) == 0

    def test_epsilon_out_of_range(self):
        q = QNetworkPair(2, 2, seed=0)
        with pytest.raises(UsageError):
            select_action(q, np.zeros(2), 1.5, np.random.default_rng(0))


class TestExplorationSchedule:
    def test_linear_interpolation_and_clamp(self):
        sched = ExplorationSchedule(1.0, 0.05, 100)
        assert sched.value(0) == 1.0
        assert sched.value(50) == pytest.approx(0.525)
        assert sched.value(100) == 0.05
        assert sched.value(10_000) == 0.05


class TestDoubleQTarget:
    def test_terminal_is_reward(self):
        q = QNetworkPair(2, 3, seed=0)
        assert double_q_target(q, 1.3, np.zeros(2), True, 0.99) == 1.3

    def test_online_argmax_priced_by_target(self):
        q = QNetworkPair(2, 3, seed=0)
        pin_q_values(q, [0.0, 0.0, 5.0])  # online argmax -> action 2
        q.sync()
        q.target.layers[-1].bias.value[...] = [9.0, 9.0, 1.0]
        y = double_q_target(q, 0.2, np.zeros(2), False, 0.99)
        assert y == pytest.approx(0.2 + 0.99 * 1.0)

    def test_zero_gamma_is_reward(self):
        q = QNetworkPair(2, 3, seed=1)
        y = double_q_target(q, 0.7, np.ones(2), False, 0.0)
        assert y == pytest.approx(0.7)

    def test_batch_matches_scalar(self):
        q = QNetworkPair(3, 4, seed=2)
        rng = np.random.default_rng(5)
        obs = rng.normal(size=(6, 3))
        rewards = rng.normal(size=6)
        terminals = (rng.random(6) < 0.3).astype(float)
        batch = double_q_targets_batch(q, rewards, obs, terminals, 0.9)
        singles = [double_q_target(q, rewards[i], obs[i], bool(terminals[i]), 0.9)
                   for i in range(6)]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)


class TestTdUpdate:
    def test_zero_error_keeps_weights(self):
        q = QNetworkPair(2, 3, seed=0)
        pin_q_values(q, [1.0, 2.0, 3.0])
        before = [p.value.copy() for p in q.online.params()]
        obs = np.zeros((4, 2))
        actions = np.array([0, 1, 2, 1])
        targets = np.array([1.0, 2.0, 3.0, 2.0])
        loss = td_update(q, obs, actions, targets, 1e-3)
        assert loss == pytest.approx(0.0, abs=1e-20)
        for b, p in zip(before, q.online.params()):
            np.testing.assert_allclose(b, p.value, atol=1e-12)

    def test_td_gradient_matches_finite_differences(self):
        q = QNetworkPair(3, 2, seed=3)
        rng = np.random.default_rng(4)
        obs = rng.normal(size=(5, 3))
        actions = rng.integers(0, 2, size=5)
        targets = rng.normal(size=5)

        def loss_fn():
            out = q.online.forward(obs, mode="train")
            rows = np.arange(5)
            return float(np.mean((out[rows, actions] - targets) ** 2))

        out = q.online.forward(obs, mode="train")
        rows = np.arange(5)
        grad = np.zeros_like(out)
        grad[rows, actions] = 2.0 * (out[rows, actions] - targets) / 5
        q.online.backward(grad)
        analytic = [p.grad.copy() for p in q.online.params()]
        q.online.zero_grads()
        numeric = numeric_param_gradients(q.online, loss_fn)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_repeated_updates_contract_to_target(self):
        q = QNetworkPair(2, 3, seed=6)
        obs = np.array([[0.3, -0.2]])
        actions = np.array([1])
        targets = np.array([0.75])
        for _ in range(2000):
            td_update(q, obs, actions, targets, 1e-2)
        q_sa = q.online.forward(obs)[0, 1]
        assert abs(q_sa - 0.75) < 0.01


class TestTargetSync:
    def test_sync_is_byte_identical(self):
        q = QNetworkPair(2, 3, seed=7)
        rng = np.random.default_rng(0)
        for _ in range(5):
            td_update(q, rng.normal(size=(4, 2)), rng.integers(0, 3, size=4),
                      rng.normal(size=4), 1e-3)
        assert not q.in_sync()
        q.sync()
        assert q.in_sync()

    def test_target_frozen_between_syncs(self):
        q = QNetworkPair(2, 3, seed=8)
        rng = np.random.default_rng(1)
        obs = rng.normal(size=(1, 2))
        before = q.target.forward(obs).copy()
        for _ in range(10):
            td_update(q, rng.normal(size=(4, 2)), rng.integers(0, 3, size=4),
                      rng.normal(size=4), 1e-3)
        np.testing.assert_array_equal(before, q.target.forward(obs))
