"""Environment dynamics: delayed credit, terminal-only reward, determinism."""
import numpy as np
import pytest

from freshrl.envs import (
    AimLine,
    GateRun,
    best_return_by_enumeration,
    make_env,
    solve,
)
from freshrl.envs.aimline import DOWN, FIRE, NOOP, UP
from freshrl.errors import ConfigError, UsageError


def run_episode(env, seed, actions):
    """Apply actions until the list ends or the episode terminates."""
    obs, render = env.reset(seed)
    transcript = [(obs.tolist(), 0.0, render.cells.tobytes())]
    for a in actions:
        result = env.step(a)
        transcript.append((result.next_observation.tolist(), result.reward,
                           result.render.cells.tobytes()))
        if result.terminal:
            break
    return transcript


def steer_and_fire(env):
    """One optimal round by hand: walk to the pin, fire, settle."""
    pin = int(env.pins[env.round])
    rewards = []
    while env.pos != pin:
        rewards.append(env.step(UP if env.pos < pin else DOWN).reward)
    rewards.append(env.step(FIRE).reward)
    rewards.append(env.step(NOOP).reward)  # settlement
    return rewards


class TestRegistry:
    def test_known_ids(self):
        assert isinstance(make_env("aimline"), AimLine)
        assert isinstance(make_env("gaterun"), GateRun)

    def test_unknown_id_is_config_error(self):
        with pytest.raises(ConfigError):
            make_env("pinball")


class TestAimLine:
    def test_reset_start_state(self):
        env = make_env("aimline")
        obs, _ = env.reset(7)
        assert env.pos == 5
        assert env.round == 0
        np.testing.assert_allclose(obs, [5 / 9, 0.0, 0.0, 0.0, -1.0])

    def test_same_seed_same_pins(self):
        env = make_env("aimline")
        env.reset(7)
        first = env.pins.copy()
        env.reset(7)
        assert np.array_equal(env.pins, first)

    def test_strike_bonus_arrives_with_next_settlement(self):
        """A round-1 strike pays 10 at once and +5 at round 2's settlement."""
        env = make_env("aimline")
        env.reset(3)
        r1 = steer_and_fire(env)
        assert r1[-2] == 10.0  # fire at the pin
        assert r1[-1] == 0.0   # round 1 settlement: nothing owed yet
        r2 = steer_and_fire(env)
        assert r2[-1] == 5.0   # round 2 settlement pays round 1's strike

    def test_miss_by_five_scores_zero(self):
        env = AimLine()
        env.reset(11)
        pin = int(env.pins[0])
        target = pin + 5 if pin + 5 <= 9 else pin - 5
        while env.pos != target:
            env.step(UP if env.pos < target else DOWN)
        assert env.step(FIRE).reward == 0.0

    def test_up_at_top_is_clamped(self):
        env = AimLine()
        env.reset(0)
        while env.pos < 9:
            env.step(UP)
        result = env.step(UP)
        assert env.pos == 9 and result.reward == 0.0

    def test_final_round_strike_bonus_is_still_paid(self):
        """The one-round delay never loses reward, even on the last round."""
        env = AimLine(n_positions=4, n_rounds=2)
        env.reset(1)
        steer_and_fire(env)
        pin = int(env.pins[1])
        while env.pos != pin:
            env.step(UP if env.pos < pin else DOWN)
        assert env.step(FIRE).reward == 10.0
        settle = env.step(NOOP)
        assert not settle.terminal  # bonus step still owed
        bonus = env.step(NOOP)
        assert bonus.reward == 5.0 and bonus.terminal

    def test_return_conserved_under_delay(self):
        """Total return equals round scores plus bonuses despite the delay."""
        rng = np.random.default_rng(42)
        for seed in range(5):
            env = AimLine()
            obs, _ = env.reset(seed)
            total, fired = 0.0, []
            terminal = False
            while not terminal:
                if rng.random() < 0.5:
                    action = FIRE
                else:
                    action = int(rng.integers(0, 3))
                if env.phase == 0 and action == FIRE and env.round < env.n_rounds:
                    pin = int(env.pins[env.round])
                    fired.append((max(0.0, 10.0 - 2 * abs(env.pos - pin)),
                                  env.pos == pin))
                result = env.step(action)
                total += result.reward
                terminal = result.terminal
            expected = sum(score for score, _ in fired)
            expected += 5.0 * sum(1 for _, strike in fired if strike)
            assert total == pytest.approx(expected)


class TestGateRun:
    def test_reset_start_state(self):
        env = make_env("gaterun")
        obs, _ = env.reset(0)
        assert env.row == 0 and env.col == 7
        assert obs[0] == 0.0 and obs[1] == pytest.approx(7 / 14)

    def test_all_reward_on_terminal_step(self):
        env = GateRun()
        env.reset(5)
        rewards = []
        terminal = False
        while not terminal:
            result = env.step(NOOP)
            rewards.append(result.reward)
            terminal = result.terminal
        assert all(r == 0.0 for r in rewards[:-1])
        assert rewards[-1] == 25.0 * env.gates_passed - env.height

    def test_terminal_reward_formula(self):
        """Follow the exact policy; reward must be 25 * gates - height."""
        env = GateRun()
        obs, _ = env.reset(2)
        solution = solve(env)
        total, terminal = 0.0, False
        while not terminal:
            result = env.step(solution.optimal_action(obs))
            obs, terminal = result.next_observation, result.terminal
            total += result.reward
        assert total == 25.0 * env.gates_passed - 40.0

    def test_episode_length_fixed(self):
        env = GateRun()
        env.reset(9)
        steps = 0
        while not env.step(NOOP).terminal:
            steps += 1
        assert steps + 1 == env.height - 1


class TestDeterminism:
    @pytest.mark.parametrize("env_id", ["aimline", "gaterun"])
    def test_identical_seed_and_actions_identical_transcript(self, env_id):
        rng = np.random.default_rng(7)
        env_a, env_b = make_env(env_id), make_env(env_id)
        actions = [int(a) for a in rng.integers(0, env_a.spec.action_count, size=200)]
        assert run_episode(env_a, 13, actions) == run_episode(env_b, 13, actions)


class TestErrors:
    def test_out_of_range_action(self):
        env = make_env("aimline")
        env.reset(0)
        with pytest.raises(UsageError):
            env.step(4)

    def test_step_after_terminal(self):
        env = GateRun()
        env.reset(0)
        terminal = False
        while not terminal:
            terminal = env.step(NOOP).terminal
        with pytest.raises(UsageError):
            env.step(NOOP)

    def test_step_before_reset(self):
        with pytest.raises(UsageError):
            make_env("gaterun").step(0)


class TestRenderFrames:
    @pytest.mark.parametrize("env_id", ["aimline", "gaterun"])
    def test_legend_covers_every_code(self, env_id):
        env = make_env(env_id)
        _, render = env.reset(4)
        frames = [render]
        for _ in range(30):
            result = env.step(0)
            frames.append(result.render)
            if result.terminal:
                break
        for frame in frames:
            assert frame.cells.size == frame.width * frame.height
            assert set(int(c) for c in np.unique(frame.cells)) <= set(frame.legend)

    def test_aimline_render_shows_cursor_and_pin(self):
        env = AimLine()
        env.reset(8)
        cells = env.render().cells.reshape(2, -1)
        assert cells[0, env.pos] == 1
        assert cells[1, int(env.pins[0])] == 2


class TestOptimalPolicyOracle:
    """Greedy rollouts of the exact solver match exhaustive enumeration."""

    @pytest.mark.parametrize("seed", [1, 5, 9])
    def test_aimline_reduced(self, seed):
        env = AimLine(n_positions=3, n_rounds=2, max_episode_steps=8)
        best = best_return_by_enumeration(env, seed)
        env.reset(seed)
        assert solve(env).optimal_return() == pytest.approx(best)

    @pytest.mark.parametrize("seed", [0, 2, 4])
    def test_gaterun_reduced(self, seed):
        env = GateRun(width=5, height=8, n_gates=2, max_episode_steps=7)
        best = best_return_by_enumeration(env, seed)
        env.reset(seed)
        assert solve(env).optimal_return() == pytest.approx(best)

    def test_full_size_optimal_returns_are_attainable(self):
        for env_id, seed in (("aimline", 1), ("gaterun", 1)):
            env = make_env(env_id)
            env.reset(seed)
            solution = solve(env)
            assert solution.optimal_return() > 0
