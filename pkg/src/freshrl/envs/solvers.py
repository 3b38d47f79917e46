"""Exact optimal-policy solvers for the toy environments.

Both environments have small enough state spaces for exhaustive search:
AimLine is solved by value iteration over its explicit state list (it has
self-loops, noop in the aim phase, so backward induction is not enough);
GateRun is a DAG in the row index and is solved by backward induction.

A Solution maps observations back to internal states, so the scripted
feedback source can grade (observation, action) pairs exactly.  Discounted
values make dawdling strictly suboptimal, which pins down a unique greedy
action per state under lowest-index tie-breaking.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .aimline import AIM, DOWN, FIRE, NOOP, SETTLE, STRIKE_BONUS, UP, AimLine
from .gaterun import GATE_REWARD, GateRun


class Solution:
    """Optimal action / state score lookups for one environment layout."""

    def optimal_action(self, obs: np.ndarray) -> int:
        raise NotImplementedError

    def state_score(self, obs: np.ndarray) -> float:
        raise NotImplementedError

    def optimal_return(self) -> float:
        """Undiscounted env return of the greedy rollout from the start."""
        raise NotImplementedError

    def scores_along_optimal_play(self) -> list[float]:
        raise NotImplementedError


def solve(env, gamma: float = 0.99) -> Solution:
    if isinstance(env, AimLine):
        return AimLineSolution(env, gamma)
    if isinstance(env, GateRun):
        return GateRunSolution(env, gamma)
    raise ConfigError(f"no exact solver for environment {type(env).__name__}")


# ---------------------------------------------------------------------------
# AimLine
# ---------------------------------------------------------------------------

class AimLineSolution(Solution):
    """Value iteration over (round, phase, pos, pending, strike) states.

    States are tuples:
      ("aim", r, pos, pending)
      ("settle", r, pos, pending, strike)
      ("bonus",)          extra settlement step after a final-round strike
      ("end",)            absorbing terminal
    """

    def __init__(self, env: AimLine, gamma: float = 0.99):
        self.env = env
        self.gamma = gamma
        self.pins = [int(p) for p in env.pins]
        self._states = self._enumerate_states()
        self.values, self.policy = self._value_iteration()
        self._rollout = self._greedy_rollout()

    def _enumerate_states(self):
        env = self.env
        states = [("end",), ("bonus",)]
        for r in range(env.n_rounds):
            for pos in range(env.n_positions):
                for pending in (False, True):
                    states.append(("aim", r, pos, pending))
                    for strike in (False, True):
                        states.append(("settle", r, pos, pending, strike))
        return states

    def _transition(self, state, action):
        """Mirror of the environment dynamics on solver states."""
        env = self.env
        kind = state[0]
        if kind == "end":
            return 0.0, state
        if kind == "bonus":
            return STRIKE_BONUS, ("end",)
        if kind == "aim":
            _, r, pos, pending = state
            if action == UP:
                return 0.0, ("aim", r, min(env.n_positions - 1, pos + 1), pending)
            if action == DOWN:
                return 0.0, ("aim", r, max(0, pos - 1), pending)
            if action == FIRE:
                pin = self.pins[r]
                reward = max(0.0, 10.0 - 2.0 * abs(pos - pin))
                return reward, ("settle", r, pos, pending, pos == pin)
            return 0.0, state
        _, r, pos, pending, strike = state
        reward = STRIKE_BONUS if pending else 0.0
        if r == env.n_rounds - 1:
            return reward, (("bonus",) if strike else ("end",))
        return reward, ("aim", r + 1, pos, strike)

    def _value_iteration(self, tol: float = 1e-12):
        values = {s: 0.0 for s in self._states}
        while True:
            delta = 0.0
            for s in self._states:
                if s == ("end",):
                    continue
                best = max(r + self.gamma * values[s2]
                           for r, s2 in (self._transition(s, a) for a in range(4)))
                delta = max(delta, abs(best - values[s]))
                values[s] = best
            if delta < tol:
                break
        policy = {}
        for s in self._states:
            if s == ("end",):
                policy[s] = NOOP
                continue
            returns = [r + self.gamma * values[s2]
                       for r, s2 in (self._transition(s, a) for a in range(4))]
            policy[s] = int(np.argmax(returns))
        return values, policy

    def _obs_to_state(self, obs):
        env = self.env
        pos = int(round(float(obs[0]) * (env.n_positions - 1)))
        r = int(round(float(obs[1]) * env.n_rounds))
        phase = int(round(float(obs[2])))
        pending = bool(round(float(obs[3])))
        if r >= env.n_rounds:
            return ("bonus",) if pending else ("end",)
        if phase == AIM:
            return ("aim", r, pos, pending)
        strike = pos == self.pins[r]
        return ("settle", r, pos, pending, strike)

    def optimal_action(self, obs) -> int:
        return self.policy[self._obs_to_state(obs)]

    def state_score(self, obs) -> float:
        return self.values[self._obs_to_state(obs)]

    def _greedy_rollout(self):
        env = AimLine(self.env.n_positions, self.env.n_rounds,
                      self.env.spec.max_episode_steps)
        obs, _ = env.reset(self.env.layout_seed)
        total, scores = 0.0, [self.state_score(obs)]
        terminal = False
        while not terminal:
            result = env.step(self.optimal_action(obs))
            obs, terminal = result.next_observation, result.terminal
            total += result.reward
            scores.append(self.state_score(obs))
        return total, scores

    def optimal_return(self) -> float:
        return self._rollout[0]

    def scores_along_optimal_play(self) -> list[float]:
        return list(self._rollout[1])


# ---------------------------------------------------------------------------
# GateRun
# ---------------------------------------------------------------------------

class GateRunSolution(Solution):
    """Backward induction on (row, col): max gates still collectable ahead."""

    def __init__(self, env: GateRun, gamma: float = 0.99):
        self.env = env
        self.gamma = gamma
        self.future_gates = self._solve_future_gates()
        self._rollout = self._greedy_rollout()

    def _gate_hit(self, row: int, col: int) -> int:
        g = self.env.gate_at_row(row)
        if g is None:
            return 0
        hit = abs(col - int(self.env.gate_centers[g])) <= int(self.env.gate_halfwidths[g])
        return 1 if hit else 0

    def _solve_future_gates(self) -> np.ndarray:
        env = self.env
        F = np.zeros((env.height, env.width), dtype=np.int64)
        for row in range(env.height - 2, -1, -1):
            for col in range(env.width):
                best = 0
                for nc in (col, max(0, col - 1), min(env.width - 1, col + 1)):
                    best = max(best, self._gate_hit(row + 1, nc) + F[row + 1, nc])
                F[row, col] = best
        return F

    def _obs_to_rowcol(self, obs):
        env = self.env
        row = int(round(float(obs[0]) * (env.height - 1)))
        col = int(round(float(obs[1]) * (env.width - 1)))
        passed = int(round(float(obs[4]) * env.n_gates))
        return row, col, passed

    def optimal_action(self, obs) -> int:
        env = self.env
        row, col, _ = self._obs_to_rowcol(obs)
        if row >= env.height - 1:
            return NOOP
        next_cols = (col, max(0, col - 1), min(env.width - 1, col + 1))
        scores = [self._gate_hit(row + 1, nc) + self.future_gates[row + 1, nc]
                  for nc in next_cols]
        return int(np.argmax(scores))

    def state_score(self, obs) -> float:
        env = self.env
        row, col, passed = self._obs_to_rowcol(obs)
        final = GATE_REWARD * passed - env.height
        if row >= env.height - 1:
            return final
        best = GATE_REWARD * (passed + int(self.future_gates[row, col])) - env.height
        return (self.gamma ** (env.height - 1 - row)) * best

    def _greedy_rollout(self):
        env = GateRun(self.env.width, self.env.height, self.env.n_gates,
                      self.env.spec.max_episode_steps)
        obs, _ = env.reset(self.env.layout_seed)
        total, scores = 0.0, [self.state_score(obs)]
        terminal = False
        while not terminal:
            result = env.step(self.optimal_action(obs))
            obs, terminal = result.next_observation, result.terminal
            total += result.reward
            scores.append(self.state_score(obs))
        return total, scores

    def optimal_return(self) -> float:
        return self._rollout[0]

    def scores_along_optimal_play(self) -> list[float]:
        return list(self._rollout[1])


# ---------------------------------------------------------------------------
# Brute-force enumeration (test oracle)
# ---------------------------------------------------------------------------

def best_return_by_enumeration(env, seed: int) -> float:
    """Maximum undiscounted return over every action sequence.

    Depth-first search over the full action tree, cut at terminal states.
    Only tractable on reduced instances; used to validate the solvers.
    """
    env.reset(seed)
    n_actions = env.spec.action_count
    best = -np.inf

    def recurse(total: float) -> None:
        nonlocal best
        snap = env._snapshot()
        for a in range(n_actions):
            result = env.step(a)
            subtotal = total + result.reward
            if result.terminal:
                best = max(best, subtotal)
            else:
                recurse(subtotal)
            env._restore(snap)

    recurse(0.0)
    return float(best)
