"""Shaping gates and the combined reward: exact linearity, thresholds, cycles."""
import itertools

import numpy as np
import pytest

from freshrl.errors import UsageError
from freshrl.shaping import (
    ShapingConfig,
    action_shaping,
    clip_reward,
    detect_cycle,
    shaped_reward,
    state_shaping,
)
from test_fnn import FixedHeads

OBS = np.array([0.1, 0.2, 0.3])


class TestClipReward:
    @pytest.mark.parametrize("raw,clipped", [(7.0, 1.0), (0.0, 0.0), (-35.0, -1.0),
                                             (0.3, 1.0), (-1e-9, -1.0)])
    def test_sign(self, raw, clipped):
        assert clip_reward(raw) == clipped


class TestActionShaping:
    def test_match_with_unanimous_heads_fires(self):
        fnn = FixedHeads(action_outputs=[[0.9, 0.1]] * 10, state_outputs=[[0.5]])
        assert action_shaping(fnn, OBS, 0, ShapingConfig(beta_a=1.0)) == 1

    def test_split_heads_blocked_by_tight_threshold(self):
        outs = [[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5
        fnn = FixedHeads(action_outputs=outs, state_outputs=[[0.5]])
        # mean is tied, argmax 0; confidence ~0.473 fails beta_a=0.5
        assert action_shaping(fnn, OBS, 0, ShapingConfig(beta_a=0.5)) == 0

    def test_mismatch_never_fires(self):
        fnn = FixedHeads(action_outputs=[[0.9, 0.1]] * 10, state_outputs=[[0.5]])
        assert action_shaping(fnn, OBS, 1, ShapingConfig(beta_a=1.0)) == 0


class TestStateShaping:
    def test_unanimous_good_fires(self):
        fnn = FixedHeads(action_outputs=[[1.0, 0.0]], state_outputs=[0.9] * 10)
        assert state_shaping(fnn, OBS, ShapingConfig(beta_s=0.02)) == 1

    def test_low_confidence_blocked(self):
        outs = [0.9] * 9 + [0.1]  # 9/1 split: confidence ~0.684 <= 0.98
        fnn = FixedHeads(action_outputs=[[1.0, 0.0]], state_outputs=outs)
        assert state_shaping(fnn, OBS, ShapingConfig(beta_s=0.02)) == 0

    def test_predicted_bad_never_fires(self):
        fnn = FixedHeads(action_outputs=[[1.0, 0.0]], state_outputs=[0.2] * 10)
        assert state_shaping(fnn, OBS, ShapingConfig(beta_s=1.0)) == 0


class TestShapedReward:
    def test_action_bonus_only(self):
        cfg = ShapingConfig()
        assert shaped_reward(0.0, 1, 0, cfg) == pytest.approx(0.2)

    def test_all_three_rewards(self):
        cfg = ShapingConfig()
        assert shaped_reward(1.0, 1, 1, cfg) == pytest.approx(1.3)

    def test_cycle_negates_ensemble_share(self):
        cfg = ShapingConfig()
        assert shaped_reward(0.0, 1, 0, cfg, cycle_detected=True) == pytest.approx(-0.2)

    def test_exactly_linear_over_full_grid(self):
        """r_e + lambda_a*r_a + lambda_s*r_s holds exactly everywhere."""
        lambdas = [0.0, 0.1, 0.2, 0.5, 1.0]
        for la, ls in itertools.product(lambdas, lambdas):
            cfg = ShapingConfig(lambda_a=la, lambda_s=ls)
            for r_e, r_a, r_s in itertools.product((-1.0, 0.0, 1.0), (0, 1), (0, 1)):
                assert shaped_reward(r_e, r_a, r_s, cfg) == r_e + la * r_a + ls * r_s
                assert shaped_reward(r_e, r_a, r_s, cfg, True) == r_e - (la * r_a + ls * r_s)


class TestDetectCycle:
    def test_identical_observations_cycle(self):
        cfg = ShapingConfig(cycle_distance_threshold=0.01)
        assert detect_cycle(OBS, OBS.copy(), cfg)

    def test_zero_threshold_never_fires(self):
        cfg = ShapingConfig(cycle_distance_threshold=0.0)
        assert not detect_cycle(OBS, OBS.copy(), cfg)

    def test_large_coordinate_change_is_no_cycle(self):
        cfg = ShapingConfig(cycle_distance_threshold=0.1)
        other = OBS.copy()
        other[1] += 0.5
        assert not detect_cycle(other, OBS, cfg)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(UsageError):
            detect_cycle(np.zeros(3), np.zeros(4), ShapingConfig())


class TestThresholdMonotonicity:
    def test_wider_beta_fires_on_a_superset(self):
        """Everything eligible at beta=0.5 stays eligible at beta=1.0."""
        rng = np.random.default_rng(21)
        tight = ShapingConfig(beta_a=0.5, beta_s=0.02)
        loose = ShapingConfig(beta_a=1.0, beta_s=0.2)
        for _ in range(200):
            k = 10
            preds = rng.integers(0, 3, size=k)
            outs = np.zeros((k, 3))
            outs[np.arange(k), preds] = 1.0
            state_outs = rng.random(k)
            fnn = FixedHeads(action_outputs=outs.tolist(), state_outputs=state_outs.tolist())
            action = fnn.pred_action(OBS)[0]
            if action_shaping(fnn, OBS, action, tight):
                assert action_shaping(fnn, OBS, action, loose)
            if state_shaping(fnn, OBS, tight):
                assert state_shaping(fnn, OBS, loose)


class TestConfig:
    def test_defaults(self):
        cfg = ShapingConfig()
        assert (cfg.lambda_a, cfg.lambda_s) == (0.2, 0.1)
        assert (cfg.beta_a, cfg.beta_s) == (1.0, 0.02)

    def test_invalid_values_rejected(self):
        with pytest.raises(UsageError):
            ShapingConfig(lambda_a=-0.1)
        with pytest.raises(UsageError):
            ShapingConfig(beta_a=1.5)
