"""Training orchestration: warm-up, feedback sessions, the episode loop.

The run proceeds in fixed phases: collect random-play trajectories, gather
initial feedback until m_i records, train the ensemble, then run episodes
with TD updates on the shaped reward.  Every N_c episodes a feedback
session pauses training; once N_f new records accumulate the ensemble is
retrained on the whole feedback buffer and the counter resets.

Shaped rewards are recomputed from the current ensemble snapshot at TD
update time (memoized per snapshot version on each stored step), so old
transitions benefit from newer feedback.
"""
from __future__ import annotations

import gzip
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .agent import (
    ExplorationSchedule,
    QNetworkPair,
    double_q_targets_batch,
    select_action,
    td_update,
)
from .buffers import (
    FeedbackBuffer,
    FeedbackRecord,
    MaskSampler,
    ReplayBuffer,
    Step,
    Trajectory,
)
from .envs import make_env
from .errors import ConfigError, UsageError
from .fnn import EnsembleFnn
from .nnet import load_network_file, save_network
from .oracle import NOT_SURE, FeedbackOracle, OracleConfig
from .shaping import ShapingConfig, clip_reward, detect_cycle, shaped_reward

M_I_DEFAULTS = {"aimline": 500, "gaterun": 1500}

METRICS_HEADER = ("episode,return_env,return_shaped,steps,epsilon,"
                  "r_a_fired,r_s_fired,cycles_penalized,fnn_agreement,feedback_total")


@dataclass
class EpisodeMetrics:
    episode: int
    return_env: float
    return_shaped: float
    steps: int
    epsilon: float
    r_a_fired: int
    r_s_fired: int
    cycles_penalized: int
    fnn_agreement: float
    feedback_total: int

    def to_csv_row(self) -> str:
        return (f"{self.episode},{self.return_env!r},{self.return_shaped!r},"
                f"{self.steps},{self.epsilon!r},{self.r_a_fired},{self.r_s_fired},"
                f"{self.cycles_penalized},{self.fnn_agreement!r},{self.feedback_total}")


@dataclass
class TrainRunConfig:
    env_id: str
    total_episodes: int
    seed: int = 0
    n_i: int = 100
    m_i: int | None = None
    N_c: int = 30
    N_f: int = 300
    feedback_source: str = "oracle"          # oracle | interactive | none
    feedback_targets: tuple[str, ...] = ("state", "action")
    k_action: int = 10
    k_state: int = 10
    masking: str = "bernoulli:0.5"
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    exploration: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    gamma: float = 0.99
    q_learning_rate: float = 1e-3
    fnn_learning_rate: float = 1e-3
    fnn_epochs: int = 5
    batch_size: int = 32
    sync_period: int = 500
    replay_capacity: int = 50_000
    eval_every: int = 500
    confidence_method: str = "std"
    initial_feedback_path: str | None = None  # reuse labels across ablation arms
    shaped_at_collection: bool = False        # freeze shaping at collection time
    session_timeout_s: float | None = None
    env_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.feedback_source not in ("oracle", "interactive", "none"):
            raise ConfigError(f"unknown feedback_source {self.feedback_source!r}")
        targets = tuple(self.feedback_targets)
        if not targets or any(t not in ("state", "action") for t in targets):
            raise ConfigError("feedback_targets must be a nonempty subset of state/action")
        self.feedback_targets = targets
        if self.total_episodes < 0 or self.n_i < 0 or self.N_c < 0 or self.N_f < 1:
            raise ConfigError("schedule constants out of range")

    def resolved_m_i(self) -> int:
        if self.m_i is not None:
            return self.m_i
        return M_I_DEFAULTS.get(self.env_id, 500)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["feedback_targets"] = list(self.feedback_targets)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainRunConfig":
        d = dict(d)
        d["shaping"] = ShapingConfig(**d.get("shaping", {}))
        d["oracle"] = OracleConfig(**d.get("oracle", {}))
        d["exploration"] = ExplorationSchedule(**d.get("exploration", {}))
        d["feedback_targets"] = tuple(d.get("feedback_targets", ("state", "action")))
        return cls(**d)


def _spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(7)
    names = ["q_init", "fnn_init", "fnn_train", "action", "replay", "mask",
             "random_play"]
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


class Trainer:
    def __init__(self, config: TrainRunConfig, session_hub=None):
        self.cfg = config
        self.env = make_env(config.env_id, **config.env_kwargs)
        self.rngs = _spawn_rngs(config.seed)
        self.replay = ReplayBuffer(config.replay_capacity)
        self.feedback = FeedbackBuffer()
        self.reviewed: set[int] = set()
        self.mask_sampler = MaskSampler(config.masking, self.rngs["mask"])
        self.q = QNetworkPair(
            self.env.spec.observation_dim, self.env.spec.action_count,
            seed=int(self.rngs["q_init"].integers(2**31)),
            sync_period=config.sync_period)
        self.fnn: EnsembleFnn | None = None
        self.fnn_snapshot: EnsembleFnn | None = None
        self.snapshot_version = 0
        self.oracle: FeedbackOracle | None = None
        self.hub = session_hub
        self.global_step = 0
        self.episode = 0
        self.next_trajectory_id = 0
        self.metrics: list[EpisodeMetrics] = []
        self.events: list[tuple[str, int]] = []
        self.retrain_episodes: list[int] = []
        self._metrics_fh = None
        self.run_dir: str | None = None

        if config.feedback_source == "oracle":
            self.env.reset(config.seed)
            self.oracle = FeedbackOracle(self.env, config.oracle, gamma=config.gamma)
        if config.feedback_source == "interactive" and session_hub is None:
            raise ConfigError("interactive feedback needs a session hub")
        if config.feedback_source != "none":
            self.fnn = EnsembleFnn(
                self.env.spec.observation_dim, self.env.spec.action_count,
                config.k_action, config.k_state,
                seed=int(self.rngs["fnn_init"].integers(2**31)),
                confidence_method=config.confidence_method)

    # -- phases -----------------------------------------------------------
    def collect_random_play(self) -> None:
        rng = self.rngs["random_play"]
        for _ in range(self.cfg.n_i):
            self._run_episode(policy="random", rng=rng, episode_index=0, learn=False)
        self.events.append(("random_play_done", 0))

    def gather_initial_feedback(self) -> None:
        cfg = self.cfg
        if cfg.initial_feedback_path:
            self._load_shared_feedback(cfg.initial_feedback_path)
            self.events.append(("initial_feedback_loaded", 0))
            return
        target = cfg.resolved_m_i()
        while len(self.feedback) < target:
            appended = self.collect_feedback_session()
            if appended == 0 and not self._has_unreviewed():
                self.events.append(("feedback_exhausted", 0))
                break
        self.events.append(("initial_feedback_done", 0))

    def _load_shared_feedback(self, path: str) -> None:
        """Reused labels keep their targets; masks are resampled when the
        head counts differ from the collection-time counts."""
        loaded = FeedbackBuffer.load_jsonl(path)
        for r in loaded.records:
            if r.target not in self.cfg.feedback_targets:
                continue
            k = self.cfg.k_action if r.target == "action" else self.cfg.k_state
            mask = r.mask if len(r.mask) == k else self.mask_sampler.sample(k)
            self.feedback.append(replace(r, mask=mask))

    def train_fnn_now(self) -> None:
        report = self.fnn.train(self.feedback, self.cfg.fnn_epochs,
                                self.rngs["fnn_train"],
                                learning_rate=self.cfg.fnn_learning_rate)
        if report is not None:
            self.snapshot_version += 1
            self.fnn_snapshot = self.fnn.snapshot()
        self.feedback.reset_new_counter()

    def run(self, run_dir: str | None = None) -> list[EpisodeMetrics]:
        cfg = self.cfg
        self._open_run_dir(run_dir)
        try:
            self.collect_random_play()
            if cfg.feedback_source != "none":
                self.gather_initial_feedback()
                self.train_fnn_now()
                self.events.append(("initial_fnn_trained", 0))
            for episode in range(self.episode + 1, cfg.total_episodes + 1):
                self._training_episode(episode)
            if self.run_dir:
                self.save_checkpoint("final")
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
        return self.metrics

    def resume(self, run_dir: str) -> list[EpisodeMetrics]:
        """Continue an interrupted run from its latest checkpoint."""
        self.load_checkpoint(latest_checkpoint(run_dir))
        self._truncate_metrics(run_dir, self.episode)
        self._open_run_dir(run_dir, resume=True)
        try:
            for episode in range(self.episode + 1, self.cfg.total_episodes + 1):
                self._training_episode(episode)
            self.save_checkpoint("final")
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
        return self.metrics

    def _training_episode(self, episode: int) -> None:
        cfg = self.cfg
        self.episode = episode
        self._run_episode(policy="greedy", rng=self.rngs["action"],
                          episode_index=episode, learn=True)
        if (cfg.feedback_source != "none" and cfg.N_c > 0
                and episode % cfg.N_c == 0):
            self.collect_feedback_session()
            if self.feedback.new_since_update >= cfg.N_f:
                self.train_fnn_now()
                self.retrain_episodes.append(episode)
                self.events.append(("fnn_retrained", episode))
        if self.run_dir and cfg.eval_every > 0 and episode % cfg.eval_every == 0:
            self.save_checkpoint(f"ep_{episode:06d}")

    # -- episode loop -------------------------------------------------------
    def _run_episode(self, policy: str, rng: np.random.Generator,
                     episode_index: int, learn: bool) -> None:
        cfg = self.cfg
        env = self.env
        obs, render = env.reset(cfg.seed)
        steps: list[Step] = []
        epsilon = cfg.exploration.value(self.global_step) if learn else 1.0
        terminal = False
        while not terminal:
            if policy == "random":
                action = int(rng.integers(0, env.spec.action_count))
            else:
                eps_now = cfg.exploration.value(self.global_step)
                action = select_action(self.q, obs, eps_now, rng)
            result = env.step(action)
            step = Step(observation=obs, action=action,
                        env_reward=result.reward,
                        next_observation=result.next_observation,
                        terminal=result.terminal, render=render,
                        next_render=result.render)
            steps.append(step)
            obs, render, terminal = result.next_observation, result.render, result.terminal
            if learn:
                self._td_update_from_replay()
                self.global_step += 1
                if self.global_step % cfg.sync_period == 0:
                    self.q.sync()
        trajectory = Trajectory(self.next_trajectory_id, steps, episode_index)
        self.next_trajectory_id += 1
        self.replay.add_trajectory(trajectory)
        if learn:
            self._record_metrics(episode_index, steps, epsilon)

    def _td_update_from_replay(self) -> None:
        cfg = self.cfg
        batch = self.replay.sample_transition_batch(cfg.batch_size, self.rngs["replay"])
        if batch is None:
            return
        if not any(name == "first_td_update" for name, _ in self.events):
            self.events.append(("first_td_update", self.episode))
        self._ensure_shaping(batch)
        obs = np.stack([s.observation for s in batch])
        next_obs = np.stack([s.next_observation for s in batch])
        actions = np.array([s.action for s in batch], dtype=np.int64)
        terminals = np.array([s.terminal for s in batch], dtype=np.float64)
        rewards = np.array([self._step_reward(s) for s in batch])
        targets = double_q_targets_batch(self.q, rewards, next_obs, terminals, cfg.gamma)
        td_update(self.q, obs, actions, targets, cfg.q_learning_rate)

    def _step_reward(self, step: Step) -> float:
        cfg = self.cfg
        r_e = clip_reward(step.env_reward) if cfg.shaping.clip_env_reward else step.env_reward
        if self.fnn_snapshot is None:
            return r_e
        return shaped_reward(r_e, step._r_a, step._r_s, cfg.shaping,
                             cycle_detected=bool(step._cycle == 1 and (step._r_a or step._r_s)))

    def _ensure_shaping(self, steps: list[Step]) -> None:
        """Memoize r_a / r_s / cycle per step for the current snapshot."""
        snap = self.fnn_snapshot
        if snap is None:
            return
        if self.cfg.shaped_at_collection:
            stale = [s for s in steps if s._shape_version == -1]
        else:
            stale = [s for s in steps if s._shape_version != self.snapshot_version]
        if not stale:
            return
        cfg = self.cfg.shaping
        obs = np.stack([s.observation for s in stale])
        next_obs = np.stack([s.next_observation for s in stale])
        best, _ = snap.pred_action_batch(obs)
        conf_a = snap.confidence_action_batch(obs)
        pred_s = snap.pred_state_batch(next_obs)
        conf_s = snap.confidence_state_batch(next_obs)
        for i, s in enumerate(stale):
            s._pred_best = int(best[i])
            s._r_a = int(s.action == best[i] and conf_a[i] > 1.0 - cfg.beta_a)
            s._r_s = int(pred_s[i] == 1 and conf_s[i] > 1.0 - cfg.beta_s)
            if s._cycle == -1:
                s._cycle = int(detect_cycle(s.next_observation, s.observation, cfg))
            s._shape_version = self.snapshot_version

    def _record_metrics(self, episode: int, steps: list[Step], epsilon: float) -> None:
        cfg = self.cfg
        self._ensure_shaping(steps)
        return_env = float(sum(s.env_reward for s in steps))
        if self.fnn_snapshot is None:
            return_shaped = float(sum(self._step_reward(s) for s in steps))
            r_a = r_s = cycles = 0
            agreement = 0.0
        else:
            return_shaped = float(sum(self._step_reward(s) for s in steps))
            r_a = sum(s._r_a for s in steps)
            r_s = sum(s._r_s for s in steps)
            cycles = sum(1 for s in steps if s._cycle == 1 and (s._r_a or s._r_s))
            agreement = float(np.mean([s.action == s._pred_best for s in steps]))
        row = EpisodeMetrics(
            episode=episode, return_env=return_env, return_shaped=return_shaped,
            steps=len(steps), epsilon=epsilon, r_a_fired=int(r_a), r_s_fired=int(r_s),
            cycles_penalized=int(cycles), fnn_agreement=agreement,
            feedback_total=len(self.feedback))
        self.metrics.append(row)
        if self._metrics_fh:
            self._metrics_fh.write(row.to_csv_row() + "\n")
            self._metrics_fh.flush()

    # -- feedback sessions ---------------------------------------------------
    def _has_unreviewed(self) -> bool:
        return self.replay.sample_trajectory_for_feedback(self.reviewed) is not None

    def collect_feedback_session(self) -> int:
        if self.cfg.feedback_source == "oracle":
            return self._oracle_session()
        if self.cfg.feedback_source == "interactive":
            return self._interactive_session()
        return 0

    def _record_feedback(self, target: str, step: Step, label: str) -> None:
        k = self.cfg.k_action if target == "action" else self.cfg.k_state
        record = FeedbackRecord(
            target=target,
            observation=step.observation if target == "action" else step.next_observation,
            action=step.action if target == "action" else None,
            label=1 if label == "good" else 0,
            mask=self.mask_sampler.sample(k),
            source="oracle" if self.cfg.feedback_source == "oracle" else "human",
            created_at_episode=self.episode)
        self.feedback.append(record)

    def _oracle_session(self) -> int:
        cfg = self.cfg
        budget = cfg.oracle.session_budget
        skip_after = cfg.oracle.skip_after
        appended = 0
        labels_given = 0
        while labels_given < budget:
            trajectory = self.replay.sample_trajectory_for_feedback(self.reviewed)
            if trajectory is None:
                break
            labels_this_trajectory = 0
            completed = True
            skipped = False
            for step in trajectory.steps:
                for target in ("state", "action"):
                    if target not in cfg.feedback_targets:
                        continue
                    if labels_given >= budget:
                        completed = False
                        break
                    if target == "action":
                        label = self.oracle.label_action(step.observation, step.action)
                    else:
                        label = self.oracle.label_state(step.next_observation)
                    labels_given += 1
                    labels_this_trajectory += 1
                    if label != NOT_SURE:
                        self._record_feedback(target, step, label)
                        appended += 1
                    if skip_after is not None and labels_this_trajectory >= skip_after:
                        skipped = True
                        break
                if skipped or not completed:
                    break
            if completed or skipped:
                self.reviewed.add(trajectory.trajectory_id)
            if not completed:
                break
        return appended

    def _interactive_session(self) -> int:
        recorder = SessionRecorder(self)
        self.hub.open_session(
            trajectory_provider=lambda: self.replay.sample_trajectory_for_feedback(self.reviewed),
            recorder=recorder,
            mark_reviewed=self.reviewed.add,
            budget=self.cfg.oracle.session_budget,
            env_id=self.cfg.env_id,
            action_names=self.env.spec.action_names)
        self.hub.wait_closed(timeout=self.cfg.session_timeout_s)
        return recorder.appended

    # -- persistence -----------------------------------------------------------
    def _open_run_dir(self, run_dir: str | None, resume: bool = False) -> None:
        self.run_dir = run_dir
        if run_dir is None:
            return
        os.makedirs(run_dir, exist_ok=True)
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        mode = "a" if resume else "w"
        path = os.path.join(run_dir, "metrics.csv")
        self._metrics_fh = open(path, mode)
        if not resume:
            self._metrics_fh.write(METRICS_HEADER + "\n")
            self._metrics_fh.flush()
            with open(os.path.join(run_dir, "config.json"), "w") as fh:
                json.dump(self.cfg.to_json_dict(), fh, indent=2)

    def _truncate_metrics(self, run_dir: str, up_to_episode: int) -> None:
        """Drop metric rows past the checkpoint so resume never duplicates."""
        path = os.path.join(run_dir, "metrics.csv")
        if not os.path.exists(path):
            return
        with open(path) as fh:
            lines = fh.read().splitlines()
        kept = [lines[0]]
        for line in lines[1:]:
            if line and int(line.split(",", 1)[0]) <= up_to_episode:
                kept.append(line)
        with open(path, "w") as fh:
            fh.write("\n".join(kept) + "\n")

    def save_checkpoint(self, name: str) -> str:
        ck = os.path.join(self.run_dir, "checkpoints", name)
        os.makedirs(ck, exist_ok=True)
        save_network(self.q.online, os.path.join(ck, "q_online.nnet"))
        save_network(self.q.target, os.path.join(ck, "q_target.nnet"))
        if self.fnn is not None:
            self.fnn.save(os.path.join(ck, "fnn.bin"))
            if self.fnn_snapshot is not None:
                self.fnn_snapshot.save(os.path.join(ck, "fnn_snapshot.bin"))
        self.feedback.save_jsonl(os.path.join(ck, "bf.jsonl"))
        trajectories = [
            {"id": t.trajectory_id, "episode": t.episode_index,
             "actions": [s.action for s in t.steps]}
            for t in self.replay.trajectories
        ]
        with gzip.open(os.path.join(ck, "bq.json.gz"), "wt") as fh:
            json.dump(trajectories, fh)
        state = {
            "episode": self.episode,
            "global_step": self.global_step,
            "snapshot_version": self.snapshot_version,
            "next_trajectory_id": self.next_trajectory_id,
            "reviewed": sorted(self.reviewed),
            "new_since_update": self.feedback.new_since_update,
            "retrain_episodes": self.retrain_episodes,
            "events": self.events,
            "rng_states": {k: _rng_state(v) for k, v in self.rngs.items()},
            "oracle_rng_state": _rng_state(self.oracle._rng) if self.oracle else None,
        }
        with open(os.path.join(ck, "state.json"), "w") as fh:
            json.dump(state, fh)
        return ck

    def load_checkpoint(self, ck: str) -> None:
        with open(os.path.join(ck, "state.json")) as fh:
            state = json.load(fh)
        self.q.online = load_network_file(os.path.join(ck, "q_online.nnet"))
        self.q.target = load_network_file(os.path.join(ck, "q_target.nnet"))
        fnn_path = os.path.join(ck, "fnn.bin")
        if os.path.exists(fnn_path):
            self.fnn = EnsembleFnn.load(fnn_path)
        snap_path = os.path.join(ck, "fnn_snapshot.bin")
        if os.path.exists(snap_path):
            self.fnn_snapshot = EnsembleFnn.load(snap_path)
        self.feedback = FeedbackBuffer.load_jsonl(os.path.join(ck, "bf.jsonl"))
        self.feedback.new_since_update = state["new_since_update"]
        with gzip.open(os.path.join(ck, "bq.json.gz"), "rt") as fh:
            trajectories = json.load(fh)
        self.replay = ReplayBuffer(self.cfg.replay_capacity)
        for t in trajectories:
            self.replay.add_trajectory(self._replay_trajectory(t))
        self.episode = state["episode"]
        self.global_step = state["global_step"]
        self.snapshot_version = state["snapshot_version"]
        self.next_trajectory_id = state["next_trajectory_id"]
        self.reviewed = set(state["reviewed"])
        self.retrain_episodes = list(state["retrain_episodes"])
        self.events = [tuple(e) for e in state["events"]]
        for name, rng_state in state["rng_states"].items():
            _set_rng_state(self.rngs[name], rng_state)
        if self.oracle is not None and state["oracle_rng_state"] is not None:
            _set_rng_state(self.oracle._rng, state["oracle_rng_state"])

    def _replay_trajectory(self, payload: dict) -> Trajectory:
        """Rebuild a stored trajectory (renders included) by re-simulation."""
        env = make_env(self.cfg.env_id, **self.cfg.env_kwargs)
        obs, render = env.reset(self.cfg.seed)
        steps = []
        for action in payload["actions"]:
            result = env.step(action)
            steps.append(Step(observation=obs, action=action,
                              env_reward=result.reward,
                              next_observation=result.next_observation,
                              terminal=result.terminal, render=render,
                              next_render=result.render))
            obs, render = result.next_observation, result.render
        return Trajectory(payload["id"], steps, payload["episode"])


class SessionRecorder:
    """Bridges interactive sessions to the feedback buffer."""

    def __init__(self, trainer: Trainer):
        self.trainer = trainer
        self.appended = 0

    def record(self, target: str, step: Step, label: str) -> None:
        self.trainer._record_feedback(target, step, label)
        self.appended += 1

    def update_label(self, record_position: int, label: str) -> None:
        self.trainer.feedback.records[record_position].label = 1 if label == "good" else 0

    def last_position(self) -> int:
        return len(self.trainer.feedback.records) - 1


def _rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def latest_checkpoint(run_dir: str) -> str:
    root = os.path.join(run_dir, "checkpoints")
    names = [n for n in os.listdir(root) if n.startswith("ep_")]
    if not names:
        raise UsageError(f"no resumable checkpoints under {root}")
    return os.path.join(root, max(names))


# ---------------------------------------------------------------------------
# Evaluation rollouts
# ---------------------------------------------------------------------------

def evaluate_policy(model, env, episodes: int, mode: str,
                    layout_seed: int = 0) -> tuple[float, float]:
    """Greedy rollouts (epsilon = 0); returns mean/std of raw env return.

    mode "q_greedy" treats model as a value Network; "fnn_policy" treats it
    as an EnsembleFnn acted through its predicted best action.
    """
    if mode not in ("q_greedy", "fnn_policy"):
        raise UsageError(f"unknown evaluation mode {mode!r}")
    returns = []
    for _ in range(episodes):
        obs, _ = env.reset(layout_seed)
        total, terminal = 0.0, False
        while not terminal:
            if mode == "q_greedy":
                values = model.forward(np.asarray(obs, dtype=np.float64)[None, :])[0]
                action = int(np.argmax(values))
            else:
                action = model.pred_action(obs)[0]
            result = env.step(action)
            total += result.reward
            obs, terminal = result.next_observation, result.terminal
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))
