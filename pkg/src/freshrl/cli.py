"""Command-line surface: train, evaluate, ablate, plot.

Exit codes: 0 success, 2 usage error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import threading
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .agent import ExplorationSchedule
from .envs import make_env
from .errors import ConfigError, NumericError, UsageError
from .fnn import EnsembleFnn
from .nnet import load_network_file
from .oracle import OracleConfig
from .plotting import plot_metrics_files
from .shaping import ShapingConfig
from .trainer import Trainer, TrainRunConfig, evaluate_policy

HEAD_GRID = (1, 5, 10, 20)
FEEDBACK_TYPE_ARMS = {
    "actions_only": ("action",),
    "states_only": ("state",),
    "both": ("state", "action"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freshrl",
                                     description="reward shaping from binary feedback")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a full training loop")
    _add_run_flags(train)
    train.add_argument("--out", help="run directory (default runs/<env>-seed<seed>)")

    ev = sub.add_parser("evaluate", help="greedy rollouts from a checkpoint")
    ev.add_argument("--checkpoint", required=True,
                    help="checkpoint directory containing q_online.nnet / fnn.bin")
    ev.add_argument("--env", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--mode", choices=["q_greedy", "fnn_policy"], default="q_greedy")

    ab = sub.add_parser("ablate", help="run an ablation sweep with shared feedback")
    _add_run_flags(ab)
    ab.add_argument("--out", required=True, help="sweep output directory")
    ab.add_argument("--sweep", required=True,
                    choices=["feedback_type", "heads", "thresholds"])
    ab.add_argument("--seeds", default="1,2,3,4,5",
                    help="comma-separated seed list")
    ab.add_argument("--beta-grid", default="1.0:0.02,1.0:0.2,0.5:0.02",
                    help="comma-separated beta_a:beta_s pairs for --sweep thresholds")

    plot = sub.add_parser("plot", help="SVG learning curves from metrics files")
    plot.add_argument("metrics", nargs="+", help="metrics.csv files (one per seed)")
    plot.add_argument("--out", default="curves.svg")
    plot.add_argument("--column", default="return_env")
    plot.add_argument("--title", default="")
    return parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", required=True, help="environment id (aimline, gaterun)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--feedback", choices=["oracle", "interactive", "none"],
                   default="oracle")
    p.add_argument("--feedback-types", choices=list(FEEDBACK_TYPE_ARMS), default="both")
    p.add_argument("--heads-a", type=int, default=10)
    p.add_argument("--heads-s", type=int, default=10)
    p.add_argument("--beta-a", type=float, default=1.0)
    p.add_argument("--beta-s", type=float, default=0.02)
    p.add_argument("--lambda-a", type=float, default=0.2)
    p.add_argument("--lambda-s", type=float, default=0.1)
    p.add_argument("--nc", type=int, default=30, help="episodes between feedback sessions")
    p.add_argument("--nf", type=int, default=300, help="new-feedback retrain threshold")
    p.add_argument("--ni", type=int, default=100, help="initial random-play trajectories")
    p.add_argument("--mi", type=int, default=None, help="initial feedback count")
    p.add_argument("--mask", default="bernoulli:0.5", help="bernoulli:p or exp:rate")
    p.add_argument("--error-rate", type=float, default=0.05)
    p.add_argument("--not-sure-rate", type=float, default=0.1)
    p.add_argument("--session-budget", type=int, default=100)
    p.add_argument("--skip-after", type=int, default=None)
    p.add_argument("--no-clip", action="store_true", help="keep raw env rewards")
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--fnn-epochs", type=int, default=5)
    p.add_argument("--feedback-data", default=None,
                   help="reuse a saved bf.jsonl instead of collecting")
    p.add_argument("--config", default=None, help="run-config JSON (flags override)")
    p.add_argument("--port", type=int, default=None, help="interactive session port")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", default=None, help="static assets for the console")
    p.add_argument("--session-timeout", type=float, default=None)


def config_from_args(args) -> TrainRunConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = TrainRunConfig.from_json_dict(json.load(fh))
        return replace(
            cfg, env_id=args.env, seed=args.seed, total_episodes=args.episodes)
    return TrainRunConfig(
        env_id=args.env,
        total_episodes=args.episodes,
        seed=args.seed,
        n_i=args.ni,
        m_i=args.mi,
        N_c=args.nc,
        N_f=args.nf,
        feedback_source=args.feedback,
        feedback_targets=FEEDBACK_TYPE_ARMS[args.feedback_types],
        k_action=args.heads_a,
        k_state=args.heads_s,
        masking=args.mask,
        shaping=ShapingConfig(
            beta_a=args.beta_a, beta_s=args.beta_s,
            lambda_a=args.lambda_a, lambda_s=args.lambda_s,
            clip_env_reward=not args.no_clip),
        oracle=OracleConfig(
            error_rate=args.error_rate, not_sure_rate=args.not_sure_rate,
            skip_after=args.skip_after, session_budget=args.session_budget,
            seed=args.seed),
        exploration=ExplorationSchedule(epsilon_end=args.epsilon_end),
        fnn_epochs=args.fnn_epochs,
        eval_every=args.eval_every,
        initial_feedback_path=args.feedback_data,
        session_timeout_s=args.session_timeout,
    )


def write_manifest(run_dir: str, config: TrainRunConfig, seeds: list[int],
                   outputs: list[str]) -> None:
    manifest = {
        "run_id": os.path.basename(os.path.normpath(run_dir)),
        "version": __version__,
        "seeds": seeds,
        "config": config.to_json_dict(),
        "outputs": outputs,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def cmd_train(args) -> int:
    if args.feedback == "interactive" and args.port is None:
        raise UsageError("interactive feedback needs --port")
    config = config_from_args(args)
    run_dir = args.out or os.path.join("runs", f"{args.env}-seed{args.seed}")
    hub = None
    server = None
    if args.feedback == "interactive":
        import uvicorn

        from .service import SessionHub, create_app
        hub = SessionHub()
        app = create_app(hub, ui_dir=args.ui_dir)
        server = uvicorn.Server(uvicorn.Config(
            app, host=args.host, port=args.port, log_level="warning"))
        threading.Thread(target=server.run, daemon=True).start()
        while not server.started:
            time.sleep(0.05)
        print(f"feedback console listening on http://{args.host}:{args.port}")
    trainer = Trainer(config, session_hub=hub)
    trainer.run(run_dir)
    write_manifest(run_dir, config, [config.seed],
                   ["metrics.csv", "config.json", "checkpoints/"])
    if server is not None:
        server.should_exit = True
    print(f"run complete: {os.path.join(run_dir, 'metrics.csv')}")
    return 0


def cmd_evaluate(args) -> int:
    env = make_env(args.env)
    env.reset(args.seed)
    if args.mode == "q_greedy":
        model = load_network_file(os.path.join(args.checkpoint, "q_online.nnet"))
    else:
        model = EnsembleFnn.load(os.path.join(args.checkpoint, "fnn.bin"))
    mean, std = evaluate_policy(model, env, args.episodes, args.mode,
                                layout_seed=args.seed)
    print(f"{args.mode} over {args.episodes} episodes: mean {mean:.2f} std {std:.2f}")
    return 0


def _ablation_arms(args) -> list[tuple[str, dict]]:
    if args.sweep == "feedback_type":
        return [(name, {"feedback_targets": targets})
                for name, targets in FEEDBACK_TYPE_ARMS.items()]
    if args.sweep == "heads":
        return [(f"heads_{k}", {"k_action": k, "k_state": k}) for k in HEAD_GRID]
    arms = []
    for pair in args.beta_grid.split(","):
        beta_a, _, beta_s = pair.partition(":")
        arms.append((f"beta_{beta_a}_{beta_s}",
                     {"beta_a": float(beta_a), "beta_s": float(beta_s)}))
    if not arms:
        raise UsageError("empty threshold grid")
    return arms


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise UsageError("empty seed list")
    arms = _ablation_arms(args)
    os.makedirs(args.out, exist_ok=True)
    base = config_from_args(args)

    # collect one shared feedback set per seed, reused by every arm
    shared: dict[int, str] = {}
    for seed in seeds:
        path = os.path.join(args.out, f"shared-feedback-seed{seed}.jsonl")
        if not os.path.exists(path):
            collector_cfg = replace(base, seed=seed, total_episodes=0,
                                    feedback_targets=("state", "action"),
                                    oracle=replace(base.oracle, seed=seed))
            collector = Trainer(collector_cfg)
            collector.collect_random_play()
            collector.gather_initial_feedback()
            collector.feedback.save_jsonl(path)
        shared[seed] = path

    summary_rows = []
    for arm_name, overrides in arms:
        finals = []
        for seed in seeds:
            run_dir = os.path.join(args.out, arm_name, f"seed{seed}")
            cfg = replace(base, seed=seed, N_c=0,
                          initial_feedback_path=shared[seed],
                          oracle=replace(base.oracle, seed=seed))
            if "beta_a" in overrides:
                cfg = replace(cfg, shaping=replace(
                    cfg.shaping, beta_a=overrides["beta_a"], beta_s=overrides["beta_s"]))
            else:
                cfg = replace(cfg, **overrides)
            metrics = Trainer(cfg).run(run_dir)
            window = max(1, len(metrics) // 5)
            finals.append(float(np.mean([m.return_env for m in metrics[-window:]])))
        summary_rows.append((arm_name, float(np.mean(finals)), float(np.std(finals))))

    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w") as fh:
        fh.write("arm,mean_final_return,std_final_return\n")
        for name, mean, std in summary_rows:
            fh.write(f"{name},{mean!r},{std!r}\n")
    write_manifest(args.out, base, seeds,
                   [f"{name}/seed{s}" for name, _ in arms for s in seeds])
    for name, mean, std in summary_rows:
        print(f"{name:>16}: {mean:9.2f} ± {std:.2f}")
    print(f"summary: {summary_path}")
    return 0


def cmd_plot(args) -> int:
    plot_metrics_files(args.metrics, args.out, column=args.column, title=args.title)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
