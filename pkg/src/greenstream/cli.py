"""Command-line harness: train, eval, baseline, verify, trace-gen.

Every run directory receives a config snapshot sufficient to reproduce the
run; all CSV outputs carry a schema-version comment line; figures are
rendered next to the CSVs they summarize.  Exit codes: 0 ok, 1 config error,
2 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .agents import (
    DDPG,
    PDS_DDPG,
    act_ddpg,
    act_safe,
    StateNormalizer,
    rollout_policy,
    train,
)
from .baselines import (
    non_predictive_policy,
    save_rate_plan_csv,
    solve_offline_optimal,
)
from .config import (
    ConfigError,
    build_agent_config,
    build_link,
    build_scenario,
    build_video_model,
    default_config,
    load_config,
    save_config,
)
from .env import MB, StreamingEnv
from .mobility import generate_trace, save_trace_csv
from .tinynet import load_params, save_params
from .verify import SUITES, run_suite

TRAIN_LOG_SCHEMA = "# greenstream training-log v1"
EVAL_SCHEMA = "# greenstream eval-metrics v1"
TRACE_SCHEMA = "# greenstream policy-trace v1"


def _write_training_log(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(TRAIN_LOG_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["episode", "real_steps", "virtual_steps", "energy_j",
                         "violations", "mean_action_mbps", "noise_std_mbps"])
        for r in rows:
            writer.writerow([r["episode"], r["real_steps"],
                             r["virtual_steps"], repr(r["energy_j"]),
                             r["violations"], repr(r["mean_action_mbps"]),
                             repr(r["noise_std_mbps"])])


def read_training_log(path):
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# greenstream training-log"):
            raise ValueError(f"{path} is not a training log")
        reader = csv.DictReader(fh)
        for r in reader:
            rows.append({
                "episode": int(r["episode"]),
                "real_steps": int(r["real_steps"]),
                "virtual_steps": int(r["virtual_steps"]),
                "energy_j": float(r["energy_j"]),
                "violations": int(r["violations"]),
                "mean_action_mbps": float(r["mean_action_mbps"]),
                "noise_std_mbps": float(r["noise_std_mbps"]),
            })
    return rows


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or ())
    run = cfg["run"]
    outdir = Path(args.outdir or f"runs/{run['algo']}_seed{run['seed']}")
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "checkpoints").mkdir(exist_ok=True)
    save_config(cfg, outdir / "config.json")

    scenario = build_scenario(cfg)
    video = build_video_model(cfg)
    link = build_link(cfg)
    agent_cfg = build_agent_config(cfg)
    every = int(run["checkpoint_every"])

    def checkpoint(episode, learner):
        if every and episode % every == 0:
            for name, net in learner.networks().items():
                save_params(net, outdir / "checkpoints"
                            / f"ep{episode:05d}_{name}.csv")

    t0 = time.time()
    result = train(run["algo"], scenario, video, link, agent_cfg,
                   episodes=int(run["episodes"]), seed=int(run["seed"]),
                   env_mode=run["env_mode"], episode_hook=checkpoint)
    wall = time.time() - t0

    _write_training_log(result.log, outdir / "training_log.csv")
    for name, net in result.learner.networks().items():
        save_params(net, outdir / f"{name}.csv")
    report.render_learning_curve(
        result.log, outdir / "learning_curve.png",
        title=f"{run['algo']} seed {run['seed']} ({run['env_mode']})")
    with open(outdir / "run_summary.json", "w") as fh:
        json.dump({"wall_clock_s": wall,
                   "episodes": len(result.log),
                   "total_violations": result.total_violations,
                   "total_frames": result.total_frames}, fh, indent=2)
    print(f"trained {len(result.log)} episodes in {wall:.1f}s; "
          f"violations {result.total_violations}/{result.total_frames} "
          f"frames; artifacts in {outdir}")
    return 0


def _eval_env(cfg, scenario, video, link, stream: int, index: int):
    """Deterministic per-episode environment from the eval seed stream."""
    seq = np.random.SeedSequence([int(cfg["run"]["seed"]), stream, index])
    rng = np.random.default_rng(seq)
    spec = video.draw_spec(rng)
    trace = generate_trace(scenario, spec.nominal_horizon + 5, rng)
    return StreamingEnv(trace, spec, link), np.random.default_rng(seq.spawn(1)[0])


def _learned_policy(cfg, actor):
    link = build_link(cfg)
    video = build_video_model(cfg)
    norm = StateNormalizer(link.sigma2, video.frames_per_segment)
    bound_mbps = float(cfg["agent"]["rate_bound_mbps"])
    safety = cfg["run"]["algo"] == PDS_DDPG

    def policy(env, state):
        s_norm = norm(state.vector())
        if safety:
            a, _ = act_safe(actor, s_norm, env.min_safe_rate(state) / MB,
                            0.0, None, bound_mbps)
        else:
            a = act_ddpg(actor, s_norm, 0.0, None, bound_mbps)
        return a * MB

    return policy


def _run_eval(cfg, policies, n_episodes, outdir, mode, trace_episodes=1):
    """Roll matched eval episodes for each named policy; write CSVs and
    figures; returns {label: [energy...]}."""
    scenario = build_scenario(cfg)
    video = build_video_model(cfg)
    link = build_link(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    energies = {label: [] for label in policies}
    rows = []
    trace_rows = []
    trace_fig = None
    for i in range(n_episodes):
        for label, make_policy in policies.items():
            env, fading_rng = _eval_env(cfg, scenario, video, link, 7001, i)
            policy = make_policy(env)
            ep = rollout_policy(env, policy, mode=mode, rng=fading_rng)
            energies[label].append(ep.energy)
            rows.append([label, i, repr(ep.energy), ep.steps, ep.stalls,
                         repr(float(np.mean(ep.actions)) / MB)])
            if i < trace_episodes:
                for t in range(ep.steps):
                    trace_rows.append([label, i, t + 1,
                                       repr(float(ep.alphas[t])),
                                       repr(float(ep.actions[t])),
                                       repr(float(ep.energies[t])),
                                       repr(float(ep.buffers[t])),
                                       int(ep.stall_flags[t])])
                if trace_fig is None:
                    trace_fig = (np.arange(1, ep.steps + 1), ep.alphas)

    with open(outdir / "metrics.csv", "w", newline="") as fh:
        fh.write(EVAL_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["policy", "episode", "energy_j", "steps", "stalls",
                         "mean_action_mbps"])
        writer.writerows(rows)
    with open(outdir / "policy_trace.csv", "w", newline="") as fh:
        fh.write(TRACE_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["policy", "episode", "frame", "alpha1", "action_bps",
                         "energy_j", "buffer_bits", "stalled"])
        writer.writerows(trace_rows)

    report.render_energy_cdf(energies, outdir / "energy_cdf.png")
    if trace_fig is not None:
        frames, alphas = trace_fig
        rates = {}
        for label in policies:
            sel = [r for r in trace_rows if r[0] == label and r[1] == 0]
            rates[label] = np.array([float(r[4]) for r in sel])
        report.render_policy_trace(frames, alphas, rates,
                                   outdir / "policy_trace.png")
    return energies


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set or ())
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return 1
    actor = load_params(ckpt)
    n = args.episodes or int(cfg["run"]["eval_episodes"])
    outdir = Path(args.outdir or "eval")
    mode = "idealized" if args.idealized else cfg["run"]["env_mode"]
    policies = {
        "learned": lambda env: _learned_policy(cfg, actor),
        "non_predictive": lambda env: non_predictive_policy,
    }
    energies = _run_eval(cfg, policies, n, outdir, mode,
                         trace_episodes=args.trace_episodes)
    for label, es in energies.items():
        print(f"{label}: mean {np.mean(es):.3f} J over {len(es)} episodes")
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config, args.set or ())
    n = args.episodes or 100
    outdir = Path(args.outdir or "baseline")
    outdir.mkdir(parents=True, exist_ok=True)
    mode = "idealized" if args.idealized else cfg["run"]["env_mode"]
    first_plan = {}

    def make_optimal(env):
        link = build_link(cfg)
        plan = solve_offline_optimal(env.trace, env.video, link)
        first_plan.setdefault("plan", plan)
        return plan.policy()

    policies = {"non_predictive": lambda env: non_predictive_policy}
    if args.policy in ("optimal", "both"):
        policies["optimal"] = make_optimal
        if args.policy == "optimal":
            policies.pop("non_predictive")
    energies = _run_eval(cfg, policies, n, outdir, mode)
    if "plan" in first_plan:
        save_rate_plan_csv(first_plan["plan"], outdir / "optimal_plan_ep0.csv")
    for label, es in energies.items():
        print(f"{label}: mean {np.mean(es):.3f} J over {len(es)} episodes")
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    all_ok = True
    for name in names:
        try:
            results, ok = run_suite(name)
        except KeyError as exc:
            print(exc, file=sys.stderr)
            return 1
        print(f"suite {name}:")
        for r in results:
            print("  " + r.line())
        all_ok &= ok
    print("verification " + ("PASSED" if all_ok else "FAILED"))
    return 0 if all_ok else 2


def cmd_trace_gen(args) -> int:
    cfg = load_config(args.config, args.set or ())
    scenario = build_scenario(cfg)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg["run"]["seed"]), 9001]))
    trace = generate_trace(scenario, args.frames, rng)
    save_trace_csv(trace, args.out)
    print(f"wrote {args.frames}-frame trace ({trace.gains.shape[1]} gains "
          f"per frame) to {args.out}")
    return 0


def cmd_init_config(args) -> int:
    save_config(default_config(), args.out)
    print(f"wrote default config to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenstream",
        description="Energy-efficient predictive power allocation for "
                    "mobile video streaming")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="dotted.key=value")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained policy")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True,
                   help="actor parameter CSV from a train run")
    p.add_argument("--episodes", type=int)
    p.add_argument("--outdir")
    p.add_argument("--idealized", action="store_true")
    p.add_argument("--trace-episodes", type=int, default=1)
    p.add_argument("--set", action="append", metavar="dotted.key=value")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate reference policies")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", choices=("non_predictive", "optimal", "both"),
                   default="both")
    p.add_argument("--episodes", type=int)
    p.add_argument("--outdir")
    p.add_argument("--idealized", action="store_true")
    p.add_argument("--set", action="append", metavar="dotted.key=value")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("verify", help="run numerical verification suites")
    p.add_argument("--suite", default="all",
                   choices=tuple(sorted(SUITES)) + ("all",))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trace-gen", help="generate a channel trace CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="dotted.key=value")
    p.set_defaults(func=cmd_trace_gen)

    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("--out", default="config.json")
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
