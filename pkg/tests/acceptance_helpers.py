"""Shared machinery for the training-based acceptance criteria.

Training jobs run in forked worker processes (two at a time on this class of
machine) with BLAS restricted to one thread each; every job is deterministic
given its seed, so pool scheduling cannot change results.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from dataclasses import dataclass

import numpy as np

from greenstream.agents import (
    DDPG,
    PDS_DDPG,
    AgentConfig,
    VideoModel,
    rollout_policy,
    train,
)
from greenstream.baselines import (
    non_predictive_policy,
    plan_energy,
    solve_offline_optimal,
)
from greenstream.env import StreamingEnv
from greenstream.mobility import ScenarioConfig, generate_trace
from greenstream.power_math import LinkParams

SIGMA2 = 10.0 ** (-95.0 / 10.0) / 1000.0
PMAX = 10.0 ** (46.0 / 10.0) / 1000.0
LINK = LinkParams(alpha=1.0, sigma2=SIGMA2, bandwidth=20e6, p_max=PMAX)
SCENARIO = ScenarioConfig()

N_WORKERS = 2
EVAL_SET_SIZE = 16
EVAL_SEED_BASE = 77_000


def _limit_blas_threads():
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except Exception:
        os.environ["OPENBLAS_NUM_THREADS"] = "1"


def build_eval_set(video: VideoModel, n_episodes: int = EVAL_SET_SIZE,
                   seed: int = EVAL_SEED_BASE):
    """Fixed held-out evaluation environments for matched comparisons."""
    rng = np.random.default_rng(seed)
    envs = []
    for _ in range(n_episodes):
        spec = video.draw_spec(rng)
        trace = generate_trace(SCENARIO, spec.nominal_horizon + 5, rng)
        envs.append(StreamingEnv(trace, spec, LINK))
    return envs


def oracle_energies(envs):
    out = []
    for env in envs:
        plan = solve_offline_optimal(env.trace, env.video, LINK)
        alphas = np.array([env.trace.alpha(t)[0]
                           for t in range(1, env.video.nominal_horizon + 1)])
        out.append(plan_energy(plan, alphas, env.video, LINK))
    return np.asarray(out)


def non_predictive_energies(envs):
    return np.asarray([
        rollout_policy(env, non_predictive_policy, "idealized").energy
        for env in envs])


def mean_policy_energy(learner, envs) -> float:
    return float(np.mean([
        rollout_policy(env, learner.policy_rate, "idealized").energy
        for env in envs]))


@dataclass
class TrainingJob:
    algo: str
    seed: int
    episodes: int
    video: VideoModel
    agent_cfg: AgentConfig
    env_mode: str = "fading"
    eval_every: int = 10
    eval_envs: tuple = ()
    stop_below: float = None    # absolute mean-energy early-stop level
    keep_actor: bool = False


@dataclass
class TrainingOutcome:
    algo: str
    seed: int
    episodes_run: int
    eval_history: list       # (episode, mean energy over the eval set)
    total_violations: int
    total_frames: int
    actor: object = None
    video: VideoModel = None
    rate_bound: float = 80e6


def run_training_job(job: TrainingJob) -> TrainingOutcome:
    _limit_blas_threads()
    eval_fn = None
    stop_fn = None
    if job.eval_envs:
        eval_fn = lambda learner: mean_policy_energy(learner, job.eval_envs)
        if job.stop_below is not None:
            stop_fn = lambda episode, value: value <= job.stop_below
    result = train(job.algo, SCENARIO, job.video, LINK, job.agent_cfg,
                   episodes=job.episodes, seed=job.seed,
                   env_mode=job.env_mode, eval_fn=eval_fn,
                   eval_every=job.eval_every, early_stop_fn=stop_fn)
    actor = None
    if job.keep_actor:
        actor = result.learner.actor
        actor._ws.clear()  # drop workspace buffers before pickling
    return TrainingOutcome(
        algo=job.algo, seed=job.seed, episodes_run=len(result.log),
        eval_history=result.eval_history,
        total_violations=result.total_violations,
        total_frames=result.total_frames, actor=actor, video=job.video,
        rate_bound=job.agent_cfg.rate_bound)


def run_jobs(jobs, workers: int = N_WORKERS):
    """Run jobs on a fork pool; order of results matches the jobs."""
    if len(jobs) == 1:
        return [run_training_job(jobs[0])]
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        return pool.map(run_training_job, jobs)


def first_crossing(eval_history, level: float):
    """Episode of the first probe at or below `level`, or None."""
    for episode, value in eval_history:
        if value <= level:
            return episode
    return None
