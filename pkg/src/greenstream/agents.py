"""DDPG and PDS-DDPG learners for the streaming power-control MDP.

Both agents pick one average rate per frame.  The plain DDPG learner uses a
state-action critic and reward shaping against stalls; the PDS learner
replaces the critic with a value network over the post-decision state,
composes it with the known expected-power and transition maps, and corrects
its actions through a safety layer so the QoS constraint holds throughout
learning.  Virtual episodes replay stored channel traces through the known
idealized dynamics to multiply the experience stream.

Unit conventions: states and actions are stored in SI (bits, bit/s); network
inputs are normalized per `StateNormalizer` and actions cross the network
boundary in Mbps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import (
    MB,
    SessionState,
    StreamingEnv,
    VideoSpec,
    draw_segment_sizes,
    f_pds_arrays,
    min_safe_rate_arrays,
)
from .mobility import ChannelTrace, ScenarioConfig, generate_trace
from .power_math import LinkParams, pbar_grad_rayleigh, pbar_rayleigh
from .tinynet import (
    LINEAR,
    RELU,
    SCALED_TANH,
    adam_step,
    assert_finite,
    backward,
    forward,
    init_params,
    soft_update,
)

DDPG = "ddpg"
PDS_DDPG = "pds_ddpg"


@dataclass(frozen=True)
class VideoModel:
    """Episode-level video statistics; sizes are drawn per episode."""

    n_segments: int = 15
    frames_per_segment: int = 10
    dt: float = 1.0
    tau: float = 1e-3
    mean_rate: float = 8e6
    std_rate: float = 0.3e6

    def draw_spec(self, rng: np.random.Generator) -> VideoSpec:
        sizes = draw_segment_sizes(
            self.n_segments, rng, self.mean_rate, self.std_rate,
            self.frames_per_segment * self.dt)
        return VideoSpec(segment_sizes=sizes,
                         frames_per_segment=self.frames_per_segment,
                         dt=self.dt, tau=self.tau)

    @property
    def nominal_horizon(self) -> int:
        return (self.n_segments - 1) * self.frames_per_segment


@dataclass(frozen=True)
class AgentConfig:
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    omega: float = 1e-3
    batch: int = 1024
    gamma: float = 1.0
    noise_std_init: float = 10.0      # Mbps, decays linearly to final
    noise_std_final: float = 0.0
    virtual_episodes: int = 4         # K per real episode (PDS only)
    penalty_lambda: float = 30.0      # reward shaping, DDPG mode only
    penalty_cap: float = 50.0
    rate_bound: float = 80e6          # bit/s
    replay_capacity: int = 1_000_000
    hidden_ddpg: int = 200
    hidden_pds: int = 100
    episode_cap_factor: float = 4.0   # truncate runaway episodes

    def __post_init__(self):
        if min(self.lr_actor, self.lr_critic, self.omega, self.batch,
               self.rate_bound) <= 0:
            raise ValueError("learning rates, omega, batch and rate_bound "
                             "must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")


class StateNormalizer:
    """Raw state vector [B, S, l, eta, alphas...] -> O(1) network inputs.

    Buffer and segment sizes enter as Mb/10, playback as l/L_v, download
    ratio raw, channel gains as alpha_scale * log10(alpha/sigma2).
    """

    def __init__(self, sigma2: float, frames_per_segment: int,
                 alpha_scale: float = 0.1):
        self.sigma2 = sigma2
        self.frames_per_segment = frames_per_segment
        self.alpha_scale = alpha_scale

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        out = np.empty_like(raw)
        out[..., 0] = raw[..., 0] / (10.0 * MB)
        out[..., 1] = raw[..., 1] / (10.0 * MB)
        out[..., 2] = raw[..., 2] / self.frames_per_segment
        out[..., 3] = raw[..., 3]
        out[..., 4:] = self.alpha_scale * np.log10(raw[..., 4:] / self.sigma2)
        return out


@dataclass
class Batch:
    states: np.ndarray       # raw, (n, dim)
    actions: np.ndarray      # bit/s, (n,)
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray        # float 0/1
    virtual: np.ndarray      # bool
    next_seg: np.ndarray     # S of segment playing at t+1, bits
    next_seg2: np.ndarray    # S of segment playing at t+2, bits
    sum_sizes: np.ndarray    # episode file size, bits


class ReplayBuffer:
    """Fixed-capacity ring with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = int(capacity)
        self._s = np.empty((self.capacity, state_dim))
        self._a = np.empty(self.capacity)
        self._r = np.empty(self.capacity)
        self._s2 = np.empty((self.capacity, state_dim))
        self._d = np.empty(self.capacity)
        self._v = np.empty(self.capacity, dtype=bool)
        self._ns = np.empty(self.capacity)
        self._ns2 = np.empty(self.capacity)
        self._tot = np.empty(self.capacity)
        self._size = 0
        self._head = 0

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state, done, virtual,
            next_seg, next_seg2, sum_sizes):
        i = self._head
        self._s[i] = state
        self._a[i] = action
        self._r[i] = reward
        self._s2[i] = next_state
        self._d[i] = float(done)
        self._v[i] = virtual
        self._ns[i] = next_seg
        self._ns2[i] = next_seg2
        self._tot[i] = sum_sizes
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self._size, size=n)
        return Batch(states=self._s[idx], actions=self._a[idx],
                     rewards=self._r[idx], next_states=self._s2[idx],
                     dones=self._d[idx], virtual=self._v[idx],
                     next_seg=self._ns[idx], next_seg2=self._ns2[idx],
                     sum_sizes=self._tot[idx])


class TraceBuffer:
    """Channel traces of completed real episodes (buffer H)."""

    def __init__(self):
        self._traces: list[ChannelTrace] = []

    def __len__(self):
        return len(self._traces)

    def add(self, trace: ChannelTrace):
        self._traces.append(trace)

    def sample(self, rng: np.random.Generator) -> ChannelTrace:
        if not self._traces:
            raise IndexError("trace buffer is empty")
        return self._traces[int(rng.integers(0, len(self._traces)))]


# ---------------------------------------------------------------------------
# Action selection and critics (spec operation surface)
# ---------------------------------------------------------------------------

def act_ddpg(actor, state_norm, noise_std_mbps, rng, rate_bound_mbps=80.0):
    """mu(s) plus Gaussian exploration, clamped into [0, rate_bound] Mbps."""
    mu, _ = forward(actor, state_norm)
    a = float(mu[0]) + (float(rng.normal(0.0, noise_std_mbps))
                        if noise_std_mbps > 0 else 0.0)
    return float(np.clip(a, 0.0, rate_bound_mbps))


def act_safe(actor, state_norm, floor_mbps, noise_std_mbps, rng,
             rate_bound_mbps=80.0):
    """Safety layer: never below the rate floor that keeps the next segment
    buffered.

    The network-plus-noise part is clipped into [0, rate_bound], but the
    floor itself is not: a segment slightly larger than rate_bound * dt must
    still be deliverable in its deadline frame, so the executed action may
    exceed the bound when (and only when) the floor does.  Such floors are
    flagged via the second return value.
    """
    mu, _ = forward(actor, state_norm)
    a = float(mu[0]) + (float(rng.normal(0.0, noise_std_mbps))
                        if noise_std_mbps > 0 else 0.0)
    a = max(min(a, rate_bound_mbps), 0.0, floor_mbps)
    return a, floor_mbps > rate_bound_mbps


def critic_q_plain(critic, state_norm, action_mbps):
    """Q(s, a) from the state-action critic."""
    state_norm = np.asarray(state_norm, dtype=float)
    single = state_norm.ndim == 1
    s = state_norm[None, :] if single else state_norm
    a = np.atleast_1d(np.asarray(action_mbps, dtype=float))
    q, _ = forward(critic, np.concatenate([s, a[:, None]], axis=1))
    return float(q[0, 0]) if single else q[:, 0]


def critic_q_pds(v_net, env: StreamingEnv, normalizer: StateNormalizer,
                 state: SessionState, action: float) -> float:
    """Q(s, a) = -dt * pbar(alpha, a) + V(f_pds(s, a)).

    The sign follows the reward convention (reward = -energy).
    """
    if action < 0:
        raise ValueError("action must be >= 0")
    link = env.link_at(state)
    known = -env.video.dt * pbar_rayleigh(link.alpha, action, link.sigma2,
                                          link.bandwidth)
    pds = env.f_pds(state, action)
    v, _ = forward(v_net, normalizer(pds.vector()))
    return float(known + v[0])


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------

class DDPGLearner:
    """Actor-critic over (state, action) with reward shaping for stalls."""

    algo = DDPG
    uses_safety_layer = False

    def __init__(self, cfg: AgentConfig, state_dim: int,
                 normalizer: StateNormalizer, link: LinkParams,
                 video: VideoModel, rng: np.random.Generator):
        h = cfg.hidden_ddpg
        self.cfg = cfg
        self.norm = normalizer
        self.link = link
        self.video = video
        # Output-layer biases start both networks near the non-predictive
        # policy: 40*(tanh(-1)+1) ~ 9.5 Mbps for the actor, and ~-15 J for
        # the critic (a non-predictive episode's return scale).  A large
        # negative actor bias would saturate the tanh and freeze learning.
        self.actor = init_params([state_dim, h, h, 1],
                                 [RELU, RELU, SCALED_TANH], rng,
                                 output_bias=-1.0)
        self.critic = init_params([state_dim + 1, h, h, 1],
                                  [RELU, RELU, LINEAR], rng,
                                  output_bias=-15.0)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()

    def act(self, env: StreamingEnv, state: SessionState, noise_std_mbps,
            rng) -> float:
        a_mbps = act_ddpg(self.actor, self.norm(state.vector()),
                          noise_std_mbps, rng, self.cfg.rate_bound / MB)
        return a_mbps * MB

    def policy_rate(self, env: StreamingEnv, state: SessionState) -> float:
        mu, _ = forward(self.actor, self.norm(state.vector()))
        return float(np.clip(mu[0], 0.0, self.cfg.rate_bound / MB)) * MB

    def update(self, batch: Batch) -> None:
        cfg = self.cfg
        n = len(batch.actions)
        s = self.norm(batch.states)
        s2 = self.norm(batch.next_states)
        a_mbps = batch.actions / MB

        # critic regression toward r + gamma * Q'(s', mu'(s')), no bootstrap
        # at terminals
        a2, _ = forward(self.actor_target, s2)
        q2, _ = forward(self.critic_target,
                        np.concatenate([s2, a2], axis=1))
        y = batch.rewards + cfg.gamma * q2[:, 0] * (1.0 - batch.dones)
        q, cache_q = forward(self.critic,
                             np.concatenate([s, a_mbps[:, None]], axis=1))
        dq = (2.0 / n) * (q[:, 0] - y)
        grads_q, _ = backward(self.critic, cache_q, dq[:, None])
        adam_step(self.critic, grads_q, cfg.lr_critic)

        # actor ascent along grad_a Q at a = mu(s)
        a0, cache_mu = forward(self.actor, s)
        _, cache_q0 = forward(self.critic, np.concatenate([s, a0], axis=1))
        _, in_grad = backward(self.critic, cache_q0,
                              np.full((n, 1), 1.0 / n))
        dq_da = in_grad[:, -1:]
        grads_mu, _ = backward(self.actor, cache_mu, -dq_da)
        adam_step(self.actor, grads_mu, cfg.lr_actor)

        soft_update(self.actor_target, self.actor, cfg.omega)
        soft_update(self.critic_target, self.critic, cfg.omega)

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic}

    def check_finite(self):
        assert_finite(self.actor, "actor")
        assert_finite(self.critic, "critic")


class PDSDDPGLearner:
    """Value network over the post-decision state, composed with the known
    expected-power and transition maps; safety layer on the actor."""

    algo = PDS_DDPG
    uses_safety_layer = True

    def __init__(self, cfg: AgentConfig, state_dim: int,
                 normalizer: StateNormalizer, link: LinkParams,
                 video: VideoModel, rng: np.random.Generator):
        h = cfg.hidden_pds
        self.cfg = cfg
        self.norm = normalizer
        self.link = link
        self.video = video
        self.actor = init_params([state_dim, h, h, 1],
                                 [RELU, RELU, SCALED_TANH], rng,
                                 output_bias=-1.0)
        self.v_net = init_params([state_dim, h, h, 1],
                                 [RELU, RELU, LINEAR], rng,
                                 output_bias=-15.0)
        self.actor_target = self.actor.copy()
        self.v_target = self.v_net.copy()

    def act(self, env: StreamingEnv, state: SessionState, noise_std_mbps,
            rng) -> float:
        floor = env.min_safe_rate(state)
        a_mbps, _ = act_safe(self.actor, self.norm(state.vector()),
                             floor / MB, noise_std_mbps, rng,
                             self.cfg.rate_bound / MB)
        return a_mbps * MB

    def policy_rate(self, env: StreamingEnv, state: SessionState) -> float:
        floor = env.min_safe_rate(state)
        a_mbps, _ = act_safe(self.actor, self.norm(state.vector()),
                             floor / MB, 0.0, None, self.cfg.rate_bound / MB)
        return a_mbps * MB

    # -- batched pieces of the composite critic ----------------------------

    def _safe_target_actions(self, s2_norm, batch: Batch) -> np.ndarray:
        """mu'_s(s_{j+1}, 0): target actor plus safety layer, in bit/s."""
        mu2, _ = forward(self.actor_target, s2_norm)
        a2 = np.clip(mu2[:, 0] * MB, 0.0, self.cfg.rate_bound)
        floor2 = min_safe_rate_arrays(
            batch.next_states[:, 0], batch.next_states[:, 1],
            batch.next_states[:, 2], batch.next_seg2,
            self.video.dt, self.video.frames_per_segment)
        return np.maximum(a2, floor2)

    def _pds_norm(self, state_norm, states_raw, actions, next_seg, sum_sizes):
        """Normalized PDS vectors built on already-normalized states.

        Only the four leading scalars change between a state and its PDS, so
        the (log-scaled) channel columns are reused as-is.
        """
        b2, s2f, l2, eta2, _ = f_pds_arrays(
            states_raw[:, 0], states_raw[:, 1],
            states_raw[:, 2], actions, next_seg, sum_sizes,
            states_raw[:, 3], self.video.dt, self.video.frames_per_segment)
        pds = state_norm.copy()
        pds[:, 0] = b2 / (10.0 * MB)
        pds[:, 1] = s2f / (10.0 * MB)
        pds[:, 2] = l2 / self.video.frames_per_segment
        pds[:, 3] = eta2
        return pds

    def update(self, batch: Batch) -> None:
        cfg = self.cfg
        n = len(batch.actions)
        dt = self.video.dt
        s2 = self.norm(batch.next_states)
        alpha2 = batch.next_states[:, 4]

        # target: y = gamma * [ -dt*pbar(alpha', a') + V'(f_pds(s', a')) ]
        a2 = self._safe_target_actions(s2, batch)
        known2 = -dt * pbar_rayleigh(alpha2, a2, self.link.sigma2,
                                     self.link.bandwidth)
        pds2_norm = self._pds_norm(s2, batch.next_states, a2, batch.next_seg2,
                                   batch.sum_sizes)
        v2, _ = forward(self.v_target, pds2_norm)
        y = cfg.gamma * (known2 + v2[:, 0]) * (1.0 - batch.dones)

        # V regression at the stored transitions' post-decision states
        s = self.norm(batch.states)
        pds_norm = self._pds_norm(s, batch.states, batch.actions,
                                  batch.next_seg, batch.sum_sizes)
        v, cache_v = forward(self.v_net, pds_norm)
        dv = (2.0 / n) * (v[:, 0] - y)
        grads_v, _ = backward(self.v_net, cache_v, dv[:, None])
        adam_step(self.v_net, grads_v, cfg.lr_critic)

        # actor: analytic grad_a Q through the known maps, evaluated at the
        # noise-free safety-layer output; samples where the floor binds get
        # subgradient zero through mu
        mu0, cache_mu = forward(self.actor, s)
        a0 = mu0[:, 0] * MB
        floor = min_safe_rate_arrays(
            batch.states[:, 0], batch.states[:, 1],
            batch.states[:, 2], batch.next_seg,
            self.video.dt, self.video.frames_per_segment)
        active = a0 > floor
        a_used = np.maximum(a0, floor)

        pds0_norm = self._pds_norm(s, batch.states, a_used, batch.next_seg,
                                   batch.sum_sizes)
        _, cache_v0 = forward(self.v_net, pds0_norm)
        _, gv = backward(self.v_net, cache_v0, np.ones((n, 1)))
        alpha1 = batch.states[:, 4]
        dq_da = (-dt * pbar_grad_rayleigh(alpha1, np.maximum(a_used, 1e-9),
                                          self.link.sigma2,
                                          self.link.bandwidth)
                 + gv[:, 0] * (dt / (10.0 * MB))
                 + gv[:, 3] * (dt / batch.sum_sizes))
        dq_da_mbps = dq_da * MB * active
        grads_mu, _ = backward(self.actor, cache_mu,
                               -(dq_da_mbps / n)[:, None])
        adam_step(self.actor, grads_mu, cfg.lr_actor)

        soft_update(self.actor_target, self.actor, cfg.omega)
        soft_update(self.v_target, self.v_net, cfg.omega)

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.v_net}

    def check_finite(self):
        assert_finite(self.actor, "actor")
        assert_finite(self.v_net, "v_net")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpisodeStats:
    steps: int = 0
    energy: float = 0.0
    violations: int = 0
    action_sum: float = 0.0
    truncated: bool = False


@dataclass
class TrainResult:
    log: list
    learner: object
    trace_buffer: TraceBuffer
    eval_history: list
    total_violations: int
    total_frames: int


def _named_rngs(seed: int) -> dict:
    """All randomness flows from the run seed through named substreams."""
    names = ("mobility", "fading", "segments", "init", "exploration", "replay")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(seq) for name, seq in zip(names, seqs)}


def _noise_schedule(cfg: AgentConfig, episode: int, episodes: int) -> float:
    """Linear decay from noise_std_init at episode 1 to noise_std_final at
    the last episode."""
    if episodes <= 1:
        return cfg.noise_std_final
    frac = (episode - 1) / (episodes - 1)
    return cfg.noise_std_init + (cfg.noise_std_final - cfg.noise_std_init) * frac


def _run_episode(env: StreamingEnv, learner, replay: ReplayBuffer,
                 cfg: AgentConfig, noise_std: float, mode: str,
                 rng_fading, rng_explore, rng_replay, max_frames: int,
                 virtual: bool, update: bool) -> EpisodeStats:
    stats = EpisodeStats()
    state = env.reset()
    while True:
        action = learner.act(env, state, noise_std, rng_explore)
        if mode == "fading":
            out = env.step_fading(state, action, rng_fading)
        else:
            out = env.step_idealized(state, action)
        stats.steps += 1
        stats.energy += out.energy
        stats.violations += int(out.stalled)
        stats.action_sum += action
        replay.add(state.vector(), action, out.reward,
                   out.next_state.vector(), out.done, virtual,
                   env.next_seg_size(state),
                   env.next_seg_size(out.next_state),
                   env.video.total_bits)
        if update and len(replay) >= cfg.batch:
            learner.update(replay.sample(cfg.batch, rng_replay))
        state = out.next_state
        if out.done:
            break
        if stats.steps >= max_frames:
            stats.truncated = True
            break
    return stats


def generate_virtual_episodes(trace_buffer: TraceBuffer, learner,
                              video: VideoModel, link: LinkParams,
                              replay: ReplayBuffer, cfg: AgentConfig,
                              noise_std: float, k: int, rng_segments,
                              rng_explore, rng_replay,
                              max_frames: int, update: bool = True) -> int:
    """Roll K idealized episodes on stored traces with the current noisy
    policy; experiences stream into the shared replay buffer."""
    if len(trace_buffer) == 0 or k <= 0:
        return 0
    steps = 0
    for _ in range(k):
        trace = trace_buffer.sample(rng_replay)
        spec = video.draw_spec(rng_segments)
        venv = StreamingEnv(trace, spec, link)
        stats = _run_episode(venv, learner, replay, cfg, noise_std,
                             "idealized", None, rng_explore, rng_replay,
                             max_frames, virtual=True, update=update)
        steps += stats.steps
    return steps


def make_learner(algo: str, cfg: AgentConfig, state_dim: int,
                 normalizer: StateNormalizer, link: LinkParams,
                 video: VideoModel, rng: np.random.Generator):
    if algo == DDPG:
        return DDPGLearner(cfg, state_dim, normalizer, link, video, rng)
    if algo == PDS_DDPG:
        return PDSDDPGLearner(cfg, state_dim, normalizer, link, video, rng)
    raise ValueError(f"unknown algo {algo!r}")


def train(algo: str, scenario: ScenarioConfig, video: VideoModel,
          link: LinkParams, cfg: AgentConfig, episodes: int, seed: int,
          env_mode: str = "fading", eval_fn=None, eval_every: int = 0,
          episode_hook=None, early_stop_fn=None) -> TrainResult:
    """Full training loop; deterministic given (config, seed).

    eval_fn(learner) is called every `eval_every` real episodes and its value
    is recorded in eval_history; early_stop_fn(episode, value) may end the
    run after a probe.  episode_hook(episode, learner) may be used for
    checkpointing.
    """
    if env_mode not in ("fading", "idealized"):
        raise ValueError(f"unknown env_mode {env_mode!r}")
    rngs = _named_rngs(seed)
    state_dim = 4 + (scenario.history_len + 1) * scenario.n_bs_tracked
    normalizer = StateNormalizer(link.sigma2, video.frames_per_segment)
    learner = make_learner(algo, cfg, state_dim, normalizer, link, video,
                           rngs["init"])
    replay = ReplayBuffer(cfg.replay_capacity, state_dim)
    trace_buffer = TraceBuffer()
    max_frames = int(cfg.episode_cap_factor * video.nominal_horizon)
    penalty = cfg.penalty_lambda if algo == DDPG else 0.0

    log = []
    eval_history = []
    total_violations = 0
    total_frames = 0
    for episode in range(1, episodes + 1):
        noise_std = _noise_schedule(cfg, episode, episodes)
        trace = generate_trace(scenario, max_frames + 1, rngs["mobility"])
        spec = video.draw_spec(rngs["segments"])
        env = StreamingEnv(trace, spec, link, penalty_lambda=penalty,
                           penalty_cap=cfg.penalty_cap)
        stats = _run_episode(env, learner, replay, cfg, noise_std, env_mode,
                             rngs["fading"], rngs["exploration"],
                             rngs["replay"], max_frames, virtual=False,
                             update=True)
        virtual_steps = 0
        if algo == PDS_DDPG:
            if not stats.truncated:
                trace_buffer.add(trace)
            virtual_steps = generate_virtual_episodes(
                trace_buffer, learner, video, link, replay, cfg, noise_std,
                cfg.virtual_episodes, rngs["segments"], rngs["exploration"],
                rngs["replay"], max_frames)
        learner.check_finite()

        total_violations += stats.violations
        total_frames += stats.steps
        log.append({
            "episode": episode,
            "real_steps": stats.steps,
            "virtual_steps": virtual_steps,
            "energy_j": stats.energy,
            "violations": stats.violations,
            "mean_action_mbps": stats.action_sum / stats.steps / MB,
            "noise_std_mbps": noise_std,
        })
        if eval_fn is not None and eval_every and episode % eval_every == 0:
            value = eval_fn(learner)
            eval_history.append((episode, value))
            if early_stop_fn is not None and early_stop_fn(episode, value):
                break
        if episode_hook is not None:
            episode_hook(episode, learner)

    return TrainResult(log=log, learner=learner, trace_buffer=trace_buffer,
                       eval_history=eval_history,
                       total_violations=total_violations,
                       total_frames=total_frames)


# ---------------------------------------------------------------------------
# Evaluation rollouts
# ---------------------------------------------------------------------------

@dataclass
class EvalEpisode:
    energy: float
    steps: int
    stalls: int
    actions: np.ndarray      # bit/s per frame
    alphas: np.ndarray       # serving-BS gain per frame
    energies: np.ndarray     # J per frame
    buffers: np.ndarray      # bits at the start of each frame
    stall_flags: np.ndarray


def rollout_policy(env: StreamingEnv, policy, mode: str = "idealized",
                   rng: Optional[np.random.Generator] = None,
                   max_frames: Optional[int] = None) -> EvalEpisode:
    """Zero-noise rollout of policy(env, state) -> rate; logs per frame."""
    state = env.reset()
    cap = max_frames or 10 * env.video.nominal_horizon
    actions, alphas, energies, buffers, stall_flags = [], [], [], [], []
    while True:
        a = policy(env, state)
        out = (env.step_fading(state, a, rng) if mode == "fading"
               else env.step_idealized(state, a))
        actions.append(a)
        alphas.append(state.alpha)
        energies.append(out.energy)
        buffers.append(state.buffer)
        stall_flags.append(out.stalled)
        state = out.next_state
        if out.done or len(actions) >= cap:
            break
    return EvalEpisode(energy=float(np.sum(energies)), steps=len(actions),
                       stalls=int(np.sum(stall_flags)),
                       actions=np.asarray(actions),
                       alphas=np.asarray(alphas),
                       energies=np.asarray(energies),
                       buffers=np.asarray(buffers),
                       stall_flags=np.asarray(stall_flags, dtype=bool))
