"""Constrained streaming MDP: buffer, playback and download dynamics.

One decision per frame: the average rate for that frame.  The environment
accounts transmit energy per slot (fading mode) or via the closed-form
expected power (idealized mode), advances the buffer/playback state, and
terminates once the whole file has been delivered.

Frame-1 convention: the first segment is pre-delivered outside the optimized
horizon (its energy is not counted), playback of segment n occupies frames
(n-1)*L_v+1 .. n*L_v, and the last delivery deadline falls on frame
(N_v-1)*L_v, so a stall-free episode needs at most that many decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mobility import ChannelTrace
from .power_math import (
    LinkParams,
    expected_power,
    optimal_slot_power,
    xi_from_rate_rayleigh,
)

MB = 1e6  # bits per Mb; internal unit is bits, Mb appears only at I/O

# A stall is a whole-bit event: comparing at half-bit resolution keeps an
# action that exactly meets the safety floor from stalling on float round-off.
STALL_RESOLUTION_BITS = 0.5


@dataclass(frozen=True)
class VideoSpec:
    """Video file layout and slot timing.

    rho_e (power-amplifier efficiency) and p_circuit are carried for
    completeness only; reported energy is transmit energy.
    """

    segment_sizes: tuple            # S_1..S_Nv, bits
    frames_per_segment: int = 10    # L_v
    dt: float = 1.0                 # frame duration, s
    tau: float = 1e-3               # slot duration, s
    rho_e: float = 1.0
    p_circuit: float = 0.0

    def __post_init__(self):
        if any(s <= 0 for s in self.segment_sizes):
            raise ValueError("segment sizes must be positive")
        n_slots = round(self.dt / self.tau)
        if abs(n_slots * self.tau - self.dt) > 1e-9 * self.dt:
            raise ValueError("dt must be an integer multiple of tau")

    @property
    def n_segments(self) -> int:
        return len(self.segment_sizes)

    @property
    def n_slots(self) -> int:
        return round(self.dt / self.tau)

    @property
    def total_bits(self) -> float:
        return float(sum(self.segment_sizes))

    @property
    def nominal_horizon(self) -> int:
        """Decision frames when no stall occurs: (N_v - 1) * L_v."""
        return (self.n_segments - 1) * self.frames_per_segment

    def segment_size(self, n: int) -> float:
        """S_n, with 0 for indices past the last segment."""
        return float(self.segment_sizes[n - 1]) if 1 <= n <= self.n_segments else 0.0


def draw_segment_sizes(n_segments: int, rng: np.random.Generator,
                       mean_rate: float = 8e6, std_rate: float = 0.3e6,
                       segment_duration: float = 10.0) -> tuple:
    """Per-episode segment sizes: Gaussian bitrate times segment duration,
    truncated at 3 sigma to keep sizes positive."""
    rates = rng.normal(mean_rate, std_rate, n_segments)
    rates = np.clip(rates, mean_rate - 3 * std_rate, mean_rate + 3 * std_rate)
    return tuple(float(r * segment_duration) for r in rates)


@dataclass(frozen=True)
class SessionState:
    """RL state at the start of a frame.

    alpha_history rows are channel vectors for frames t, t-1, .., t-N_t
    (most recent first).
    """

    buffer: float              # B_t, bits
    seg_size_playing: float    # S_{n_t}, bits
    playback_pos: int          # l_t in 0..L_v
    download_ratio: float      # eta_t
    alpha_history: np.ndarray  # (N_t + 1, N_b)
    seg_index: int             # n_t
    frame: int                 # t

    @property
    def alpha(self) -> float:
        """Serving-BS gain of the current frame."""
        return float(self.alpha_history[0, 0])

    def vector(self) -> np.ndarray:
        """Raw numeric layout [B, S, l, eta, alpha-history...]."""
        return np.concatenate((
            [self.buffer, self.seg_size_playing, float(self.playback_pos),
             self.download_ratio],
            self.alpha_history.ravel(),
        ))


@dataclass(frozen=True)
class PDSState:
    """Post-decision state: scalars advanced to t+1, channels still at t."""

    buffer: float
    seg_size_playing: float
    playback_pos: int
    download_ratio: float
    alpha_history: np.ndarray
    frame: int

    def vector(self) -> np.ndarray:
        return np.concatenate((
            [self.buffer, self.seg_size_playing, float(self.playback_pos),
             self.download_ratio],
            self.alpha_history.ravel(),
        ))


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: SessionState
    energy: float          # transmit energy this frame, J
    bits_delivered: float
    stalled: bool          # next frame's segment missing from the buffer
    done: bool             # whole file delivered


def f_pds_arrays(buffer, seg_size, playback_pos, action, next_seg_size,
                 sum_sizes, eta, dt, frames_per_segment):
    """Vectorized known-transition map for the first four state scalars.

    Returns (B', S', l', eta', stalled); S' is just next_seg_size passed
    through.  All inputs broadcast.
    """
    at_end = playback_pos == frames_per_segment
    b_next = buffer + dt * action - np.where(at_end, seg_size, 0.0)
    stalled = next_seg_size - b_next > STALL_RESOLUTION_BITS
    l_next = np.mod(playback_pos, frames_per_segment) + np.where(stalled, 0, 1)
    eta_next = eta + dt * action / sum_sizes
    return b_next, next_seg_size, l_next, eta_next, stalled


def min_safe_rate_arrays(buffer, seg_size, playback_pos, next_seg_size, dt,
                         frames_per_segment):
    """Vectorized least rate keeping the next frame's segment buffered."""
    at_end = playback_pos == frames_per_segment
    need = next_seg_size - buffer + np.where(at_end, seg_size, 0.0)
    return np.maximum(need, 0.0) / dt


class StreamingEnv:
    """One video session over a channel trace.

    A single instance serves one caller; independent instances may run in
    parallel.  Methods are pure in the passed state.
    """

    def __init__(self, trace: ChannelTrace, video: VideoSpec,
                 link: LinkParams, penalty_lambda: float = 0.0,
                 penalty_cap: float = 50.0, rate_bound: float | None = None):
        if trace.horizon < video.nominal_horizon:
            raise ValueError(
                f"trace horizon {trace.horizon} < required "
                f"{video.nominal_horizon} decision frames")
        self.trace = trace
        self.video = video
        self.link = link
        self.penalty_lambda = penalty_lambda
        self.penalty_cap = penalty_cap
        self.rate_bound = rate_bound
        self.history_len = trace.n_preroll

    # -- state helpers ----------------------------------------------------

    def _history(self, frame: int) -> np.ndarray:
        rows = [self.trace.alpha(frame - k) for k in range(self.history_len + 1)]
        return np.asarray(rows)

    def link_at(self, state: SessionState) -> LinkParams:
        return self.link.with_alpha(state.alpha)

    def next_seg_index(self, state: SessionState) -> int:
        """Segment playing in the next frame: advances when l_t = L_v."""
        step = 1 if state.playback_pos == self.video.frames_per_segment else 0
        return state.seg_index + step

    def next_seg_size(self, state: SessionState) -> float:
        return self.video.segment_size(self.next_seg_index(state))

    # -- spec operations ---------------------------------------------------

    def reset(self) -> SessionState:
        """Initial state: first segment pre-delivered and starting to play."""
        video = self.video
        s1 = video.segment_size(1)
        return SessionState(
            buffer=s1,
            seg_size_playing=s1,
            playback_pos=1,
            download_ratio=s1 / video.total_bits,
            alpha_history=self._history(1),
            seg_index=1,
            frame=1,
        )

    def min_safe_rate(self, state: SessionState) -> float:
        """Least average rate whose idealized delivery keeps the next frame's
        segment fully buffered."""
        return float(min_safe_rate_arrays(
            state.buffer, state.seg_size_playing, state.playback_pos,
            self.next_seg_size(state), self.video.dt,
            self.video.frames_per_segment))

    def f_pds(self, state: SessionState, action: float) -> PDSState:
        """Known part of the transition: scalars advanced, channels not."""
        b, s, l, eta, _ = f_pds_arrays(
            state.buffer, state.seg_size_playing, state.playback_pos,
            action, self.next_seg_size(state), self.video.total_bits,
            state.download_ratio, self.video.dt,
            self.video.frames_per_segment)
        return PDSState(buffer=float(b), seg_size_playing=float(s),
                        playback_pos=int(l), download_ratio=float(eta),
                        alpha_history=state.alpha_history, frame=state.frame)

    def f_pds_grad_action(self, state: SessionState) -> np.ndarray:
        """d(PDS vector)/d(action): only the buffer and download-ratio react;
        the playback branch gets subgradient 0."""
        grad = np.zeros(4 + state.alpha_history.size)
        grad[0] = self.video.dt
        grad[3] = self.video.dt / self.video.total_bits
        return grad

    def _advance(self, state: SessionState, action: float,
                 bits_delivered: float, energy: float) -> StepOutcome:
        """Shared bookkeeping for both step modes, using realized bits."""
        video = self.video
        next_idx = self.next_seg_index(state)
        next_size = video.segment_size(next_idx)

        at_end = state.playback_pos == video.frames_per_segment
        b_next = state.buffer + bits_delivered - (state.seg_size_playing if at_end else 0.0)
        stalled = next_size - b_next > STALL_RESOLUTION_BITS
        l_next = state.playback_pos % video.frames_per_segment + (0 if stalled else 1)
        eta_next = state.download_ratio + bits_delivered / video.total_bits
        done = eta_next >= 1.0 - 1e-9

        penalty = 0.0
        if self.penalty_lambda > 0.0:
            deficit_mb = max(next_size - b_next, 0.0) / MB
            penalty = min(self.penalty_lambda * deficit_mb, self.penalty_cap)

        next_state = SessionState(
            buffer=b_next,
            seg_size_playing=next_size,
            playback_pos=l_next,
            download_ratio=eta_next,
            alpha_history=self._history(state.frame + 1),
            seg_index=next_idx,
            frame=state.frame + 1,
        )
        return StepOutcome(reward=-energy - penalty, next_state=next_state,
                           energy=energy, bits_delivered=bits_delivered,
                           stalled=bool(stalled), done=bool(done))

    def _check_action(self, action: float):
        if action < 0:
            raise ValueError(f"action must be >= 0, got {action}")
        if self.rate_bound is not None and action > self.rate_bound:
            raise ValueError(f"action {action} above bound {self.rate_bound}")

    def step_idealized(self, state: SessionState, action: float) -> StepOutcome:
        """Deterministic surrogate: delivery and energy at their expectations.

        The first four fields of the next state equal f_pds(state, action) by
        construction.
        """
        self._check_action(action)
        video = self.video
        bits = video.dt * action
        energy = video.dt * expected_power(action, self.link_at(state))
        return self._advance(state, action, bits, energy)

    def step_fading(self, state: SessionState, action: float,
                    rng: np.random.Generator) -> StepOutcome:
        """Per-slot water-filling against sampled Rayleigh fading."""
        self._check_action(action)
        video = self.video
        if action == 0.0:
            return self._advance(state, action, 0.0, 0.0)
        link = self.link_at(state)
        xi = xi_from_rate_rayleigh(action, link)
        g = rng.exponential(1.0, video.n_slots)
        p = optimal_slot_power(link.alpha * g, xi, link)
        snr = link.alpha * g * p / link.sigma2
        rates = link.bandwidth * np.log2(1.0 + snr)
        energy = float(video.tau * p.sum())
        bits = float(video.tau * rates.sum())
        return self._advance(state, action, bits, energy)
