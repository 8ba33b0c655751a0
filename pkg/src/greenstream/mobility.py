"""User mobility and large-scale channel generation along a road.

Base stations sit on a line with fixed spacing; the user travels on a road
parallel to that line at a perpendicular offset.  Three mobility patterns are
supported: constant speed, random per-frame acceleration on one of several
roads, and constant speed with a random stop at a traffic light.  Per-frame
output is the vector of the n_bs_tracked strongest large-scale gains (linear,
sorted descending); per-slot Rayleigh fading is sampled separately.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

CONSTANT_SPEED = "constant_speed"
RANDOM_ACCEL = "random_accel_multiroad"
TRAFFIC_LIGHT = "traffic_light"
_KINDS = (CONSTANT_SPEED, RANDOM_ACCEL, TRAFFIC_LIGHT)


@dataclass(frozen=True)
class ScenarioConfig:
    """Road/mobility/path-loss description for one simulation scenario."""

    scenario_kind: str = CONSTANT_SPEED
    bs_spacing: float = 500.0                 # m between adjacent BSs
    road_offsets: tuple = (100.0,)            # perpendicular distances, m
    speed_init_range: tuple = (15.0, 15.0)    # m/s, uniform draw at episode start
    speed_clamp: tuple = (10.0, 20.0)         # m/s, random-accel scenario only
    accel_std: float = 0.3                    # m/s^2 per frame
    stop_duration_range: tuple = (0.0, 60.0)  # s, traffic-light scenario
    light_offset: float | None = None         # m ahead of start; None = mid-route
    pathloss_a: float = 35.3                  # dB at 1 m
    pathloss_b: float = 37.6                  # dB per decade of distance
    n_bs_tracked: int = 2                     # N_b strongest gains kept
    history_len: int = 2                      # N_t past channel vectors in state
    dt: float = 1.0                           # frame duration, s

    def __post_init__(self):
        if self.scenario_kind not in _KINDS:
            raise ValueError(f"unknown scenario_kind {self.scenario_kind!r}")
        if self.bs_spacing <= 0:
            raise ValueError("bs_spacing must be > 0")
        if min(self.road_offsets) <= 0:
            raise ValueError("road offsets must be > 0 (guards d = 0)")
        if min(self.speed_init_range) < 0:
            raise ValueError("speeds must be >= 0")
        if self.n_bs_tracked < 1 or self.history_len < 0:
            raise ValueError("need n_bs_tracked >= 1 and history_len >= 0")


@dataclass
class MobilityState:
    """Kinematic state advanced frame by frame."""

    position: float
    velocity: float
    stop_remaining: float = 0.0   # s left standing at the light
    stop_done: bool = False       # the one traffic-light stop was consumed


@dataclass
class ChannelTrace:
    """Per-frame large-scale gain vectors plus kinematics.

    Row i holds frame t = i + 1 - n_preroll, so rows 0..n_preroll-1 are the
    pre-roll history for the initial state and row n_preroll is frame 1.
    gains[i] is sorted descending; the serving BS is column 0.
    """

    gains: np.ndarray          # (n_preroll + horizon, n_bs_tracked), linear
    positions: np.ndarray      # (n_preroll + horizon,), m
    velocities: np.ndarray     # (n_preroll + horizon,), m/s
    n_preroll: int
    road_offset: float = field(default=100.0)

    def alpha(self, frame: int) -> np.ndarray:
        """Gain vector of a frame, frame 1 being the first decision frame."""
        idx = frame - 1 + self.n_preroll
        if idx < 0 or idx >= len(self.gains):
            raise IndexError(f"frame {frame} outside trace")
        return self.gains[idx]

    @property
    def horizon(self) -> int:
        return len(self.gains) - self.n_preroll


def step_mobility(state: MobilityState, scenario: ScenarioConfig,
                  rng: np.random.Generator,
                  light_position: float | None = None) -> MobilityState:
    """Advance position/velocity by one frame under the scenario's law."""
    dt = scenario.dt
    kind = scenario.scenario_kind

    if kind == CONSTANT_SPEED:
        return replace(state, position=state.position + state.velocity * dt)

    if kind == RANDOM_ACCEL:
        accel = rng.normal(0.0, scenario.accel_std)
        lo, hi = scenario.speed_clamp
        v = float(np.clip(state.velocity + accel * dt, lo, hi))
        return replace(state, velocity=v, position=state.position + v * dt)

    # traffic light: stand still while the stop clock runs, trigger the stop
    # once when the light would be crossed
    if state.stop_remaining > 0.0:
        return replace(state, stop_remaining=max(state.stop_remaining - dt, 0.0))
    new_pos = state.position + state.velocity * dt
    if (not state.stop_done and light_position is not None
            and state.position < light_position <= new_pos):
        lo, hi = scenario.stop_duration_range
        duration = rng.uniform(lo, hi)
        return MobilityState(position=light_position, velocity=state.velocity,
                             stop_remaining=duration, stop_done=True)
    return replace(state, position=new_pos)


def large_scale_gains(position: float, scenario: ScenarioConfig,
                      road_offset: float | None = None) -> np.ndarray:
    """n_bs_tracked largest path-loss gains at a road position, descending.

    Path loss in dB is pathloss_a + pathloss_b*log10(d) with d the true
    user-to-BS distance including the perpendicular road offset.
    """
    offset = scenario.road_offsets[0] if road_offset is None else road_offset
    spacing = scenario.bs_spacing
    k0 = round(position / spacing)
    ks = np.arange(k0 - scenario.n_bs_tracked - 2, k0 + scenario.n_bs_tracked + 3)
    d = np.hypot(position - ks * spacing, offset)
    loss_db = scenario.pathloss_a + scenario.pathloss_b * np.log10(d)
    gains = 10.0 ** (-loss_db / 10.0)
    gains.sort()
    return gains[::-1][:scenario.n_bs_tracked].copy()


def sample_small_scale(rng: np.random.Generator, n_slots: int) -> np.ndarray:
    """i.i.d. unit-mean exponential power gains, one per slot."""
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    return rng.exponential(1.0, n_slots)


def generate_trace(scenario: ScenarioConfig, horizon: int,
                   rng: np.random.Generator) -> ChannelTrace:
    """Roll mobility forward for `horizon` frames plus history_len pre-roll.

    The episode start position is uniform over one BS-spacing period
    (uniform along the route for the traffic-light scenario); pre-roll frames
    are produced by running the initial velocity backwards so the first state
    has a full channel history.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_pre = scenario.history_len
    offset = float(rng.choice(np.asarray(scenario.road_offsets)))
    v0 = float(rng.uniform(*scenario.speed_init_range))
    start = float(rng.uniform(0.0, scenario.bs_spacing))

    light_position = None
    if scenario.scenario_kind == TRAFFIC_LIGHT:
        route_len = max(v0 * horizon * scenario.dt, scenario.bs_spacing)
        start = float(rng.uniform(0.0, route_len))
        light_position = (start + scenario.light_offset
                          if scenario.light_offset is not None
                          else start + route_len / 2.0)

    n_total = n_pre + horizon
    positions = np.empty(n_total)
    velocities = np.empty(n_total)
    gains = np.empty((n_total, scenario.n_bs_tracked))

    # pre-roll backwards at the initial velocity: frames 1-n_pre .. 0
    for i in range(n_pre):
        positions[i] = start - (n_pre - i) * v0 * scenario.dt
        velocities[i] = v0

    state = MobilityState(position=start, velocity=v0)
    for i in range(n_pre, n_total):
        positions[i] = state.position
        velocities[i] = state.velocity
        state = step_mobility(state, scenario, rng, light_position)

    for i in range(n_total):
        gains[i] = large_scale_gains(positions[i], scenario, offset)

    return ChannelTrace(gains=gains, positions=positions,
                        velocities=velocities, n_preroll=n_pre,
                        road_offset=offset)


def save_trace_csv(trace: ChannelTrace, path) -> None:
    """Flat CSV: frame, position, velocity, alpha_1..alpha_Nb."""
    n_b = trace.gains.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "position_m", "velocity_mps"]
                        + [f"alpha_{i + 1}" for i in range(n_b)])
        for i in range(len(trace.gains)):
            frame = i + 1 - trace.n_preroll
            writer.writerow([frame, repr(float(trace.positions[i])),
                             repr(float(trace.velocities[i]))]
                            + [repr(float(g)) for g in trace.gains[i]])


def load_trace_csv(path) -> ChannelTrace:
    """Inverse of save_trace_csv; pre-roll inferred from negative frames."""
    frames, positions, velocities, gains = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_b = len(header) - 3
        for row in reader:
            frames.append(int(row[0]))
            positions.append(float(row[1]))
            velocities.append(float(row[2]))
            gains.append([float(x) for x in row[3:3 + n_b]])
    n_preroll = sum(1 for f in frames if f < 1)
    return ChannelTrace(gains=np.asarray(gains),
                        positions=np.asarray(positions),
                        velocities=np.asarray(velocities),
                        n_preroll=n_preroll)
