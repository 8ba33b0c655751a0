"""Reference policies: non-predictive constant rate and the offline optimum.

The non-predictive policy downloads the next segment at a constant rate over
the current segment's playback, using no future channel knowledge.  The
offline optimum minimizes total expected transmit energy over a whole trace,
with perfect knowledge of future large-scale gains, subject to the cumulative
segment-deadline constraints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import SessionState, VideoSpec
from .mobility import ChannelTrace
from .power_math import (
    LinkParams,
    max_average_rate_rayleigh,
    pbar_grad_rayleigh,
    pbar_rayleigh,
)


class InfeasibleDeadlineError(RuntimeError):
    """Deadline structure not satisfiable even at the p_max rate ceiling."""


@dataclass
class RatePlan:
    """Average rate per frame (bit/s) for frames 1..T."""

    rates: np.ndarray

    def __len__(self):
        return len(self.rates)

    def policy(self):
        """Adapter for rollout_policy: index the plan by the state's frame."""
        def policy(env, state: SessionState) -> float:
            idx = state.frame - 1
            return float(self.rates[idx]) if idx < len(self.rates) else 0.0
        return policy


def non_predictive_rate(state: SessionState, video: VideoSpec) -> float:
    """Constant rate that downloads the segment after the one now playing
    over this segment's playback window; zero once nothing is left."""
    next_size = video.segment_size(state.seg_index + 1)
    return next_size / (video.frames_per_segment * video.dt)


def non_predictive_policy(env, state: SessionState) -> float:
    return non_predictive_rate(state, env.video)


def deadline_requirements(video: VideoSpec):
    """(frames, cumulative bits) for the per-segment deadlines: everything
    through segment m+1 must be delivered by the end of frame m * L_v."""
    lv = video.frames_per_segment
    frames = np.arange(1, video.n_segments) * lv
    need = np.cumsum([video.segment_size(n)
                      for n in range(2, video.n_segments + 1)])
    return frames, need


def plan_is_feasible(plan: RatePlan, video: VideoSpec, tol_bits=1.0) -> bool:
    frames, need = deadline_requirements(video)
    cum = video.dt * np.cumsum(plan.rates)
    return bool(np.all(plan.rates >= -1e-9)
                and np.all(cum[frames - 1] >= need - tol_bits))


def plan_energy(plan: RatePlan, alphas: np.ndarray, video: VideoSpec,
                link: LinkParams) -> float:
    """Idealized total transmit energy of a plan over per-frame gains."""
    return float(video.dt * np.sum(
        pbar_rayleigh(alphas[:len(plan)], plan.rates, link.sigma2,
                      link.bandwidth)))


def project_deadline_polyhedron(rates: np.ndarray, video: VideoSpec,
                                max_sweeps: int = 400,
                                tol: float = 1e-9) -> np.ndarray:
    """Euclidean projection onto {r >= 0, deadline prefix sums met}.

    Dykstra's alternating projections over the orthant and one half-space
    per deadline; each half-space {dt * sum(r[:T_m]) >= D_m} has a
    closed-form projection.
    """
    frames, need = deadline_requirements(video)
    dt = video.dt
    x = rates.astype(float).copy()
    n_sets = len(frames) + 1
    corrections = [np.zeros_like(x) for _ in range(n_sets)]
    scale = float(need[-1] / dt)

    for _ in range(max_sweeps):
        x_prev = x.copy()
        for s in range(n_sets):
            y = x + corrections[s]
            if s == 0:
                x = np.maximum(y, 0.0)
            else:
                t_m = frames[s - 1]
                gap = need[s - 1] / dt - y[:t_m].sum()
                x = y.copy()
                if gap > 0:
                    x[:t_m] += gap / t_m
            corrections[s] = y - x
        cum = dt * np.cumsum(x)
        ok = (np.all(x >= -tol * scale)
              and np.all(cum[frames - 1] >= need - tol * need[-1]))
        if ok and np.max(np.abs(x - x_prev)) <= tol * scale:
            break
    return np.maximum(x, 0.0)


def check_pbar_convexity(link: LinkParams, alphas, n_grid: int = 200) -> bool:
    """Positive second differences of pbar in the rate, over a grid."""
    rates = np.linspace(1e4, 100e6, n_grid)
    for alpha in np.atleast_1d(alphas):
        p = pbar_rayleigh(alpha, rates, link.sigma2, link.bandwidth)
        if np.any(np.diff(p, 2) < -1e-12 * p.max()):
            return False
    return True


def _dp_forward(alphas, video, link, grids):
    """Forward DP over (frame, delivered-units) with per-frame rate grids.

    All grids share a common unit so cumulative delivery is integral in it.
    Returns (best energy, per-frame chosen rates).
    """
    t_total = len(alphas)
    frames, need = deadline_requirements(video)
    dt = video.dt
    n_levels = len(grids[0])
    unit = grids[0][1] - grids[0][0] if n_levels > 1 else 1.0
    offsets = np.array([g[0] for g in grids])
    max_units = (n_levels - 1) * t_total

    energies = [dt * pbar_rayleigh(alphas[t], grids[t], link.sigma2,
                                   link.bandwidth) for t in range(t_total)]
    # value[u] = min energy to reach 'u' delivered units after frame t
    value = np.full(max_units + 1, np.inf)
    value[0] = 0.0
    choice = np.full((t_total, max_units + 1), -1, dtype=int)
    deadline_at = {int(f): float(d) for f, d in zip(frames, need)}

    for t in range(t_total):
        new_value = np.full(max_units + 1, np.inf)
        for lev in range(n_levels):
            cand = value[:max_units + 1 - lev] + energies[t][lev]
            sl = new_value[lev:]
            better = cand < sl
            sl[better] = cand[better]
            choice[t, lev:][better] = lev
        # enforce the deadline falling at the end of this frame
        dl = deadline_at.get(t + 1)
        if dl is not None:
            base_bits = dt * offsets[:t + 1].sum()
            units = np.arange(max_units + 1)
            bits = base_bits + units * dt * unit
            new_value[bits < dl - 1e-6] = np.inf
        value = new_value

    u_best = int(np.argmin(value))
    if not np.isfinite(value[u_best]):
        raise InfeasibleDeadlineError("DP found no feasible plan")
    # reconstruct
    levels = np.empty(t_total, dtype=int)
    u = u_best
    for t in range(t_total - 1, -1, -1):
        lev = choice[t, u]
        levels[t] = lev
        u -= lev
    rates = np.array([grids[t][levels[t]] for t in range(t_total)])
    return float(value[u_best]), rates


def solve_offline_dp_grid(alphas, video, link, n_levels=21, refinements=3):
    """Rate-grid DP with successive refinement around the incumbent.

    Starts from a common [0, H] grid, doubling H while any chosen rate (or
    feasibility itself) binds at the ceiling, then narrows a fixed-width
    window around the incumbent plan; the width shrinks by a factor of
    (n_levels - 1)/5 per refinement.
    """
    t_total = len(alphas)
    frames, need = deadline_requirements(video)
    hi_cap = max(4.0 * float(np.max(need / (video.dt * frames))), 40e6)
    rates = None
    for _ in range(12):
        grids = [np.linspace(0.0, hi_cap, n_levels)] * t_total
        try:
            _, rates = _dp_forward(alphas, video, link, grids)
        except InfeasibleDeadlineError:
            hi_cap *= 2.0
            continue
        unit = hi_cap / (n_levels - 1)
        if rates.max() < hi_cap - 0.5 * unit:
            break
        hi_cap *= 2.0
    if rates is None:
        raise InfeasibleDeadlineError("DP grid never became feasible")

    width = 5.0 * hi_cap / (n_levels - 1)
    for _ in range(refinements):
        lo = np.maximum(rates - width / 2.0, 0.0)
        grids = [np.linspace(lo[t], lo[t] + width, n_levels)
                 for t in range(t_total)]
        _, rates = _dp_forward(alphas, video, link, grids)
        width *= 5.0 / (n_levels - 1)
    return RatePlan(rates=rates)


def solve_offline_optimal(trace: ChannelTrace, video: VideoSpec,
                          link: LinkParams, max_iter: int = 1200,
                          tol: float = 1e-9) -> RatePlan:
    """Minimum-energy rate plan under perfect large-scale gain knowledge.

    Projected gradient descent with backtracking on the per-frame rate
    vector; the feasible set is the cumulative-deadline polyhedron.  Interim
    projections run with a capped sweep budget; the returned plan is cleaned
    by a high-precision projection.  pbar's convexity in the rate is verified
    numerically before trusting the solver; on failure it falls back to the
    grid DP.
    """
    t_total = video.nominal_horizon
    if trace.horizon < t_total:
        raise ValueError("trace shorter than the plan horizon")
    alphas = np.array([trace.alpha(t)[0] for t in range(1, t_total + 1)])
    frames, need = deadline_requirements(video)

    # feasibility under the p_max ceiling, per deadline
    ceilings = max_average_rate_rayleigh(alphas, link.sigma2, link.bandwidth,
                                         link.p_max)
    cum_ceiling = video.dt * np.cumsum(ceilings)
    if np.any(cum_ceiling[frames - 1] < need):
        bad = int(np.argmax(cum_ceiling[frames - 1] < need))
        raise InfeasibleDeadlineError(
            f"deadline {bad + 1} needs {need[bad]:.3e} bits by frame "
            f"{frames[bad]}, ceiling allows {cum_ceiling[frames[bad] - 1]:.3e}")

    if not check_pbar_convexity(link, [alphas.min(), alphas.max()]):
        return solve_offline_dp_grid(alphas, video, link)

    # start from the non-predictive-style plan: always feasible
    rates = np.repeat([video.segment_size(n) / (video.frames_per_segment
                                                * video.dt)
                       for n in range(2, video.n_segments + 1)],
                      video.frames_per_segment).astype(float)

    def objective(r):
        return float(video.dt * np.sum(
            pbar_rayleigh(alphas, r, link.sigma2, link.bandwidth)))

    f_cur = objective(rates)
    step = 10e6 / max(float(np.max(
        video.dt * pbar_grad_rayleigh(alphas, np.maximum(rates, 1e3),
                                      link.sigma2, link.bandwidth))), 1e-30)
    stall_count = 0
    for _ in range(max_iter):
        grad = video.dt * pbar_grad_rayleigh(
            alphas, np.maximum(rates, 1e3), link.sigma2, link.bandwidth)
        for _ in range(30):
            cand = project_deadline_polyhedron(rates - step * grad, video,
                                               max_sweeps=60)
            f_cand = objective(cand)
            if f_cand <= f_cur:
                break
            step *= 0.5
        rates, improved = cand, f_cur - f_cand
        f_cur = f_cand
        step *= 1.3
        stall_count = stall_count + 1 if improved <= tol * abs(f_cur) else 0
        if stall_count >= 5:
            break

    rates = project_deadline_polyhedron(rates, video, max_sweeps=1000,
                                        tol=1e-12)
    plan = RatePlan(rates=rates)
    if not plan_is_feasible(plan, video, tol_bits=max(1.0, 1e-9 * need[-1])):
        raise RuntimeError("projected-gradient solution infeasible")
    return plan


def save_rate_plan_csv(plan: RatePlan, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "rate_bps"])
        for t, r in enumerate(plan.rates, start=1):
            writer.writerow([t, repr(float(r))])


def load_rate_plan_csv(path) -> RatePlan:
    rates = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for _, r in reader:
            rates.append(float(r))
    return RatePlan(rates=np.asarray(rates))
