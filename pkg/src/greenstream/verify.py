"""Numerical verification suites: each check runs an independent oracle
(quadrature, Monte Carlo, finite differences, brute force, exhaustive DP)
against the closed-form or learned-system implementation and reports the
observed error against its tolerance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import (
    AgentConfig,
    PDSDDPGLearner,
    StateNormalizer,
    VideoModel,
    critic_q_pds,
    rollout_policy,
)
from .baselines import (
    RatePlan,
    deadline_requirements,
    non_predictive_policy,
    plan_energy,
    plan_is_feasible,
    solve_offline_dp_grid,
    solve_offline_optimal,
)
from .env import StreamingEnv, VideoSpec, draw_segment_sizes
from .mobility import ScenarioConfig, generate_trace
from .power_math import (
    LinkParams,
    average_rate_quadrature,
    exp_integral_e1,
    exp_integral_e1_inv,
    expected_power,
    expected_power_grad,
    expected_power_quadrature,
    optimal_slot_power,
    pbar_grad_rayleigh,
    pbar_rayleigh,
    xi_from_rate_general,
    xi_from_rate_rayleigh,
)
from .tinynet import LINEAR, RELU, SCALED_TANH, backward, forward, init_params

SIGMA2 = 10.0 ** (-95.0 / 10.0) / 1000.0
PMAX = 10.0 ** (46.0 / 10.0) / 1000.0
W_HZ = 20e6
LINK = LinkParams(alpha=2.84e-13, sigma2=SIGMA2, bandwidth=W_HZ, p_max=PMAX)
LINK_BIG = LinkParams(alpha=2.84e-13, sigma2=SIGMA2, bandwidth=W_HZ, p_max=1e9)


@dataclass
class CheckResult:
    name: str
    tolerance: str
    observed: str
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: observed {self.observed} "
                f"(tolerance {self.tolerance})")


# ---------------------------------------------------------------------------
# powermath suite
# ---------------------------------------------------------------------------

def check_e1_roundtrip() -> CheckResult:
    xs = np.logspace(-8, np.log10(50.0), 120)
    back = exp_integral_e1_inv(exp_integral_e1(xs))
    err = float(np.max(np.abs(back / xs - 1.0)))
    return CheckResult("E1/E1^-1 roundtrip max rel err", "1e-10",
                       f"{err:.3e}", err <= 1e-10)


def check_water_level_closed_form() -> CheckResult:
    worst = 0.0
    for alpha in (1e-13, 2.84e-13, 2e-12):
        link = LINK_BIG.with_alpha(alpha)
        for rate in (1e6, 8e6, 40e6, 79e6):
            xi = xi_from_rate_rayleigh(rate, link)
            r_back = average_rate_quadrature(xi, link)
            worst = max(worst, abs(r_back / rate - 1.0))
    # cross-check the general bisection path at one point
    link = LinkParams(alpha=1e-13, sigma2=SIGMA2, bandwidth=W_HZ, p_max=1e6)
    xi_gen = xi_from_rate_general(8e6, link)
    xi_ray = xi_from_rate_rayleigh(8e6, link)
    worst = max(worst, abs(xi_gen.xi / xi_ray.xi - 1.0))
    return CheckResult("rate fixed point, closed-form water level vs "
                       "quadrature", "1e-6", f"{worst:.3e}", worst <= 1e-6)


def check_pbar_closed_form_vs_quadrature() -> CheckResult:
    worst = 0.0
    for alpha in np.logspace(-14, -11.5, 4):
        link = LINK_BIG.with_alpha(float(alpha))
        for rate in (0.5e6, 8e6, 30e6, 79e6):
            xi = xi_from_rate_rayleigh(float(rate), link)
            p_quad = expected_power_quadrature(xi, link, epsrel=1e-13)
            p_closed = expected_power(float(rate), link)
            worst = max(worst, abs(p_closed / p_quad - 1.0))
    return CheckResult("expected power closed form vs quadrature", "1e-8",
                       f"{worst:.3e}", worst <= 1e-8)


def check_policy_optimality(n_pairs=100, n_random=1000) -> CheckResult:
    """Water-filling beats random feasible slot-power curves of equal
    average rate on a discretized fading grid."""
    rng = np.random.default_rng(17)
    g_grid = np.linspace(1e-4, 12.0, 320)
    weights = np.exp(-g_grid)
    weights /= weights.sum()
    failures = 0
    for _ in range(n_pairs):
        alpha = 10.0 ** rng.uniform(-13.5, -12.0)
        rate = 10.0 ** rng.uniform(5.7, 7.2)
        link = LINK.with_alpha(alpha)
        gains = alpha * g_grid
        lo, hi = 1e-9, 1e4
        for _ in range(80):
            mid = np.sqrt(lo * hi)
            p_mid = optimal_slot_power(gains, mid, link)
            r_mid = float(weights @ (W_HZ * np.log2(
                1.0 + gains * p_mid / SIGMA2)))
            if r_mid < rate:
                lo = mid
            else:
                hi = mid
        p_opt = optimal_slot_power(gains, np.sqrt(lo * hi), link)
        e_opt = float(weights @ p_opt)
        shapes = rng.uniform(0.0, 1.0, size=(n_random, g_grid.size)) ** 2
        shapes += 1e-6
        c_lo = np.full(n_random, 1e-12)
        c_hi = np.full(n_random, 1e9)
        for _ in range(60):
            c_mid = np.sqrt(c_lo * c_hi)
            p_rand = np.minimum(c_mid[:, None] * shapes, link.p_max)
            r_rand = (W_HZ * np.log2(1.0 + gains[None, :] * p_rand
                                     / SIGMA2)) @ weights
            low = r_rand < rate
            c_lo = np.where(low, c_mid, c_lo)
            c_hi = np.where(low, c_hi, c_mid)
        p_rand = np.minimum(np.sqrt(c_lo * c_hi)[:, None] * shapes,
                            link.p_max)
        failures += int(np.sum(p_rand @ weights < e_opt * (1.0 - 1e-9)))
    return CheckResult(
        f"water-filling vs {n_random} random equal-rate policies x "
        f"{n_pairs} pairs", "0 cheaper random policies",
        f"{failures}", failures == 0)


def suite_powermath() -> list:
    return [check_e1_roundtrip(), check_water_level_closed_form(),
            check_pbar_closed_form_vs_quadrature(), check_policy_optimality()]


# ---------------------------------------------------------------------------
# env suite
# ---------------------------------------------------------------------------

def _make_env(seed=0, n_segments=15, penalty=0.0):
    rng = np.random.default_rng(seed)
    video = VideoSpec(segment_sizes=draw_segment_sizes(n_segments, rng))
    trace = generate_trace(ScenarioConfig(), video.nominal_horizon + 20, rng)
    return StreamingEnv(trace, video, LINK, penalty_lambda=penalty)


def check_fpds_cross(n_cases=10_000) -> CheckResult:
    env = _make_env(seed=1)
    rng = np.random.default_rng(2)
    s0 = env.reset()
    mismatches = 0
    from dataclasses import replace
    for _ in range(n_cases):
        probe = replace(
            s0,
            buffer=float(rng.uniform(0, 3e8)),
            seg_size_playing=env.video.segment_size(int(rng.integers(1, 16))),
            playback_pos=int(rng.integers(0, 11)),
            download_ratio=float(rng.uniform(0, 1)),
            seg_index=int(rng.integers(1, 16)))
        a = float(rng.uniform(0, 3e7))
        pds = env.f_pds(probe, a)
        nxt = env.step_idealized(probe, a).next_state
        same = (nxt.buffer == pds.buffer
                and nxt.seg_size_playing == pds.seg_size_playing
                and nxt.playback_pos == pds.playback_pos
                and nxt.download_ratio == pds.download_ratio)
        mismatches += int(not same)
    return CheckResult(f"f_pds vs idealized step on {n_cases} random states",
                       "0 mismatches", f"{mismatches}", mismatches == 0)


def check_buffer_accounting() -> CheckResult:
    env = _make_env(seed=3)
    rng = np.random.default_rng(4)
    worst = 0.0
    for mode in ("idealized", "fading"):
        state = env.reset()
        for _ in range(80):
            a = float(rng.uniform(0, 15e6))
            out = (env.step_idealized(state, a) if mode == "idealized"
                   else env.step_fading(state, a, rng))
            removal = (state.seg_size_playing
                       if state.playback_pos == env.video.frames_per_segment
                       else 0.0)
            worst = max(worst, abs(out.next_state.buffer
                                   - (state.buffer + out.bits_delivered
                                      - removal)))
            state = out.next_state
            if out.done:
                break
    return CheckResult("buffer accounting drift, both step modes",
                       "1e-3 bits", f"{worst:.3e} bits", worst <= 1e-3)


def check_qos_equivalence() -> CheckResult:
    worst_deficit = -np.inf
    for seed in range(4):
        env = _make_env(seed=10 + seed)
        video = env.video
        state = env.reset()
        delivered = []
        while True:
            a = env.min_safe_rate(state) + 1e6
            out = env.step_idealized(state, a)
            if out.stalled:
                worst_deficit = np.inf
            delivered.append(out.bits_delivered)
            state = out.next_state
            if out.done:
                break
        cum = np.cumsum(delivered)
        frames, need = deadline_requirements(video)
        for frame, req in zip(frames, need):
            got = cum[min(frame, len(cum)) - 1]
            worst_deficit = max(worst_deficit, req - got)
    return CheckResult("cumulative deadline deficit under per-frame safety",
                       "<= 1 bit", f"{worst_deficit:.3e} bits",
                       worst_deficit <= 1.0)


def check_min_safe_enforcement() -> CheckResult:
    violations = 0
    for seed in range(6):
        env = _make_env(seed=20 + seed)
        state = env.reset()
        while True:
            out = env.step_idealized(state, env.min_safe_rate(state))
            violations += int(out.stalled)
            state = out.next_state
            if out.done:
                break
    return CheckResult("stalls under exact min-safe-rate pacing",
                       "0 frames", f"{violations}", violations == 0)


def suite_env() -> list:
    return [check_fpds_cross(), check_buffer_accounting(),
            check_qos_equivalence(), check_min_safe_enforcement()]


# ---------------------------------------------------------------------------
# gradients suite
# ---------------------------------------------------------------------------

def check_network_gradients() -> CheckResult:
    rng = np.random.default_rng(30)
    worst = 0.0
    for acts in ((RELU, RELU, LINEAR), (RELU, RELU, SCALED_TANH)):
        net = init_params([6, 12, 12, 1], list(acts), rng)
        for w in net.weights:
            w[:] = rng.normal(0.0, 0.5, w.shape)
        x = rng.normal(size=(4, 6))
        _, cache = forward(net, x)
        (dw, db), _ = backward(net, cache, np.ones((4, 1)))
        dw = [d.copy() for d in dw]
        h = 1e-6
        for layer in range(len(net.weights)):
            w = net.weights[layer]
            probes = {(0, 0), (w.shape[0] - 1, w.shape[1] - 1),
                      (int(rng.integers(w.shape[0])),
                       int(rng.integers(w.shape[1])))}
            for idx in probes:
                orig = w[idx]
                w[idx] = orig + h
                hi = float(forward(net, x)[0].sum())
                w[idx] = orig - h
                lo = float(forward(net, x)[0].sum())
                w[idx] = orig
                fd = (hi - lo) / (2 * h)
                denom = max(abs(dw[layer][idx]), 1e-6)
                worst = max(worst, abs(dw[layer][idx] - fd) / denom)
    return CheckResult("network parameter gradients vs central differences",
                       "1e-4 rel", f"{worst:.3e}", worst <= 1e-4)


def check_pbar_grad() -> CheckResult:
    worst = 0.0
    for alpha in np.logspace(-14, -11.5, 4):
        link = LINK.with_alpha(float(alpha))
        for rate in (1e6, 8e6, 30e6, 70e6):
            h = rate * 1e-6
            fd = (expected_power(rate + h, link)
                  - expected_power(rate - h, link)) / (2 * h)
            an = expected_power_grad(rate, link)
            worst = max(worst, abs(an - fd) / abs(an))
    return CheckResult("expected-power derivative vs central differences",
                       "1e-6 rel", f"{worst:.3e}", worst <= 1e-6)


def _pds_learner_env(seed=31):
    rng = np.random.default_rng(seed)
    video_model = VideoModel(n_segments=4)
    spec = video_model.draw_spec(rng)
    trace = generate_trace(ScenarioConfig(), spec.nominal_horizon + 10, rng)
    env = StreamingEnv(trace, spec, LINK)
    cfg = AgentConfig(batch=16, replay_capacity=100, hidden_pds=16)
    norm = StateNormalizer(SIGMA2, spec.frames_per_segment)
    learner = PDSDDPGLearner(cfg, 10, norm, LINK, video_model, rng)
    for w in learner.v_net.weights:
        w[:] = rng.normal(0.0, 0.4, w.shape)
    for w in learner.actor.weights:
        w[:] = rng.normal(0.0, 0.4, w.shape)
    learner.actor.biases[-1][:] = 0.0  # desaturate for a generic test point
    return env, learner, norm


def check_pds_critic_action_grad() -> CheckResult:
    env, learner, norm = _pds_learner_env()
    s = env.reset()
    worst = 0.0
    for a in (2e6, 8e6, 25e6):
        h = a * 1e-5
        fd = (critic_q_pds(learner.v_net, env, norm, s, a + h)
              - critic_q_pds(learner.v_net, env, norm, s, a - h)) / (2 * h)
        link = env.link_at(s)
        pds = env.f_pds(s, a)
        _, cache = forward(learner.v_net, norm(pds.vector()))
        _, gv = backward(learner.v_net, cache, np.array([1.0]))
        an = (-env.video.dt * pbar_grad_rayleigh(link.alpha, a, SIGMA2, W_HZ)
              + gv[0] * env.video.dt / 1e7
              + gv[3] * env.video.dt / env.video.total_bits)
        worst = max(worst, abs(an - fd) / max(abs(an), 1e-12))
    return CheckResult("PDS critic d Q / d a vs central differences",
                       "1e-4 rel", f"{worst:.3e}", worst <= 1e-4)


def check_pds_actor_composite_grad() -> CheckResult:
    """d/d theta of Q(s, mu_s(s, 0)) through power map, PDS map and V."""
    env, learner, norm = _pds_learner_env(seed=32)
    s = env.reset()
    s_norm = norm(s.vector())
    floor = env.min_safe_rate(s)

    def q_of_actor():
        mu, _ = forward(learner.actor, s_norm)
        a = max(float(mu[0]) * 1e6, floor)
        return critic_q_pds(learner.v_net, env, norm, s, a)

    # analytic: dQ/da * dmu/dtheta (floor inactive at this state by design)
    mu, cache_mu = forward(learner.actor, s_norm)
    a0 = float(mu[0]) * 1e6
    assert a0 > floor, "test state must leave the safety floor inactive"
    link = env.link_at(s)
    pds = env.f_pds(s, a0)
    _, cache_v = forward(learner.v_net, norm(pds.vector()))
    _, gv = backward(learner.v_net, cache_v, np.array([1.0]))
    dq_da = (-env.video.dt * pbar_grad_rayleigh(link.alpha, a0, SIGMA2, W_HZ)
             + gv[0] * env.video.dt / 1e7
             + gv[3] * env.video.dt / env.video.total_bits) * 1e6
    (dw, _), _ = backward(learner.actor, cache_mu, np.array([dq_da]))
    dw = [d.copy() for d in dw]

    rng = np.random.default_rng(33)
    worst = 0.0
    h = 1e-6
    for layer in range(len(learner.actor.weights)):
        w = learner.actor.weights[layer]
        for _ in range(4):
            idx = (int(rng.integers(w.shape[0])), int(rng.integers(w.shape[1])))
            orig = w[idx]
            w[idx] = orig + h
            hi = q_of_actor()
            w[idx] = orig - h
            lo = q_of_actor()
            w[idx] = orig
            fd = (hi - lo) / (2 * h)
            denom = max(abs(dw[layer][idx]), 1e-8)
            worst = max(worst, abs(dw[layer][idx] - fd) / denom)
    return CheckResult("PDS actor composite gradient vs central differences",
                       "1e-4 rel", f"{worst:.3e}", worst <= 1e-4)


def suite_gradients() -> list:
    return [check_network_gradients(), check_pbar_grad(),
            check_pds_critic_action_grad(), check_pds_actor_composite_grad()]


# ---------------------------------------------------------------------------
# prop2 suite (law-of-large-numbers concentration)
# ---------------------------------------------------------------------------

def prop2_concentration(n_trials=1000, rate=40e6, seed=40):
    """Per-frame energy/bits deviation from their expectations across slot
    counts; returns {n_slots: (mean_dev_energy, mean_dev_bits,
    frac_energy_within_5pct, frac_bits_within_5pct)}."""
    rng = np.random.default_rng(seed)
    link = LINK
    xi = xi_from_rate_rayleigh(rate, link)
    p_exp = expected_power(rate, link)
    out = {}
    for n_slots in (100, 1000, 10_000):
        tau = 1.0 / n_slots
        g = rng.exponential(1.0, size=(n_trials, n_slots))
        p = optimal_slot_power(link.alpha * g, xi, link)
        snr = link.alpha * g * p / link.sigma2
        r = link.bandwidth * np.log2(1.0 + snr)
        e_dev = np.abs(tau * p.sum(axis=1) / p_exp - 1.0)
        b_dev = np.abs(tau * r.sum(axis=1) / rate - 1.0)
        out[n_slots] = (float(e_dev.mean()), float(b_dev.mean()),
                        float(np.mean(e_dev < 0.05)),
                        float(np.mean(b_dev < 0.05)))
    return out


def suite_prop2() -> list:
    stats = prop2_concentration()
    e1000, b1000 = stats[1000][2], stats[1000][3]
    results = [
        CheckResult("energy within 5% of expectation at N_s=1000",
                    ">= 95% of 1000 trials", f"{e1000 * 100:.1f}%",
                    e1000 >= 0.95),
        CheckResult("bits within 5% of expectation at N_s=1000",
                    ">= 95% of 1000 trials", f"{b1000 * 100:.1f}%",
                    b1000 >= 0.95),
    ]
    for kind, pos in (("energy", 0), ("bits", 1)):
        r1 = stats[100][pos] / stats[1000][pos]
        r2 = stats[1000][pos] / stats[10_000][pos]
        ok = 2.0 <= r1 <= 5.0 and 2.0 <= r2 <= 5.0
        results.append(CheckResult(
            f"{kind} deviation shrinks ~ 1/sqrt(N_s)",
            "ratio in [2, 5] per decade (sqrt(10) ~ 3.16)",
            f"{r1:.2f}, {r2:.2f}", ok))
    return results


# ---------------------------------------------------------------------------
# oracle suite (offline-optimal solver)
# ---------------------------------------------------------------------------

def suite_oracle() -> list:
    results = []
    rng = np.random.default_rng(50)
    worst_gap = 0.0
    for seed in (51, 52):
        srng = np.random.default_rng(seed)
        video = VideoSpec(segment_sizes=draw_segment_sizes(3, srng))
        trace = generate_trace(ScenarioConfig(), video.nominal_horizon + 10,
                               srng)
        plan = solve_offline_optimal(trace, video, LINK)
        alphas = np.array([trace.alpha(t)[0]
                           for t in range(1, video.nominal_horizon + 1)])
        e_pgd = plan_energy(plan, alphas, video, LINK)
        dp = solve_offline_dp_grid(alphas, video, LINK, n_levels=31,
                                   refinements=3)
        e_dp = plan_energy(dp, alphas, video, LINK)
        worst_gap = max(worst_gap, abs(e_pgd - e_dp) / e_dp)
    results.append(CheckResult(
        "projected gradient vs exhaustive DP, horizons <= 20",
        "0.1% rel", f"{worst_gap * 100:.4f}%", worst_gap <= 1e-3))

    # constant channel, equal sizes: best constant-rate plan is optimal
    video = VideoSpec(segment_sizes=tuple([80e6] * 6))
    trace = generate_trace(ScenarioConfig(speed_init_range=(0.0, 0.0)),
                           video.nominal_horizon + 10, np.random.default_rng(53))
    plan = solve_offline_optimal(trace, video, LINK)
    t_total = video.nominal_horizon
    alphas = np.array([trace.alpha(t)[0] for t in range(1, t_total + 1)])
    e_pgd = plan_energy(plan, alphas, video, LINK)
    frames, need = deadline_requirements(video)
    r_min = float(np.max(need / (video.dt * frames)))
    best = np.inf
    for r in np.linspace(r_min, 1.3 * r_min, 400):
        cand = RatePlan(rates=np.full(t_total, r))
        if plan_is_feasible(cand, video):
            best = min(best, plan_energy(cand, alphas, video, LINK))
    gap = abs(e_pgd - best) / best
    results.append(CheckResult(
        "constant-channel solve vs best constant-rate plan", "0.1% rel",
        f"{gap * 100:.4f}%", gap <= 1e-3 and e_pgd <= best * (1 + 1e-3)))

    # feasibility and dominance on a full-horizon instance
    video = VideoSpec(segment_sizes=draw_segment_sizes(15, rng))
    trace = generate_trace(ScenarioConfig(), video.nominal_horizon + 10, rng)
    plan = solve_offline_optimal(trace, video, LINK)
    feasible = plan_is_feasible(plan, video)
    env = StreamingEnv(trace, video, LINK)
    e_np = rollout_policy(env, non_predictive_policy, "idealized").energy
    alphas = np.array([trace.alpha(t)[0]
                       for t in range(1, video.nominal_horizon + 1)])
    e_opt = plan_energy(plan, alphas, video, LINK)
    results.append(CheckResult(
        "full-horizon plan feasible and dominates non-predictive",
        "feasible and e_opt <= e_np",
        f"feasible={feasible}, e_opt={e_opt:.3f} J, e_np={e_np:.3f} J",
        feasible and e_opt <= e_np))
    return results


SUITES = {
    "powermath": suite_powermath,
    "env": suite_env,
    "gradients": suite_gradients,
    "prop2": suite_prop2,
    "oracle": suite_oracle,
}


def run_suite(name: str):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from "
                       f"{sorted(SUITES)} or 'all'")
    results = SUITES[name]()
    return results, all(r.passed for r in results)
