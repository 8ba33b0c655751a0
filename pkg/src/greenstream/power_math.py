"""Closed-form and numerical kernels for per-frame power control.

Maps an average-rate target for one time frame to the per-slot water-filling
power policy and to the expected per-frame transmit power, for a link whose
small-scale fading is i.i.d. across slots.  All quantities are SI: W, Hz,
bit/s, s.  dB/dBm conversions belong at config boundaries, never here.

Everything in this module is a pure function of its arguments and safe for
concurrent callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

LN2 = math.log(2.0)
EULER_GAMMA = 0.5772156649015328606

# Series/continued-fraction split for E1(x); series coefficients are
# (-1)^(k+1) / (k * k!), evaluated by Horner below.  The continued fraction
# converges faster for larger x, so its depth is tiered.
_E1_SPLIT = 1.0
_E1_SERIES_TERMS = 24
_E1_CF_TIERS = ((2.0, 80), (4.0, 44), (np.inf, 26))

_E1_COEFF = np.zeros(_E1_SERIES_TERMS + 1)
_fact = 1.0
for _k in range(1, _E1_SERIES_TERMS + 1):
    _fact *= _k
    _E1_COEFF[_k] = (-1.0) ** (_k + 1) / (_k * _fact)


class InfeasibleRateError(ValueError):
    """Requested average rate exceeds the ceiling reachable at p = p_max."""


@dataclass(frozen=True)
class LinkParams:
    """Per-frame link description.

    alpha: large-scale channel gain (linear), sigma2: noise power (W),
    bandwidth: Hz, p_max: maximum transmit power (W).
    """

    alpha: float
    sigma2: float
    bandwidth: float
    p_max: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not (self.sigma2 > 0):
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if not (self.bandwidth > 0):
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not (self.p_max >= 0):
            raise ValueError(f"p_max must be >= 0, got {self.p_max}")

    def with_alpha(self, alpha: float) -> "LinkParams":
        return replace(self, alpha=alpha)


@dataclass(frozen=True)
class WaterLevel:
    """Water-level parameter of the per-slot power policy, in W; xi > 0."""

    xi: float

    def __post_init__(self):
        if not (self.xi > 0):
            raise ValueError(f"xi must be > 0, got {self.xi}")


def rayleigh_pdf(g):
    """Unit-mean exponential density of the small-scale power gain."""
    return np.exp(-g)


def _e1_eval(x_arr: np.ndarray, scaled: bool) -> np.ndarray:
    """E1(x) or, when scaled, e^x E1(x) (stable for arbitrarily large x)."""
    out = np.empty_like(x_arr)

    lo = x_arr < _E1_SPLIT
    if lo.any():
        xs = x_arr[lo]
        p = np.zeros_like(xs)
        for k in range(_E1_SERIES_TERMS, 0, -1):
            p = xs * (_E1_COEFF[k] + p)
        val = -EULER_GAMMA - np.log(xs) + p
        out[lo] = val * np.exp(xs) if scaled else val

    prev = _E1_SPLIT
    for upper, depth in _E1_CF_TIERS:
        sel = (x_arr >= prev) & (x_arr < upper)
        prev = upper
        if not sel.any():
            continue
        xh = x_arr[sel]
        tail = np.zeros_like(xh)
        for k in range(depth, 0, -1):
            tail = (k * k) / (xh + 2 * k + 1 - tail)
        factor = 1.0 / (xh + 1.0 - tail)   # e^x E1(x)
        out[sel] = factor if scaled else np.exp(-xh) * factor

    return out


def exp_integral_e1(x):
    """Exponential integral E1(x) = int_x^inf e^(-t)/t dt for x > 0.

    Power series below x = 1, continued fraction above; relative error is at
    machine level over [1e-8, 700].  Accepts scalars or arrays.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0) or not np.all(np.isfinite(x_arr)):
        raise ValueError("exp_integral_e1 requires x > 0 and finite")
    out = _e1_eval(x_arr, scaled=False)
    return out if out.ndim else float(out)


def exp_scaled_e1(x):
    """e^x E1(x), overflow-free for large x (tends to 1/x)."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0) or not np.all(np.isfinite(x_arr)):
        raise ValueError("exp_scaled_e1 requires x > 0 and finite")
    out = _e1_eval(x_arr, scaled=True)
    return out if out.ndim else float(out)


# Interpolation table for the E1 inverse: ln x on a dense grid against ln E1,
# used as the Newton initializer (init error ~1e-6, three polish steps reach
# machine precision).
_E1INV_LNX = np.linspace(math.log(1e-18), math.log(660.0), 8000)
_E1INV_LNY = None  # filled lazily, needs exp_integral_e1 defined


def _e1inv_table():
    global _E1INV_LNY
    if _E1INV_LNY is None:
        _E1INV_LNY = np.log(exp_integral_e1(np.exp(_E1INV_LNX)))
    return _E1INV_LNY


def exp_integral_e1_inv(y):
    """Inverse of E1: returns x > 0 with E1(x) = y, for y > 0.

    Table-initialized Newton iteration on ln x; strictly decreasing in y.
    Accepts scalars or arrays.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0) or not np.all(np.isfinite(y_arr)):
        raise ValueError("exp_integral_e1_inv requires y > 0 and finite")

    # np.interp needs ascending sample points; ln E1 decreases along the
    # table, so negate both query and table.
    lny_table = _e1inv_table()
    t = np.interp(-np.log(y_arr), -lny_table, _E1INV_LNX)

    # Newton on f(t) = E1(e^t) - y with f'(t) = -e^(-e^t); the step is
    # (E1(x) - y) * e^x.
    for _ in range(3):
        xcur = np.exp(t)
        f = exp_integral_e1(xcur) - y_arr
        step = np.clip(f * np.exp(np.minimum(xcur, 700.0)), -2.0, 2.0)
        t = np.clip(t + step, math.log(1e-300), math.log(695.0))

    x_out = np.exp(t)
    return x_out if x_out.ndim else float(x_out)


def optimal_slot_power(channel_gain, xi, link: LinkParams):
    """Per-slot power for instantaneous channel gain alpha*g (three branches).

    Zero below sigma2/xi, water-filling xi - sigma2/gain in the middle band,
    capped at p_max once gain >= sigma2/(xi - p_max) (reachable only when
    xi > p_max).  Output is always inside [0, p_max].
    """
    xi_val = xi.xi if isinstance(xi, WaterLevel) else float(xi)
    if xi_val <= 0:
        raise ValueError(f"xi must be > 0, got {xi_val}")
    gain = np.asarray(channel_gain, dtype=float)
    with np.errstate(divide="ignore"):
        p = xi_val - link.sigma2 / gain
    p = np.clip(p, 0.0, link.p_max)
    return p if p.ndim else float(p)


def average_rate_quadrature(xi, link: LinkParams, fading_pdf=rayleigh_pdf,
                            epsrel=1e-12):
    """Average rate E_g[W log2(1 + alpha g p_opt(alpha g; xi) / sigma2)].

    Adaptive quadrature split at the water-filling thresholds, where the
    integrand has kinks.
    """
    xi_val = xi.xi if isinstance(xi, WaterLevel) else float(xi)
    alpha, sigma2, w, p_max = link.alpha, link.sigma2, link.bandwidth, link.p_max
    g0 = sigma2 / (alpha * xi_val)
    g1 = sigma2 / (alpha * (xi_val - p_max)) if xi_val > p_max else np.inf

    def mid(g):
        return w * np.log2(alpha * xi_val * g / sigma2) * fading_pdf(g)

    def cap(g):
        return w * np.log2(1.0 + alpha * p_max * g / sigma2) * fading_pdf(g)

    total, _ = integrate.quad(mid, g0, g1, epsabs=0.0, epsrel=epsrel, limit=400)
    if np.isfinite(g1):
        tail, _ = integrate.quad(cap, g1, np.inf, epsabs=0.0, epsrel=epsrel,
                                 limit=400)
        total += tail
    return total


def expected_power_quadrature(xi, link: LinkParams, fading_pdf=rayleigh_pdf,
                              epsrel=1e-12):
    """Expected per-slot power E_g[p_opt(alpha g; xi)] by quadrature."""
    xi_val = xi.xi if isinstance(xi, WaterLevel) else float(xi)
    alpha, sigma2, p_max = link.alpha, link.sigma2, link.p_max
    g0 = sigma2 / (alpha * xi_val)
    g1 = sigma2 / (alpha * (xi_val - p_max)) if xi_val > p_max else np.inf

    def mid(g):
        return (xi_val - sigma2 / (alpha * g)) * fading_pdf(g)

    total, _ = integrate.quad(mid, g0, g1, epsabs=0.0, epsrel=epsrel, limit=400)
    if np.isfinite(g1):
        tail, _ = integrate.quad(fading_pdf, g1, np.inf, epsabs=0.0,
                                 epsrel=epsrel, limit=400)
        total += p_max * tail
    return total


@lru_cache(maxsize=4096)
def _max_average_rate_cached(alpha, sigma2, bandwidth, p_max, fading_pdf):
    def integrand(g):
        return bandwidth * np.log2(1.0 + alpha * p_max * g / sigma2) * fading_pdf(g)

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-12,
                            limit=400)
    return val


def max_average_rate(link: LinkParams, fading_pdf=rayleigh_pdf):
    """Average-rate ceiling at p = p_max everywhere; cached per (link, pdf)."""
    return _max_average_rate_cached(link.alpha, link.sigma2, link.bandwidth,
                                    link.p_max, fading_pdf)


def max_average_rate_rayleigh(alpha, sigma2, bandwidth, p_max):
    """Rayleigh ceiling in closed form: E[ln(1 + c g)] = e^(1/c) E1(1/c) for
    g ~ Exp(1) with c = alpha p_max / sigma2.  Vectorized over alpha."""
    c = np.asarray(alpha, dtype=float) * p_max / sigma2
    val = bandwidth / LN2 * exp_scaled_e1(1.0 / c)
    return val if np.ndim(val) else float(val)


def xi_from_rate_rayleigh(rate, link: LinkParams):
    """Water level for a target average rate under Rayleigh fading and large
    p_max: xi = (sigma2/alpha) / E1_inv(rate * ln2 / W)."""
    if np.any(np.asarray(rate) <= 0):
        raise ValueError(f"rate must be > 0, got {rate}")
    x = exp_integral_e1_inv(np.asarray(rate, dtype=float) * LN2 / link.bandwidth)
    xi = (link.sigma2 / link.alpha) / x
    if np.ndim(xi):
        return xi
    return WaterLevel(float(xi))


def xi_from_rate_general(rate, link: LinkParams, fading_pdf=rayleigh_pdf,
                         rtol=1e-8):
    """Water level solving the average-rate fixed point by bisection.

    Valid for any fading density; raises InfeasibleRateError when the target
    rate is at or above the p_max ceiling.
    """
    rate = float(rate)
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    ceiling = max_average_rate(link, fading_pdf)
    if rate >= ceiling:
        raise InfeasibleRateError(
            f"rate {rate:.6g} bit/s >= ceiling {ceiling:.6g} bit/s at p_max")

    lo = link.sigma2 / link.alpha * 1e-12
    hi = link.sigma2 / link.alpha
    while average_rate_quadrature(hi, link, fading_pdf) < rate:
        hi *= 4.0
        if hi > 1e24:
            raise InfeasibleRateError("bisection bracket blew up")
    while average_rate_quadrature(lo, link, fading_pdf) > rate:
        lo *= 1e-3

    for _ in range(300):
        mid = math.sqrt(lo * hi)
        r_mid = average_rate_quadrature(mid, link, fading_pdf)
        if abs(r_mid - rate) <= rtol * rate:
            return WaterLevel(mid)
        if r_mid < rate:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("xi bisection did not converge")


def pbar_rayleigh(alpha, rate, sigma2, bandwidth):
    """Expected transmit power (W) under the optimal policy, Rayleigh fading,
    large p_max: (sigma2/alpha) * [e^(-x)/x - (rate/W) ln2], x = E1_inv(...).

    Vectorized over alpha and rate (broadcast); rate = 0 maps to 0 power.
    """
    alpha_arr = np.asarray(alpha, dtype=float)
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(rate_arr < 0):
        raise ValueError("rate must be >= 0")
    out = np.zeros(np.broadcast(alpha_arr, rate_arr).shape)
    pos = np.broadcast_to(rate_arr > 0, out.shape)
    if pos.any():
        r = np.broadcast_to(rate_arr, out.shape)[pos]
        a = np.broadcast_to(alpha_arr, out.shape)[pos]
        x = exp_integral_e1_inv(r * LN2 / bandwidth)
        out[pos] = (sigma2 / a) * (np.exp(-x) / x - r * LN2 / bandwidth)
    return out if out.ndim else float(out)


def pbar_grad_rayleigh(alpha, rate, sigma2, bandwidth):
    """d pbar / d rate (W per bit/s) of the Rayleigh closed form.

    Equals xi_opt(rate) * ln2 / W; the simplification follows from
    E1'(x) = -e^(-x)/x and is validated against finite differences in the
    test suite.  Vectorized; the rate -> 0 limit is 0.
    """
    alpha_arr = np.asarray(alpha, dtype=float)
    rate_arr = np.asarray(rate, dtype=float)
    out = np.zeros(np.broadcast(alpha_arr, rate_arr).shape)
    pos = np.broadcast_to(rate_arr > 0, out.shape)
    if pos.any():
        r = np.broadcast_to(rate_arr, out.shape)[pos]
        a = np.broadcast_to(alpha_arr, out.shape)[pos]
        x = exp_integral_e1_inv(r * LN2 / bandwidth)
        out[pos] = (sigma2 / a) / x * LN2 / bandwidth
    return out if out.ndim else float(out)


def expected_power(rate, link: LinkParams):
    """Expected per-frame transmit power pbar(alpha, rate) in W.

    Rayleigh closed form in the large-p_max regime; strictly increasing in
    rate, strictly decreasing in alpha, and pbar(0) = 0.
    """
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(rate_arr < 0):
        raise ValueError(f"rate must be >= 0, got {rate}")
    return pbar_rayleigh(link.alpha, rate, link.sigma2, link.bandwidth)


def expected_power_grad(rate, link: LinkParams):
    """Analytic d pbar / d rate for the Rayleigh closed form; rate > 0."""
    if np.any(np.asarray(rate) <= 0):
        raise ValueError(f"rate must be > 0, got {rate}")
    return pbar_grad_rayleigh(link.alpha, rate, link.sigma2, link.bandwidth)
