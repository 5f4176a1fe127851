"""Probability that each of several independent Gaussians is the largest.

These are the Thompson-sampling arm selection probabilities for a frozen
posterior snapshot. Three routes are provided:

* :func:`prob_two_arms`: closed form through the normal upper tail ``Q``;
* :func:`prob_quadrature`: adaptive quadrature of
  ``p_i = int phi_i(x) prod_{j != i} Phi_j(x) dx`` for any number of arms;
* :func:`prob_monte_carlo`: empirical argmax frequencies.

:func:`log_prob_quadrature` evaluates ``log p_i`` with relative accuracy by
integrating the integrand rescaled by its peak value, so probabilities far
below the double-precision range still have finite logarithms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special

from .env import RngStream

__all__ = [
    "GaussianProfile",
    "ProbVector",
    "QuadratureError",
    "q_function",
    "log_q_function",
    "prob_two_arms",
    "prob_quadrature",
    "log_prob_quadrature",
    "prob_monte_carlo",
    "selection_probs",
    "second_largest",
    "default_method",
]

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

#: Beyond this argument erfc loses its last digits to underflow; switch to
#: the asymptotic series (truncation error below 2e-12 relative at 30).
_LOG_Q_SERIES_FROM = 30.0

_MC_CHUNK = 1 << 18


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested accuracy within its node budget."""


def q_function(delta: float) -> float:
    """Standard normal upper tail ``Q(delta) = P(X >= delta)``."""
    return 0.5 * math.erfc(delta / _SQRT2)


def log_q_function(delta: float) -> float:
    """``log Q(delta)``, finite for every finite ``delta``."""
    if delta < _LOG_Q_SERIES_FROM:
        return math.log(0.5 * math.erfc(delta / _SQRT2))
    r = 1.0 / (delta * delta)
    series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * 105.0)))
    return -0.5 * delta * delta - math.log(delta) - _LOG_SQRT_2PI + math.log(series)


@dataclass(frozen=True)
class GaussianProfile:
    """Means and variances of independent Gaussian samples, one per arm."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=float).ravel()
        variances = np.asarray(self.variances, dtype=float).ravel()
        if means.shape != variances.shape:
            raise ValueError("means and variances differ in length")
        if means.size < 2:
            raise ValueError("need at least two arms")
        if not np.all(variances > 0) or not np.all(np.isfinite(variances)):
            raise ValueError("variances must be finite and strictly positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_arms(self) -> int:
        return self.means.size

    def permuted(self, order) -> "GaussianProfile":
        order = np.asarray(order)
        return GaussianProfile(self.means[order], self.variances[order])


@dataclass
class ProbVector:
    """Selection probabilities plus how they were obtained.

    ``log_probs`` is filled by the closed-form and log-quadrature routes; for
    Monte Carlo it is the log of the empirical frequencies.
    """

    probs: np.ndarray
    method: str
    mc_samples: Optional[int] = None
    abs_error_estimate: float = 0.0
    log_probs: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.probs.size

    def to_dict(self) -> dict:
        return {
            "probs": self.probs.tolist(),
            "method": self.method,
            "mc_samples": self.mc_samples,
            "abs_error_estimate": self.abs_error_estimate,
        }


def prob_two_arms(profile: GaussianProfile) -> ProbVector:
    """Closed form for two arms: ``p_2 = Q((m_1 - m_2) / sqrt(v_1 + v_2))``."""
    if profile.n_arms != 2:
        raise ValueError("closed form needs exactly two arms")
    m, v = profile.means, profile.variances
    d = (m[0] - m[1]) / math.sqrt(v[0] + v[1])
    # the smaller probability is always Q(|d|); swapping arms swaps exactly
    if d >= 0.0:
        p2 = q_function(d)
        probs = np.array([1.0 - p2, p2])
    else:
        p1 = q_function(-d)
        probs = np.array([p1, 1.0 - p1])
    return ProbVector(
        probs,
        "closed_form",
        log_probs=np.array([log_q_function(-d), log_q_function(d)]),
    )


def _envelope(profile: GaussianProfile) -> tuple[float, float]:
    sd = float(np.sqrt(profile.variances.max()))
    return float(profile.means.min()) - 10.0 * sd, float(profile.means.max()) + 10.0 * sd


def _integrand(i: int, means: list, sds: list):
    mi, si = means[i], sds[i]
    others = [(means[j], sds[j]) for j in range(len(means)) if j != i]

    def f(x: float) -> float:
        z = (x - mi) / si
        val = math.exp(-0.5 * z * z) * _INV_SQRT_2PI / si
        for mj, sj in others:
            val *= 0.5 * math.erfc(-(x - mj) / (sj * _SQRT2))
            if val == 0.0:
                break
        return val

    return f


def prob_quadrature(profile: GaussianProfile, tol: float = 1e-10, limit: int = 200) -> ProbVector:
    """Selection probabilities by adaptive quadrature (QUADPACK ``qags``).

    Each coordinate is integrated over ``[min(m) - 10 sd_max, max(m) + 10 sd_max]``
    with absolute tolerance ``tol``. Raises :class:`QuadratureError` when a
    coordinate's error estimate exceeds ``tol`` after ``limit`` subintervals.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = _envelope(profile)
    means = profile.means.tolist()
    sds = np.sqrt(profile.variances).tolist()
    probs = np.empty(profile.n_arms)
    worst = 0.0
    for i in range(profile.n_arms):
        # the mode of arm i is a natural breakpoint for the integrand
        val, err, info = integrate.quad(
            _integrand(i, means, sds), lo, hi, epsabs=0.1 * tol, epsrel=0.0,
            limit=limit, points=[means[i]], full_output=1,
        )[:3]
        if err > tol or not math.isfinite(val):
            raise QuadratureError(
                f"arm {i}: error estimate {err:.3g} > tol {tol:.3g} "
                f"after {info['last']} subintervals"
            )
        probs[i] = min(max(val, 0.0), 1.0)
        worst = max(worst, err)
    return ProbVector(probs, "quadrature", abs_error_estimate=worst)


def _log_integrand(i: int, means: np.ndarray, sds: np.ndarray):
    mask = np.arange(means.size) != i
    mo, so = means[mask], sds[mask]
    mi, si = float(means[i]), float(sds[i])
    log_norm = -math.log(si) - _LOG_SQRT_2PI

    def g(x: float) -> float:
        z = (x - mi) / si
        return log_norm - 0.5 * z * z + float(special.log_ndtr((x - mo) / so).sum())

    return g


def log_prob_quadrature(profile: GaussianProfile, rtol: float = 1e-10, limit: int = 200) -> np.ndarray:
    """``log p_i`` for every arm, accurate in relative terms.

    The log-integrand is concave, so its peak ``x*`` is found by bounded
    scalar minimization; the integral of ``exp(g(x) - g(x*))`` is O(width)
    and cannot underflow.
    """
    lo, hi = _envelope(profile)
    means = profile.means
    sds = np.sqrt(profile.variances)
    out = np.empty(profile.n_arms)
    for i in range(profile.n_arms):
        g = _log_integrand(i, means, sds)
        res = optimize.minimize_scalar(lambda x: -g(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10 * (1.0 + abs(hi - lo))})
        x_star = float(res.x)
        g_star = g(x_star)
        val, err, info = integrate.quad(
            lambda x: math.exp(g(x) - g_star), lo, hi, epsabs=0.0, epsrel=rtol,
            limit=limit, points=[x_star], full_output=1,
        )[:3]
        if not (val > 0.0) or err > max(10 * rtol * val, 1e-300):
            raise QuadratureError(
                f"arm {i}: log-quadrature failed (value {val:.3g}, error {err:.3g}, "
                f"{info['last']} subintervals)"
            )
        out[i] = min(g_star + math.log(val), 0.0)
    return out


def prob_monte_carlo(profile: GaussianProfile, n_samples: int, rng: RngStream) -> ProbVector:
    """Empirical argmax frequencies over ``n_samples`` joint draws.

    Ties break to the lowest index. The error estimate is the largest
    per-coordinate binomial standard error ``sqrt(p(1 - p) / n)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n_arms = profile.n_arms
    sd = np.sqrt(profile.variances)
    counts = np.zeros(n_arms, dtype=np.int64)
    remaining = n_samples
    while remaining:
        k = min(remaining, _MC_CHUNK)
        theta = rng.standard_normal((k, n_arms)) * sd + profile.means
        counts += np.bincount(theta.argmax(axis=1), minlength=n_arms)
        remaining -= k
    probs = counts / n_samples
    se = float(np.sqrt(probs * (1.0 - probs) / n_samples).max())
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    return ProbVector(probs, "monte_carlo", n_samples, se, logs)


def default_method(n_arms: int) -> str:
    """Closed form for two arms, quadrature up to eight, Monte Carlo beyond."""
    if n_arms == 2:
        return "closed_form"
    if n_arms <= 8:
        return "quadrature"
    return "monte_carlo"


def selection_probs(
    profile: GaussianProfile,
    method: str = "auto",
    *,
    tol: float = 1e-10,
    n_samples: int = 100_000,
    rng: Optional[RngStream] = None,
) -> ProbVector:
    if method == "auto":
        method = default_method(profile.n_arms)
    if method == "closed_form":
        return prob_two_arms(profile)
    if method == "quadrature":
        return prob_quadrature(profile, tol)
    if method == "monte_carlo":
        if rng is None:
            raise ValueError("monte carlo needs an RngStream")
        return prob_monte_carlo(profile, n_samples, rng)
    raise ValueError(f"unknown probability method {method!r}")


def second_largest(pv) -> float:
    """Rank-2 order statistic of the probabilities (duplicates count)."""
    probs = pv.probs if isinstance(pv, ProbVector) else np.asarray(pv, dtype=float)
    if probs.size < 2:
        raise ValueError("need at least two probabilities")
    return float(np.partition(probs, probs.size - 2)[probs.size - 2])
