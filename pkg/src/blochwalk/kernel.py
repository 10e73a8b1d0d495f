"""Single-level angular diffusion on the sphere.

A walker initialized at the north pole and subjected to isotropic angular
diffusion has, after accumulated exposure ``tau`` (diffusion coefficient
times steps, rad^2), the colatitude density

    p(theta; tau) = sum_k (2k+1)/2 * exp(-k(k+1) tau) * L_k(cos theta) * sin theta

and the corresponding readout-probability density

    p_P(p; tau) = sum_k (2k+1) * exp(-k(k+1) tau) * L_k(2p - 1).

This module evaluates both series with adaptive truncation, provides the
closed-form moments of p_P, and samples exactly from p(theta; tau) by
numerical inversion of its CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .errors import ConvergenceError, DegenerateDistributionError, DomainError
from .rng import stream

# Below this exposure the series converges slowly and the truncation order is
# allowed to grow past k_max, up to k_ceiling.  Operational choice; the series
# itself gives no threshold.
SMALL_EXPOSURE = 1e-3

# Truncated series may dip slightly negative near the support edges.  Values
# above this floor are numerical noise; anything below it means the
# truncation order was genuinely insufficient.
NEGATIVE_FLOOR = -1e-9


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation policy for the diffusion series.

    k_max      usual maximum order; ample for exposures >= 1e-3
    tail_tol   stop once the bound on the first neglected term drops below this
    k_ceiling  hard cap for the adaptive small-exposure regime
    """

    k_max: int = 1000
    tail_tol: float = 1e-14
    k_ceiling: int = 8192

    def __post_init__(self):
        if not (1 <= self.k_max <= self.k_ceiling):
            raise DomainError("require 1 <= k_max <= k_ceiling")
        if not self.tail_tol > 0:
            raise DomainError("tail_tol must be positive")


DEFAULT_SERIES = SeriesConfig()


@dataclass(frozen=True)
class MomentSet:
    """Mean, raw second moment and variance of the probability density."""

    mean: float
    second_raw: float
    variance: float


def _check_exposure(tau, allow_zero=False):
    tau = float(tau)
    if math.isnan(tau) or tau < 0.0:
        raise DomainError("exposure tau must be >= 0")
    if tau == 0.0 and not allow_zero:
        raise DegenerateDistributionError(
            "tau = 0 is a point mass at theta = 0; handle the Dirac case explicitly"
        )
    return tau


def series_order(tau, cfg=None, prefactor=1.0):
    """Truncation order for the series at exposure ``tau``.

    Returns the smallest k such that prefactor*(2k+1)*exp(-k(k+1)tau) falls
    below ``tail_tol`` (terms 0..k-1 are summed).  For tau >= SMALL_EXPOSURE
    the order is capped at ``k_max``; below that threshold it may grow up to
    ``k_ceiling``, and past the ceiling a :class:`ConvergenceError` is raised
    rather than returning an unconverged sum.
    """
    cfg = cfg or DEFAULT_SERIES
    tau = _check_exposure(tau)
    log_tol = math.log(cfg.tail_tol)

    def log_bound(k):
        return math.log(prefactor * (2.0 * k + 1.0)) - k * (k + 1.0) * tau

    k = math.sqrt(max(-log_tol, 1.0) / tau)
    for _ in range(2):
        k = math.sqrt(max((math.log(prefactor * (2.0 * k + 1.0)) - log_tol) / tau, 1.0))
    k = max(int(k) - 3, 1)
    while k <= cfg.k_ceiling and log_bound(k) >= log_tol:
        k += 1
    while k > 1 and log_bound(k - 1) < log_tol:
        k -= 1
    if k > cfg.k_ceiling or log_bound(k) >= log_tol:
        if tau >= SMALL_EXPOSURE:
            return cfg.k_max
        raise ConvergenceError(
            f"series for tau={tau:g} needs more than k_ceiling={cfg.k_ceiling} terms"
        )
    if tau >= SMALL_EXPOSURE:
        return min(k, cfg.k_max)
    return k


@numba.njit(cache=True)
def _series_fixed_tau(x, e2, n_terms):
    # sum_{k<n} (2k+1) e2^{k(k+1)/2} L_k(x_i), Kahan-compensated per element.
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xi = x[i]
        q = 1.0
        w = 1.0
        pkm1 = 0.0
        pk = 1.0
        s = 0.0
        c = 0.0
        for k in range(n_terms):
            term = (2 * k + 1) * w * pk
            y = term - c
            t = s + y
            c = (t - s) - y
            s = t
            pknext = ((2 * k + 1) * xi * pk - k * pkm1) / (k + 1)
            pkm1 = pk
            pk = pknext
            q *= e2
            w *= q
        out[i] = s
    return out


@numba.njit(cache=True)
def _series_vector_tau(x, e2, n_terms):
    # Same sum with a separate exposure per element.
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xi = x[i]
        e2i = e2[i]
        q = 1.0
        w = 1.0
        pkm1 = 0.0
        pk = 1.0
        s = 0.0
        c = 0.0
        for k in range(n_terms):
            term = (2 * k + 1) * w * pk
            y = term - c
            t = s + y
            c = (t - s) - y
            s = t
            pknext = ((2 * k + 1) * xi * pk - k * pkm1) / (k + 1)
            pkm1 = pk
            pk = pknext
            q *= e2i
            w *= q
        out[i] = s
    return out


def _police_negative(vals, clamp):
    if np.any(vals < NEGATIVE_FLOOR):
        raise ConvergenceError(
            "series density fell below -1e-9; truncation order insufficient"
        )
    if clamp:
        return np.maximum(vals, 0.0)
    return vals


def theta_pdf(theta, tau, cfg=None, *, clamp_negative=False):
    """Colatitude density p(theta; tau) for exposure tau > 0.

    ``theta`` may be a scalar or an array in [0, pi].  Tiny negative values
    from truncation (above -1e-9) are returned raw unless ``clamp_negative``
    is set; larger negatives raise :class:`ConvergenceError`.  ``tau = 0``
    raises :class:`DegenerateDistributionError` (Dirac at theta = 0).
    """
    tau = _check_exposure(tau)
    arr = np.asarray(theta, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > np.pi):
        raise DomainError("theta must lie in [0, pi]")
    order = series_order(tau, cfg, prefactor=0.5)
    flat = np.atleast_1d(arr).ravel()
    vals = 0.5 * _series_fixed_tau(np.cos(flat), math.exp(-2.0 * tau), order)
    vals = vals * np.sin(flat)
    vals = _police_negative(vals, clamp_negative)
    if np.ndim(theta) == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


def prob_pdf(p, tau, cfg=None, *, clamp_negative=False):
    """Readout-probability density p_P(p; tau) for exposure tau > 0."""
    tau = _check_exposure(tau)
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("p must lie in [0, 1]")
    order = series_order(tau, cfg, prefactor=1.0)
    flat = np.atleast_1d(arr).ravel()
    vals = _series_fixed_tau(2.0 * flat - 1.0, math.exp(-2.0 * tau), order)
    vals = _police_negative(vals, clamp_negative)
    if np.ndim(p) == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


def prob_pdf_endpoints(tau, cfg=None):
    """Density values (p_P(0; tau), p_P(1; tau)).

    At p = 0 the Legendre factors alternate sign, giving
    sum_k (-1)^k (2k+1) exp(-k(k+1)tau); at p = 1 they are all +1.  The
    first rises to the late-time limit 1 from below (starting at zero), the
    second falls to 1 from above, and the first never exceeds the second.
    """
    tau = _check_exposure(tau)
    order = series_order(tau, cfg, prefactor=1.0)
    vals = _series_fixed_tau(np.array([-1.0, 1.0]), math.exp(-2.0 * tau), order)
    return float(vals[0]), float(vals[1])


def mean_prob(tau):
    """Mean readout probability 1/2 + exp(-2 tau)/2.

    Solves d(mean)/d(tau) = -2 (mean - 1/2): exponential relaxation toward
    the indifferent 50:50 outcome.
    """
    tau = _check_exposure(tau, allow_zero=True)
    return 0.5 + 0.5 * math.exp(-2.0 * tau)


def moments(tau):
    """Closed-form moments of p_P at exposure tau.

    mean       = 1/2 + a/2                 with a = exp(-2 tau)
    second_raw = 1/3 + a/2 + a^3/6
    variance   = 1/12 - a^2/4 + a^3/6  ==  (1-a)^2 (1+2a) / 12

    The factored variance form is exact at tau = 0 and accurate for small
    exposures where the three terms nearly cancel.
    """
    tau = _check_exposure(tau, allow_zero=True)
    a = math.exp(-2.0 * tau)
    one_minus_a = -math.expm1(-2.0 * tau)
    mean = 0.5 + 0.5 * a
    second = 1.0 / 3.0 + a / 2.0 + a**3 / 6.0
    variance = one_minus_a**2 * (1.0 + 2.0 * a) / 12.0
    return MomentSet(mean=mean, second_raw=second, variance=variance)


def sine_pdf(theta):
    """Colatitude density of the uniform distribution on the sphere, sin(theta)/2."""
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > np.pi):
        raise DomainError("theta must lie in [0, pi]")
    out = 0.5 * np.sin(arr)
    return float(out) if np.ndim(theta) == 0 else out


def sine_cdf(theta):
    """CDF of :func:`sine_pdf`: sin^2(theta/2)."""
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > np.pi):
        raise DomainError("theta must lie in [0, pi]")
    out = np.sin(0.5 * arr) ** 2
    return float(out) if np.ndim(theta) == 0 else out


def _theta_grid_pdf(tau, cfg, grid_points):
    th = np.linspace(0.0, np.pi, grid_points)
    pdf = theta_pdf(th, tau, cfg, clamp_negative=True)
    return th, pdf


class ThetaSampler:
    """Exact inverse-CDF sampler for the colatitude density at fixed exposure.

    The density is integrated on a uniform grid ( >= 4096 points by default)
    and the quantile function is represented by a monotone cubic interpolant,
    so draws are deterministic functions of the uniforms fed in.
    """

    def __init__(self, tau, cfg=None, grid_points=4096):
        if grid_points < 16:
            raise DomainError("grid_points must be at least 16")
        self.tau = _check_exposure(tau)
        th, pdf = _theta_grid_pdf(self.tau, cfg, grid_points)
        cdf = cumulative_trapezoid(pdf, th, initial=0.0)
        if cdf[-1] <= 0.0:
            raise ConvergenceError("colatitude density integrated to zero mass")
        cdf /= cdf[-1]
        keep = np.concatenate(([True], np.diff(cdf) > 0.0))
        self._quantile = PchipInterpolator(cdf[keep], th[keep])

    def quantile(self, u):
        """Colatitude at CDF level(s) ``u`` in [0, 1]."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise DomainError("quantile levels must lie in [0, 1]")
        out = self._quantile(arr)
        return float(out) if np.ndim(u) == 0 else out

    def draw(self, rng, size=None):
        """Draw colatitudes using generator ``rng``."""
        out = self._quantile(rng.random(size))
        return float(out) if size is None else out


def sample_theta(tau, cfg=None, *, seed, size=None, grid_points=4096):
    """Draw from p(theta; tau) by inverse-CDF sampling.

    Deterministic for a given ``seed``; ``size=None`` returns a single float.
    """
    sampler = ThetaSampler(tau, cfg, grid_points)
    return sampler.draw(stream(seed), size)


def _log_theta_pdf_batch(thetas, taus, cfg=None):
    """log p(theta_i; tau_i) for paired arrays; -inf where the density is <= 0.

    Shared by the inference code, which evaluates one series term count for
    the whole batch (driven by the smallest exposure present).  Raises
    :class:`ConvergenceError` if that exposure sits below the series floor.
    """
    thetas = np.asarray(thetas, dtype=float)
    taus = np.asarray(taus, dtype=float)
    order = series_order(float(taus.min()), cfg, prefactor=0.5)
    vals = 0.5 * _series_vector_tau(np.cos(thetas), np.exp(-2.0 * taus), order)
    vals = vals * np.sin(thetas)
    vals = _police_negative(vals, clamp=True)
    with np.errstate(divide="ignore"):
        return np.log(vals)
