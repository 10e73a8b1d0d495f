"""Two-scale random walk: shared pool-level drift on top of per-shot diffusion.

Per-shot (Binomial-level) diffusion at rate ``d_n`` shrinks the mean Bloch
vector to length R = exp(-2 (d_ini + d_n g)) after g gates, with the one-time
state-preparation/measurement exposure ``d_ini`` applied up front.  A second,
slower walk at rate ``d_q`` moves the shared center of mass of each batch of
shots to colatitude theta_q, so one batch realizes the probability

    pool_prob = 1/2 + R cos(theta_q) / 2.

That confines observable batch probabilities to analytic, gate-count
dependent bounds and makes their scatter (overdispersion) rise and then fall
as both walks relax toward the uniform state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateDistributionError, DomainError
from .kernel import ThetaSampler, mean_prob, series_order, _series_fixed_tau
from .rng import stream

# Below these values the pool distribution is treated as a point mass instead
# of evaluating the near-singular 1/R series.
DEGENERACY_EPS = 1e-12

DEFAULT_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class DiffusionRates:
    """The three model parameters, all in rad^2 (per gate where applicable).

    d_ini  one-time exposure covering state preparation and measurement
    d_n    per-gate rate of the individual (per-shot) walk
    d_q    per-gate rate of the shared pool-level walk
    """

    d_ini: float
    d_n: float
    d_q: float

    def __post_init__(self):
        for name in ("d_ini", "d_n", "d_q"):
            v = float(getattr(self, name))
            if np.isnan(v) or v < 0.0:
                raise DomainError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)


def _check_gates(g):
    arr = np.asarray(g)
    if not np.issubdtype(arr.dtype, np.number) or np.any(arr < 0) or np.any(arr != np.floor(arr)):
        raise DomainError("gate counts must be non-negative integers")
    return arr.astype(float)


def _like_input(out, g):
    return float(out) if np.ndim(g) == 0 else out


def binomial_exposure(rates, g):
    """Accumulated per-shot exposure after g gates: d_ini + d_n * g."""
    garr = _check_gates(g)
    return _like_input(rates.d_ini + rates.d_n * garr, g)


def reduced_length(rates, g):
    """Length of the mean Bloch vector, exp(-2 * binomial_exposure)."""
    garr = _check_gates(g)
    return _like_input(np.exp(-2.0 * (rates.d_ini + rates.d_n * garr)), g)


def pool_prob(theta_q, rates, g):
    """Batch probability realized at pool colatitude ``theta_q``.

    1/2 + reduced_length * cos(theta_q) / 2; always inside the analytic
    bounds since cos(theta_q) is in [-1, 1].
    """
    arr = np.asarray(theta_q, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > np.pi):
        raise DomainError("theta_q must lie in [0, pi]")
    out = 0.5 + 0.5 * reduced_length(rates, g) * np.cos(arr)
    return float(out) if np.ndim(theta_q) == 0 else out


def bounds(rates, g):
    """(lower, upper) attainable batch probabilities after g gates.

    The upper bound is realized at theta_q = 0 and equals the single-level
    mean probability at the per-shot exposure; the lower bound mirrors it at
    theta_q = pi.  Both converge to 1/2 as g grows when d_n > 0.
    """
    garr = _check_gates(g)
    upper = 0.5 + 0.5 * np.exp(-2.0 * (rates.d_ini + rates.d_n * garr))
    return _like_input(1.0 - upper, g), _like_input(upper, g)


def pool_mean(rates, g):
    """Across-pool mean probability.

    The two walks add in angle, so the mean follows the single-level law at
    the combined exposure d_ini + (d_n + d_q) * g.
    """
    garr = _check_gates(g)
    out = 0.5 + 0.5 * np.exp(-2.0 * (rates.d_ini + (rates.d_n + rates.d_q) * garr))
    return _like_input(out, g)


def overdispersion_variance(rates, g):
    """Variance of the pool-level probability scatter before contraction.

    This is the single-level variance law evaluated at the pool exposure
    d_q * g: (1-a)^2 (1+2a) / 12 with a = exp(-2 d_q g).  It grows from 0 to
    1/12, the variance of the uniform distribution.
    """
    garr = _check_gates(g)
    a = np.exp(-2.0 * rates.d_q * garr)
    one_minus_a = -np.expm1(-2.0 * rates.d_q * garr)
    return _like_input(one_minus_a**2 * (1.0 + 2.0 * a) / 12.0, g)


def contracted_overdispersion_variance(rates, g):
    """Variance of pool_prob under the pool walk: R(g)^2 times the raw value."""
    return _like_input(
        np.asarray(reduced_length(rates, g)) ** 2
        * np.asarray(overdispersion_variance(rates, g)),
        g,
    )


def pool_pdf(p_bar, rates, g, cfg=None):
    """Density of the batch probability after g gates.

    (1/R) * sum_k (2k+1) exp(-k(k+1) d_q g) L_k((2 p_bar - 1)/R) inside the
    open bound interval, 0 outside the closed bounds.  Requires a
    non-degenerate pool exposure (d_q * g > 0) and R above the degeneracy
    threshold; otherwise the distribution is a point mass and
    :class:`DegenerateDistributionError` is raised.
    """
    garr = _check_gates(g)
    if np.ndim(g) != 0:
        raise DomainError("pool_pdf takes a single gate count")
    tau_pool = rates.d_q * float(garr)
    r = reduced_length(rates, g)
    if tau_pool <= DEGENERACY_EPS:
        raise DegenerateDistributionError(
            "pool exposure d_q * g is zero; distribution is a point mass at the upper bound"
        )
    if r < DEGENERACY_EPS:
        raise DegenerateDistributionError(
            "reduced length below 1e-12; distribution is a point mass at 1/2"
        )
    arr = np.asarray(p_bar, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("p_bar must lie in [0, 1]")
    x = (2.0 * arr - 1.0) / r
    inside = np.abs(x) <= 1.0
    flat = np.atleast_1d(np.where(inside, x, 0.0)).ravel()
    order = series_order(tau_pool, cfg, prefactor=1.0)
    vals = _series_fixed_tau(flat, np.exp(-2.0 * tau_pool), order) / r
    vals = np.where(np.atleast_1d(inside).ravel(), np.maximum(vals, 0.0), 0.0)
    if np.ndim(p_bar) == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


@dataclass
class BandCurve:
    """Bounds, mean and percentile band of the batch probability vs gate count."""

    gates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pool_mean: np.ndarray
    levels: tuple
    percentiles: np.ndarray  # shape (len(levels), len(gates))

    def rows(self):
        """Iterate (gate, lower, upper, pool_mean, *percentiles) tuples."""
        for j, g in enumerate(self.gates):
            yield (
                int(g),
                float(self.lower[j]),
                float(self.upper[j]),
                float(self.pool_mean[j]),
                *(float(self.percentiles[i, j]) for i in range(len(self.levels))),
            )


# Number of draws for the Monte Carlo percentile fallback.
_FALLBACK_DRAWS = 100_000


def band_curve(rates, gates, levels=DEFAULT_LEVELS, cfg=None, seed=0, grid_points=4096):
    """Analytic bounds, pool mean and percentile levels per gate count.

    Percentiles of the batch probability come from numeric inversion of the
    pool-colatitude CDF (the map theta_q -> pool_prob is monotone
    decreasing, so the alpha quantile of the probability is pool_prob at the
    (1-alpha) colatitude quantile).  If the series cannot converge at a tiny
    pool exposure, the percentiles fall back to sampling the tangent-plane
    limit of the walk, seeded per gate count.
    """
    levels = tuple(float(l) for l in levels)
    if any(not (0.0 < l < 1.0) for l in levels):
        raise DomainError("percentile levels must lie strictly inside (0, 1)")
    garr = np.atleast_1d(_check_gates(gates)).astype(int)
    lower, upper = bounds(rates, garr)
    means = pool_mean(rates, garr)
    pct = np.empty((len(levels), garr.size))
    for j, g in enumerate(garr):
        tau_pool = rates.d_q * float(g)
        r = reduced_length(rates, int(g))
        if r < DEGENERACY_EPS:
            pct[:, j] = 0.5
        elif tau_pool <= DEGENERACY_EPS:
            pct[:, j] = upper[j]
        else:
            theta_levels = np.array([1.0 - l for l in levels])
            try:
                sampler = ThetaSampler(tau_pool, cfg, grid_points)
                th_q = sampler.quantile(theta_levels)
            except ConvergenceError:
                th_q = _tangent_plane_quantiles(tau_pool, theta_levels, stream(seed, j))
            pct[:, j] = 0.5 + 0.5 * r * np.cos(th_q)
    return BandCurve(
        gates=garr,
        lower=np.atleast_1d(lower),
        upper=np.atleast_1d(upper),
        pool_mean=np.atleast_1d(means),
        levels=levels,
        percentiles=pct,
    )


def _tangent_plane_quantiles(tau, theta_levels, rng):
    # Valid precisely where the series fails: for tau << 1 the colatitude is
    # the norm of an isotropic 2D Gaussian with per-component variance 2 tau.
    disp = rng.normal(0.0, np.sqrt(2.0 * tau), size=(_FALLBACK_DRAWS, 2))
    theta = np.minimum(np.hypot(disp[:, 0], disp[:, 1]), np.pi)
    return np.quantile(theta, theta_levels)
