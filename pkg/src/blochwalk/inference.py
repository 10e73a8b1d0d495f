"""Bayesian fitting of the two-scale walk to observed frequency data.

The posterior couples the three diffusion rates with one hidden pool
colatitude per record:

    p(rates, thetas | data) propto
        prod_q Binomial(zeros_q; shots_q, pool_prob(theta_q, rates, g_q))
        * prod_q p(theta_q; d_q * g_q)

with an improper flat prior on the positive rates.  Sampling alternates a
block Metropolis update of the rates (Gaussian random walk on log-rates,
with the Jacobian correction that keeps the flat prior on the rates
themselves) and independent per-record updates of the hidden angles, which
are conditionally independent given the rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import gammaln, xlogy

from .errors import AdaptationError, ConvergenceError, DegenerateDistributionError, DomainError
from .kernel import _log_theta_pdf_batch
from .rng import stream
from .two_scale import DiffusionRates
from .data import PoolDataset, ShotRecord  # noqa: F401  (re-exported data types)

# Proposal adaptation: retune scales every window during burn-in to keep
# block acceptance inside this band, then freeze.
_ACCEPT_LOW = 0.20
_ACCEPT_HIGH = 0.45
_ADAPT_WINDOW = 500
_STALL_WINDOW = 10_000

# Initial guesses never start below this rate so the hidden prior is
# evaluable from the first iteration.
_MIN_INIT_RATE = 1e-5


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run lengths and proposal scales.

    total_iterations counts post-burn-in iterations; every ``thin``-th one is
    stored, so the chain emits total_iterations // thin samples.
    """

    total_iterations: int = 1_000_000
    burn_in: int = 100_000
    thin: int = 20
    rate_scale: float = 0.08
    theta_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 1 or self.burn_in < 0:
            raise DomainError("need total_iterations >= 1 and burn_in >= 0")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.rate_scale <= 0 or self.theta_scale <= 0:
            raise DomainError("proposal scales must be positive")


@dataclass(frozen=True)
class PosteriorSample:
    rates: DiffusionRates
    hidden_thetas: np.ndarray
    log_post: float


@dataclass
class Chain:
    """Thinned posterior samples plus whole-run diagnostics."""

    samples: list[PosteriorSample]
    max_log_likelihood: float
    best_rates: DiffusionRates
    best_thetas: np.ndarray
    best_log_post: float
    accept_rate_rates: float
    accept_rate_thetas: float

    def rates_array(self):
        return np.array([[s.rates.d_ini, s.rates.d_n, s.rates.d_q] for s in self.samples])

    def log_posts(self):
        return np.array([s.log_post for s in self.samples])


@dataclass
class FitReport:
    """Posterior summaries and the two-level vs single-level comparison."""

    posterior: dict
    map_rates: dict
    n_samples: int
    max_log_likelihood_two_level: float
    max_log_likelihood_single_level: float
    log_likelihood_ratio: float

    def to_dict(self):
        return {
            "posterior": self.posterior,
            "map_rates": self.map_rates,
            "n_samples": self.n_samples,
            "max_log_likelihood_two_level": self.max_log_likelihood_two_level,
            "max_log_likelihood_single_level": self.max_log_likelihood_single_level,
            "log_likelihood_ratio": self.log_likelihood_ratio,
        }


def _binom_log_terms(zeros, shots, prob, log_choose):
    with np.errstate(divide="ignore", invalid="ignore"):
        return log_choose + xlogy(zeros, prob) + xlogy(shots - zeros, 1.0 - prob)


def _log_choose(zeros, shots):
    return gammaln(shots + 1.0) - gammaln(zeros + 1.0) - gammaln(shots - zeros + 1.0)


def _check_thetas(thetas, m):
    arr = np.asarray(thetas, dtype=float)
    if arr.shape != (m,):
        raise DomainError(f"expected {m} hidden angles, got shape {arr.shape}")
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > np.pi):
        raise DomainError("hidden angles must lie in [0, pi]")
    return arr


def log_likelihood(data, rates, thetas):
    """Binomial log-likelihood of the data given rates and hidden angles.

    Returns -inf when a degenerate batch probability (0 or 1) conflicts with
    the observed count.
    """
    thetas = _check_thetas(thetas, data.m)
    g = data.gates().astype(float)
    r = np.exp(-2.0 * (rates.d_ini + rates.d_n * g))
    prob = 0.5 + 0.5 * r * np.cos(thetas)
    terms = _binom_log_terms(data.zeros(), data.shots(), prob, _log_choose(data.zeros(), data.shots()))
    return float(np.sum(terms))


def log_hidden_prior(thetas, rates, data):
    """Log density of the hidden angles under the pool-level walk.

    Records with g = 0 carry no pool exposure: their angle is pinned to 0
    and contributes nothing (or -inf if moved off the pin).  Positive gate
    counts require d_q > 0; a zero pool exposure raises
    :class:`DegenerateDistributionError` so callers handle the point mass
    explicitly.
    """
    thetas = _check_thetas(thetas, data.m)
    g = data.gates()
    pos = g >= 1
    total = 0.0
    if np.any(~pos) and np.any(thetas[~pos] != 0.0):
        return float("-inf")
    if np.any(pos):
        taus = rates.d_q * g[pos].astype(float)
        if np.any(taus <= 0.0):
            raise DegenerateDistributionError(
                "pool exposure d_q * g is zero for a record with g >= 1; "
                "the hidden angle is a point mass at 0"
            )
        total = float(np.sum(_log_theta_pdf_batch(thetas[pos], taus)))
    return total


def _heuristic_init(data):
    g = data.gates().astype(float)
    freq = data.frequencies()
    y = np.clip(2.0 * freq - 1.0, 1e-6, None)
    mask = (y > 0.05) & (g > 0)
    if mask.sum() >= 2 and np.ptp(g[mask]) > 0:
        slope, intercept = np.polyfit(g[mask], np.log(y[mask]), 1)
        d_tot = max(-slope / 2.0, _MIN_INIT_RATE)
        d_ini = max(-intercept / 2.0, _MIN_INIT_RATE)
    else:
        d_tot = 1e-3
        d_ini = 1e-2
    half = max(d_tot / 2.0, _MIN_INIT_RATE)
    return DiffusionRates(d_ini=d_ini, d_n=half, d_q=half)


def _init_thetas(data, rates):
    g = data.gates().astype(float)
    r = np.exp(-2.0 * (rates.d_ini + rates.d_n * g))
    x = np.clip((2.0 * data.frequencies() - 1.0) / r, -1.0 + 1e-12, 1.0 - 1e-12)
    thetas = np.arccos(x)
    thetas[data.gates() == 0] = 0.0
    return thetas


class _Stall:
    """Raises if an active block goes a full long window without accepting."""

    def __init__(self, label):
        self.label = label
        self.count = 0
        self.accepts = 0

    def update(self, accepted):
        self.count += 1
        self.accepts += accepted
        if self.count >= _STALL_WINDOW:
            if self.accepts == 0:
                raise AdaptationError(
                    f"no {self.label} proposals accepted over {_STALL_WINDOW} iterations"
                )
            self.count = 0
            self.accepts = 0


def run_mcmc(data, cfg, *, single_level=False, fixed_rates=None, init_rates=None):
    """Sample the posterior with the alternating block scheme.

    Parameters
    ----------
    data : PoolDataset
    cfg : ChainConfig
    single_level : bool
        Restrict to the one-scale model: d_q = 0, all hidden angles pinned
        to 0, only (d_ini, d_n) sampled.
    fixed_rates : DiffusionRates, optional
        Keep the rates fixed and sample only the hidden angles (used for
        conditional checks of the hidden-angle posterior).
    init_rates : DiffusionRates, optional
        Starting point for the rate walk; default is a decay-curve fit.

    Returns a :class:`Chain`; identical seed and configuration produce an
    identical chain.  At least three records are required when the rates are
    free, since the improper prior can leave the posterior unnormalizable on
    smaller datasets.
    """
    if single_level and fixed_rates is not None:
        raise DomainError("single_level with fixed_rates leaves nothing to sample")
    if data.m < 1:
        raise DomainError("dataset is empty")
    if fixed_rates is None and data.m < 3:
        raise DomainError("need at least 3 records to fit rates (improper prior)")

    g = data.gates().astype(float)
    zeros = data.zeros().astype(float)
    shots = data.shots().astype(float)
    log_choose = _log_choose(zeros, shots)
    pos = np.nonzero(data.gates() >= 1)[0]
    gen = stream(cfg.seed)

    update_rates = fixed_rates is None
    update_thetas = (not single_level) and pos.size > 0

    rates = fixed_rates if fixed_rates is not None else (init_rates or _heuristic_init(data))
    if single_level:
        rates = DiffusionRates(d_ini=rates.d_ini, d_n=rates.d_n, d_q=0.0)
    n_free = 2 if single_level else 3
    xi = np.log(np.maximum([rates.d_ini, rates.d_n, rates.d_q][:n_free], 1e-300))

    thetas = np.zeros(data.m) if single_level else _init_thetas(data, rates)

    def unpack(xi_vec):
        vals = np.exp(xi_vec)
        d_q = 0.0 if single_level else vals[2]
        return vals[0], vals[1], d_q

    def likelihood_terms(d_ini, d_n, th):
        r = np.exp(-2.0 * (d_ini + d_n * g))
        prob = 0.5 + 0.5 * r * np.cos(th)
        return _binom_log_terms(zeros, shots, prob, log_choose), r

    def prior_terms(d_q, th):
        out = np.zeros(data.m)
        if not single_level and pos.size > 0:
            out[pos] = _log_theta_pdf_batch(th[pos], d_q * g[pos])
        return out

    d_ini, d_n, d_q = unpack(xi) if update_rates else (rates.d_ini, rates.d_n, rates.d_q)
    ll, r_vec = likelihood_terms(d_ini, d_n, thetas)
    lp = prior_terms(d_q, thetas)
    if not np.isfinite(ll.sum() + lp.sum()):
        raise DomainError("initial state has zero posterior density; supply init_rates")

    sig_rate = cfg.rate_scale
    sig_theta = np.full(pos.size, cfg.theta_scale)
    acc_rate_win = 0
    acc_theta_win = np.zeros(pos.size)
    window = 0
    acc_rate_total = 0
    acc_theta_total = 0.0
    stall_rates = _Stall("rate-block")
    stall_thetas = _Stall("hidden-angle")

    samples = []
    max_ll = float("-inf")
    best_log_post = float("-inf")
    best_xi = xi.copy()
    best_rates = DiffusionRates(d_ini=d_ini, d_n=d_n, d_q=d_q)
    best_thetas = thetas.copy()

    n_iter = cfg.burn_in + cfg.total_iterations
    for it in range(n_iter):
        in_burn = it < cfg.burn_in

        if update_rates:
            step = gen.standard_normal(n_free)
            u = gen.random()
            xi_prop = xi + sig_rate * step
            di_p, dn_p, dq_p = unpack(xi_prop)
            ll_prop, r_prop = likelihood_terms(di_p, dn_p, thetas)
            try:
                lp_prop = prior_terms(dq_p, thetas)
                # Jacobian term xi' - xi keeps the flat prior on the rates.
                log_alpha = (
                    ll_prop.sum() + lp_prop.sum() + xi_prop.sum()
                    - (ll.sum() + lp.sum() + xi.sum())
                )
            except ConvergenceError:
                log_alpha = float("-inf")
            accepted = math.log(u) < log_alpha
            if accepted:
                xi = xi_prop
                d_ini, d_n, d_q = di_p, dn_p, dq_p
                ll, r_vec, lp = ll_prop, r_prop, lp_prop
            acc_rate_win += accepted
            if not in_burn:
                acc_rate_total += accepted
            stall_rates.update(accepted)

        if update_thetas:
            step = gen.standard_normal(pos.size)
            u = gen.random(pos.size)
            prop = thetas[pos] + sig_theta * step
            # reflect at 0 and pi: fold into [0, 2pi) then mirror
            prop = np.mod(prop, 2.0 * np.pi)
            prop = np.where(prop > np.pi, 2.0 * np.pi - prop, prop)
            th_prop = thetas.copy()
            th_prop[pos] = prop
            ll_prop, _ = likelihood_terms(d_ini, d_n, th_prop)
            lp_prop = prior_terms(d_q, th_prop)
            delta = (ll_prop[pos] + lp_prop[pos]) - (ll[pos] + lp[pos])
            accept = np.log(u) < delta
            idx = pos[accept]
            thetas[idx] = th_prop[idx]
            ll[idx] = ll_prop[idx]
            lp[idx] = lp_prop[idx]
            acc_theta_win += accept
            if not in_burn:
                acc_theta_total += accept.sum()
            stall_thetas.update(int(accept.any()))

        window += 1
        if in_burn and window == _ADAPT_WINDOW:
            if update_rates:
                frac = acc_rate_win / window
                if frac < _ACCEPT_LOW:
                    sig_rate *= 0.7
                elif frac > _ACCEPT_HIGH:
                    sig_rate *= 1.4
            if update_thetas:
                frac = acc_theta_win / window
                sig_theta = np.where(
                    frac < _ACCEPT_LOW,
                    sig_theta * 0.7,
                    np.where(frac > _ACCEPT_HIGH, sig_theta * 1.4, sig_theta),
                )
            acc_rate_win = 0
            acc_theta_win[:] = 0.0
            window = 0
        elif window == _ADAPT_WINDOW:
            acc_rate_win = 0
            acc_theta_win[:] = 0.0
            window = 0

        if not in_burn:
            log_post = float(ll.sum() + lp.sum())
            ll_sum = float(ll.sum())
            if ll_sum > max_ll:
                max_ll = ll_sum
            if log_post > best_log_post:
                best_log_post = log_post
                best_rates = DiffusionRates(d_ini=d_ini, d_n=d_n, d_q=d_q)
                best_thetas = thetas.copy()
            if (it - cfg.burn_in + 1) % cfg.thin == 0:
                samples.append(
                    PosteriorSample(
                        rates=DiffusionRates(d_ini=d_ini, d_n=d_n, d_q=d_q),
                        hidden_thetas=thetas.copy(),
                        log_post=log_post,
                    )
                )

    return Chain(
        samples=samples,
        max_log_likelihood=max_ll,
        best_rates=best_rates,
        best_thetas=best_thetas,
        best_log_post=best_log_post,
        accept_rate_rates=(acc_rate_total / cfg.total_iterations) if update_rates else float("nan"),
        accept_rate_thetas=(
            acc_theta_total / (cfg.total_iterations * pos.size) if update_thetas else float("nan")
        ),
    )


def _posterior_objective(data, single_level):
    g = data.gates().astype(float)
    zeros = data.zeros().astype(float)
    shots = data.shots().astype(float)
    log_choose = _log_choose(zeros, shots)
    pos = np.nonzero(data.gates() >= 1)[0]

    def value(rates_vec, thetas):
        d_ini, d_n = rates_vec[0], rates_vec[1]
        d_q = 0.0 if single_level else rates_vec[2]
        r = np.exp(-2.0 * (d_ini + d_n * g))
        prob = 0.5 + 0.5 * r * np.cos(thetas)
        ll = float(np.sum(_binom_log_terms(zeros, shots, prob, log_choose)))
        lp = 0.0
        if not single_level and pos.size > 0:
            try:
                lp = float(np.sum(_log_theta_pdf_batch(thetas[pos], d_q * g[pos])))
            except ConvergenceError:
                return float("-inf"), ll
        return ll + lp, ll

    return value, pos, g, zeros, shots, log_choose


def _refine_map(data, rates, thetas, single_level, rounds=3):
    """Coordinate ascent from the best sampled state.

    Alternates a Nelder-Mead polish of the (log) rates with per-record
    bounded maximization of each hidden angle.  Returns the refined rates,
    angles, log posterior and log likelihood.
    """
    value, pos, g, zeros, shots, log_choose = _posterior_objective(data, single_level)
    n_free = 2 if single_level else 3
    vec = np.array([rates.d_ini, rates.d_n, rates.d_q][:n_free])
    thetas = thetas.copy()

    for _ in range(rounds):
        def neg(xi_vec):
            v, _ = value(np.exp(xi_vec), thetas)
            return -v if np.isfinite(v) else 1e300

        res = minimize(
            neg,
            np.log(np.maximum(vec, 1e-300)),
            method="Nelder-Mead",
            options={"maxiter": 300, "xatol": 1e-6, "fatol": 1e-9},
        )
        vec = np.exp(res.x)
        if not single_level and pos.size > 0:
            d_ini, d_n, d_q = vec[0], vec[1], vec[2]
            r = np.exp(-2.0 * (d_ini + d_n * g))
            for i in pos:
                tau_i = np.array([d_q * g[i]])

                def neg_theta(th):
                    prob = 0.5 + 0.5 * r[i] * math.cos(th)
                    ll_i = float(
                        _binom_log_terms(zeros[i], shots[i], prob, log_choose[i])
                    )
                    lp_i = float(_log_theta_pdf_batch(np.array([th]), tau_i)[0])
                    return -(ll_i + lp_i)

                opt = minimize_scalar(neg_theta, bounds=(0.0, math.pi), method="bounded")
                if -opt.fun > -neg_theta(thetas[i]):
                    thetas[i] = opt.x

    full = np.array([vec[0], vec[1], 0.0 if single_level else vec[2]])
    log_post, ll = value(full, thetas)
    refined = DiffusionRates(d_ini=full[0], d_n=full[1], d_q=full[2])
    return refined, thetas, log_post, ll


_PERCENTILES = (5, 25, 50, 75, 95)


def posterior_summary(rates_matrix):
    """Mean, standard deviation and percentiles per rate from an (S, 3) array."""
    out = {}
    for j, name in enumerate(("d_ini", "d_n", "d_q")):
        col = rates_matrix[:, j]
        entry = {"mean": float(col.mean()), "std": float(col.std(ddof=0))}
        for p in _PERCENTILES:
            entry[f"p{p}"] = float(np.percentile(col, p))
        out[name] = entry
    return out


def fit_report(data, cfg, *, return_chains=False):
    """Fit both models and compare their best-found log-likelihoods.

    Runs the full two-level chain and the restricted single-level chain
    (d_q forced to 0, hidden angles pinned; independent stream at seed + 1),
    refines each maximum-posterior state by coordinate ascent, and reports
    posterior summaries, the refined MAP rates, and the log-likelihood
    ratio.  The two-level maximum is floored at the single-level optimum,
    which is a valid boundary point (d_q = 0) of the nested family, so the
    ratio is never negative.
    """
    two = run_mcmc(data, cfg)
    single = run_mcmc(data, replace(cfg, seed=cfg.seed + 1), single_level=True)

    map_two, _, _, ll_at_map_two = _refine_map(data, two.best_rates, two.best_thetas, False)
    map_one, _, _, ll_at_map_one = _refine_map(data, single.best_rates, single.best_thetas, True)

    ll_single = max(single.max_log_likelihood, ll_at_map_one)
    ll_two = max(two.max_log_likelihood, ll_at_map_two, ll_single)

    report = FitReport(
        posterior=posterior_summary(two.rates_array()),
        map_rates={"d_ini": map_two.d_ini, "d_n": map_two.d_n, "d_q": map_two.d_q},
        n_samples=len(two.samples),
        max_log_likelihood_two_level=ll_two,
        max_log_likelihood_single_level=ll_single,
        log_likelihood_ratio=ll_two - ll_single,
    )
    if return_chains:
        return report, two, single
    return report
