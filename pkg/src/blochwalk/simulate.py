"""Monte Carlo forward simulation of the two-scale walk.

Two modes produce tables of observed frequencies per pool and gate count:

* ``stepwise`` integrates the walk literally: explicit 3D unit vectors, one
  rotation per walker per gate plus one shared rotation per pool per gate.
  It is the brute-force reference for the analytic model.
* ``distributional`` samples the analytic construction directly: pool
  colatitude from the diffusion density, then a Binomial readout.

Stepwise trajectories are continuous per pool, so snapshots of the same pool
at different gate counts are correlated (like repeated runs of one queue);
distributional draws are independent across gate counts (the time-sliced
view).  Per-gate marginals agree between the modes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernel import ThetaSampler
from .rng import stream
from .two_scale import DiffusionRates, reduced_length

# One simulation step per gate with Gaussian rotation vectors is a
# small-angle scheme; rates beyond this make it inaccurate.
MAX_STEP_RATE = 0.05

# Stream context tags (first key component after the seed).
_TAG_SPAM = 0
_TAG_WALKER = 1
_TAG_POOL = 2
_TAG_READOUT = 3
_TAG_DISTRIBUTIONAL = 4


@dataclass(frozen=True)
class CoherentErrorConfig:
    """Deterministic over-rotation shared by part of the shots in each run.

    affected_fraction  fraction of walkers per pool receiving the rotation
    over_rotation      signed angle in rad added per gate about the x axis
    """

    affected_fraction: float
    over_rotation: float

    def __post_init__(self):
        if not (0.0 <= self.affected_fraction <= 1.0):
            raise DomainError("affected_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class FrequencyDraw:
    """One simulated pool observation at one gate count."""

    gate_count: int
    pool: int
    observed_freq: float
    true_pool_prob: float
    pool_angle: float


@dataclass
class SimConfig:
    rates: DiffusionRates
    gates: list = field(default_factory=list)
    n_shots: int = 8192
    m_pools: int = 1
    seed: int = 0
    mode: str = "distributional"

    def __post_init__(self):
        if self.mode not in ("stepwise", "distributional"):
            raise DomainError("mode must be 'stepwise' or 'distributional'")
        if self.n_shots < 1 or self.m_pools < 1:
            raise DomainError("n_shots and m_pools must be >= 1")
        gates = [int(g) for g in self.gates]
        if not gates or any(g < 0 for g in gates):
            raise DomainError("gates must be a non-empty list of counts >= 0")
        if len(set(gates)) != len(gates):
            raise DomainError("gates must be unique")
        self.gates = gates


def _rotate(v, omega):
    """Rodrigues rotation of unit vectors ``v`` by rotation vectors ``omega``."""
    angle = np.sqrt(np.sum(omega * omega, axis=-1, keepdims=True))
    safe = np.where(angle > 0.0, angle, 1.0)
    axis = omega / safe
    c = np.cos(angle)
    s = np.sin(angle)
    rotated = v * c + np.cross(axis, v) * s + axis * np.sum(axis * v, axis=-1, keepdims=True) * (1.0 - c)
    return np.where(angle > 0.0, rotated, v)


def _rotation_vectors(rng, shape, exposure):
    # Per-component variance 2*exposure realizes an isotropic diffusion step
    # whose mean cos(colatitude displacement) is exp(-2*exposure) + O(exposure^2).
    return rng.normal(0.0, np.sqrt(2.0 * exposure), size=shape + (3,))


def _rotate_about_x(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    out = v.copy()
    out[..., 1] = c * v[..., 1] - s * v[..., 2]
    out[..., 2] = s * v[..., 1] + c * v[..., 2]
    return out


def _warn_large_rates(rates):
    worst = max(rates.d_ini, rates.d_n, rates.d_q)
    if worst > MAX_STEP_RATE:
        warnings.warn(
            f"rate {worst:g} rad^2/step exceeds {MAX_STEP_RATE}; one step per gate "
            "is a small-angle scheme and loses accuracy here",
            stacklevel=3,
        )


def simulate_stepwise(cfg):
    """Explicit walker simulation; cfg.mode must be 'stepwise'."""
    if cfg.mode != "stepwise":
        raise DomainError("simulate_stepwise requires mode='stepwise'")
    return _stepwise_core(cfg, None)


def resample_runs(cfg, coherent):
    """Stepwise runs with a shared deterministic over-rotation added.

    The affected walkers (first floor(fraction * n_shots) of each pool)
    receive an extra rotation of ``over_rotation`` rad per gate about the x
    axis, producing run trajectories that oscillate on top of the diffusive
    decay.  With over_rotation = 0 the output is identical to
    :func:`simulate_stepwise` at the same seed.
    """
    return _stepwise_core(cfg, coherent)


def _stepwise_core(cfg, coherent):
    rates = cfg.rates
    _warn_large_rates(rates)
    m, n = cfg.m_pools, cfg.n_shots
    snapshots = set(cfg.gates)
    max_gate = max(cfg.gates)

    v = np.zeros((m, n, 3))
    v[..., 2] = 1.0
    com = np.zeros((m, 3))
    com[:, 2] = 1.0

    n_affected = 0
    if coherent is not None:
        n_affected = int(np.floor(coherent.affected_fraction * n))

    if rates.d_ini > 0.0:
        omega = _rotation_vectors(stream(cfg.seed, _TAG_SPAM, 0), (m, n), rates.d_ini)
        v = _rotate(v, omega)

    results = {}
    if 0 in snapshots:
        results[0] = _readout(cfg, v, com, 0)
    for g in range(1, max_gate + 1):
        if rates.d_n > 0.0:
            omega = _rotation_vectors(stream(cfg.seed, _TAG_WALKER, g), (m, n), rates.d_n)
            v = _rotate(v, omega)
        if n_affected > 0:
            v[:, :n_affected] = _rotate_about_x(v[:, :n_affected], coherent.over_rotation)
        if rates.d_q > 0.0:
            shared = _rotation_vectors(stream(cfg.seed, _TAG_POOL, g), (m,), rates.d_q)
            v = _rotate(v, shared[:, None, :])
            com = _rotate(com, shared)
        if g in snapshots:
            results[g] = _readout(cfg, v, com, g)

    draws = []
    for g in cfg.gates:
        freq, prob, angle = results[g]
        for q in range(m):
            draws.append(
                FrequencyDraw(
                    gate_count=g,
                    pool=q,
                    observed_freq=float(freq[q]),
                    true_pool_prob=float(prob[q]),
                    pool_angle=float(angle[q]),
                )
            )
    return draws


def _readout(cfg, v, com, g):
    m, n = cfg.m_pools, cfg.n_shots
    p = 0.5 * (1.0 + np.clip(v[..., 2], -1.0, 1.0))
    u = stream(cfg.seed, _TAG_READOUT, g).random((m, n))
    freq = (u < p).sum(axis=1) / n
    cos_q = np.clip(com[:, 2], -1.0, 1.0)
    angle = np.arccos(cos_q)
    prob = 0.5 + 0.5 * reduced_length(cfg.rates, g) * cos_q
    return freq, prob, angle


def simulate_distributional(cfg, series_cfg=None, grid_points=4096):
    """Sample the analytic two-scale construction; cfg.mode must match.

    Per gate count g and pool q: draw the pool colatitude from the diffusion
    density at exposure d_q * g (a point mass at 0 when that exposure is
    zero), map it to the batch probability, then draw the zero count from
    Binomial(n_shots, probability).
    """
    if cfg.mode != "distributional":
        raise DomainError("simulate_distributional requires mode='distributional'")
    rates = cfg.rates
    m, n = cfg.m_pools, cfg.n_shots
    draws = []
    for j, g in enumerate(cfg.gates):
        gen = stream(cfg.seed, _TAG_DISTRIBUTIONAL, j)
        tau_pool = rates.d_q * g
        if tau_pool > 0.0:
            thetas = ThetaSampler(tau_pool, series_cfg, grid_points).draw(gen, m)
        else:
            thetas = np.zeros(m)
        prob = 0.5 + 0.5 * reduced_length(rates, g) * np.cos(thetas)
        zeros = gen.binomial(n, prob)
        for q in range(m):
            draws.append(
                FrequencyDraw(
                    gate_count=g,
                    pool=q,
                    observed_freq=float(zeros[q] / n),
                    true_pool_prob=float(prob[q]),
                    pool_angle=float(thetas[q]),
                )
            )
    return draws


def rescale_time_nonmarkovian(tau_rate, t, dt, kappa):
    """Exposure under a power-law rescaling of the time coordinate.

    Returns tau_rate * dt * (t/dt)^(1+kappa) with the exponent kappa in
    [0, 2]; kappa = 0 recovers the linear (Markovian) exposure tau_rate * t,
    and t = dt is an anchor point independent of kappa.  ``dt`` is a
    caller-chosen reference step.
    """
    if not (0.0 <= kappa <= 2.0):
        raise DomainError("kappa must lie in [0, 2]")
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    if tau_rate < 0.0 or t < 0.0:
        raise DomainError("tau_rate and t must be >= 0")
    return tau_rate * dt * (t / dt) ** (1.0 + kappa)
