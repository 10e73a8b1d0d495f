"""Bloch-sphere geometry and Legendre polynomial evaluation.

The colatitude ``theta`` (angle from the north pole, in radians) fixes the
probability of reading out the zero state through P = cos^2(theta/2).  All
densities in this package are expansions in Legendre polynomials of
cos(theta), so a stable polynomial recurrence lives here as well.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, SingularityError

# Floating-point overshoot tolerated on polynomial arguments before clamping.
# cos/transform chains routinely land a few ulps outside [-1, 1].
ARGUMENT_OVERSHOOT = 1e-12


def _checked(x, lo, hi, name):
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < lo) or np.any(arr > hi):
        raise DomainError(f"{name} must lie in [{lo:g}, {hi:g}]")
    return arr


def _like_input(out, x):
    return float(out) if np.ndim(x) == 0 else out


def prob_from_colatitude(theta):
    """Zero-state readout probability at colatitude ``theta``.

    P = cos^2(theta/2) = 1/2 + cos(theta)/2.  Strictly decreasing on
    [0, pi]: the north pole reads out 1, the equator 1/2, the south pole 0.
    """
    arr = _checked(theta, 0.0, np.pi, "theta")
    return _like_input(0.5 + 0.5 * np.cos(arr), theta)


def colatitude_from_prob(p):
    """Inverse of :func:`prob_from_colatitude`: theta = arccos(2p - 1)."""
    arr = _checked(p, 0.0, 1.0, "p")
    return _like_input(np.arccos(np.clip(2.0 * arr - 1.0, -1.0, 1.0)), p)


def jacobian_dtheta_dp(p):
    """Derivative d(theta)/dP = -1 / sqrt(P - P^2), for 0 < P < 1.

    Its magnitude converts densities between the probability and the
    colatitude coordinate.  The endpoints are singular.
    """
    arr = _checked(p, 0.0, 1.0, "p")
    if np.any(arr == 0.0) or np.any(arr == 1.0):
        raise SingularityError("jacobian is singular at p = 0 and p = 1")
    return _like_input(-1.0 / np.sqrt(arr * (1.0 - arr)), p)


def legendre(k, x):
    """Legendre polynomial L_k(x) via the upward three-term recurrence.

    Parameters
    ----------
    k : int
        Polynomial order, k >= 0.
    x : float or ndarray
        Argument(s) in [-1, 1].  Values overshooting by at most 1e-12 are
        clamped; anything further out raises :class:`DomainError`.
    """
    k = _check_order(k)
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(np.abs(arr) > 1.0 + ARGUMENT_OVERSHOOT):
        raise DomainError("legendre argument must lie in [-1, 1]")
    xc = np.clip(arr, -1.0, 1.0)
    if k == 0:
        return _like_input(np.ones_like(xc), x)
    pkm1 = np.ones_like(xc)
    pk = xc.copy()
    for j in range(1, k):
        pkm1, pk = pk, ((2 * j + 1) * xc * pk - j * pkm1) / (j + 1)
    return _like_input(pk, x)


def shifted_legendre(k, x):
    """Shifted Legendre polynomial on [0, 1]: L_k(2x - 1).

    The family is orthogonal on the unit interval with
    integral of L_j(2x-1) L_k(2x-1) dx = delta_jk / (2k + 1).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < -ARGUMENT_OVERSHOOT) or np.any(
        arr > 1.0 + ARGUMENT_OVERSHOOT
    ):
        raise DomainError("shifted_legendre argument must lie in [0, 1]")
    return legendre(k, 2.0 * np.clip(arr, 0.0, 1.0) - 1.0)


def _check_order(k):
    if not float(k).is_integer() or k < 0:
        raise DomainError("polynomial order must be a non-negative integer")
    return int(k)
