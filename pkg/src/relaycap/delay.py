"""Delay-violation bounds for a queue and for two queues in tandem.

Exponents here are per second and delays are in seconds. A delay exponent
``J`` gives ``Pr{D > D_max} ~ exp(-J * D_max)`` for one queue. For two queues
the end-to-end bound couples ``J1`` and ``J2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq

from .exceptions import DomainError, NumericalFailure

_INV_E = math.exp(-1.0)


def lambertw_m1(x, tol=1e-15, max_iter=60):
    """Lower real branch W_{-1}(x) for x in [-1/e, 0).

    Halley iteration on w*e^w = x. Near the branch point the start value comes
    from the series in p = -sqrt(2(1 + e*x)).
    """
    x = float(x)
    if not (-_INV_E - 1e-17 <= x < 0):
        raise DomainError(f"W_-1 is real only on [-1/e, 0), got {x}")
    q = 1.0 + math.e * x
    if q <= 0:
        return -1.0
    if q < 0.25:
        p = -math.sqrt(2.0 * q)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3 - 43.0 / 540.0 * p ** 4
        if q < 1e-10:
            return w
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = l1 - l2 + l2 / l1
    for _ in range(max_iter):
        ew = math.exp(w)
        fw = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0:
            break
        step = fw / (ew * wp1 - (w + 2.0) * fw / (2.0 * wp1))
        w -= step
        if abs(step) <= tol * abs(w):
            return w
    return w


def j_threshold(eps, d_max):
    """Per-second exponent that a single queue needs to meet Pr{D > d_max} <= eps.

    It solves ``exp(-J d)(1 + J d) = eps``, the tandem bound with both exponents
    equal.
    """
    if not 0 < eps <= 1:
        raise DomainError(f"violation target must lie in (0, 1], got {eps}")
    if not d_max > 0:
        raise DomainError(f"delay bound must be positive, got {d_max}")
    if eps == 1:
        return 0.0
    return -(1.0 + lambertw_m1(-eps * _INV_E)) / d_max


def _phi(delta):
    # (1 - e^-delta) / delta, equal to 1 at delta = 0
    if delta < 1e-8:
        return 1.0 - 0.5 * delta
    return -math.expm1(-delta) / delta


def end_to_end_violation(j1, j2, d_max):
    """Bound on Pr{D > d_max} for two queues in tandem, symmetric in (j1, j2).

    Uses the equal-exponent limit ``e^{-J d}(1 + J d)`` when j1 == j2.
    """
    if not (j1 >= 0 and j2 >= 0 and d_max > 0):
        raise DomainError("exponents must be non-negative and d_max positive")
    a = max(j1, j2) * d_max
    b = min(j1, j2) * d_max
    if math.isinf(b):
        return 0.0
    if math.isinf(a):
        return math.exp(-b)
    return math.exp(-b) * (1.0 + b * _phi(a - b))


def j_floor(eps, d_max):
    """``-log(eps)/d_max``: the smallest per-second exponent either queue may have."""
    if not 0 < eps <= 1:
        raise DomainError(f"violation target must lie in (0, 1], got {eps}")
    if not d_max > 0:
        raise DomainError(f"delay bound must be positive, got {d_max}")
    return -math.log(eps) / d_max


def coupling_function(j1, eps, d_max, rtol=1e-13):
    """The J2 that puts (j1, J2) on the boundary end_to_end_violation = eps.

    Defined for ``j1 >= j_floor(eps, d_max)``; it decreases from ``inf`` at the
    floor to the floor itself as ``j1`` grows, and maps ``j_threshold`` to itself.
    """
    j0 = j_floor(eps, d_max)
    if eps == 1:
        return 0.0
    if j1 < j0:
        raise DomainError(f"J1 = {j1} is below the feasibility floor {j0}; no J2 meets the target")
    if math.isinf(j1):
        return j0
    if j1 == j0:
        return math.inf
    if j1 == j_threshold(eps, d_max):
        # symmetric fixed point
        return j1

    def excess(j2):
        return end_to_end_violation(j1, j2, d_max) - eps

    hi = max(2.0 * j0, j1)
    for _ in range(400):
        if excess(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise NumericalFailure("could not bracket the boundary root", trace={"j1": j1})
    if excess(j0) <= 0:
        return j0
    return brentq(excess, j0, hi, xtol=1e-300, rtol=rtol, maxiter=500)


@dataclass(frozen=True)
class DelayConstraint:
    """Statistical delay target Pr{D > d_max} <= eps (d_max in seconds)."""

    eps: float
    d_max: float = 1.0

    def __post_init__(self):
        j_floor(self.eps, self.d_max)

    @property
    def j0(self):
        return j_floor(self.eps, self.d_max)

    @property
    def j_th(self):
        return j_threshold(self.eps, self.d_max)

    def violation(self, j1, j2):
        return end_to_end_violation(j1, j2, self.d_max)

    def phi(self, j1):
        return coupling_function(j1, self.eps, self.d_max)


phi = coupling_function
lambert_w_minus1 = lambertw_m1
