"""Tanh-sinh node generation on the unit interval.

Nodes at level ``L`` use step ``h = 2**-L``; the even-indexed nodes form the
level ``L-1`` rule, which gives a free embedded error estimate.
"""

from functools import lru_cache

import numpy as np
from scipy.special import expit

T_MAX = 4.0  # end weights fall below 1e-35


@lru_cache(maxsize=16)
def unit_rule(level):
    """Return ``(s, 1 - s, -log s, w, w_coarse)`` for integration over (0, 1).

    The complements are returned directly so callers never form them from a
    rounded ``s`` near the endpoints.
    """
    h = 2.0 ** -level
    n = int(np.ceil(T_MAX / h))
    j = np.arange(-n, n + 1)
    t = j * h
    # (1 + tanh(pi/2 sinh t)) / 2 written as a logistic
    arg = np.pi * np.sinh(t)
    s = expit(arg)
    sc = expit(-arg)
    neglog_s = np.logaddexp(0.0, -arg)
    w = h * np.pi * np.cosh(t) * s * sc
    wc = np.where(j % 2 == 0, 2.0 * w, 0.0)
    for arr in (s, sc, neglog_s, w, wc):
        arr.setflags(write=False)
    return s, sc, neglog_s, w, wc
