"""Effective capacity of the buffer-aided relay under an end-to-end delay target.

The solver walks the boundary curve of (J1, J2) pairs whose end-to-end
violation bound equals eps. Both exponents are tied to the per-bit QoS
exponents theta1 (source queue) and theta2 (relay queue). The walk starts
from the symmetric point J1 = J2 = J_th. The relation between theta1 and the
routing LMGF at theta2 decides whether the source queue or the relay queue
is relieved.

Internally rates are bits per block and J is per block; the delay constraint
works per second, so ``J_block = J_per_s * T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .delay import DelayConstraint
from .exceptions import DomainError, NumericalFailure, SaturationError
from .fading import RelayPolicy, Scenario
from .mgf import ExponentPoint, RateLaw, ServiceLaws, default_engine, lambda_p1, laws_mean_rates

CASE_LABELS = ("I", "II", "II-degenerate", "III", "III-degenerate", "unstable")


@dataclass
class CapacityResult:
    case_label: str
    r_eps: float  # bits per block
    point: Optional[ExponentPoint]
    T: float
    prob_routed: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def r_eps_per_s(self):
        return self.r_eps / self.T


# ---------------------------------------------------------------------------
# Law models: a fixed policy has one pair of laws; a policy tied to theta1
# (MDE) rebuilds them for each theta1.


class LawModel:
    """Source of service laws, possibly depending on theta1."""

    def __init__(self, build: Callable[[Optional[float]], ServiceLaws], coupled: bool):
        self._build = build
        self.coupled = coupled
        self._cache: dict = {}

    @classmethod
    def fixed(cls, policy: RelayPolicy, s: Scenario, engine=None):
        engine = engine if engine is not None else default_engine(s)
        laws = engine.laws(policy, s)
        return cls(lambda theta1: laws, coupled=False)

    def laws(self, theta1=None) -> ServiceLaws:
        key = None if not self.coupled else theta1
        if key not in self._cache:
            self._cache[key] = self._build(key)
        return self._cache[key]


# ---------------------------------------------------------------------------
# Building blocks


def check_stability(policy, s, engine=None):
    """True iff the mean routed source rate is below the mean relay rate."""
    engine = engine if engine is not None else default_engine(s)
    return laws_stable(engine.laws(policy, s))


def laws_stable(laws: ServiceLaws):
    m = laws_mean_rates(laws)
    return m.routed_source < m.relay


def invert_law(law: RateLaw, target, rtol=1e-13):
    """theta > 0 with ``law.delay_exponent(theta) == target`` (per block)."""
    if not target > 0:
        raise DomainError(f"target exponent must be positive, got {target}")
    sup = law.exponent_supremum()
    if target >= sup:
        raise SaturationError(f"exponent {target:.6g} is not reachable; supremum is {sup:.6g}", sup)
    mean = law.mean()
    # J(theta) <= theta * E{C}, so target/E{C} is a lower bracket
    lo = target / mean
    hi = 2.0 * lo
    for _ in range(200):
        if law.delay_exponent(hi) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SaturationError(f"exponent {target:.6g} not reached while bracketing", law.delay_exponent(hi))
    if law.delay_exponent(lo) >= target:
        return lo
    return brentq(lambda th: law.delay_exponent(th) - target, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500)


def invert_exponent(j_target, which, policy, s, engine=None):
    """Per-bit theta at which J1 or J2 (per block) equals ``j_target``."""
    engine = engine if engine is not None else default_engine(s)
    laws = engine.laws(policy, s)
    if which in ("J1", 1, "source"):
        return invert_law(laws.source, j_target)
    if which in ("J2", 2, "relay"):
        return invert_law(laws.relay, j_target)
    raise DomainError(f"which must be 'J1' or 'J2', got {which!r}")


def _invert_coupled(fn, target, x0, rtol=1e-13):
    """Root of the increasing function ``fn(x) = target`` with an expanding bracket."""
    lo = hi = x0
    if fn(x0) < target:
        for _ in range(200):
            lo, hi = hi, 2.0 * hi
            if fn(hi) >= target:
                break
        else:
            raise SaturationError(f"coupled exponent never reaches {target:.6g}", fn(hi))
    else:
        for _ in range(200):
            hi, lo = lo, 0.5 * lo
            if fn(lo) < target:
                break
        else:
            return lo
    return brentq(lambda x: fn(x) - target, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500)


def upper_bound_rate(point: ExponentPoint):
    """min{J1/theta1, J2/Lambda_p1(theta2)} in bits per block.

    The relay branch is infinite when nothing is routed, and an infinite
    exponent on either queue leaves only the other branch.
    """
    src = point.j1 / point.theta1 if math.isfinite(point.theta1) else math.inf
    if point.lambda_p1 <= 0 or not math.isfinite(point.theta2):
        rel = math.inf
    else:
        rel = point.j2 / point.lambda_p1
    if math.isinf(src) and math.isinf(rel):
        raise DomainError("both branches of the bound are unbounded")
    return min(src, rel)


def limit_capacity_eps1(policy, s, engine=None):
    """Effective capacity as the violation target tends to one (bits per block)."""
    engine = engine if engine is not None else default_engine(s)
    return _limit_rate(engine.laws(policy, s))


def _limit_rate(laws: ServiceLaws):
    m = laws_mean_rates(laws)
    if laws.prob_routed <= 0:
        return m.source
    return min(m.source, m.relay / laws.prob_routed)


# ---------------------------------------------------------------------------
# Solver


@dataclass
class _Pt:
    theta1: float
    theta2: float
    j1: float
    j2: float
    lam: float
    laws: ServiceLaws


class _Walk:
    def __init__(self, model: LawModel, s: Scenario, c: DelayConstraint):
        self.model, self.T, self.c = model, s.T, c
        self.j0 = c.j0 * s.T
        self.trace: list = []

    def j1(self, theta1):
        return self.model.laws(theta1).source.delay_exponent(theta1)

    def theta1_for(self, j_block):
        if not self.model.coupled:
            return invert_law(self.model.laws().source, j_block)
        laws0 = self.model.laws(None)
        return _invert_coupled(self.j1, j_block, j_block / laws0.source.mean())

    def point(self, theta1) -> Optional[_Pt]:
        """Boundary point with the given theta1, or None when J2 is unreachable."""
        laws = self.model.laws(theta1)
        j1 = laws.source.delay_exponent(theta1)
        if j1 / self.T < self.c.j0:
            return None
        j2s = self.c.phi(j1 / self.T)
        if not math.isfinite(j2s):
            return None
        try:
            theta2 = invert_law(laws.relay, j2s * self.T)
        except SaturationError:
            return None
        return _Pt(theta1, theta2, j1, j2s * self.T, lambda_p1(theta2, laws.prob_routed), laws)

    def relay_slack(self, theta1):
        """J2 minus the relay-side requirement at theta1; >= 0 means the relay does not bind."""
        p = self.point(theta1)
        if p is None:
            val = -math.inf
        elif p.lam <= p.theta1:
            val = p.j2 - p.j1 * p.lam / p.theta1
        else:
            est = p.laws.source.log_mgf_estimate(p.lam - p.theta1)
            if not math.isfinite(est.value) or est.error > 1e-6 * max(1.0, abs(est.value)):
                val = math.nan
            else:
                val = p.j2 - p.j1 - est.value
        self.trace.append(("slack", theta1, val))
        return val

    def rate_gap(self, theta1):
        p = self.point(theta1)
        val = math.nan if p is None else p.j1 / p.theta1 - p.j2 / p.lam
        self.trace.append(("gap", theta1, val))
        return val


def _refine(fn, lo, hi, flo, fhi, iters=200):
    """Sign change of ``fn`` in [lo, hi]; bisect while an end value is infinite."""
    for _ in range(iters):
        if math.isfinite(flo) and math.isfinite(fhi):
            break
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if math.isnan(fm):
            raise NumericalFailure("undefined value while refining a boundary root", trace={"theta1": mid})
        if (fm >= 0) == (fhi >= 0):
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    if flo == 0:
        return lo
    if fhi == 0 or not math.isfinite(flo):
        return hi
    return brentq(fn, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=500)


def effective_capacity(policy: RelayPolicy, s: Scenario, constraint: DelayConstraint, engine=None) -> CapacityResult:
    """Maximum constant source rate meeting Pr{D > D_max} <= eps for a fixed policy."""
    return solve_capacity(LawModel.fixed(policy, s, engine), s, constraint)


def solve_capacity(model: LawModel, s: Scenario, c: DelayConstraint) -> CapacityResult:
    T = s.T
    ref = model.laws(None)
    diag: dict = {"coupled": model.coupled}
    if not laws_stable(ref):
        m = laws_mean_rates(ref)
        diag.update(mean_routed_source=m.routed_source, mean_relay=m.relay)
        return CapacityResult("unstable", 0.0, None, T, ref.prob_routed, diag)

    if c.eps == 1:
        m = laws_mean_rates(ref)
        pz = ref.prob_routed
        relay_lim = m.relay / pz if pz > 0 else math.inf
        if m.source < relay_lim:
            label = "II"
        elif m.source > relay_lim:
            label = "III"
        else:
            label = "I"
        diag["limit"] = True
        return CapacityResult(label, min(m.source, relay_lim), None, T, pz, diag)

    w = _Walk(model, s, c)
    jth = c.j_th * T
    th1_th = w.theta1_for(jth)
    laws_th = model.laws(th1_th)
    th2_th = invert_law(laws_th.relay, jth)
    lam_th = lambda_p1(th2_th, laws_th.prob_routed)
    diag.update(theta1_th=th1_th, theta2_th=th2_th, lambda_th=lam_th, j_th=jth, j0=w.j0)

    def finish(label, theta1, theta2, j1, j2, laws, rate):
        lam = lambda_p1(theta2, laws.prob_routed) if math.isfinite(theta2) else math.inf
        point = ExponentPoint(theta1, theta2, j1, j2, lam, T)
        bound = upper_bound_rate(point)
        diag["upper_bound"] = bound
        diag["trace"] = w.trace
        if not math.isclose(rate, bound, rel_tol=1e-6) and label in ("I", "II", "III"):
            raise NumericalFailure(
                f"case {label}: rate {rate:.10g} differs from the bound {bound:.10g} at the optimum",
                trace=diag,
            )
        return CapacityResult(label, rate, point, T, laws.prob_routed, diag)

    if abs(th1_th - lam_th) <= 1e-8 * max(th1_th, lam_th):
        return finish("I", th1_th, th2_th, jth, jth, laws_th, jth / th1_th)

    if th1_th > lam_th:
        return _case_two(w, model, th1_th, finish, diag)
    return _case_three(w, model, th1_th, finish, diag)


def _case_two(w: _Walk, model: LawModel, th1_th, finish, diag):
    laws_th = model.laws(th1_th)
    th1_0 = w.theta1_for(w.j0)
    diag["theta1_0"] = th1_0

    def degenerate():
        laws0 = model.laws(th1_0)
        return finish("II-degenerate", th1_0, math.inf, w.j0, math.inf, laws0, w.j0 / th1_0)

    if laws_th.prob_routed <= 0 or laws_th.relay.ess_min >= laws_th.source.ess_max:
        return degenerate()

    span = th1_th - th1_0
    fracs = np.concatenate([np.linspace(1.0, 1.0 / 24, 24), 2.0 ** -np.arange(5, 45)])
    thetas = th1_0 + span * fracs  # descending toward theta1_0
    vals = [w.relay_slack(t) for t in thetas]
    roots = []
    for k in range(1, len(thetas)):
        hi_t, lo_t = thetas[k - 1], thetas[k]
        hi_v, lo_v = vals[k - 1], vals[k]
        if math.isnan(hi_v) or math.isnan(lo_v):
            continue
        if hi_v >= 0 > lo_v:
            roots.append((lo_t, hi_t, lo_v, hi_v))
    diag["case_two_brackets"] = len(roots)
    if not roots:
        return degenerate()
    # the smallest theta1 satisfying the equality
    lo_t, hi_t, lo_v, hi_v = roots[-1]
    th1 = _refine(w.relay_slack, lo_t, hi_t, lo_v, hi_v)
    diag["case_two_roots"] = [r[0] for r in roots]
    p = w.point(th1)
    if p is None:
        raise NumericalFailure("case II root is not on the boundary", trace=diag)
    return finish("II", p.theta1, p.theta2, p.j1, p.j2, p.laws, p.j1 / p.theta1)


def _case_three(w: _Walk, model: LawModel, th1_th, finish, diag):
    laws_th = model.laws(th1_th)
    try:
        th2_0 = invert_law(laws_th.relay, w.j0)
    except SaturationError as exc:
        raise NumericalFailure("relay exponent cannot reach J0", trace=diag) from exc
    lam0 = lambda_p1(th2_0, laws_th.prob_routed)
    diag["theta2_0"] = th2_0
    if lam0 > 0 and laws_th.source.ess_min >= w.j0 / lam0 and not model.coupled:
        return finish("III-degenerate", math.inf, th2_0, math.inf, w.j0, laws_th, w.j0 / lam0)

    prev_t, prev_v = th1_th, w.rate_gap(th1_th)
    for k in range(1, 120):
        t = th1_th * 1.5 ** k
        v = w.rate_gap(t)
        if math.isnan(v):
            continue
        if v <= 0:
            th1 = _refine(w.rate_gap, prev_t, t, prev_v, v)
            p = w.point(th1)
            return finish("III", p.theta1, p.theta2, p.j1, p.j2, p.laws, p.j2 / p.lam)
        prev_t, prev_v = t, v
    raise NumericalFailure("case III scan found no crossing", trace=diag)
