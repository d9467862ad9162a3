"""Expectation engines and the LMGF / delay-exponent functions built on them.

An engine turns a (policy, scenario) pair into :class:`ServiceLaws`: weighted
point sets describing the per-block service of the source queue (``C_s``) and
of the relay queue (``C_r``). Every later quantity (delay exponents, routing
LMGF, effective bandwidth of the relay arrivals, mean rates) is a cheap
reduction over those weights, so a law is built once and reused across
exponent grids.

Exponents: ``theta`` is per bit, delay exponents ``J`` are per block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .exceptions import ConvergenceError, DomainError
from .fading import (
    DIRECT_CLEAN,
    DIRECT_INTERFERED,
    ROUTED,
    RelayPolicy,
    Scenario,
    capacity_bits,
    region_codes,
    relay_rates,
    sample_states,
    source_rates,
)


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float

    def __float__(self):
        return float(self.value)


class RateLaw:
    """Distribution of a per-block service rate as a weighted point set.

    ``coarse`` holds embedded lower-order quadrature weights (error estimate by
    difference); ``n_samples`` marks a Monte Carlo law (error by standard
    error). Exact laws carry neither.
    """

    def __init__(self, values, weights, coarse=None, n_samples=None, region=None, ess_bounds=None):
        values = np.asarray(values, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        keep = weights > 0
        if coarse is not None:
            coarse = np.asarray(coarse, dtype=float).ravel()
            keep |= coarse > 0
            coarse = coarse[keep]
        self.values = values[keep]
        self.weights = weights[keep]
        self.region = None if region is None else np.asarray(region).ravel()[keep]
        self.total_mass = float(self.weights.sum())
        self.weights = self.weights / self.total_mass
        self.coarse = None if coarse is None else coarse / coarse.sum()
        self.n_samples = n_samples
        if ess_bounds is None:
            live = self.values[self.weights > 0]
            ess_bounds = (float(live.min()), float(live.max()))
        self.ess_min, self.ess_max = ess_bounds
        self._max_abs = float(np.abs(self.values).max())

    def __len__(self):
        return self.values.size

    def expect(self, fn) -> Estimate:
        v = np.asarray(fn(self.values), dtype=float)
        val = float(np.dot(self.weights, v))
        if self.coarse is not None:
            err = abs(val - float(np.dot(self.coarse, v)))
        elif self.n_samples is not None:
            err = float(np.sqrt(np.dot(self.weights, (v - val) ** 2) / self.n_samples))
        else:
            err = 0.0
        return Estimate(val, err)

    def mean(self):
        return float(np.dot(self.weights, self.values))

    def mass(self, region):
        return float(self.weights[self.region == region].sum())

    def partial_mean(self, region):
        sel = self.region == region
        return float(np.dot(self.weights[sel], self.values[sel]))

    def _log_mgf(self, s, weights):
        if s == 0:
            return 0.0
        x = s * self.values
        if abs(s) * self._max_abs < 1.0:
            return math.log1p(float(np.dot(weights, np.expm1(x))))
        m = float(x.max())
        total = float(np.dot(weights, np.exp(x - m)))
        return m + math.log(total) if total > 0 else -math.inf

    def log_mgf(self, s):
        """``log E{exp(s*C)}`` for real ``s``."""
        return self._log_mgf(float(s), self.weights)

    def log_mgf_estimate(self, s) -> Estimate:
        val = self.log_mgf(s)
        if self.coarse is not None:
            err = abs(val - self._log_mgf(float(s), self.coarse))
        elif self.n_samples is not None:
            x = np.exp(s * self.values - max(0.0, float(np.max(s * self.values))))
            mu = float(np.dot(self.weights, x))
            sd = float(np.sqrt(np.dot(self.weights, (x - mu) ** 2) / self.n_samples))
            err = sd / mu if mu > 0 else math.inf
        else:
            err = 0.0
        return Estimate(val, err)

    def delay_exponent(self, theta):
        """``-log E{exp(-theta*C)}``, the per-block delay exponent."""
        return -self.log_mgf(-float(theta))

    def exponent_supremum(self):
        """``sup_theta -log E{exp(-theta*C)}``; finite only with an atom at zero rate."""
        if self.ess_min > 0:
            return math.inf
        p0 = float(self.weights[self.values <= 0].sum())
        return -math.log(p0) if p0 > 0 else math.inf


@dataclass(frozen=True)
class ServiceLaws:
    source: RateLaw
    relay: RateLaw
    prob_routed: float
    prob_routed_error: float = 0.0
    method: str = "enum"
    level: Optional[int] = None

    def max_relative_error(self):
        errs = [
            self.source.expect(lambda c: c),
            self.relay.expect(lambda c: c),
        ]
        rel = [e.error / max(abs(e.value), 1e-300) for e in errs]
        rel.append(self.prob_routed_error)
        return max(rel)


# ---------------------------------------------------------------------------
# Law construction


def _jump_points(policy: RelayPolicy, s: Scenario, span=80.0, points=600):
    """z_sd values where g or f crosses an atom of a discrete S-R or R-D link.

    The integrand over z_sd jumps there, so the outer rule is split at them.
    """
    pairs = [(policy.g, link) for link in (s.sr_tilde,) if not link.continuous]
    pairs += [(policy.f, link) for link in (s.fading.rd,) if not link.continuous]
    if not pairs:
        return []
    grid = s.fading.sd.expected() * np.geomspace(1e-10, span, points)
    out = []
    for fn, link in pairs:
        vals = np.asarray(fn(grid), dtype=float)
        for c in np.unique(link.nodes()[0]):
            diff = vals - c
            for k in np.flatnonzero(np.sign(diff[:-1]) != np.sign(diff[1:])):
                out.append(brentq(lambda x: float(np.asarray(fn(np.array([x])))[0]) - c, grid[k], grid[k + 1],
                                  xtol=1e-300, rtol=1e-14))
    return out


def _node_laws(policy: RelayPolicy, s: Scenario, level, method, continuous_bounds):
    sd, srt, rd = s.fading.sd, s.sr_tilde, s.fading.rd
    snr, snr_r, tb = s.snr_s, s.snr_r, s.tb

    if sd.continuous and level is not None:
        z, w, wc = (np.asarray(a, dtype=float) for a in sd.nodes_split(_jump_points(policy, s), level))
    else:
        z, w, wc = (np.asarray(a, dtype=float) for a in sd.nodes(level))
    live = (w > 0) | (wc > 0)
    z, w, wc = z[live], w[live], wc[live]

    g = np.asarray(policy.g(z), dtype=float)
    f = np.asarray(policy.f(z), dtype=float)
    p_route = np.asarray(srt.prob_above(g), dtype=float)
    p_direct = 1.0 - p_route
    p_clean = np.asarray(rd.prob_above(f), dtype=float)

    # source queue: routed / direct-clean / direct-interfered
    zr, wr, wcr = srt.nodes_above(g, level)
    zb, wb, wcb = rd.nodes_below(f, level)
    zsd = z[:, None]
    src_vals = [
        capacity_bits(snr * zr, tb),
        capacity_bits(snr * z, tb),
        capacity_bits(snr * zsd / (1.0 + snr_r * zb), tb),
    ]
    src_w = [w[:, None] * wr, w * p_direct * p_clean, (w * p_direct)[:, None] * wb]
    src_wc = [wc[:, None] * wcr, wc * p_direct * p_clean, (wc * p_direct)[:, None] * wcb]
    src_reg = [
        np.full(src_vals[0].shape, ROUTED, np.int8),
        np.full(src_vals[1].shape, DIRECT_CLEAN, np.int8),
        np.full(src_vals[2].shape, DIRECT_INTERFERED, np.int8),
    ]

    # relay queue: interfered by the source unless the source is decoded first
    zf, wf, wcf = (np.asarray(a, dtype=float) for a in rd.nodes(level))
    za, wa, wca = rd.nodes_above(f, level)
    rel_vals = [
        capacity_bits(snr_r * zf[None, :] / (1.0 + snr * zsd), tb),
        capacity_bits(snr_r * za / (1.0 + snr * zsd), tb),
        capacity_bits(snr_r * zb, tb),
    ]
    rel_w = [(w * p_route)[:, None] * wf[None, :], (w * p_direct)[:, None] * wa, (w * p_direct)[:, None] * wb]
    rel_wc = [(wc * p_route)[:, None] * wcf[None, :], (wc * p_direct)[:, None] * wca, (wc * p_direct)[:, None] * wcb]

    def cat(parts, shapes):
        return np.concatenate([np.broadcast_to(p, sh).ravel() for p, sh in zip(parts, shapes)])

    src_shapes = [np.shape(v) for v in src_vals]
    rel_shapes = [np.broadcast_shapes(np.shape(v), np.shape(wt)) for v, wt in zip(rel_vals, rel_w)]
    exact = method == "enum"
    src_bounds = rel_bounds = None
    if continuous_bounds:
        # continuous links have unbounded support
        src_bounds = (0.0, math.inf)
        rel_bounds = (0.0, math.inf)
    source = RateLaw(
        cat(src_vals, src_shapes),
        cat(src_w, src_shapes),
        coarse=None if exact else cat(src_wc, src_shapes),
        region=cat(src_reg, src_shapes),
        ess_bounds=src_bounds,
    )
    relay = RateLaw(
        cat(rel_vals, rel_shapes),
        cat(rel_w, rel_shapes),
        coarse=None if exact else cat(rel_wc, rel_shapes),
        ess_bounds=rel_bounds,
    )
    pz = float(np.dot(w, p_route))
    pz_err = 0.0 if exact else abs(pz - float(np.dot(wc, p_route)))
    return ServiceLaws(source, relay, pz, pz_err, method=method, level=level)


@dataclass(frozen=True)
class EnumerationEngine:
    """Exact expectations over discrete / constant fading."""

    method = "enum"
    tol = 0.0

    def laws(self, policy, s: Scenario, start_level=None) -> ServiceLaws:
        if s.fading.continuous:
            raise DomainError("exact enumeration requires Discrete or Constant fading on every link")
        return _node_laws(policy, s, None, "enum", continuous_bounds=False)

    def inner_level(self):
        return None


@dataclass(frozen=True)
class QuadratureEngine:
    """Nested tanh-sinh quadrature after the substitution u = exp(-z/mean).

    The level is raised until the embedded error estimate of the mean rates
    and of Pr{Z} falls below ``tol`` (relative).
    """

    tol: float = 1e-8
    min_level: int = 3
    max_level: int = 7
    method = "quad"

    def laws(self, policy, s: Scenario, start_level=None) -> ServiceLaws:
        level = max(self.min_level, start_level or self.min_level)
        err = math.inf
        while level <= self.max_level:
            laws = _node_laws(policy, s, level, "quad", continuous_bounds=s.fading.continuous)
            err = laws.max_relative_error()
            if err <= self.tol:
                return laws
            level += 1
        raise ConvergenceError(
            f"quadrature did not reach tol={self.tol:g} by level {self.max_level} (achieved {err:.3g})",
            achieved=err,
        )

    def inner_level(self):
        return 5


@dataclass(frozen=True)
class MonteCarloEngine:
    """Sample-average laws from i.i.d. block states; errors are standard errors."""

    n_samples: int = 10**6
    seed: int = 0
    method = "mc"
    tol = math.nan

    def laws(self, policy, s: Scenario, start_level=None) -> ServiceLaws:
        rng = np.random.default_rng(self.seed)
        z_sd, z_srt, z_rd = sample_states(s.fading, rng, self.n_samples, s.gamma)
        reg = region_codes(z_sd, z_srt, z_rd, policy)
        w = np.full(self.n_samples, 1.0 / self.n_samples)
        source = RateLaw(source_rates(z_sd, z_srt, z_rd, reg, s), w, n_samples=self.n_samples, region=reg)
        relay = RateLaw(relay_rates(z_sd, z_rd, reg, s), w, n_samples=self.n_samples)
        pz = float(np.mean(reg == ROUTED))
        return ServiceLaws(source, relay, pz, math.sqrt(pz * (1 - pz) / self.n_samples), method="mc")

    def inner_level(self):
        return 4


def default_engine(s: Scenario, tol=1e-8):
    return QuadratureEngine(tol=tol) if s.fading.continuous else EnumerationEngine()


def make_engine(name, tol=1e-8, mc_samples=10**6, seed=0):
    if name in ("quad", "quadrature"):
        return QuadratureEngine(tol=tol)
    if name in ("enum", "enumeration"):
        return EnumerationEngine()
    if name in ("mc", "montecarlo"):
        return MonteCarloEngine(n_samples=mc_samples, seed=seed)
    raise DomainError(f"unknown engine {name!r}")


def service_laws(policy, s, engine=None):
    engine = engine if engine is not None else default_engine(s)
    return engine.laws(policy, s)


# ---------------------------------------------------------------------------
# Exponent functions


@dataclass(frozen=True)
class ExponentPoint:
    """A point on the delay-constraint boundary.

    ``j1``/``j2`` are per block; the ``*_per_s`` properties divide by ``T``.
    """

    theta1: float
    theta2: float
    j1: float
    j2: float
    lambda_p1: float
    T: float = 1.0

    @property
    def j1_per_s(self):
        return self.j1 / self.T

    @property
    def j2_per_s(self):
        return self.j2 / self.T


@dataclass(frozen=True)
class MeanRates:
    source: float
    relay: float
    routed_source: float  # E{C_sr; z in Z}


def lambda_p1(theta, pz):
    """Routing LMGF ``log(Pr{Z^c} + e^theta Pr{Z})``."""
    theta = float(theta)
    if not 0.0 <= pz <= 1.0:
        raise DomainError(f"routing probability must lie in [0, 1], got {pz}")
    if pz == 0.0:
        return 0.0
    if pz == 1.0:
        return theta
    if abs(theta) < 1.0:
        return math.log1p(pz * math.expm1(theta))
    if theta > 0:
        return theta + math.log(pz + (1.0 - pz) * math.exp(-theta))
    return math.log((1.0 - pz) + pz * math.exp(theta))


def lambda_p1_derivative(theta, pz):
    e = pz * math.exp(theta)
    return e / ((1.0 - pz) + e)


def prob_Z(policy, s, engine=None):
    return service_laws(policy, s, engine).prob_routed


def _check_theta(theta, name):
    if not theta > 0:
        raise DomainError(f"{name} must be positive, got {theta}")


def j1(theta1, policy, s, engine=None):
    """Per-block delay exponent of the source queue."""
    _check_theta(theta1, "theta1")
    return service_laws(policy, s, engine).source.delay_exponent(theta1)


def j2(theta2, policy, s, engine=None):
    """Per-block delay exponent of the relay queue."""
    _check_theta(theta2, "theta2")
    return service_laws(policy, s, engine).relay.delay_exponent(theta2)


def relay_arrival_lmgf(theta, rate, theta_tilde, laws: ServiceLaws, max_rel_error=1e-6):
    """Effective-bandwidth LMGF of the source departures routed to the relay."""
    if theta < 0:
        raise DomainError("theta must be non-negative")
    lp = lambda_p1(theta, laws.prob_routed)
    if lp <= theta_tilde:
        return rate * lp
    est = laws.source.log_mgf_estimate(lp - theta_tilde)
    if not math.isfinite(est.value) or est.error > max_rel_error * max(1.0, abs(est.value)):
        raise ConvergenceError(
            f"log E exp(({lp:.3g} - {theta_tilde:.3g}) C_s) did not converge (error {est.error:.3g})",
            achieved=est.error,
        )
    return rate * theta_tilde + est.value


def arrival_lmgf_relay(theta, rate, theta_tilde, policy, s, engine=None):
    return relay_arrival_lmgf(theta, rate, theta_tilde, service_laws(policy, s, engine))


def laws_mean_rates(laws: ServiceLaws) -> MeanRates:
    return MeanRates(laws.source.mean(), laws.relay.mean(), laws.source.partial_mean(ROUTED))


def mean_rates(policy, s, engine=None) -> MeanRates:
    """(E{C_s}, E{C_r}, E{C_sr; Z}) in bits per block."""
    return laws_mean_rates(service_laws(policy, s, engine))
