"""Relay selection policies and the no-buffer baseline.

* MCG routes a block to the relay when the normalized S-R gain beats the
  S-D gain.
* MDE picks, for each z_sd, the routing threshold that maximizes the source
  delay exponent at a given theta1. Its capacity walk re-solves the
  threshold at every candidate theta1.
* NoBuffer is decode-and-forward without a relay queue; only the source is
  buffered.
"""

from __future__ import annotations

import math
import numpy as np

from .capacity import LawModel, invert_law, solve_capacity
from .delay import DelayConstraint
from .exceptions import ConvergenceError, DomainError, SaturationError
from .fading import LN2, RelayPolicy, Scenario
from .mgf import EnumerationEngine, MonteCarloEngine, RateLaw, default_engine

_CHUNK = 8192


def decode_threshold(decode_factor: float):
    """f(z_sd) = decode_factor * z_sd."""
    if not decode_factor >= 0:
        raise DomainError(f"decoding factor must be non-negative, got {decode_factor}")

    def f(z):
        return decode_factor * np.asarray(z, dtype=float)

    return f


def mcg_policy(decode_factor: float = 1.0) -> RelayPolicy:
    """Max channel gain: route to the relay iff z_sr_tilde > z_sd."""
    return RelayPolicy(
        g=lambda z: np.asarray(z, dtype=float),
        f=decode_threshold(decode_factor),
        kind="MCG",
        decode_factor=decode_factor,
    )


def fixed_policy(g, decode_factor: float = 1.0) -> RelayPolicy:
    return RelayPolicy(g=g, f=decode_threshold(decode_factor), kind="FixedFunction", decode_factor=decode_factor)


# ---------------------------------------------------------------------------
# Max delay exponent threshold


def _inner_level(engine):
    return engine.inner_level() if hasattr(engine, "inner_level") else 5


def _mde_log_terms(z_sd, theta1, s: Scenario, f, level):
    """Weighted values of log(1 + X) over z_rd for each z_sd row.

    X is the source SNR seen by the destination: interference-free when the
    relay signal is decoded first (z_rd > f), interfered otherwise.
    """
    rd = s.fading.rd
    fz = np.asarray(f(z_sd), dtype=float)
    x_clean = np.log1p(s.snr_s * z_sd)
    p_clean = np.asarray(rd.prob_above(fz), dtype=float)
    zb, wb, wcb = rd.nodes_below(fz, level)
    y_int = np.log1p(s.snr_s * z_sd[:, None] / (1.0 + s.snr_r * zb))
    return x_clean, p_clean, y_int, np.asarray(wb), np.asarray(wcb)


def _mde_chunk(z_sd, theta1, s, f, level, coarse=False):
    x_clean, p_clean, y_int, wb, wcb = _mde_log_terms(z_sd, theta1, s, f, level)
    w = wcb if coarse else wb
    if theta1 == 0:
        mean_log = p_clean * x_clean + np.sum(w * y_int, axis=1)
        return np.expm1(mean_log) / s.snr_s
    beta = theta1 * s.tb / LN2
    # log E{(1+X)^-beta} via expm1 to keep precision when beta is small
    m = p_clean * np.expm1(-beta * x_clean) + np.sum(w * np.expm1(-beta * y_int), axis=1)
    lg = np.log1p(m)
    return np.expm1(-lg / beta) / s.snr_s


def mde_threshold(z_sd, theta1, s: Scenario, engine=None, decode_factor: float = 1.0, check=False):
    """Routing threshold on z_sr_tilde that maximizes the source delay exponent.

    ``z_sd`` may be a scalar or an array. ``theta1 = 0`` gives the small-theta
    limit exp(E{log(1 + X)}) - 1 over snr_s. With ``check`` the embedded coarse
    rule is compared and a ConvergenceError raised above 1e-10 relative.
    """
    if not theta1 >= 0:
        raise DomainError(f"theta1 must be non-negative, got {theta1}")
    engine = engine if engine is not None else default_engine(s)
    level = _inner_level(engine)
    f = decode_threshold(decode_factor)
    scalar = np.ndim(z_sd) == 0
    z = np.atleast_1d(np.asarray(z_sd, dtype=float))
    out = np.empty_like(z)
    for start in range(0, z.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = _mde_chunk(z[sl], theta1, s, f, level)
        if check and s.fading.rd.continuous:
            alt = _mde_chunk(z[sl], theta1, s, f, level, coarse=True)
            err = np.max(np.abs(alt - out[sl]) / np.maximum(np.abs(out[sl]), 1e-300))
            if not err <= 1e-10:
                raise ConvergenceError(f"threshold inner expectation error {err:.3g}", achieved=float(err))
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def mde_policy(theta1, s: Scenario, engine=None, decode_factor: float = 1.0) -> RelayPolicy:
    """Policy whose routing threshold is the MDE threshold at ``theta1``."""
    if not theta1 >= 0:
        raise DomainError(f"theta1 must be non-negative, got {theta1}")
    engine = engine if engine is not None else default_engine(s)

    def g(z):
        return mde_threshold(np.asarray(z, dtype=float), theta1, s, engine, decode_factor)

    return RelayPolicy(
        g=g,
        f=decode_threshold(decode_factor),
        kind="MDE",
        theta1=theta1,
        decode_factor=decode_factor,
    )


def mde_law_model(s: Scenario, engine=None, decode_factor: float = 1.0) -> LawModel:
    """Service laws that follow the MDE threshold at each theta1; theta1=None gives the small-theta limit."""
    engine = engine if engine is not None else default_engine(s)

    def build(theta1):
        return engine.laws(mde_policy(0.0 if theta1 is None else theta1, s, engine, decode_factor), s)

    return LawModel(build, coupled=True)


def effective_capacity_mde(s: Scenario, constraint: DelayConstraint, engine=None, decode_factor: float = 1.0):
    """Effective capacity with the routing threshold coupled to theta1 along the walk."""
    res = solve_capacity(mde_law_model(s, engine, decode_factor), s, constraint)
    res.diagnostics["policy"] = "MDE"
    return res


# ---------------------------------------------------------------------------
# No-buffer decode-and-forward baseline


def nobuffer_rates(z_sd, z_sr, z_rd, s: Scenario, relay_term_snr: str = "relay"):
    """Half-duplex DF rate in bits per block; ``z_sr`` is the raw S-R gain."""
    snr_rd = s.snr_r if relay_term_snr == "relay" else s.snr_s
    first = np.log1p(2 * s.snr_s * np.asarray(z_sr, dtype=float))
    second = np.log1p(2 * s.snr_s * np.asarray(z_sd, dtype=float) + 2 * snr_rd * np.asarray(z_rd, dtype=float))
    return 0.5 * s.tb * np.minimum(first, second) / LN2


def _nobuffer_nodes(s: Scenario, level, relay_term_snr):
    """Values and weights of the DF rate law.

    The S-R term is the minimum iff z_sr <= z_sd + k z_rd with k = snr_rd / snr_s.
    One continuous link is integrated innermost and split on that plane, so
    what remains for the outer rule is smooth. S-R is preferred, then S-D, then R-D.
    """
    fs = s.fading
    snr_rd = s.snr_r if relay_term_snr == "relay" else s.snr_s
    k = snr_rd / s.snr_s

    def first(z_sr):
        return 0.5 * s.tb * np.log1p(2 * s.snr_s * z_sr) / LN2

    def second(z_sd, z_rd):
        return 0.5 * s.tb * np.log1p(2 * s.snr_s * z_sd + 2 * snr_rd * z_rd) / LN2

    if fs.sr.continuous or not (fs.sd.continuous or fs.rd.continuous):
        inner, outer = fs.sr, (fs.sd, fs.rd)
    elif fs.sd.continuous:
        inner, outer = fs.sd, (fs.sr, fs.rd)
    else:
        inner, outer = fs.rd, (fs.sr, fs.sd)

    xs, ws, wcs = (np.asarray(v, dtype=float) for v in outer[0].nodes(level))
    if inner is fs.sd and outer[1].continuous:
        # the S-D cut hits zero at z_rd = z_sr / k, a kink for the outer R-D rule
        rows = [tuple(np.asarray(v, dtype=float) for v in outer[1].nodes_split([c / k], level)) for c in xs]
    else:
        rows = [tuple(np.asarray(v, dtype=float) for v in outer[1].nodes(level))] * xs.size
    x = np.concatenate([np.full(r[0].size, c) for c, r in zip(xs, rows)])
    y = np.concatenate([r[0] for r in rows])
    w = np.concatenate([wx * r[1] for wx, r in zip(ws, rows)])
    wc = np.concatenate([wx * r[2] for wx, r in zip(wcs, rows)])
    # drop products of two far-tail weights; they cannot move any sum
    live = np.maximum(w, wc) > 1e-20
    x, y, w, wc = x[live], y[live], w[live], wc[live]

    if inner is fs.sr:
        # x = z_sd, y = z_rd; S-R term below the cut
        cut = x + k * y
        p_hi = np.asarray(inner.prob_above(cut), dtype=float)
        zl, wl, wcl = inner.nodes_below(cut, level)
        hi_vals, lo_vals = second(x, y), first(zl)
    elif inner is fs.sd:
        # x = z_sr, y = z_rd; the S-R term binds when z_sd is above the cut
        cut = x - k * y
        p_hi = np.asarray(inner.prob_above(cut), dtype=float)
        zl, wl, wcl = inner.nodes_below(cut, level)
        hi_vals, lo_vals = first(x), second(zl, y[:, None])
    else:
        # x = z_sr, y = z_sd; the S-R term binds when z_rd is above the cut
        cut = (x - y) / k
        p_hi = np.asarray(inner.prob_above(cut), dtype=float)
        zl, wl, wcl = inner.nodes_below(cut, level)
        hi_vals, lo_vals = first(x), second(y[:, None], zl)

    lo_vals = np.broadcast_to(lo_vals, np.shape(wl))
    vals = np.concatenate([hi_vals, lo_vals.ravel()])
    weights = np.concatenate([w * p_hi, (w[:, None] * wl).ravel()])
    coarse = np.concatenate([wc * p_hi, (wc[:, None] * wcl).ravel()])
    return vals, weights, coarse


def nobuffer_law(s: Scenario, engine=None, relay_term_snr: str = "relay") -> RateLaw:
    engine = engine if engine is not None else default_engine(s)
    if isinstance(engine, MonteCarloEngine):
        rng = np.random.default_rng(engine.seed)
        fs = s.fading
        z_sd, z_sr, z_rd = (np.asarray(l.sample(rng, engine.n_samples), dtype=float) for l in (fs.sd, fs.sr, fs.rd))
        c = nobuffer_rates(z_sd, z_sr, z_rd, s, relay_term_snr)
        return RateLaw(c, np.full(c.size, 1.0 / c.size), n_samples=c.size)
    if isinstance(engine, EnumerationEngine):
        if s.fading.continuous:
            raise DomainError("exact enumeration requires Discrete or Constant fading on every link")
        vals, w, _ = _nobuffer_nodes(s, None, relay_term_snr)
        return RateLaw(vals, w)
    level = engine.min_level
    err = math.inf
    # the node count grows eightfold per level on this three-dimensional rule
    while level <= min(engine.max_level, 5):
        vals, w, wc = _nobuffer_nodes(s, level, relay_term_snr)
        bounds = (0.0, math.inf) if s.fading.continuous else None
        law = RateLaw(vals, w, coarse=wc, ess_bounds=bounds)
        est = law.expect(lambda c: c)
        err = est.error / max(est.value, 1e-300)
        if err <= engine.tol:
            return law
        level += 1
    raise ConvergenceError(f"no-buffer rate did not converge (error {err:.3g})", achieved=err)


def nobuffer_capacity(s: Scenario, constraint: DelayConstraint, engine=None, relay_term_snr: str = "relay"):
    """Effective capacity of the no-buffer DF link in bits per block.

    Returns 0 when no exponent reaches the single-queue requirement.
    """
    law = nobuffer_law(s, engine, relay_term_snr)
    if constraint.eps == 1:
        return law.mean()
    j0 = constraint.j0 * s.T
    try:
        theta = invert_law(law, j0)
    except SaturationError:
        return 0.0
    return law.delay_exponent(theta) / theta
