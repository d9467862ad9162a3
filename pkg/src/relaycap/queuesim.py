"""Block-fading tandem fluid-queue simulator.

Each block the source queue receives ``R`` bits and serves up to ``C_s``.
Bits that leave the source in a routed block join the relay queue, which
serves up to ``C_r``. Bits that leave in a direct block exit the system.
Queue contents follow the Lindley recursion in closed form. Tagged fluid
particles are followed through the cumulative arrival and departure curves,
which are linear within a block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .delay import DelayConstraint
from .exceptions import DomainError
from .fading import ROUTED, RelayPolicy, Scenario, region_codes, relay_rates, sample_states, source_rates


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; ``rate`` is in bits per block, durations in blocks."""

    rate: float
    horizon: int = 10**6
    warmup: Optional[int] = None  # default 10% of the horizon
    seed: int = 0
    tag_period: int = 50

    def __post_init__(self):
        if not self.rate >= 0:
            raise DomainError("arrival rate must be non-negative")
        if self.tag_period < 1:
            raise DomainError("tag period must be at least one block")
        if not self.horizon > self.warmup_blocks >= 0:
            raise DomainError("need horizon > warmup >= 0")

    @property
    def warmup_blocks(self):
        return self.horizon // 10 if self.warmup is None else int(self.warmup)

    def with_rate(self, rate):
        from dataclasses import replace

        return replace(self, rate=rate)


@dataclass
class DelayStats:
    """Outcome of one simulation run.

    Times are in blocks internally; ``delays`` converts end-to-end delays to
    seconds. Tags that never leave within the horizon have infinite delay.
    """

    T: float
    rate: float
    arrival: np.ndarray  # tag arrival instants (blocks)
    source_exit: np.ndarray
    system_exit: np.ndarray
    routed: np.ndarray  # tag left the source in a routed block
    q1: np.ndarray  # queue contents at block ends (bits)
    q2: np.ndarray
    region: np.ndarray
    c_s: np.ndarray
    c_r: np.ndarray
    relay_arrivals: np.ndarray  # bits entering the relay per block
    warmup: int
    horizon_limit: float  # tags arriving after this instant are not scored
    states: tuple = field(default=(), repr=False)

    @property
    def delays(self):
        return (self.system_exit - self.arrival) * self.T

    @property
    def source_delays(self):
        return (self.source_exit - self.arrival) * self.T

    def _scored(self, d_max_blocks):
        return self.arrival <= self.q1.size - d_max_blocks

    def violation(self, d_max, routed_only=True):
        """Empirical Pr{D > d_max} (d_max in seconds) over scored tags.

        With ``routed_only`` only tags that traverse both queues count,
        unless no tag was routed.
        """
        keep = self._scored(d_max / self.T)
        if routed_only and np.any(self.routed & keep):
            keep = keep & self.routed
        n = int(keep.sum())
        if n == 0:
            return math.nan
        return float(np.mean(self.delays[keep] > d_max))

    def n_scored(self, d_max, routed_only=True):
        keep = self._scored(d_max / self.T)
        if routed_only and np.any(self.routed & keep):
            keep = keep & self.routed
        return int(keep.sum())

    def routing_fraction(self):
        """Fraction of post-warmup blocks in which the source routes to the relay."""
        return float(np.mean(self.region[self.warmup :] == ROUTED))

    def overflow_exponent(self, which=1, p_hi=0.3, p_lo=1e-3, points=25):
        """Slope of -log Pr{Q > q} against q from the post-warmup queue trace."""
        q = (self.q1 if which == 1 else self.q2)[self.warmup :]
        qs = np.sort(q)
        n = qs.size
        lo_q = np.quantile(q, 1 - p_hi)
        hi_q = np.quantile(q, 1 - p_lo)
        if not hi_q > lo_q:
            return math.nan
        grid = np.linspace(lo_q, hi_q, points)
        surv = (n - np.searchsorted(qs, grid, side="right")) / n
        ok = surv > 0
        slope = np.polyfit(grid[ok], np.log(surv[ok]), 1)[0]
        return float(-slope)

    def unstable_trend(self):
        """True when the source backlog keeps growing over the second half of the run."""
        q = self.q1[self.q1.size // 2 :]
        if q.size < 2 or q.min() <= 0:
            return False
        slope = np.polyfit(np.arange(q.size, dtype=float), q, 1)[0]
        return bool(slope > 0.01 * self.rate)

    def write_trace(self, path, limit=None):
        z_sd, z_srt, z_rd = self.states
        n = self.q1.size if limit is None else min(limit, self.q1.size)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["block", "z_sd", "z_sr_tilde", "z_rd", "region", "C_s", "C_r", "Q1", "Q2"])
            for k in range(n):
                wr.writerow(
                    [k, repr(float(z_sd[k])), repr(float(z_srt[k])), repr(float(z_rd[k])), int(self.region[k]),
                     repr(float(self.c_s[k])), repr(float(self.c_r[k])), repr(float(self.q1[k])), repr(float(self.q2[k]))]
                )


def lindley(arrivals, service):
    """Queue contents at block ends for Q+ = max(0, Q + a - c), starting empty."""
    s = np.cumsum(np.asarray(arrivals, dtype=float) - np.asarray(service, dtype=float))
    return s - np.minimum(0.0, np.minimum.accumulate(s))


def _curve(per_block):
    return np.concatenate([[0.0], np.cumsum(per_block)])


def _invert_curve(curve, level):
    """First time (in blocks) at which the piecewise-linear cumulative curve reaches ``level``."""
    k = np.searchsorted(curve, level, side="left")
    out = np.full(np.shape(level), math.inf)
    ok = k < curve.size
    k = np.clip(k, 1, curve.size - 1)
    lo, hi = curve[k - 1], curve[k]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(hi > lo, (level - lo) / (hi - lo), 0.0)
    t = (k - 1) + np.clip(frac, 0.0, 1.0)
    t = np.where(level <= 0, 0.0, t)
    return np.where(ok, t, out)


def _eval_curve(curve, t):
    k = np.clip(np.floor(t).astype(int), 0, curve.size - 2)
    frac = t - k
    return curve[k] + frac * (curve[k + 1] - curve[k])


def simulate(s: Scenario, policy: RelayPolicy, cfg: SimConfig, d_max_score: float = 0.0) -> DelayStats:
    """Run the tandem fluid model for ``cfg.horizon`` blocks.

    ``d_max_score`` (seconds) keeps tags whose deadline falls beyond the
    horizon out of the scored set.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.horizon
    z_sd, z_srt, z_rd = sample_states(s.fading, rng, n, s.gamma)
    reg = region_codes(z_sd, z_srt, z_rd, policy)
    c_s = source_rates(z_sd, z_srt, z_rd, reg, s)
    c_r = relay_rates(z_sd, z_rd, reg, s)

    a1 = np.full(n, float(cfg.rate))
    q1 = lindley(a1, c_s)
    A1 = _curve(a1)
    D1 = A1 - np.concatenate([[0.0], q1])
    d1 = np.diff(D1)
    routed_blk = reg == ROUTED
    a2 = np.where(routed_blk, d1, 0.0)
    q2 = lindley(a2, c_r)
    A2 = _curve(a2)
    D2 = A2 - np.concatenate([[0.0], q2])

    # tagged particles: one per period with a uniform phase
    starts = np.arange(cfg.warmup_blocks, n, cfg.tag_period, dtype=float)
    t_in = starts + rng.uniform(0.0, cfg.tag_period, starts.size)
    t_in = t_in[t_in < n]
    x = cfg.rate * t_in
    t1 = _invert_curve(D1, x) if cfg.rate > 0 else t_in.copy()
    t1 = np.maximum(t1, t_in)
    blk = np.floor(np.minimum(t1, n - 1)).astype(int)
    routed = np.isfinite(t1) & routed_blk[blk]
    t2 = t1.copy()
    if np.any(routed):
        pos = _eval_curve(A2, t1[routed])
        t2r = _invert_curve(D2, pos)
        t2[routed] = np.maximum(t2r, t1[routed])

    return DelayStats(
        T=s.T,
        rate=cfg.rate,
        arrival=t_in,
        source_exit=t1,
        system_exit=t2,
        routed=routed,
        q1=q1,
        q2=q2,
        region=reg,
        c_s=c_s,
        c_r=c_r,
        relay_arrivals=a2,
        warmup=cfg.warmup_blocks,
        horizon_limit=n - d_max_score / s.T,
        states=(z_sd, z_srt, z_rd),
    )


@dataclass
class ValidationReport:
    r_eps: float
    eps: float
    d_max: float
    slack: float
    multipliers: tuple
    violations: tuple
    n_samples: tuple
    monotone: bool
    below_ok: bool
    above_ok: bool
    low_confidence: bool

    @property
    def passed(self):
        return self.monotone and self.below_ok and self.above_ok

    def rows(self):
        return [
            {"multiplier": m, "rate": m * self.r_eps, "violation": v, "samples": k}
            for m, v, k in zip(self.multipliers, self.violations, self.n_samples)
        ]


def validate_capacity(
    s: Scenario,
    policy: RelayPolicy,
    constraint: DelayConstraint,
    r_eps: float,
    cfg: SimConfig,
    multipliers=(0.85, 0.95, 1.05, 1.15),
    slack: float = 0.5,
) -> ValidationReport:
    """Simulate around the analytic capacity and check that violations order correctly."""
    viol, counts = [], []
    for m in multipliers:
        st = simulate(s, policy, cfg.with_rate(m * r_eps), d_max_score=constraint.d_max)
        viol.append(st.violation(constraint.d_max))
        counts.append(st.n_scored(constraint.d_max))
    v = np.array(viol)
    mult = np.array(multipliers)
    monotone = bool(np.all(np.diff(v) >= 0))
    below = v[mult < 1]
    above = v[mult > 1]
    return ValidationReport(
        r_eps=r_eps,
        eps=constraint.eps,
        d_max=constraint.d_max,
        slack=slack,
        multipliers=tuple(multipliers),
        violations=tuple(float(x) for x in v),
        n_samples=tuple(counts),
        monotone=monotone,
        below_ok=bool(np.all(below <= constraint.eps * (1 + slack))),
        above_ok=bool(np.all(above > constraint.eps)),
        low_confidence=min(counts) < 10**4,
    )
