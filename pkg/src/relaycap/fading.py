"""Channel-state model, selection regions and per-block service rates.

Gains are magnitude-squared fading coefficients. ``z_sr_tilde`` is always the
source-relay gain after division by the self-interference factor ``gamma``.
Region boundaries are strict: a state is routed to the relay iff
``z_sr_tilde > g(z_sd)`` and the relay is decoded first iff ``z_rd > f(z_sd)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import DomainError
from .quadrature import unit_rule

LN2 = math.log(2.0)

ROUTED = 0  # z in Z
DIRECT_CLEAN = 1  # z in Z^c and Z0: source decoded last
DIRECT_INTERFERED = 2  # z in Z^c and Z0^c: source decoded first


@dataclass(frozen=True)
class ChannelState:
    z_sd: float
    z_sr_tilde: float
    z_rd: float

    def __post_init__(self):
        for name in ("z_sd", "z_sr_tilde", "z_rd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and non-negative, got {v}")


# ---------------------------------------------------------------------------
# Per-link gain distributions
#
# Every distribution exposes weighted node sets used by the expectation
# engine: ``nodes`` over the full support, ``nodes_above(a)`` over z > a and
# ``nodes_below(b)`` over z <= b, each as (z, w, w_coarse). Threshold
# arguments are 1-D arrays and the returned arrays have one row per threshold.


@dataclass(frozen=True)
class Rayleigh:
    """Rayleigh fading: the power gain is exponential with the given mean."""

    mean: float
    continuous = True

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.mean > 0):
            raise DomainError(f"Rayleigh mean power must be positive, got {self.mean}")

    def scaled(self, k):
        return Rayleigh(self.mean * k)

    @property
    def support(self):
        return 0.0, math.inf

    def expected(self):
        return self.mean

    def sample(self, rng, size=None):
        return rng.exponential(self.mean, size)

    def prob_above(self, a):
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        return np.exp(-a / self.mean)

    def nodes(self, level):
        _, _, neglog_s, w, wc = unit_rule(level)
        return self.mean * neglog_s, w, wc

    def nodes_above(self, a, level):
        # u = exp(-(z - a)/mean) maps (a, inf) onto (0, 1]
        _, _, neglog_s, w, wc = unit_rule(level)
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        finite = np.isfinite(a)
        a0 = np.where(finite, a, 0.0)[:, None]
        mass = np.where(finite, np.exp(-a0[:, 0] / self.mean), 0.0)[:, None]
        z = a0 + self.mean * neglog_s[None, :]
        return z, mass * w[None, :], mass * wc[None, :]

    def nodes_below(self, b, level):
        # u = exp(-z/mean) restricted to [exp(-b/mean), 1]
        _, _, neglog_s, w, wc = unit_rule(level)
        b = np.maximum(np.asarray(b, dtype=float), 0.0)[:, None]
        span = -np.expm1(-b / self.mean)
        # 1 - span*(1 - s) = exp(-b/mean) + span*s, summed in the log domain
        with np.errstate(divide="ignore"):
            z = -self.mean * np.logaddexp(-b / self.mean, np.log(span) - neglog_s[None, :])
        z = np.where(span > 0, np.clip(z, 0.0, b), 0.0)
        return z, span * w[None, :], span * wc[None, :]

    def nodes_split(self, breaks, level):
        """Rule over (0, inf) made of one sub-rule per interval between ``breaks``.

        Used when the integrand jumps at known points. By memorylessness the
        piece (a, b) is ``a`` plus a rule on (0, b - a) scaled by exp(-a/mean).
        """
        edges = np.unique(np.asarray([x for x in breaks if 0 < x < math.inf], dtype=float))
        if edges.size == 0:
            return self.nodes(level)
        lo = np.concatenate([[0.0], edges])
        hi = np.concatenate([edges, [math.inf]])
        parts = []
        for a, b in zip(lo, hi):
            mass = math.exp(-a / self.mean)
            if math.isinf(b):
                z, w, wc = self.nodes_above(np.array([a]), level)
                parts.append((z[0], w[0], wc[0]))
            else:
                z, w, wc = self.nodes_below(np.array([b - a]), level)
                parts.append((a + z[0], mass * w[0], mass * wc[0]))
        return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


class _Atomic:
    continuous = False

    def _atoms(self):
        raise NotImplementedError

    @property
    def support(self):
        g, p = self._atoms()
        live = g[p > 0]
        return float(live.min()), float(live.max())

    def expected(self):
        g, p = self._atoms()
        return float(np.dot(g, p))

    def sample(self, rng, size=None):
        g, p = self._atoms()
        if len(g) == 1:
            return np.full(size, g[0]) if size is not None else float(g[0])
        return rng.choice(g, size=size, p=p)

    def prob_above(self, a):
        g, p = self._atoms()
        a = np.asarray(a, dtype=float)
        return np.sum(p * (g > a[..., None]), axis=-1)

    def nodes(self, level=None):
        g, p = self._atoms()
        return g, p, p

    def nodes_above(self, a, level=None):
        g, p = self._atoms()
        a = np.asarray(a, dtype=float)
        w = p[None, :] * (g[None, :] > a[:, None])
        return np.broadcast_to(g, w.shape), w, w

    def nodes_below(self, b, level=None):
        g, p = self._atoms()
        b = np.asarray(b, dtype=float)
        w = p[None, :] * (g[None, :] <= b[:, None])
        return np.broadcast_to(g, w.shape), w, w


@dataclass(frozen=True)
class Discrete(_Atomic):
    """Finite gain distribution given as parallel tuples of gains and probabilities."""

    gains: tuple
    probs: tuple

    def __post_init__(self):
        g = tuple(float(x) for x in self.gains)
        p = tuple(float(x) for x in self.probs)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "probs", p)
        if len(g) != len(p) or not g:
            raise DomainError("gains and probs must be non-empty and of equal length")
        if any(not (math.isfinite(x) and x >= 0) for x in g):
            raise DomainError("gains must be finite and non-negative")
        if any(not (x >= 0) for x in p):
            raise DomainError("probabilities must be non-negative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {math.fsum(p)!r}, not 1")

    def _atoms(self):
        return np.asarray(self.gains), np.asarray(self.probs)

    def scaled(self, k):
        return Discrete(tuple(x * k for x in self.gains), self.probs)


@dataclass(frozen=True)
class Constant(_Atomic):
    gain: float

    def __post_init__(self):
        if not (math.isfinite(self.gain) and self.gain >= 0):
            raise DomainError(f"constant gain must be finite and non-negative, got {self.gain}")

    def _atoms(self):
        return np.array([float(self.gain)]), np.array([1.0])

    def scaled(self, k):
        return Constant(self.gain * k)


@dataclass(frozen=True)
class FadingSpec:
    """Independent per-link gain laws; ``sr`` is the raw (unnormalized) S-R gain."""

    sd: object
    sr: object
    rd: object

    @property
    def continuous(self):
        return any(link.continuous for link in (self.sd, self.sr, self.rd))


@dataclass(frozen=True)
class Scenario:
    """Physical parameters of the three-node link.

    ``snr_s`` and ``snr_r`` are linear. ``T`` is the block length in seconds and
    ``B`` the bandwidth in Hz, so rates are in bits per block.
    """

    fading: FadingSpec
    snr_s: float = 1.0
    snr_r: float = 10.0
    gamma: float = 1.0
    T: float = 1e-3
    B: float = 180e3
    d: float = 0.5
    alpha: float = 4.0

    def __post_init__(self):
        if not (self.T * self.B > 0):
            raise DomainError("T*B must be positive")
        if not (self.snr_s > 0 and self.snr_r > 0):
            raise DomainError("SNRs must be positive")
        if not (self.gamma >= 1):
            raise DomainError("self-interference factor gamma must be >= 1")
        if not (0 < self.d < 1):
            raise DomainError("relay position d must lie in (0, 1)")

    @classmethod
    def geometric(cls, d=0.5, snr_r_db=10.0, snr_s_db=0.0, alpha=4.0, gamma=1.0, T=1e-3, B=180e3):
        """Collinear nodes with unit S-D distance and independent Rayleigh links."""
        if not 0 < d < 1:
            raise DomainError(f"relay position must lie strictly between the end nodes, got {d}")
        fading = FadingSpec(
            sd=Rayleigh(1.0),
            sr=Rayleigh(1.0 / d ** alpha),
            rd=Rayleigh(1.0 / (1.0 - d) ** alpha),
        )
        return cls(
            fading=fading,
            snr_s=db_to_linear(snr_s_db),
            snr_r=db_to_linear(snr_r_db),
            gamma=gamma,
            T=T,
            B=B,
            d=d,
            alpha=alpha,
        )

    @property
    def tb(self):
        return self.T * self.B

    @property
    def sr_tilde(self):
        """Law of the self-interference-normalized S-R gain."""
        return self.fading.sr.scaled(1.0 / self.gamma)

    def replace(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def _identity(z):
    return np.asarray(z, dtype=float)


@dataclass(frozen=True, eq=False)
class RelayPolicy:
    """Routing threshold ``g`` and decoding threshold ``f``, both functions of z_sd.

    Both callables must accept and return numpy arrays.
    """

    g: Callable = _identity
    f: Callable = _identity
    kind: str = "FixedFunction"
    theta1: Optional[float] = None
    decode_factor: Optional[float] = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Regions and rates


def in_region_Z(z: ChannelState, policy: RelayPolicy) -> bool:
    return bool(z.z_sr_tilde > float(policy.g(np.array([z.z_sd]))[0]))


def in_region_Z0(z: ChannelState, policy: RelayPolicy) -> bool:
    return bool(z.z_rd > float(policy.f(np.array([z.z_sd]))[0]))


def region_codes(z_sd, z_srt, z_rd, policy):
    """Vectorized region label: ROUTED, DIRECT_CLEAN or DIRECT_INTERFERED."""
    z_sd = np.asarray(z_sd, dtype=float)
    routed = np.asarray(z_srt) > policy.g(z_sd)
    clean = np.asarray(z_rd) > policy.f(z_sd)
    return np.where(routed, ROUTED, np.where(clean, DIRECT_CLEAN, DIRECT_INTERFERED)).astype(np.int8)


def capacity_bits(snr_gain, tb):
    """TB*log2(1 + x) in bits per block."""
    return tb * np.log1p(snr_gain) / LN2


def source_rates(z_sd, z_srt, z_rd, region, s: Scenario):
    z_sd, z_srt, z_rd = (np.asarray(v, dtype=float) for v in (z_sd, z_srt, z_rd))
    sinr = np.where(
        region == ROUTED,
        s.snr_s * z_srt,
        np.where(region == DIRECT_CLEAN, s.snr_s * z_sd, s.snr_s * z_sd / (1.0 + s.snr_r * z_rd)),
    )
    return capacity_bits(sinr, s.tb)


def relay_rates(z_sd, z_rd, region, s: Scenario):
    z_sd, z_rd = np.asarray(z_sd, dtype=float), np.asarray(z_rd, dtype=float)
    sinr = np.where(
        region == DIRECT_INTERFERED,
        s.snr_r * z_rd,
        s.snr_r * z_rd / (1.0 + s.snr_s * z_sd),
    )
    return capacity_bits(sinr, s.tb)


def service_rate_source(z: ChannelState, policy: RelayPolicy, s: Scenario) -> float:
    """Instantaneous source-queue service in bits per block."""
    r = region_codes([z.z_sd], [z.z_sr_tilde], [z.z_rd], policy)
    return float(source_rates([z.z_sd], [z.z_sr_tilde], [z.z_rd], r, s)[0])


def service_rate_relay(z: ChannelState, policy: RelayPolicy, s: Scenario) -> float:
    """Instantaneous relay-queue service in bits per block."""
    r = region_codes([z.z_sd], [z.z_sr_tilde], [z.z_rd], policy)
    return float(relay_rates([z.z_sd], [z.z_rd], r, s)[0])


def sample_states(fading: FadingSpec, rng, n, gamma=1.0):
    """Draw ``n`` i.i.d. block states; returns (z_sd, z_sr_tilde, z_rd) arrays."""
    z_sd = np.asarray(fading.sd.sample(rng, n), dtype=float)
    z_sr = np.asarray(fading.sr.sample(rng, n), dtype=float)
    z_rd = np.asarray(fading.rd.sample(rng, n), dtype=float)
    return z_sd, z_sr / gamma, z_rd


def sample_state(fading: FadingSpec, rng, gamma=1.0) -> ChannelState:
    z_sd, z_srt, z_rd = sample_states(fading, rng, 1, gamma)
    return ChannelState(float(z_sd[0]), float(z_srt[0]), float(z_rd[0]))
