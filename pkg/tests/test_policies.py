import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from relaycap.delay import DelayConstraint
from relaycap.fading import LN2, Constant, Discrete, FadingSpec, Rayleigh, Scenario
from relaycap.mgf import EnumerationEngine, MonteCarloEngine, service_laws
from relaycap.policies import (
    effective_capacity_mde,
    fixed_policy,
    mcg_policy,
    mde_policy,
    mde_threshold,
    nobuffer_capacity,
    nobuffer_law,
    nobuffer_rates,
)
from relaycap.capacity import effective_capacity

S = Scenario.geometric()


def threshold_by_quad(z, theta1, s, lam=1.0):
    """Routing threshold from the defining expectation, integrated with scipy."""
    m = s.fading.rd.mean
    beta = theta1 * s.tb / LN2
    f = lam * z
    pdf = lambda y: math.exp(-y / m) / m
    x_int = lambda y: 1 + s.snr_s * z / (1 + s.snr_r * y)
    p_clean = math.exp(-f / m)
    if theta1 == 0:
        inner = quad(lambda y: math.log(x_int(y)) * pdf(y), 0, f, epsabs=0, epsrel=1e-13)[0]
        return math.expm1(p_clean * math.log1p(s.snr_s * z) + inner) / s.snr_s
    inner = quad(lambda y: x_int(y) ** -beta * pdf(y), 0, f, epsabs=0, epsrel=1e-13)[0]
    mgf = p_clean * (1 + s.snr_s * z) ** -beta + inner
    return (mgf ** (-1 / beta) - 1) / s.snr_s


class TestThreshold:
    zs = np.geomspace(0.01, 20.0, 20)

    @pytest.mark.parametrize("theta1", [0.0, 1e-4, 3.3e-3, 0.02])
    def test_matches_quad(self, theta1):
        got = mde_threshold(self.zs, theta1, S)
        want = np.array([threshold_by_quad(z, theta1, S) for z in self.zs])
        assert np.max(np.abs(got - want) / want) <= 1e-8

    def test_decode_factor(self):
        got = mde_threshold(self.zs, 3.3e-3, S, decode_factor=2.5)
        want = np.array([threshold_by_quad(z, 3.3e-3, S, lam=2.5) for z in self.zs])
        assert np.max(np.abs(got - want) / want) <= 1e-8

    def test_scalar_input(self):
        assert isinstance(mde_threshold(1.0, 1e-3, S), float)

    def test_check_flag(self):
        mde_threshold(self.zs, 1e-3, S, check=True)

    def test_zero_decoding_threshold_collapses_to_mcg(self):
        # with f = 0 the relay signal is always decoded first
        got = mde_threshold(self.zs, 2e-3, S, decode_factor=0.0)
        assert np.allclose(got, self.zs, rtol=1e-10, atol=0)

    def test_small_theta_limit(self):
        a = mde_threshold(self.zs, 1e-10, S)
        b = mde_threshold(self.zs, 0.0, S)
        assert np.allclose(a, b, rtol=1e-7)

    def test_below_sd_gain(self):
        g = mde_threshold(self.zs, 0.0, S)
        assert np.all(g < self.zs)
        assert np.all(g >= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 30.0), st.floats(1e-6, 0.05))
    def test_bounded_by_clean_rate(self, z, th):
        # the direct link can never beat its interference-free rate
        assert 0 <= mde_threshold(z, th, S) <= z * (1 + 1e-12)


class TestOptimality:
    theta1 = 3.3e-3

    def j1(self, policy):
        return service_laws(policy, S).source.delay_exponent(self.theta1)

    def test_beats_mcg(self):
        assert self.j1(mde_policy(self.theta1, S)) > self.j1(mcg_policy())

    @pytest.mark.parametrize("scale", [0.9, 0.99, 1.01, 1.1])
    def test_perturbed_threshold_is_worse(self, scale):
        best = self.j1(mde_policy(self.theta1, S))
        g = lambda z: scale * mde_threshold(np.asarray(z, dtype=float), self.theta1, S)
        assert self.j1(fixed_policy(g)) < best

    def test_optimal_only_at_own_theta(self):
        # a threshold tuned for another theta1 loses at this one
        other = mde_policy(10 * self.theta1, S)
        assert self.j1(other) < self.j1(mde_policy(self.theta1, S))

    def test_discrete_exhaustive(self):
        # enumerate all threshold choices on a two-atom S-D link
        fs = FadingSpec(Discrete((0.3, 2.0), (0.5, 0.5)), Discrete((0.2, 1.0, 4.0), (0.3, 0.4, 0.3)),
                        Discrete((0.1, 3.0), (0.4, 0.6)))
        s = Scenario(fs, snr_s=1.0, snr_r=2.0)
        th = 5e-3
        eng = EnumerationEngine()
        best = eng.laws(mde_policy(th, s, eng), s).source.delay_exponent(th)
        cuts = [0.0, 0.1, 0.5, 2.0, 5.0]
        for a in cuts:
            for b in cuts:
                g = lambda z, a=a, b=b: np.where(np.asarray(z) < 1.0, a, b)
                assert eng.laws(fixed_policy(g), s).source.delay_exponent(th) <= best * (1 + 1e-12)


class TestMdeCapacity:
    def test_dominates_mcg(self):
        c = DelayConstraint(0.05)
        mde = effective_capacity_mde(S, c)
        mcg = effective_capacity(mcg_policy(), S, c)
        assert mde.r_eps > mcg.r_eps
        assert mde.diagnostics["policy"] == "MDE"

    def test_eps_one(self):
        r = effective_capacity_mde(S, DelayConstraint(1.0))
        laws = service_laws(mde_policy(0.0, S), S)
        assert r.r_eps == pytest.approx(laws.source.mean(), rel=1e-12)


class TestNoBuffer:
    def test_rate_formula(self):
        s = Scenario(FadingSpec(Constant(1.0), Constant(3.0), Constant(2.0)), snr_s=1.0, snr_r=2.0)
        want = 0.5 * 180 * min(math.log2(7.0), math.log2(1 + 2 + 8.0))
        assert float(nobuffer_rates(1.0, 3.0, 2.0, s)) == pytest.approx(want, rel=1e-14)

    def test_source_snr_variant(self):
        s = Scenario(FadingSpec(Constant(1.0), Constant(30.0), Constant(2.0)), snr_s=1.0, snr_r=2.0)
        want = 0.5 * 180 * math.log2(1 + 2 + 4.0)
        assert float(nobuffer_rates(1.0, 30.0, 2.0, s, relay_term_snr="source")) == pytest.approx(want, rel=1e-14)

    def test_constant_capacity(self):
        # deterministic service: capacity equals the rate for any target
        s = Scenario(FadingSpec(Constant(1.0), Constant(3.0), Constant(2.0)), snr_s=1.0, snr_r=2.0)
        rate = float(nobuffer_rates(1.0, 3.0, 2.0, s))
        assert nobuffer_capacity(s, DelayConstraint(1e-3, 0.01)) == pytest.approx(rate, rel=1e-9)

    def test_eps_one_is_mean(self):
        law = nobuffer_law(S)
        assert nobuffer_capacity(S, DelayConstraint(1.0)) == pytest.approx(law.mean(), rel=1e-14)

    def test_quadrature_vs_monte_carlo(self):
        q = nobuffer_law(S).mean()
        mc = nobuffer_law(S, MonteCarloEngine(n_samples=400_000, seed=3))
        assert abs(mc.mean() - q) <= 5 * mc.expect(lambda c: c).error

    def test_enumeration(self):
        fs = FadingSpec(Discrete((0.5, 2.0), (0.5, 0.5)), Discrete((1.0, 3.0), (0.5, 0.5)), Constant(1.0))
        s = Scenario(fs, snr_s=1.0, snr_r=2.0)
        vals = [
            (pa * pb, float(nobuffer_rates(a, b, 1.0, s)))
            for a, pa in ((0.5, 0.5), (2.0, 0.5))
            for b, pb in ((1.0, 0.5), (3.0, 0.5))
        ]
        want = sum(p * v for p, v in vals)
        assert nobuffer_law(s, EnumerationEngine()).mean() == pytest.approx(want, rel=1e-14)

    def test_below_buffered(self):
        c = DelayConstraint(0.05)
        assert nobuffer_capacity(S, c) < effective_capacity(mcg_policy(), S, c).r_eps

    def test_monotone_in_eps(self):
        r = [nobuffer_capacity(S, DelayConstraint(e)) for e in (1e-6, 1e-3, 0.05, 0.5)]
        assert np.all(np.diff(r) > 0)

    def test_saturated_gives_zero(self):
        s = Scenario(FadingSpec(Discrete((0.0, 1.0), (0.9, 0.1)), Discrete((0.0, 1.0), (0.9, 0.1)), Constant(1.0)),
                     snr_s=1.0, snr_r=1.0)
        assert nobuffer_capacity(s, DelayConstraint(1e-6, 0.001)) == 0.0


class TestCoupledExponent:
    thetas = np.geomspace(1e-5, 0.05, 25)

    def coupled_j1(self, th):
        return service_laws(mde_policy(th, S), S).source.delay_exponent(th)

    def test_increasing_and_ratio_non_increasing(self):
        j = np.array([self.coupled_j1(t) for t in self.thetas])
        assert np.all(np.diff(j) > 0)
        ratio = j / self.thetas
        assert np.all(np.diff(ratio) <= 1e-12 * ratio[:-1])

    def test_dominates_mcg_on_grid(self):
        mcg = service_laws(mcg_policy(), S).source
        assert all(self.coupled_j1(t) >= mcg.delay_exponent(t) for t in self.thetas)

    @pytest.mark.parametrize("th", [1e-4, 3.3e-3])
    def test_envelope_identity(self, th):
        h = 1e-3 * th
        total = (self.coupled_j1(th + h) - self.coupled_j1(th - h)) / (2 * h)
        frozen = service_laws(fixed_policy(mde_policy(th, S).g), S).source
        partial = (frozen.delay_exponent(th + h) - frozen.delay_exponent(th - h)) / (2 * h)
        assert total == pytest.approx(partial, rel=1e-4)

    def test_random_perturbations(self):
        th = 3.3e-3
        best = self.coupled_j1(th)
        base = mde_policy(th, S).g
        rng = np.random.default_rng(0)
        for _ in range(4):
            a, b = rng.normal(size=2)
            for sign in (1e-3, -1e-3):
                eta = lambda z, a=a, b=b, sign=sign: base(z) + sign * (a + b * np.sin(np.asarray(z, dtype=float)))
                g = lambda z, eta=eta: np.maximum(eta(z), 0.0)
                assert service_laws(fixed_policy(g), S).source.delay_exponent(th) <= best + 1e-6

    def test_zero_decoding_capacity_matches_mcg(self):
        c = DelayConstraint(0.05)
        mde = effective_capacity_mde(S, c, decode_factor=0.0)
        mcg = effective_capacity(mcg_policy(0.0), S, c)
        assert mde.r_eps == pytest.approx(mcg.r_eps, rel=1e-8)


class TestNoBufferMixedLinks:
    """Rayleigh and discrete links together in the no-buffer law."""

    def test_discrete_source_relay_against_nested_quad(self):
        atoms, probs = (0.5, 4.0), (0.3, 0.7)
        m_sd, m_rd, ps, pr = 1.0, 0.5, 1.0, 3.0
        s = Scenario(FadingSpec(Rayleigh(m_sd), Discrete(atoms, probs), Rayleigh(m_rd)), snr_s=ps, snr_r=pr)
        k = pr / ps

        def cap(x):
            return 0.5 * 180 * math.log1p(x) / LN2

        def inner(a, c):
            # z_rd above the cut leaves the S-R term binding
            cut = max((c - a) / k, 0.0)
            lo = quad(lambda b: cap(2 * ps * a + 2 * pr * b) * math.exp(-b / m_rd) / m_rd, 0, cut, epsabs=0, epsrel=1e-12)[0]
            return lo + math.exp(-cut / m_rd) * cap(2 * ps * c)

        want = 0.0
        for c, p in zip(atoms, probs):
            f = lambda a: inner(a, c) * math.exp(-a / m_sd) / m_sd
            want += p * (quad(f, 0, c, epsabs=0, epsrel=1e-12)[0] + quad(f, c, math.inf, epsabs=0, epsrel=1e-12)[0])
        assert nobuffer_law(s).mean() == pytest.approx(want, rel=1e-8)

    @pytest.mark.parametrize(
        "layout",
        [
            (Rayleigh(0.0625), Discrete((2.0, 20.0), (0.5, 0.5)), Rayleigh(0.0625 * 16)),
            (Rayleigh(1.0), Rayleigh(16.0), Discrete((0.5, 6.0), (0.4, 0.6))),
            (Discrete((0.3, 2.0), (0.5, 0.5)), Discrete((2.0, 20.0), (0.5, 0.5)), Rayleigh(1.0)),
            (Rayleigh(1.0), Discrete((2.0, 20.0), (0.5, 0.5)), Discrete((0.5, 6.0), (0.4, 0.6))),
        ],
    )
    def test_quadrature_matches_monte_carlo(self, layout):
        s = Scenario(FadingSpec(*layout), snr_s=1.0, snr_r=10.0)
        q = nobuffer_law(s)
        mc = nobuffer_law(s, MonteCarloEngine(n_samples=400_000, seed=3)).expect(lambda c: c)
        assert abs(q.mean() - mc.value) < 4 * mc.error
        theta = 2e-3
        assert q.delay_exponent(theta) == pytest.approx(nobuffer_law(s, MonteCarloEngine(400_000, 3)).delay_exponent(theta), rel=5e-3)
