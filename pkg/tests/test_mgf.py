import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from oracles import EnumOracle, random_discrete_scenario
from relaycap.exceptions import ConvergenceError, DomainError
from relaycap.fading import Discrete, FadingSpec, Rayleigh, Scenario
from relaycap.mgf import (
    EnumerationEngine,
    MonteCarloEngine,
    QuadratureEngine,
    RateLaw,
    lambda_p1,
    lambda_p1_derivative,
    mean_rates,
    prob_Z,
    relay_arrival_lmgf,
    service_laws,
)
from relaycap.policies import mcg_policy

# default scenario under max-channel-gain routing, from nested scipy.integrate.quad
EC_S = 628.453736383589
EC_R = 1030.2671476019593
EC_SR_ROUTED = 615.1440368051296
J1_1E3 = 0.5969707390719435
J2_1E3 = 0.9766514162959721


@pytest.fixture(scope="module")
def default_laws():
    return service_laws(mcg_policy(), Scenario.geometric())


class TestLambdaP1:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 50), st.floats(0.01, 0.99))
    def test_bounds(self, th, pz):
        # pz * theta <= lambda <= theta by Jensen and pz <= 1
        lp = lambda_p1(th, pz)
        assert pz * th - 1e-12 <= lp <= th + 1e-12

    def test_reference(self):
        assert lambda_p1(1.0, 0.5) == pytest.approx(0.62011450695827752, rel=1e-15)

    @pytest.mark.parametrize("th", [0.0, 1e-9, 0.3, 7.0, 500.0])
    def test_edge_probabilities(self, th):
        assert lambda_p1(th, 0.0) == 0.0
        assert lambda_p1(th, 1.0) == th

    def test_small_theta_slope(self):
        for pz in (0.1, 0.5, 0.9):
            assert lambda_p1(1e-9, pz) / 1e-9 == pytest.approx(pz, rel=1e-8)
            assert lambda_p1_derivative(0.0, pz) == pytest.approx(pz)

    def test_large_theta(self):
        assert lambda_p1(800.0, 0.3) == pytest.approx(800.0 + math.log(0.3), rel=1e-15)

    def test_bad_probability(self):
        with pytest.raises(DomainError):
            lambda_p1(1.0, 1.2)

    def test_convex_increasing(self):
        t = np.linspace(0, 20, 200)
        v = np.array([lambda_p1(x, 0.4) for x in t])
        assert np.all(np.diff(v) > 0)
        assert np.all(np.diff(v, 2) >= -1e-12)


class TestRateLaw:
    def test_constant_law(self):
        law = RateLaw(np.array([5.0]), np.array([1.0]))
        assert law.delay_exponent(0.2) == pytest.approx(1.0)
        assert law.exponent_supremum() == math.inf

    def test_zero_atom_supremum(self):
        law = RateLaw(np.array([0.0, 4.0]), np.array([0.25, 0.75]))
        assert law.exponent_supremum() == pytest.approx(math.log(4.0))
        assert law.delay_exponent(50.0) == pytest.approx(math.log(4.0), rel=1e-12)

    def test_weights_normalized(self):
        law = RateLaw(np.array([1.0, 3.0]), np.array([2.0, 2.0]))
        assert law.mean() == pytest.approx(2.0)

    def test_no_overflow(self):
        law = RateLaw(np.array([1e4, 2e4]), np.array([0.5, 0.5]))
        assert np.isfinite(law.log_mgf(1.0))
        assert law.log_mgf(1.0) == pytest.approx(2e4 + math.log(0.5 + 0.5 * math.exp(-1e4)))


class TestQuadrature:
    def test_means(self, default_laws):
        assert default_laws.source.mean() == pytest.approx(EC_S, rel=1e-9)
        assert default_laws.relay.mean() == pytest.approx(EC_R, rel=1e-9)
        assert default_laws.source.partial_mean(0) == pytest.approx(EC_SR_ROUTED, rel=1e-9)

    def test_exponents(self, default_laws):
        assert default_laws.source.delay_exponent(1e-3) == pytest.approx(J1_1E3, rel=1e-9)
        assert default_laws.relay.delay_exponent(1e-3) == pytest.approx(J2_1E3, rel=1e-9)

    def test_routing_probability_closed_form(self, default_laws):
        assert default_laws.prob_routed == pytest.approx(16 / 17, rel=1e-10)

    @pytest.mark.parametrize("m", [0.25, 1.0, 4.0])
    def test_prob_z_ratio(self, m):
        s = Scenario(FadingSpec(Rayleigh(1.0), Rayleigh(m), Rayleigh(2.0)), snr_s=1.0, snr_r=3.0)
        assert prob_Z(mcg_policy(), s) == pytest.approx(m / (1 + m), rel=1e-10)

    def test_error_estimate_reported(self, default_laws):
        assert default_laws.max_relative_error() <= 1e-8

    def test_unreachable_tolerance(self):
        with pytest.raises(ConvergenceError) as info:
            QuadratureEngine(tol=1e-30, max_level=3).laws(mcg_policy(), Scenario.geometric())
        assert info.value.achieved > 0

    def test_monte_carlo_agrees(self, default_laws):
        mc = MonteCarloEngine(n_samples=400_000, seed=5).laws(mcg_policy(), Scenario.geometric())
        assert mc.source.mean() == pytest.approx(EC_S, rel=5e-3)
        assert mc.relay.mean() == pytest.approx(EC_R, rel=5e-3)
        assert mc.source.delay_exponent(1e-3) == pytest.approx(J1_1E3, rel=5e-3)
        assert abs(mc.prob_routed - 16 / 17) < 4 * mc.prob_routed_error


class TestExponentShape:
    thetas = np.geomspace(1e-6, 0.05, 60)

    def test_monotone_concave(self, default_laws):
        for law in (default_laws.source, default_laws.relay):
            j = np.array([law.delay_exponent(t) for t in self.thetas])
            assert np.all(np.diff(j) > 0)
            per = j / self.thetas
            assert np.all(np.diff(per) <= 1e-12 * per[:-1])

    def test_small_theta_limit(self, default_laws):
        assert default_laws.source.delay_exponent(1e-9) / 1e-9 == pytest.approx(EC_S, rel=1e-6)

    def test_relay_ratio_non_increasing(self, default_laws):
        pz = default_laws.prob_routed
        r = [default_laws.relay.delay_exponent(t) / lambda_p1(t, pz) for t in self.thetas]
        assert np.all(np.diff(r) <= 1e-12 * np.abs(r[:-1]))


class TestEnumeration:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle(self, seed):
        s = random_discrete_scenario(np.random.default_rng(seed), zero_atoms=True)
        laws = EnumerationEngine().laws(mcg_policy(), s)
        o = EnumOracle(s, lambda z: z, lambda z: z)
        assert laws.prob_routed == pytest.approx(o.pz, abs=1e-14)
        assert laws.source.mean() == pytest.approx(o.mean_cs(), rel=1e-12)
        assert laws.relay.mean() == pytest.approx(o.mean_cr(), rel=1e-12)
        for th in (1e-4, 1e-2, 0.1, 1.0):
            assert laws.source.delay_exponent(th) == pytest.approx(o.J1(th), rel=1e-10)
            assert laws.relay.delay_exponent(th) == pytest.approx(o.J2(th), rel=1e-10)
            for tt in (0.5 * th, 2 * th):
                got = relay_arrival_lmgf(th, 100.0, tt, laws)
                assert got == pytest.approx(o.relay_arrival(th, 100.0, tt), rel=1e-10)

    def test_rejects_continuous(self):
        with pytest.raises(DomainError):
            EnumerationEngine().laws(mcg_policy(), Scenario.geometric())

    def test_mean_rates(self):
        s = random_discrete_scenario(np.random.default_rng(11))
        o = EnumOracle(s, lambda z: z, lambda z: z)
        m = mean_rates(mcg_policy(), s)
        assert m.routed_source == pytest.approx(o.mean_routed(), rel=1e-12)


class TestRelayArrival:
    def test_below_kink_is_linear(self, default_laws):
        th = 1e-3
        lp = lambda_p1(th, default_laws.prob_routed)
        assert relay_arrival_lmgf(th, 500.0, 2 * lp, default_laws) == pytest.approx(500.0 * lp)

    def test_continuous_at_kink(self, default_laws):
        th = 1e-3
        lp = lambda_p1(th, default_laws.prob_routed)
        below = relay_arrival_lmgf(th, 500.0, lp * (1 + 1e-9), default_laws)
        above = relay_arrival_lmgf(th, 500.0, lp * (1 - 1e-9), default_laws)
        assert above == pytest.approx(below, rel=1e-6)


class TestMixedLinks:
    """Continuous and discrete links together, checked against nested scipy quad."""

    snr_s, snr_r, tb = 1.0, 3.0, 180.0
    m_sd, m_sr, m_rd = 1.0, 2.0, 0.5

    def _cap(self, x):
        return self.tb * math.log1p(x) / math.log(2)

    def _scenario(self, sr=None, rd=None):
        fs = FadingSpec(
            Rayleigh(self.m_sd),
            sr if sr is not None else Rayleigh(self.m_sr),
            rd if rd is not None else Rayleigh(self.m_rd),
        )
        return Scenario(fs, snr_s=self.snr_s, snr_r=self.snr_r)

    def _outer(self, h, breaks):
        pts = sorted(b for b in breaks if b > 0)
        edges = [0.0] + pts + [math.inf]
        return sum(quad(lambda a: h(a) * math.exp(-a / self.m_sd) / self.m_sd, lo, hi, epsabs=0, epsrel=1e-12, limit=200)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))

    def _routed_mean(self, a):
        m = self.m_sr
        return quad(lambda t: self._cap(self.snr_s * t) * math.exp(-t / m) / m, a, math.inf, epsabs=0, epsrel=1e-12)[0]

    def test_discrete_relay_destination(self):
        atoms, probs = (0.2, 3.0), (0.4, 0.6)
        s = self._scenario(rd=Discrete(atoms, probs))
        laws = service_laws(mcg_policy(), s)
        ps, pr = self.snr_s, self.snr_r

        def src(a):
            below = 1 - math.exp(-a / self.m_sr)
            direct = sum(p * (self._cap(ps * a) if b > a else self._cap(ps * a / (1 + pr * b))) for b, p in zip(atoms, probs))
            return self._routed_mean(a) + below * direct

        def rel(a):
            below = 1 - math.exp(-a / self.m_sr)
            out = 0.0
            for b, p in zip(atoms, probs):
                interfered = self._cap(pr * b / (1 + ps * a))
                if b > a:
                    out += p * interfered
                else:
                    out += p * ((1 - below) * interfered + below * self._cap(pr * b))
            return out

        assert laws.source.mean() == pytest.approx(self._outer(src, atoms), rel=1e-9)
        assert laws.relay.mean() == pytest.approx(self._outer(rel, atoms), rel=1e-9)

    def test_discrete_source_relay(self):
        atoms, probs = (0.5, 4.0), (0.3, 0.7)
        s = self._scenario(sr=Discrete(atoms, probs))
        laws = service_laws(mcg_policy(), s)
        ps, pr, mr = self.snr_s, self.snr_r, self.m_rd

        def direct(a):
            clean = math.exp(-a / mr) * self._cap(ps * a)
            inter = quad(lambda b: self._cap(ps * a / (1 + pr * b)) * math.exp(-b / mr) / mr, 0, a, epsabs=0, epsrel=1e-12)[0]
            return clean + inter

        def src(a):
            return sum(p * (self._cap(ps * c) if c > a else direct(a)) for c, p in zip(atoms, probs))

        expected_pz = sum(p * (1 - math.exp(-c / self.m_sd)) for c, p in zip(atoms, probs))
        assert laws.source.mean() == pytest.approx(self._outer(src, atoms), rel=1e-9)
        assert laws.prob_routed == pytest.approx(expected_pz, rel=1e-10)
