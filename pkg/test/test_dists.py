import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from bclim import dists
from bclim.dists import GIGParams, IG2Params, NIGParams, ZIPParams


def rng(seed=42):
    return np.random.default_rng(seed)


class TestInverseGaussian:
    def test_unit_density(self):
        assert dists.ig2_logpdf(1.0, IG2Params(1.0, 1.0)) == pytest.approx(
            math.log(math.sqrt(1 / (2 * math.pi)))
        )

    @pytest.mark.parametrize("eta,phi", [(1.0, 1.0), (2.66, 15.33), (0.3, 0.5)])
    def test_integrates_to_one(self, eta, phi):
        p = IG2Params(eta, phi)
        total, _ = integrate.quad(lambda v: math.exp(dists.ig2_logpdf(v, p)), 0, math.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-7)

    def test_matches_scipy(self):
        p = IG2Params(2.0, 3.0)
        # scipy's invgauss(mu, scale) has mean mu * scale and shape scale
        ref = stats.invgauss(p.mean / p.shape, scale=p.shape)
        for v in [0.1, 0.5, 2.0, 7.5]:
            assert dists.ig2_logpdf(v, p) == pytest.approx(ref.logpdf(v), rel=1e-10)

    def test_moments(self):
        p = IG2Params(2.66, 15.33)
        g = rng()
        draws = np.array([dists.ig2_sample(g, p) for _ in range(20_000)])
        se = math.sqrt(p.eta**2 / p.phi / len(draws))
        assert abs(draws.mean() - 2.66) < 4 * se
        assert draws.var() == pytest.approx(p.eta**2 / p.phi, rel=0.1)

    def test_concentrates(self):
        g = rng()
        draws = [dists.ig2_sample(g, IG2Params(1.0, 1e8)) for _ in range(100)]
        assert np.allclose(draws, 1.0, atol=1e-3)

    def test_deterministic(self):
        p = IG2Params(1.5, 2.0)
        a = [dists.ig2_sample(rng(7), p) for _ in range(3)]
        b = [dists.ig2_sample(rng(7), p) for _ in range(3)]
        assert a == b

    def test_domain(self):
        with pytest.raises(dists.DomainError):
            IG2Params(-1.0, 1.0)
        with pytest.raises(dists.DomainError):
            dists.ig_logpdf(0.0, 1.0, 1.0)
        assert dists.ig_logpdf(-1.0, 1.0, 1.0, strict=False) == -math.inf

    def test_over(self):
        p = IG2Params(2.0, 3.0).over(0.5)
        assert (p.eta, p.phi) == (1.0, 1.5)

    @pytest.mark.slow
    def test_additivity(self):
        p = IG2Params(1.3, 4.0)
        g = rng(1)
        n = 100_000
        split = np.array([dists.ig2_sample(g, p.over(0.4)) + dists.ig2_sample(g, p.over(0.6)) for _ in range(n)])
        direct = np.array([dists.ig2_sample(g, p.over(1.0)) for _ in range(n)])
        assert stats.ks_2samp(split, direct).pvalue > 0.01


class TestGIG:
    def test_gamma_case(self):
        p = GIGParams(2.5, 0.0, 3.0)
        for x in [0.1, 1.0, 4.0]:
            assert dists.gig_logpdf(x, p) == pytest.approx(
                stats.gamma.logpdf(x, 2.5, scale=2 / 3.0), abs=1e-10
            )

    def test_inverse_gaussian_case(self):
        chi, psi = 2.0, 5.0
        p = GIGParams(-0.5, chi, psi)
        for x in [0.1, 0.6, 3.0]:
            assert dists.gig_logpdf(x, p) == pytest.approx(
                dists.ig_logpdf(x, math.sqrt(chi / psi), chi), abs=1e-10
            )

    @given(
        st.floats(-4, 4),
        st.floats(0.05, 20),
        st.floats(0.05, 20),
        st.floats(0.05, 10),
    )
    def test_matches_scipy(self, lam, chi, psi, x):
        p = GIGParams(lam, chi, psi)
        ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
        assert dists.gig_logpdf(x, p) == pytest.approx(ref.logpdf(x), rel=1e-7, abs=1e-7)

    def test_invalid(self):
        with pytest.raises(dists.DomainError):
            GIGParams(1.0, 1.0, 0.0)
        with pytest.raises(dists.DomainError):
            GIGParams(-1.0, 0.0, 1.0)
        with pytest.raises(dists.DomainError):
            GIGParams(0.5, -1.0, 1.0)

    @pytest.mark.parametrize(
        "lam,chi,psi",
        [(1.5, 2.0, 3.0), (-1.0, 4.0, 0.5), (0.2, 0.01, 7.0), (50.0, 10.0, 10.0), (-0.5, 1.0, 1.0)],
    )
    def test_sampler_ks(self, lam, chi, psi):
        g = rng(3)
        draws = [dists.gig_sample(g, GIGParams(lam, chi, psi)) for _ in range(5000)]
        ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
        assert stats.kstest(draws, ref.cdf).pvalue > 0.01

    def test_sample_mean(self):
        p = GIGParams(0.7, 3.0, 2.0)
        g = rng(5)
        draws = np.array([dists.gig_sample(g, p) for _ in range(40_000)])
        se = draws.std() / math.sqrt(len(draws))
        assert abs(draws.mean() - dists.gig_mean(p)) < 4 * se

    def test_special_samplers(self):
        g = rng(9)
        gam = [dists.gig_sample(g, GIGParams(2.0, 0.0, 1.0)) for _ in range(5000)]
        assert stats.kstest(gam, stats.gamma(2.0, scale=2.0).cdf).pvalue > 0.01
        inv = [dists.gig_sample(g, GIGParams(-3.0, 2.0, 0.0)) for _ in range(5000)]
        assert stats.kstest(inv, stats.invgamma(3.0, scale=1.0).cdf).pvalue > 0.01

    def test_many_matches_single_stream(self):
        chi = np.array([1.0, 2.0, 3.0])
        psi = np.array([0.5, 0.5, 4.0])
        many = dists.gig_sample_many(rng(11), -1.0, chi, psi)
        g = rng(11)
        single = [dists.gig_sample(g, GIGParams(-1.0, c, p)) for c, p in zip(chi, psi)]
        assert np.array_equal(many, single)


class TestNIG:
    @pytest.mark.parametrize("x", [-2.0, 0.0, 0.7, 3.0])
    def test_mixture_representation(self, x):
        p = NIGParams(0.3, -0.4, 1.2, 2.5)

        def integrand(v):
            return math.exp(
                stats.norm.logpdf(x, p.mu + p.beta * v, math.sqrt(v)) + dists.ig2_logpdf(v, p.ig2)
            )

        mixture, _ = integrate.quad(integrand, 0, math.inf, limit=200)
        assert dists.nig_logpdf(x, p) == pytest.approx(math.log(mixture), rel=1e-6)

    def test_sampler(self):
        p = NIGParams(0.1, 0.5, 1.0, 3.0)
        g = rng(13)
        draws = [dists.nig_sample(g, p) for _ in range(5000)]
        cdf = np.vectorize(
            lambda x: integrate.quad(lambda y: math.exp(dists.nig_logpdf(y, p)), -math.inf, x)[0]
        )
        assert stats.kstest(draws[:500], cdf).pvalue > 0.01
        # mean μ + βη
        assert np.mean(draws) == pytest.approx(0.1 + 0.5 * 1.0, abs=0.06)


class TestOthers:
    def test_gamma(self):
        assert dists.gamma_logpdf(1.0, 1.0, 2.0) == pytest.approx(math.log(2.0) - 2.0)
        g = rng()
        draws = [dists.gamma_sample(g, 3.0, 2.0) for _ in range(20_000)]
        assert np.mean(draws) == pytest.approx(1.5, rel=0.02)

    def test_mvn(self):
        precision = np.array([[2.0, 0.5], [0.5, 1.0]])
        mean = np.array([1.0, -1.0])
        assert dists.mvn_logpdf(mean, mean, precision) == pytest.approx(
            stats.multivariate_normal.logpdf(mean, mean, np.linalg.inv(precision))
        )
        g = rng()
        draws = np.array([dists.mvn_sample(g, mean, precision) for _ in range(20_000)])
        assert np.allclose(draws.mean(axis=0), mean, atol=0.03)
        assert np.allclose(np.cov(draws.T), np.linalg.inv(precision), atol=0.05)

    def test_zip_zero_rate(self):
        counts = dists.zip_sample(rng(), ZIPParams(0.1, 0.0), size=1000)
        assert np.all(counts == 0)

    def test_zip_normalized(self):
        p = ZIPParams(0.15, 4.2)
        total = np.exp(dists.zip_logpmf(np.arange(100), p)).sum()
        assert total == pytest.approx(1.0, abs=1e-12)
        assert dists.zip_logpmf(0, p) == pytest.approx(math.log(0.15 + 0.85 * math.exp(-4.2)))

    def test_zip_sampler(self):
        p = ZIPParams(0.2, 3.0)
        counts = dists.zip_sample(rng(), p, size=20_000)
        expected = np.exp(dists.zip_logpmf(np.arange(15), p)) * len(counts)
        observed = np.bincount(counts, minlength=15)[:15]
        expected[-1] += len(counts) - expected.sum()
        observed[-1] += len(counts) - observed.sum()
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_zip_invalid(self):
        with pytest.raises(dists.DomainError):
            ZIPParams(1.5, 1.0)
