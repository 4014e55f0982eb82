"""Prior densities against scipy references plus sampling sanity."""

import numpy as np
import pytest
from scipy import stats

from epiphase.priors import ExponentialPrior, GammaPrior, LogNormalPrior


class TestLogNormalPrior:
    def test_logpdf_matches_scipy(self):
        prior = LogNormalPrior(mu=0.0, sigma=0.75)
        ref = stats.lognorm(s=0.75, scale=1.0)
        for x in [0.1, 0.5, 1.0, 1.8, 6.0]:
            assert prior.logpdf(x) == pytest.approx(ref.logpdf(x), abs=1e-12)

    def test_zero_and_negative_values_are_impossible(self):
        prior = LogNormalPrior()
        assert prior.logpdf(0.0) == -np.inf
        assert prior.logpdf(-1.0) == -np.inf

    def test_sample_median_near_one(self):
        rng = np.random.default_rng(1)
        draws = LogNormalPrior().sample(rng, size=200_000)
        assert np.median(draws) == pytest.approx(1.0, abs=0.01)

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(ValueError):
            LogNormalPrior(sigma=0.0)


class TestGammaPrior:
    def test_logpdf_matches_scipy(self):
        prior = GammaPrior(shape=0.02, rate=1.0)
        ref = stats.gamma(a=0.02, scale=1.0)
        for x in [0.01, 0.2, 1.0, 4.0]:
            assert prior.logpdf(x) == pytest.approx(ref.logpdf(x), abs=1e-12)

    def test_mean(self):
        assert GammaPrior(shape=6.0, rate=2.0).mean == pytest.approx(3.0)

    def test_sample_mean(self):
        rng = np.random.default_rng(2)
        draws = GammaPrior(shape=5.0, rate=2.5).sample(rng, size=100_000)
        assert draws.mean() == pytest.approx(2.0, rel=0.02)

    def test_support_boundary(self):
        assert GammaPrior(shape=1.0, rate=1.0).logpdf(0.0) == -np.inf

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            GammaPrior(shape=0.0, rate=1.0)
        with pytest.raises(ValueError):
            GammaPrior(shape=1.0, rate=-2.0)


class TestExponentialPrior:
    def test_logpdf_matches_scipy(self):
        prior = ExponentialPrior(mean=5.0)
        ref = stats.expon(scale=5.0)
        for x in [0.01, 1.0, 5.0, 30.0]:
            assert prior.logpdf(x) == pytest.approx(ref.logpdf(x), abs=1e-12)

    def test_sample_mean(self):
        rng = np.random.default_rng(3)
        draws = ExponentialPrior(mean=5.0).sample(rng, size=100_000)
        assert draws.mean() == pytest.approx(5.0, rel=0.02)

    def test_rejects_non_positive_mean(self):
        with pytest.raises(ValueError):
            ExponentialPrior(mean=0.0)
