"""Observation likelihoods checked against brute-force recursions."""

import dataclasses

import numpy as np
import pytest

from epiphase.likelihood import DeathsLikelihood, InfectionsLikelihood
from epiphase.phases import PhaseTrajectory
from epiphase.renewal import discretize_gamma, negbin_log_pmf
from epiphase.simulate import ScenarioConfig, deterministic_infections, simulate

GI = discretize_gamma(6.5, 4.4)
DELAY = discretize_gamma(8.0, 3.0)


def brute_infection_means(counts, n, g, seed_level, seed_days, rt):
    """Double-loop transcription of the plug-in renewal mean."""
    t_obs = len(counts)
    mu = np.zeros(t_obs)
    for t in range(1, t_obs + 1):
        hist = 0.0
        for s in range(1, t):
            lag = t - s
            if lag <= g.size:
                hist += counts[s - 1] * g[lag - 1]
        for m in range(seed_days):
            lag = t + m
            if lag <= g.size:
                hist += seed_level * g[lag - 1]
        s_prev = n - seed_days * seed_level - sum(counts[: t - 1])
        r = rt[t - 2] if t >= 2 else rt[0]
        mu[t - 1] = max(s_prev, 0.0) / n * r * hist
    return mu


def brute_latents(rt, n, g, seed_level, seed_days, horizon):
    c = np.zeros(horizon)
    c[:seed_days] = seed_level
    for t in range(seed_days + 1, horizon + 1):
        hist = 0.0
        for s in range(1, t):
            lag = t - s
            if lag <= g.size:
                hist += c[s - 1] * g[lag - 1]
        s_prev = n - c[: t - 1].sum()
        c[t - 1] = min(s_prev / n * rt[t - 2] * hist, s_prev)
    return c


class TestInfectionsLikelihood:
    def make(self, t_obs=40, rng_seed=3):
        rng = np.random.default_rng(rng_seed)
        counts = rng.poisson(30.0, size=t_obs).astype(float)
        return InfectionsLikelihood(counts, 5e5, GI, seed_days=6)

    def test_means_match_double_loop(self):
        eng = self.make()
        rng = np.random.default_rng(11)
        rt = rng.uniform(0.5, 2.0, size=eng.horizon)
        res = eng.loglik(rt, seed_level=12.0, dispersion_k=9.0)
        oracle = brute_infection_means(eng.counts, 5e5, GI.masses, 12.0, 6, rt)
        np.testing.assert_allclose(res.fitted, oracle, rtol=0, atol=1e-12)

    def test_pointwise_sums_to_total(self):
        eng = self.make()
        res = eng.loglik(np.full(eng.horizon, 1.2), 10.0, 8.0)
        assert res.total == pytest.approx(res.pointwise.sum(), abs=1e-10)
        assert eng.total(np.full(eng.horizon, 1.2), 10.0, 8.0) == pytest.approx(
            res.total, abs=1e-10
        )

    def test_grid_maximum_sits_near_truth(self):
        # simulate under constant R, profile the likelihood over a grid
        cfg = ScenarioConfig(
            population_n=1e7,
            rt=PhaseTrajectory.from_changepoints([1.3], [], 100),
            ifr=0.02,
            dispersion_k=10.0,
            gi_mean=6.5,
            gi_sd=4.4,
            delay_mean=19.0,
            delay_sd=8.5,
            seed_infections=(10.0,) * 6,
            rng_seed=8,
        )
        # first six days are the seeds; the engine models them as the
        # seeding window immediately before its observation axis
        counts = simulate(cfg).infections[6:]
        eng = InfectionsLikelihood(counts, 1e7, GI, seed_days=6)
        grid = np.arange(0.8, 1.9, 0.01)
        scores = [eng.total(np.full(eng.horizon, r), 10.0, 10.0) for r in grid]
        assert abs(grid[int(np.argmax(scores))] - 1.3) < 0.06

    def test_zero_mean_conventions(self):
        counts = np.zeros(5)
        eng = InfectionsLikelihood(counts, 1e6, GI, seed_days=6)
        # zero seeding level gives zero means everywhere; zero counts are free
        assert eng.total(np.full(5, 1.5), 0.0, 10.0) == 0.0
        eng2 = InfectionsLikelihood(np.array([0, 0, 3, 0, 0.0]), 1e6, GI)
        assert eng2.total(np.full(5, 1.5), 0.0, 10.0) == -np.inf

    def test_label_logit_differences_match_total(self):
        eng = self.make(t_obs=12, rng_seed=5)
        r_values = np.array([0.7, 1.2, 1.9])
        z = np.array([0, 0, 1, 1, 1, 2, 2, 0, 1, 2, 2, 1])
        logits = eng.label_logits(r_values, 10.0, 8.0)
        assert logits.shape == (12, 3)
        for t in (0, 1, 5, 10, 11):
            for a, b in ((0, 1), (2, 0)):
                za, zb = z.copy(), z.copy()
                za[t], zb[t] = a, b
                direct = eng.total(r_values[za], 10.0, 8.0) - eng.total(
                    r_values[zb], 10.0, 8.0
                )
                assert logits[t, a] - logits[t, b] == pytest.approx(direct, abs=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            InfectionsLikelihood(np.array([1.0, -2.0]), 1e6, GI)
        with pytest.raises(ValueError):
            InfectionsLikelihood(np.array([1.0, 2.0]), -5.0, GI)
        eng = self.make()
        with pytest.raises(ValueError):
            eng.total(np.ones(3), 10.0, 8.0)
        with pytest.raises(ValueError):
            eng.loglik(np.ones(eng.horizon), -1.0, 8.0)


class TestDeathsLikelihood:
    def make(self, t_obs=50, lead_in=20, ifr=0.1, rng_seed=4):
        rng = np.random.default_rng(rng_seed)
        counts = rng.poisson(8.0, size=t_obs).astype(float)
        return DeathsLikelihood(
            counts, 2e6, GI, DELAY, ifr, seed_days=6, lead_in=lead_in
        )

    def test_latents_match_double_loop(self):
        eng = self.make()
        rng = np.random.default_rng(21)
        rt = rng.uniform(0.6, 1.8, size=eng.horizon)
        got = eng.latents(rt, 15.0)
        oracle = brute_latents(rt, 2e6, GI.masses, 15.0, 6, eng.horizon)
        np.testing.assert_allclose(got, oracle, rtol=1e-12, atol=1e-12)

    def test_latents_match_forward_simulator_expectation(self):
        # same recursion as the forward model's deterministic path
        cfg = ScenarioConfig(
            population_n=3e6,
            rt=PhaseTrajectory.from_changepoints([1.4, 0.9], [30], 70),
            ifr=0.05,
            dispersion_k=10.0,
            gi_mean=6.5,
            gi_sd=4.4,
            delay_mean=8.0,
            delay_sd=3.0,
            seed_infections=(12.0,) * 6,
            rng_seed=1,
        )
        det = deterministic_infections(cfg)
        eng = DeathsLikelihood(
            np.ones(70 - 6), 3e6, GI, DELAY, 0.05, seed_days=6, lead_in=6
        )
        got = eng.latents(cfg.rt.daily(), 12.0)
        np.testing.assert_allclose(got, det, rtol=1e-10, atol=1e-10)

    def test_death_means_match_double_loop(self):
        eng = self.make()
        rt = np.full(eng.horizon, 1.1)
        c = eng.latents(rt, 10.0)
        means = eng.death_means(c)
        pi = DELAY.masses
        for j in (0, 3, 17, 49):
            e = eng.lead_in + j  # 0-based model-axis index of obs day j
            dm = sum(
                c[e - lag] * pi[lag - 1] for lag in range(1, min(e, pi.size) + 1)
            )
            assert means[j] == pytest.approx(0.1 * dm, abs=1e-12)

    def test_fused_total_matches_numpy_path(self):
        eng = self.make()
        rng = np.random.default_rng(9)
        for _ in range(5):
            rt = rng.uniform(0.5, 2.0, size=eng.horizon)
            seed = rng.uniform(1.0, 40.0)
            k = rng.uniform(2.0, 30.0)
            res = eng.loglik(rt, seed, k)
            np.testing.assert_allclose(
                negbin_log_pmf(eng.counts, res.fitted, k).sum(), res.total, atol=1e-10
            )
            assert eng.total(rt, seed, k) == pytest.approx(res.total, abs=1e-8)

    def test_grid_maximum_sits_near_truth(self):
        cfg = ScenarioConfig(
            population_n=1e7,
            rt=PhaseTrajectory.from_changepoints([1.25], [], 130),
            ifr=0.1,
            dispersion_k=10.0,
            gi_mean=6.5,
            gi_sd=4.4,
            delay_mean=8.0,
            delay_sd=3.0,
            seed_infections=(10.0,) * 6,
            rng_seed=12,
        )
        # lead_in equal to the trimmed prefix puts the pinned seeds on the
        # same calendar days the simulator seeded. A single realization's
        # profile maximum wobbles with early branching noise, so average the
        # argmax over replicates.
        grid = np.arange(0.9, 1.7, 0.01)
        peaks = []
        for seed in range(1, 7):
            deaths = simulate(dataclasses.replace(cfg, rng_seed=seed)).deaths[30:]
            eng = DeathsLikelihood(
                deaths, 1e7, GI, DELAY, 0.1, seed_days=6, lead_in=30
            )
            scores = [eng.total(np.full(eng.horizon, r), 10.0, 10.0) for r in grid]
            peaks.append(grid[int(np.argmax(scores))])
        assert abs(np.mean(peaks) - 1.25) < 0.05

    def test_perturbing_fit_lowers_likelihood(self):
        eng = self.make()
        rt = np.full(eng.horizon, 1.1)
        base = eng.total(rt, 10.0, 10.0)
        worse = rt.copy()
        worse[25:] = 3.5
        assert eng.total(worse, 10.0, 10.0) < base

    def test_ifr_scales_death_means(self):
        a = self.make(ifr=0.05)
        b = self.make(ifr=0.10)
        rt = np.full(a.horizon, 1.2)
        np.testing.assert_allclose(
            2.0 * a.loglik(rt, 10.0, 5.0).fitted,
            b.loglik(rt, 10.0, 5.0).fitted,
            rtol=1e-12,
        )

    def test_daily_ifr_vector_accepted(self):
        counts = np.ones(10)
        ifr = np.linspace(0.01, 0.1, 10)
        eng = DeathsLikelihood(counts, 1e6, GI, DELAY, ifr, seed_days=6, lead_in=10)
        rt = np.full(eng.horizon, 1.0)
        res = eng.loglik(rt, 10.0, 5.0)
        flat = DeathsLikelihood(counts, 1e6, GI, DELAY, 1.0, seed_days=6, lead_in=10)
        np.testing.assert_allclose(
            res.fitted, ifr * flat.loglik(rt, 10.0, 5.0).fitted, rtol=1e-12
        )

    def test_label_sweep_leaves_consistent_state(self):
        eng = self.make(t_obs=30, lead_in=12)
        r_values = np.array([0.8, 1.3, 1.7])
        log_w = np.log(np.array([0.3, 0.4, 0.3]))
        rng = np.random.default_rng(2)
        zidx = rng.integers(0, 3, size=eng.horizon)
        latents = eng.latents(r_values[zidx], 10.0)
        eng.label_sweep(zidx, latents, r_values, log_w, 10.0, 8.0, rng)
        np.testing.assert_allclose(
            latents, eng.latents(r_values[zidx], 10.0), rtol=0, atol=1e-9
        )

    def test_input_validation(self):
        with pytest.raises(ValueError):
            self.make(lead_in=3)  # shorter than the seeding window
        with pytest.raises(ValueError):
            self.make(ifr=1.7)
        with pytest.raises(ValueError):
            DeathsLikelihood(np.ones(5), 1e6, GI, DELAY, np.full(4, 0.1), lead_in=10)
        eng = self.make()
        with pytest.raises(ValueError):
            eng.latents(np.ones(4), 10.0)
        with pytest.raises(ValueError):
            eng.latents(np.ones(eng.horizon), -2.0)


class TestTailRecompute:
    def test_partial_recompute_matches_full(self):
        from epiphase import _kernels

        rng = np.random.default_rng(6)
        horizon, n, seed = 60, 1e6, 12.0
        rt = rng.uniform(0.5, 2.0, size=horizon)
        g = GI.masses
        c = np.zeros(horizon)
        c[:6] = seed
        _kernels.renewal_tail(c, rt, g, n, 6, 0, 0.0)
        for start in (6, 17, 30, 59):
            rt2 = rt.copy()
            rt2[start - 1] *= 1.4  # drives day start+1 onward... and day start
            full = np.zeros(horizon)
            full[:6] = seed
            _kernels.renewal_tail(full, rt2, g, n, 6, 0, 0.0)
            part = c.copy()
            _kernels.renewal_tail(part, rt2, g, n, 6, start, float(part[:start].sum()))
            np.testing.assert_allclose(part, full, rtol=1e-12, atol=1e-12)
