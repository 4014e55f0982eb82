"""Observation-model likelihoods for the two fitting regimes.

- infections regime: observed daily infections enter the renewal mean as
  plug-in history, so the likelihood factorizes over days.
- deaths regime: infections are latent and deterministic given the seeds and
  the daily reproduction numbers; observed deaths are a delayed, thinned,
  negative-binomial read-out. A configurable latent lead-in window (which
  contains the seeding days) precedes the first observed day.

Both engines expose loglik(rt_daily, seed_level, dispersion_k) returning the
total, the per-observation vector and the daily series needed for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .renewal import DiscretizedInterval, lagged_convolve, negbin_log_pmf

DEFAULT_SEED_DAYS = 6
DEFAULT_LEAD_IN = 30  # latent days before the first observation (deaths regime)


@dataclass
class LikelihoodResult:
    total: float
    pointwise: np.ndarray  # one entry per observed day
    infections: np.ndarray  # latent infections (deaths) or fitted means (infections)
    susceptible: np.ndarray  # S_t on the model axis
    fitted: np.ndarray  # fitted means for the observed series


def _as_counts(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("observed series must be a non-empty 1-d array")
    if np.any(arr < 0):
        raise ValueError("observed counts must be non-negative")
    if not np.all(np.isfinite(arr)):
        raise ValueError("observed counts must be finite")
    return arr


class InfectionsLikelihood:
    """Plug-in renewal likelihood for an observed infections series.

    The mean for day t is (S_{t-1}/n) * R_{t-1} * (observed history + seeding
    contribution), with the seeding level spread over seed_days virtual days
    immediately before the first observation. Day 1 has no earlier R and uses
    R_1.
    """

    regime = "infections"

    def __init__(
        self,
        counts,
        population_n: float,
        gi: DiscretizedInterval,
        seed_days: int = DEFAULT_SEED_DAYS,
    ) -> None:
        self.counts = _as_counts(counts)
        if population_n <= 0:
            raise ValueError("population must be positive")
        self.population_n = float(population_n)
        self.gi = gi
        if seed_days < 1:
            raise ValueError("seed_days must be >= 1")
        self.seed_days = int(seed_days)
        t_obs = self.counts.size
        g = gi.masses
        self.history = lagged_convolve(self.counts, g)
        # seed day m in 0..seed_days-1 sits m+1 days before day 1
        seed_kernel = np.zeros(t_obs)
        for m in range(self.seed_days):
            # lag from that seed day to observed day t (1-based) is t + m
            lags = np.arange(1, t_obs + 1) + m
            valid = lags <= g.size
            seed_kernel[valid] += g[lags[valid] - 1]
        self.seed_kernel = seed_kernel
        self.cum_before = np.concatenate([[0.0], np.cumsum(self.counts)[:-1]])
        # day t's mean is driven by R_{t-1}; day 1 falls back to R_1
        self.r_index = np.maximum(np.arange(t_obs) - 1, 0)

    @property
    def n_obs(self) -> int:
        return int(self.counts.size)

    @property
    def horizon(self) -> int:
        """Days on the model axis over which R_t must be defined."""
        return int(self.counts.size)

    @property
    def lead_in(self) -> int:
        return 0

    def base_means(self, seed_level: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-day mean divided by its R value, plus S_{t-1}."""
        if seed_level < 0:
            raise ValueError("seed level must be non-negative")
        s_prev = self.population_n - self.seed_days * seed_level - self.cum_before
        s_prev = np.maximum(s_prev, 0.0)
        base = (s_prev / self.population_n) * (self.history + seed_level * self.seed_kernel)
        return base, s_prev

    def loglik(self, rt_daily, seed_level: float, dispersion_k: float) -> LikelihoodResult:
        rt_daily = np.asarray(rt_daily, dtype=float)
        if rt_daily.size != self.horizon:
            raise ValueError(f"rt must cover {self.horizon} days")
        base, _ = self.base_means(seed_level)
        means = base * rt_daily[self.r_index]
        pointwise = negbin_log_pmf(self.counts, means, dispersion_k)
        susceptible = self.population_n - self.seed_days * seed_level - np.cumsum(self.counts)
        return LikelihoodResult(
            total=float(pointwise.sum()),
            pointwise=pointwise,
            infections=means,
            susceptible=susceptible,
            fitted=means,
        )

    def total(self, rt_daily, seed_level: float, dispersion_k: float) -> float:
        """Total log-likelihood only (sampler hot path)."""
        rt_daily = np.asarray(rt_daily, dtype=float)
        if rt_daily.size != self.horizon:
            raise ValueError(f"rt must cover {self.horizon} days")
        base, _ = self.base_means(seed_level)
        means = base * rt_daily[self.r_index]
        return float(negbin_log_pmf(self.counts, means, dispersion_k).sum())

    def label_logits(self, r_values, seed_level: float, dispersion_k: float) -> np.ndarray:
        """Likelihood part of the label full conditionals, shape (T, K).

        Entry (t-1, m) is the log-likelihood contribution of setting z_t = m+1:
        day t's label drives day t+1's mean (and day 1's own mean).
        """
        r_values = np.asarray(r_values, dtype=float)
        base, _ = self.base_means(seed_level)
        t_obs = self.n_obs
        k = dispersion_k
        x = self.counts
        # NB log pmf split into an R-independent constant and mu-dependent part
        from scipy.special import gammaln

        const = gammaln(x + k) - gammaln(k) - gammaln(x + 1.0)
        mu = np.outer(base, r_values)  # (T, K) candidate means for each day
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = (
                const[:, None]
                - k * np.log1p(mu / k)
                + x[:, None] * (np.log(mu) - np.log(k + mu))
            )
        terms = np.where(mu == 0.0, np.where(x[:, None] == 0.0, 0.0, -np.inf), terms)
        logits = np.zeros((t_obs, r_values.size))
        logits[: t_obs - 1] += terms[1:]  # z_t drives day t+1
        logits[0] += terms[0]  # day 1 uses R_1
        return logits


class DeathsLikelihood:
    """Deaths-regime likelihood with deterministic latent infections.

    The model axis prepends `lead_in` latent days (the first seed_days of
    which carry the seeding level) to the trimmed observation window; R_t must
    be supplied on the whole axis.
    """

    regime = "deaths"

    def __init__(
        self,
        counts,
        population_n: float,
        gi: DiscretizedInterval,
        delay: DiscretizedInterval,
        ifr,
        seed_days: int = DEFAULT_SEED_DAYS,
        lead_in: int = DEFAULT_LEAD_IN,
    ) -> None:
        self.counts = _as_counts(counts)
        if population_n <= 0:
            raise ValueError("population must be positive")
        if seed_days < 1 or lead_in < seed_days:
            raise ValueError("need lead_in >= seed_days >= 1")
        self.population_n = float(population_n)
        self.gi = gi
        self.delay = delay
        self.seed_days = int(seed_days)
        self.lead_in = int(lead_in)
        ifr_arr = np.asarray(ifr, dtype=float)
        if ifr_arr.ndim == 0:
            ifr_arr = np.full(self.counts.size, float(ifr_arr))
        if ifr_arr.shape != self.counts.shape:
            raise ValueError("ifr must be a scalar or match the observed days")
        if np.any(ifr_arr < 0) or np.any(ifr_arr > 1):
            raise ValueError("ifr must lie in [0, 1]")
        self.ifr = ifr_arr
        self._buffer = np.empty(self.horizon)
        self._nb_cache: tuple[float | None, np.ndarray | None] = (None, None)

    @property
    def n_obs(self) -> int:
        return int(self.counts.size)

    @property
    def horizon(self) -> int:
        return int(self.lead_in + self.counts.size)

    def latents(self, rt_daily, seed_level: float) -> np.ndarray:
        """Deterministic latent infections on the model axis."""
        rt_daily = np.asarray(rt_daily, dtype=float)
        if rt_daily.size != self.horizon:
            raise ValueError(f"rt must cover {self.horizon} days")
        if seed_level < 0:
            raise ValueError("seed level must be non-negative")
        c = np.zeros(self.horizon)
        c[: self.seed_days] = seed_level
        _kernels.renewal_tail(
            c, rt_daily, self.gi.masses, self.population_n, self.seed_days, 0, 0.0
        )
        return c

    def death_means(self, latents: np.ndarray) -> np.ndarray:
        convolved = lagged_convolve(latents, self.delay.masses)
        return self.ifr * convolved[self.lead_in :]

    def loglik(self, rt_daily, seed_level: float, dispersion_k: float) -> LikelihoodResult:
        rt_daily = np.asarray(rt_daily, dtype=float)
        c = self.latents(rt_daily, seed_level)
        means = self.death_means(c)
        pointwise = negbin_log_pmf(self.counts, means, dispersion_k)
        susceptible = self.population_n - np.cumsum(c)
        return LikelihoodResult(
            total=float(pointwise.sum()),
            pointwise=pointwise,
            infections=c,
            susceptible=susceptible,
            fitted=means,
        )

    def _nb_const(self, dispersion_k: float) -> np.ndarray:
        if self._nb_cache[0] == dispersion_k:
            return self._nb_cache[1]
        from scipy.special import gammaln

        x = self.counts
        const = gammaln(x + dispersion_k) - gammaln(dispersion_k) - gammaln(x + 1.0)
        self._nb_cache = (dispersion_k, const)
        return const

    def total(self, rt_daily, seed_level: float, dispersion_k: float) -> float:
        """Total log-likelihood only, via the fused kernel (sampler hot path)."""
        rt_daily = np.asarray(rt_daily, dtype=float)
        if rt_daily.size != self.horizon:
            raise ValueError(f"rt must cover {self.horizon} days")
        if seed_level < 0:
            raise ValueError("seed level must be non-negative")
        return float(
            _kernels.deaths_total_loglik(
                self._buffer,
                rt_daily,
                self.gi.masses,
                self.delay.masses,
                self.counts,
                self.ifr,
                self._nb_const(dispersion_k),
                float(dispersion_k),
                self.population_n,
                self.seed_days,
                float(seed_level),
                self.lead_in,
            )
        )

    def label_sweep(
        self,
        zidx: np.ndarray,
        latents: np.ndarray,
        r_values: np.ndarray,
        log_weights: np.ndarray,
        seed_level: float,
        dispersion_k: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Gibbs-resample every day label in ascending order (in place).

        zidx holds 0-based labels on the model axis; latents must be
        consistent with them on entry and are returned consistent on exit.
        """
        rt = r_values[zidx]
        uniforms = rng.random(self.horizon)
        _kernels.deaths_label_sweep(
            zidx,
            latents,
            rt,
            np.asarray(r_values, dtype=float),
            np.asarray(log_weights, dtype=float),
            self.gi.masses,
            self.delay.masses,
            self.counts,
            self.ifr,
            self._nb_const(dispersion_k),
            float(dispersion_k),
            self.population_n,
            self.seed_days,
            self.lead_in,
            uniforms,
        )
        # labels near the end of the axis influence no observation and leave
        # stale latents behind; one full recompute restores consistency
        latents[: self.seed_days] = seed_level
        _kernels.renewal_tail(
            latents, rt, self.gi.masses, self.population_n, self.seed_days, 0, 0.0
        )
        return zidx
