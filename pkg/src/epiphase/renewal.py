"""Renewal-equation primitives shared by the simulator and the samplers.

Covers:
- discretization of continuous gamma delays onto integer day lags
- expected new infections under a time-varying reproduction number
- expected deaths as a lagged convolution of past infections
- active (still infectious) case counts
- negative-binomial counting noise in mean/dispersion form
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

MASS_COVERAGE = 0.999  # continuous probability mass a discretized delay must capture


@dataclass(frozen=True)
class DiscretizedInterval:
    """A positive continuous delay collapsed onto integer day lags 1..s_max.

    masses[i] is the probability of a delay of i+1 whole days; the array sums
    to one after truncation at s_max, the smallest lag capturing at least
    MASS_COVERAGE of the continuous distribution.
    """

    masses: np.ndarray
    mean_days: float
    sd_days: float

    def __post_init__(self) -> None:
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("masses must be a non-empty 1-d array")
        if np.any(m < 0):
            raise ValueError("masses must be non-negative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1 within 1e-12")
        object.__setattr__(self, "masses", m)

    @property
    def s_max(self) -> int:
        return int(self.masses.size)

    def discretized_mean(self) -> float:
        """Mean of the lag distribution in days."""
        return float(np.arange(1, self.s_max + 1) @ self.masses)

    def survivor(self) -> np.ndarray:
        """P(delay > lag) for lag 0..s_max; survivor()[0] is exactly 1."""
        surv = np.empty(self.s_max + 1)
        surv[0] = 1.0
        surv[1:] = 1.0 - np.cumsum(self.masses)
        return np.clip(surv, 0.0, 1.0)


def discretize_gamma(mean_days: float, sd_days: float) -> DiscretizedInterval:
    """Discretize a gamma delay onto day lags by CDF differences.

    The gamma is parameterized by mean and standard deviation
    (shape (mean/sd)^2, rate mean/sd^2). masses[lag-1] is proportional to
    F(lag) - F(lag - 1) for lag = 1..s_max, renormalized by F(s_max), where
    s_max is the smallest lag with F(s_max) >= MASS_COVERAGE.

    Args:
        mean_days: mean of the continuous delay, > 0.
        sd_days: standard deviation of the continuous delay, > 0.

    Returns:
        DiscretizedInterval with masses over lags 1..s_max.
    """
    if not (mean_days > 0 and sd_days > 0):
        raise ValueError("mean_days and sd_days must be positive")
    shape = (mean_days / sd_days) ** 2
    scale = sd_days**2 / mean_days  # 1 / rate
    dist = stats.gamma(a=shape, scale=scale)
    s_max = max(1, math.ceil(dist.ppf(MASS_COVERAGE)))
    cdf = dist.cdf(np.arange(0, s_max + 1))
    masses = np.diff(cdf) / cdf[-1]
    masses /= masses.sum()
    return DiscretizedInterval(masses=masses, mean_days=float(mean_days), sd_days=float(sd_days))


@dataclass
class EpidemicState:
    """Daily infection/death counts plus the susceptible ledger.

    susceptible[t-1] is S_t = n - sum_{s<=t} c_s; days are 1-based in the
    formulas and 0-based in the arrays.
    """

    population_n: float
    infections: np.ndarray
    deaths: np.ndarray | None = None
    susceptible: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.infections = np.asarray(self.infections, dtype=float)
        if self.infections.ndim != 1:
            raise ValueError("infections must be 1-d")
        if np.any(self.infections < 0):
            raise ValueError("infection counts must be non-negative")
        if self.deaths is not None:
            self.deaths = np.asarray(self.deaths, dtype=float)
            if self.deaths.shape != self.infections.shape:
                raise ValueError("deaths and infections must have equal length")
        if self.susceptible is None:
            self.susceptible = self.population_n - np.cumsum(self.infections)
        else:
            self.susceptible = np.asarray(self.susceptible, dtype=float)
            expected = self.population_n - np.cumsum(self.infections)
            if not np.allclose(self.susceptible, expected, rtol=1e-9, atol=1e-6):
                raise ValueError("susceptible series inconsistent with cumulative infections")
        if np.any(self.susceptible < 0):
            raise ValueError("cumulative infections exceed the population")

    @property
    def horizon(self) -> int:
        return int(self.infections.size)


def lagged_convolve(series: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[t] = sum_{i>=1} series[t-i] * kernel[i-1], i.e. a strictly lagged convolution.

    The kernel is indexed by lag starting at one day, so the current day never
    contributes to its own output.
    """
    series = np.asarray(series, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if series.ndim != 1 or kernel.ndim != 1:
        raise ValueError("series and kernel must be 1-d")
    full = np.convolve(series, kernel)
    out = np.zeros_like(series)
    out[1:] = full[: series.size - 1]
    return out


def active_infectives(infections: np.ndarray, survival: np.ndarray) -> np.ndarray:
    """Number still infectious each day: I_t = sum_{s<=t} c_s * P(Y > t-s).

    Args:
        infections: daily new infections c_1..c_T.
        survival: P(Y > lag) for lag 0, 1, ...; beyond the array the
            probability is taken as zero. survival[0] must be 1 and the
            sequence non-increasing in [0, 1].

    Returns:
        Array of expected active infectives per day, same length as infections.
    """
    c = np.asarray(infections, dtype=float)
    surv = np.asarray(survival, dtype=float)
    if c.ndim != 1 or surv.ndim != 1 or surv.size == 0:
        raise ValueError("infections and survival must be non-empty 1-d arrays")
    if np.any(surv < 0) or np.any(surv > 1) or np.any(np.diff(surv) > 0):
        raise ValueError("survival must be non-increasing probabilities")
    return np.convolve(c, surv)[: c.size]


def _daily_rt(rt, horizon: int) -> np.ndarray:
    """Accept a PhaseTrajectory or a plain daily array of R values."""
    daily = rt.daily() if hasattr(rt, "daily") else np.asarray(rt, dtype=float)
    if daily.size < horizon:
        raise ValueError(f"rt defines {daily.size} days but day {horizon} is required")
    return daily


def renewal_expectation(state: EpidemicState, rt, gi: DiscretizedInterval, t: int) -> float:
    """Expected next-day infections E[c_{t+1}] driven by day t.

    E[c_{t+1}] = (S_t / n) * R_t * sum_{s <= t} c_s * g(t + 1 - s), with g the
    discretized generation interval.

    Args:
        state: counts populated at least through day t.
        rt: PhaseTrajectory or daily array supplying R_t.
        gi: generation interval masses over lags 1..s_max.
        t: 1-based day index, 1 <= t <= state.horizon.
    """
    if not 1 <= t <= state.horizon:
        raise ValueError(f"day {t} outside populated history 1..{state.horizon}")
    r_t = _daily_rt(rt, t)[t - 1]
    g = gi.masses
    width = min(t, g.size)
    # lag j pairs g[j-1] with infections on day t+1-j
    hist = float(state.infections[t - width : t][::-1] @ g[:width])
    return (state.susceptible[t - 1] / state.population_n) * r_t * hist


def death_expectation(
    infections: np.ndarray, ifr: float | np.ndarray, delay: DiscretizedInterval, t: int
) -> float:
    """Expected deaths on day t: ifr_t * sum_{i>=1} c_{t-i} * pi(i).

    ifr may be a scalar or a per-day array; it is applied at the death date.
    """
    c = np.asarray(infections, dtype=float)
    if not 1 <= t <= c.size:
        raise ValueError(f"day {t} outside populated history 1..{c.size}")
    ifr_t = float(np.asarray(ifr, dtype=float).ravel()[t - 1]) if np.ndim(ifr) else float(ifr)
    if not 0 <= ifr_t <= 1:
        raise ValueError("ifr must lie in [0, 1]")
    pi = delay.masses
    width = min(t - 1, pi.size)
    # lag i pairs pi[i-1] with infections on day t-i
    return ifr_t * float(c[t - 1 - width : t - 1][::-1] @ pi[:width])


def effective_r(rt_value: float, susceptible_s: float, population_n: float) -> float:
    """Effective reproduction number (S_t / n) * R_t."""
    if population_n <= 0:
        raise ValueError("population must be positive")
    if susceptible_s < 0 or susceptible_s > population_n:
        raise ValueError("susceptible count must lie in [0, population]")
    return (susceptible_s / population_n) * rt_value


def negbin_log_pmf(count, mean_mu, dispersion_k):
    """Negative-binomial log pmf in mean/dispersion form; variance mu + mu^2/k.

    A zero mean is a point mass at zero. Inputs broadcast; counts must be
    non-negative integers and dispersion_k positive.
    """
    x = np.asarray(count)
    mu = np.asarray(mean_mu, dtype=float)
    k = np.asarray(dispersion_k, dtype=float)
    if np.any(x < 0):
        raise ValueError("counts must be non-negative")
    if np.any(mu < 0):
        raise ValueError("mean must be non-negative")
    if np.any(k <= 0):
        raise ValueError("dispersion must be positive")
    x = x.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mu_frac = np.log(mu) - np.log(k + mu)
        out = (
            gammaln(x + k)
            - gammaln(k)
            - gammaln(x + 1.0)
            - k * np.log1p(mu / k)
            + x * log_mu_frac
        )
    # point mass at zero when the mean vanishes
    zero_mean = mu == 0
    if np.ndim(out) == 0:
        if zero_mean:
            return 0.0 if x == 0 else -np.inf
        return float(out)
    out = np.where(zero_mean, np.where(x == 0, 0.0, -np.inf), out)
    return out


def negbin_sample(rng: np.random.Generator, mean_mu, dispersion_k):
    """Draw negative-binomial counts via the gamma-Poisson mixture.

    Equivalent to individual-level gamma variation in transmission thinned by
    Poisson counting; exactly NB(mean, dispersion) marginally.
    """
    mu = np.asarray(mean_mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("mean must be non-negative")
    rates = np.where(mu > 0, rng.gamma(dispersion_k, np.where(mu > 0, mu, 1.0) / dispersion_k), 0.0)
    return rng.poisson(rates)
