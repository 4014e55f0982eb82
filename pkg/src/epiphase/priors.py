"""Small prior distributions used across the phase models and samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogNormalPrior:
    """log value ~ Normal(mu, sigma); default centers phase levels at 1."""

    mu: float = 0.0
    sigma: float = 0.75

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        z = (math.log(x) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(x * self.sigma) - 0.5 * math.log(2.0 * math.pi)

    def sample(self, rng: np.random.Generator, size=None):
        return np.exp(rng.normal(self.mu, self.sigma, size=size))


@dataclass(frozen=True)
class GammaPrior:
    """Shape/rate gamma; mean shape/rate."""

    shape: float
    rate: float

    def __post_init__(self) -> None:
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        return (
            self.shape * math.log(self.rate)
            - math.lgamma(self.shape)
            + (self.shape - 1.0) * math.log(x)
            - self.rate * x
        )

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


@dataclass(frozen=True)
class ExponentialPrior:
    """Exponential with the given mean."""

    mean: float

    def __post_init__(self) -> None:
        if self.mean <= 0:
            raise ValueError("mean must be positive")

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        return -math.log(self.mean) - x / self.mean

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(self.mean, size=size)
