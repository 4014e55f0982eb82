"""Piecewise-constant phase structure for the reproduction number.

Three priors over the number, timing and level of phases:
- a fixed number of changepoints with uniform first-changepoint and gap laws
- stick-breaking of the study window by exponential phase durations
  (new-phase rate lambda), which makes the phase count Poisson a priori
- truncated Dirichlet-process stick-breaking with beta sticks

All of them produce a PhaseTrajectory: per-phase levels plus a day-to-phase
assignment, either as ordered changepoints or as free labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .priors import GammaPrior, LogNormalPrior

PP_KMAX_DEFAULT = 100  # duration draws available to tile the window
DP_TRUNCATION_DEFAULT = 36  # sticks kept in the truncated weight construction


@dataclass(frozen=True)
class PhaseTrajectory:
    """Per-phase levels r_1..r_K plus a day-to-phase assignment.

    Backed either by ordered integer changepoints (phase j covers
    T_{j-1} < t <= T_j) or by per-day labels z_t in 1..K. Labels need not be
    contiguous; changepoints always are.
    """

    phase_values: np.ndarray
    horizon: int
    changepoints: tuple[int, ...] | None = None
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.phase_values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("phase_values must be a non-empty 1-d array")
        if np.any(values <= 0):
            raise ValueError("phase values must be positive")
        object.__setattr__(self, "phase_values", values)
        if self.horizon < 1:
            raise ValueError("horizon must be at least one day")
        if (self.changepoints is None) == (self.labels is None):
            raise ValueError("exactly one of changepoints or labels must be given")
        if self.changepoints is not None:
            cps = tuple(int(c) for c in self.changepoints)
            if len(cps) != values.size - 1:
                raise ValueError("need one more phase value than changepoints")
            if any(c2 <= c1 for c1, c2 in zip(cps, cps[1:])):
                raise ValueError("changepoints must be strictly increasing")
            if cps and (cps[0] < 1 or cps[-1] >= self.horizon):
                raise ValueError("changepoints must lie inside 1..horizon-1")
            object.__setattr__(self, "changepoints", cps)
        else:
            z = np.asarray(self.labels, dtype=np.int64)
            if z.shape != (self.horizon,):
                raise ValueError("labels must assign every day 1..horizon")
            if np.any(z < 1) or np.any(z > values.size):
                raise ValueError("label out of range of phase_values")
            object.__setattr__(self, "labels", z)

    @classmethod
    def from_changepoints(cls, phase_values, changepoints, horizon: int) -> "PhaseTrajectory":
        return cls(phase_values=np.asarray(phase_values, dtype=float), horizon=int(horizon), changepoints=tuple(changepoints))

    @classmethod
    def from_labels(cls, phase_values, labels) -> "PhaseTrajectory":
        z = np.asarray(labels, dtype=np.int64)
        return cls(phase_values=np.asarray(phase_values, dtype=float), horizon=int(z.size), labels=z)

    def to_labels(self) -> np.ndarray:
        """Per-day labels z_1..z_T (1-based phase indices)."""
        if self.labels is not None:
            return self.labels.copy()
        days = np.arange(1, self.horizon + 1)
        return 1 + np.searchsorted(np.asarray(self.changepoints, dtype=float), days, side="left").astype(np.int64)

    def to_changepoints(self) -> tuple[int, ...]:
        """Ordered changepoints, if the labels form contiguous ascending runs."""
        if self.changepoints is not None:
            return self.changepoints
        z = self.labels
        boundaries = np.nonzero(np.diff(z) != 0)[0]
        runs = z[np.concatenate([[0], boundaries + 1])]
        if not np.array_equal(runs, np.arange(1, runs.size + 1)) or runs.size != self.phase_values.size:
            raise ValueError("labels are not contiguous ascending runs; no changepoint form exists")
        return tuple(int(b) + 1 for b in boundaries)

    def daily(self) -> np.ndarray:
        """R_t for t = 1..horizon."""
        return self.phase_values[self.to_labels() - 1]

    def occupied_phases(self) -> int:
        """Number of distinct phase labels actually used by some day."""
        return int(np.unique(self.to_labels()).size)


def assemble_rt(phase_values, assignment, horizon: int | None = None) -> PhaseTrajectory:
    """Build a PhaseTrajectory from levels plus either labels or changepoints.

    A 1-d assignment of length != len(phase_values) - 1 is read as per-day
    labels; otherwise as ordered changepoints (horizon then required).
    """
    values = np.asarray(phase_values, dtype=float)
    assign = np.asarray(assignment)
    if assign.ndim != 1:
        raise ValueError("assignment must be 1-d")
    if assign.size == values.size - 1 or (horizon is not None and assign.size != horizon):
        if horizon is None:
            raise ValueError("horizon is required with a changepoint assignment")
        return PhaseTrajectory.from_changepoints(values, assignment, horizon)
    return PhaseTrajectory.from_labels(values, assignment)


# ---------------------------------------------------------------------------
# fixed number of changepoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedKPrior:
    """K phases split by K-1 ordered changepoints.

    First changepoint uniform on (t1_lower, horizon); consecutive gaps uniform
    on (0, gap_upper); phase levels i.i.d. from level_prior.
    """

    k_phases: int
    t1_lower: float = 3.0
    gap_upper: float = 100.0
    level_prior: LogNormalPrior = field(default_factory=LogNormalPrior)

    def __post_init__(self) -> None:
        if self.k_phases < 1:
            raise ValueError("k_phases must be >= 1")


def fixedk_changepoints_logprior(changepoints, horizon_t: float, prior: FixedKPrior) -> float:
    """Log density of ordered changepoints under the fixed-K prior.

    Returns -inf outside the support: unordered days, first changepoint
    outside (t1_lower, horizon), a gap outside (0, gap_upper), or any
    changepoint at or beyond the horizon.
    """
    cps = np.asarray(changepoints, dtype=float)
    if cps.size != prior.k_phases - 1:
        raise ValueError(f"expected {prior.k_phases - 1} changepoints, got {cps.size}")
    if cps.size == 0:
        return 0.0
    if np.any(np.diff(cps) <= 0):
        return -np.inf
    if not prior.t1_lower < cps[0] < horizon_t or cps[-1] >= horizon_t:
        return -np.inf
    gaps = np.diff(cps)
    if np.any(gaps >= prior.gap_upper):
        return -np.inf
    return -np.log(horizon_t - prior.t1_lower) - gaps.size * np.log(prior.gap_upper)


# ---------------------------------------------------------------------------
# stick-breaking of the window by exponential durations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PPPrior:
    """Exponential phase durations tile the window; K-1 is Poisson(lambda*T).

    lambda gets a Gamma hyperprior; durations beyond the k_max-th are never
    drawn, which bounds the phase count.
    """

    rate_prior: GammaPrior = field(default_factory=lambda: GammaPrior(shape=0.02, rate=1.0))
    k_max: int = PP_KMAX_DEFAULT
    level_prior: LogNormalPrior = field(default_factory=LogNormalPrior)


def pp_stick_weights(durations, horizon_t: float) -> tuple[np.ndarray, int]:
    """Phase weights from exponential durations laid end to end over (0, T].

    K is the first index whose running duration sum reaches T; weights are
    duration/T for phases before K and the leftover fraction for phase K.

    Returns:
        (weights, K) with weights a length-K simplex.

    Raises:
        ValueError: if the durations never reach the horizon (truncation
            overflow) or any duration is non-positive.
    """
    d = np.asarray(durations, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("durations must be a non-empty 1-d array")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    if horizon_t <= 0:
        raise ValueError("horizon must be positive")
    running = np.cumsum(d)
    reached = np.nonzero(running >= horizon_t)[0]
    if reached.size == 0:
        raise ValueError(
            f"durations exhaust the truncation before tiling the window "
            f"(sum {running[-1]:.3f} < horizon {horizon_t:.3f})"
        )
    k = int(reached[0]) + 1
    weights = np.empty(k)
    weights[: k - 1] = d[: k - 1] / horizon_t
    weights[k - 1] = 1.0 - weights[: k - 1].sum()
    return weights, k


def sample_pp_weights(rng: np.random.Generator, rate_lambda: float, horizon_t: float, k_max: int = PP_KMAX_DEFAULT) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw durations T_i ~ Exp(rate_lambda) and the implied weights.

    Returns (durations, weights, K). Redraws internally are not attempted: if
    k_max durations cannot tile the window a ValueError propagates, as the
    truncation is part of the model definition.
    """
    if rate_lambda <= 0:
        raise ValueError("rate_lambda must be positive")
    durations = rng.exponential(scale=1.0 / rate_lambda, size=k_max)
    weights, k = pp_stick_weights(durations, horizon_t)
    return durations, weights, k


# ---------------------------------------------------------------------------
# truncated Dirichlet-process stick-breaking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DPPrior:
    """Truncated stick-breaking with v_i ~ Beta(1, theta) and L sticks."""

    concentration_prior: GammaPrior = field(default_factory=lambda: GammaPrior(shape=1.0, rate=1.0))
    truncation_l: int = DP_TRUNCATION_DEFAULT


def dp_stick_weights(betas) -> np.ndarray:
    """Stick-breaking weights from beta draws v_1..v_{L-1}.

    w_1 = v_1, w_l = v_l * prod_{j<l}(1 - v_j), and the last weight is the
    leftover stick, so the result always sums to one exactly.
    """
    v = np.asarray(betas, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("betas must be a non-empty 1-d array")
    if np.any(v <= 0) or np.any(v >= 1):
        raise ValueError("beta sticks must lie strictly inside (0, 1)")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    weights = np.empty(v.size + 1)
    weights[:-1] = v * remaining[:-1]
    weights[-1] = 1.0 - weights[:-1].sum()
    if weights[-1] < 0.0:  # leftover can round slightly below zero
        weights[-1] = 0.0
    return weights


def dp_gap_weights(gaps) -> np.ndarray:
    """Stick-breaking weights from log-survival gaps g_l = -log(1 - v_l).

    Equivalent to dp_stick_weights(-expm1(-g)) but stays accurate when a
    v_l sits closer to 1 than floating point can represent, which small
    concentrations force routinely.
    """
    g = np.asarray(gaps, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("gaps must be a non-empty 1-d array")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("gaps must be positive and finite")
    # survival after l breaks is exp(-(g_1+..+g_l)); weights telescope to 1
    log_remaining = np.concatenate([[0.0], -np.cumsum(g)])
    weights = np.empty(g.size + 1)
    weights[:-1] = -np.expm1(-g) * np.exp(log_remaining[:-1])
    weights[-1] = np.exp(log_remaining[-1])
    return weights


def occupied_phase_count(labels) -> int:
    """Distinct phase labels used by a day-to-phase assignment."""
    z = np.asarray(labels)
    if z.size == 0:
        raise ValueError("labels must be non-empty")
    return int(np.unique(z).size)
