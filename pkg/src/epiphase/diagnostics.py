"""Convergence checks for multi-chain posterior draws.

Split-R-hat and rank-normalized bulk effective sample size follow the
folded/split recipe of Vehtari, Gelman, Simpson, Carpenter and Burkner
(2021): each chain is halved, within- and between-half variances are pooled,
and autocorrelations are summed with Geyer's initial monotone sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

RHAT_FLAG_THRESHOLD = 1.05
MIN_CHAINS = 2
MIN_DRAWS = 100


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2*chains, n//2), dropping the middle draw when n is odd."""
    chains, n = draws.shape
    half = n // 2
    return np.concatenate([draws[:, :half], draws[:, n - half :]], axis=0)


def _check_shape(draws: np.ndarray) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2:
        raise ValueError("draws must be (chains, iterations)")
    if arr.shape[0] < MIN_CHAINS:
        raise ValueError(f"need at least {MIN_CHAINS} chains, got {arr.shape[0]}")
    if arr.shape[1] < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws per chain, got {arr.shape[1]}")
    return arr


def split_rhat(draws: np.ndarray) -> float:
    """Potential scale reduction on split chains, floored at 1.

    The floor makes the no-disagreement case exact: identical chains give
    between-chain variance 0 and the statistic is exactly 1.
    """
    halves = _split_chains(_check_shape(draws))
    m, n = halves.shape
    means = halves.mean(axis=1)
    within = float(np.mean(np.var(halves, axis=1, ddof=1)))
    between = n * float(np.var(means, ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return max(float(np.sqrt(var_plus / within)), 1.0)


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    flat = draws.reshape(-1)
    ranks = stats.rankdata(flat, method="average")
    z = stats.norm.ppf((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(draws.shape)


def _chain_autocovariance(halves: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance per chain via FFT."""
    m, n = halves.shape
    centered = halves - halves.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n].real
    return acov / n


def bulk_ess(draws: np.ndarray) -> float:
    """Rank-normalized effective sample size with Geyer's monotone truncation."""
    halves = _split_chains(_check_shape(draws))
    halves = _rank_normalize(halves)
    m, n = halves.shape
    acov = _chain_autocovariance(halves)
    within = float(np.mean(acov[:, 0]) * n / (n - 1))
    means = halves.mean(axis=1)
    var_plus = (n - 1) / n * within + float(np.var(means, ddof=1))
    if var_plus == 0.0:
        return float(m * n)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs, keep while positive, enforce non-increasing
    n_pairs = n // 2
    pair = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    positive = np.nonzero(pair <= 0.0)[0]
    cutoff = int(positive[0]) if positive.size else n_pairs
    if cutoff == 0:
        tau = 1.0
    else:
        head = np.minimum.accumulate(pair[:cutoff])
        tau = max(-1.0 + 2.0 * float(head.sum()), 1.0 / np.log10(max(m * n, 10)))
    ess = m * n / tau
    return float(min(ess, m * n * np.log10(max(m * n, 10))))


@dataclass(frozen=True)
class ScalarDiagnostic:
    name: str
    rhat: float
    ess: float
    mean: float
    sd: float

    @property
    def flagged(self) -> bool:
        return not self.rhat <= RHAT_FLAG_THRESHOLD


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-scalar convergence table plus per-chain acceptance rates."""

    scalars: tuple[ScalarDiagnostic, ...]
    acceptance: dict[str, np.ndarray] = field(default_factory=dict)
    n_chains: int = 0
    n_draws: int = 0

    @property
    def flagged(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.scalars if d.flagged)

    @property
    def converged(self) -> bool:
        return not self.flagged

    def scalar(self, name: str) -> ScalarDiagnostic:
        for d in self.scalars:
            if d.name == name:
                return d
        raise KeyError(name)

    def rows(self) -> list[dict]:
        return [
            {"name": d.name, "rhat": d.rhat, "ess": d.ess, "mean": d.mean, "sd": d.sd,
             "flagged": d.flagged}
            for d in self.scalars
        ]

    def summary(self) -> str:
        lines = [f"chains={self.n_chains} draws/chain={self.n_draws}"]
        width = max((len(d.name) for d in self.scalars), default=4)
        lines.append(f"{'scalar':<{width}}  {'rhat':>7}  {'ess':>9}  {'mean':>12}  {'sd':>12}")
        for d in self.scalars:
            mark = "  <-- rhat>1.05" if d.flagged else ""
            lines.append(
                f"{d.name:<{width}}  {d.rhat:7.4f}  {d.ess:9.1f}  {d.mean:12.5g}  {d.sd:12.5g}{mark}"
            )
        for block in sorted(self.acceptance):
            rates = ", ".join(f"{r:.3f}" for r in self.acceptance[block])
            lines.append(f"acceptance {block}: {rates}")
        if self.flagged:
            lines.append("flagged: " + ", ".join(self.flagged))
        else:
            lines.append("no scalars flagged")
        return "\n".join(lines)


def diagnose(draws, names: list[str] | None = None) -> DiagnosticsReport:
    """Convergence report for a fit: split-R-hat and bulk ESS per scalar.

    Accepts the PosteriorDraws from run_mcmc. Requires at least 2 chains and
    100 kept draws per chain. Scalars whose split-R-hat exceeds 1.05 are
    flagged in the report.
    """
    monitored = names if names is not None else sorted(draws.scalars)
    rows = []
    for name in monitored:
        arr = np.asarray(draws.scalars[name], dtype=float)
        _check_shape(arr)
        if np.allclose(arr, arr.reshape(-1)[0]):
            # constant scalar (e.g. fixed dispersion): trivially converged
            rows.append(ScalarDiagnostic(name, 1.0, float(arr.size), float(arr.mean()), 0.0))
            continue
        rows.append(
            ScalarDiagnostic(
                name=name,
                rhat=split_rhat(arr),
                ess=bulk_ess(arr),
                mean=float(arr.mean()),
                sd=float(arr.std(ddof=1)),
            )
        )
    first = np.asarray(draws.scalars[monitored[0]]) if monitored else np.zeros((0, 0))
    return DiagnosticsReport(
        scalars=tuple(rows),
        acceptance={k: np.asarray(v) for k, v in getattr(draws, "acceptance", {}).items()},
        n_chains=int(first.shape[0]) if first.size else 0,
        n_draws=int(first.shape[1]) if first.size else 0,
    )
