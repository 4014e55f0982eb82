"""Split-R-hat and effective sample size on cases with known answers."""

import numpy as np
import pytest

from epiphase.diagnostics import (
    DiagnosticsReport,
    ScalarDiagnostic,
    bulk_ess,
    diagnose,
    split_rhat,
)


def direct_ess(halves):
    """Slow oracle: rank-normalize, average autocorrelations directly,
    apply Geyer's initial-positive-monotone truncation."""
    from scipy import stats

    m, n = halves.shape
    flat = halves.reshape(-1)
    z = stats.norm.ppf((stats.rankdata(flat) - 0.375) / (flat.size + 0.25))
    halves = z.reshape(m, n)
    acov = np.zeros((m, n))
    for c in range(m):
        x = halves[c] - halves[c].mean()
        for lag in range(n):
            acov[c, lag] = np.dot(x[: n - lag], x[lag:]) / n
    within = acov[:, 0].mean() * n / (n - 1)
    var_plus = (n - 1) / n * within + np.var(halves.mean(axis=1), ddof=1)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    pair = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    tau, running_min = -1.0, np.inf
    for p in pair:
        if p <= 0.0:
            break
        running_min = min(running_min, p)
        tau += 2.0 * running_min
    tau = max(tau, 1.0 / np.log10(m * n))
    return m * n / tau


class TestSplitRhat:
    def test_identical_chains_give_exactly_one(self):
        rng = np.random.default_rng(0)
        row = rng.normal(size=500)
        draws = np.tile(row, (4, 1))
        assert split_rhat(draws) == 1.0

    def test_separated_chains_blow_up(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 1.0, size=(2, 400))
        b = rng.normal(25.0, 1.0, size=(2, 400))
        assert split_rhat(np.vstack([a, b])) > 1.5

    def test_within_chain_trend_detected(self):
        # split halves catch a drifting chain even when full-chain means agree
        n = 1000
        trend = np.linspace(-3, 3, n)
        rng = np.random.default_rng(2)
        draws = trend + rng.normal(0, 0.1, size=(4, n))
        assert split_rhat(draws) > 1.5

    def test_iid_chains_are_near_one(self):
        rng = np.random.default_rng(3)
        draws = rng.normal(size=(4, 2000))
        assert split_rhat(draws) < 1.01

    def test_constant_between_chain_offset_detected(self):
        rng = np.random.default_rng(4)
        draws = rng.normal(size=(4, 500)) + np.array([[0.0], [0.0], [0.0], [3.0]])
        assert split_rhat(draws) > 1.3

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            split_rhat(np.zeros(100))
        with pytest.raises(ValueError):
            split_rhat(np.zeros((1, 500)))
        with pytest.raises(ValueError):
            split_rhat(np.zeros((4, 50)))


class TestBulkEss:
    def test_iid_draws_recover_sample_size(self):
        rng = np.random.default_rng(5)
        m, n = 4, 5000
        draws = rng.normal(size=(m, n))
        assert bulk_ess(draws) == pytest.approx(m * n, rel=0.10)

    def test_matches_direct_autocorrelation_oracle(self):
        rng = np.random.default_rng(6)
        m, n = 4, 600
        draws = np.empty((m, n))
        for c in range(m):
            x = 0.0
            for t in range(n):
                x = 0.7 * x + rng.normal()  # AR(1), tau = (1+.7)/(1-.7)
                draws[c, t] = x
        half = n // 2
        halves = np.concatenate([draws[:, :half], draws[:, half:]], axis=0)
        assert bulk_ess(draws) == pytest.approx(direct_ess(halves), rel=1e-9)

    def test_correlated_chain_has_much_smaller_ess(self):
        rng = np.random.default_rng(7)
        m, n = 4, 4000
        draws = np.empty((m, n))
        for c in range(m):
            x = 0.0
            for t in range(n):
                x = 0.95 * x + rng.normal()
                draws[c, t] = x
        # AR(1) integrated time (1+rho)/(1-rho) = 39
        assert bulk_ess(draws) < m * n / 15
        assert bulk_ess(draws) > m * n / 120


class FakeDraws:
    def __init__(self, scalars, acceptance=None):
        self.scalars = scalars
        self.acceptance = acceptance or {}


class TestDiagnose:
    def test_report_contents_and_flagging(self):
        rng = np.random.default_rng(8)
        good = rng.normal(size=(4, 400))
        bad = rng.normal(size=(4, 400)) + np.array([[0.0], [0.0], [0.0], [8.0]])
        rep = diagnose(FakeDraws({"good": good, "bad": bad}, {"walk": np.array([0.23, 0.25])}))
        assert isinstance(rep, DiagnosticsReport)
        assert rep.flagged == ("bad",)
        assert rep.converged is False
        assert rep.scalar("good").rhat < 1.05
        assert rep.scalar("bad").flagged is True
        assert rep.n_chains == 4 and rep.n_draws == 400
        assert "walk" in rep.summary()
        with pytest.raises(KeyError):
            rep.scalar("missing")

    def test_constant_scalar_trivially_converged(self):
        rep = diagnose(FakeDraws({"k": np.full((4, 200), 10.0)}))
        d = rep.scalar("k")
        assert d.rhat == 1.0 and d.sd == 0.0 and not d.flagged

    def test_names_filter_limits_report(self):
        rng = np.random.default_rng(9)
        scalars = {"a": rng.normal(size=(2, 150)), "b": rng.normal(size=(2, 150))}
        rep = diagnose(FakeDraws(scalars), names=["b"])
        assert tuple(d.name for d in rep.scalars) == ("b",)

    def test_scalar_diagnostic_flag_threshold(self):
        assert ScalarDiagnostic("x", 1.049, 100.0, 0.0, 1.0).flagged is False
        assert ScalarDiagnostic("x", 1.051, 100.0, 0.0, 1.0).flagged is True
        assert ScalarDiagnostic("x", float("nan"), 100.0, 0.0, 1.0).flagged is True
