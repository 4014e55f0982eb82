"""CSV/JSON ingestion and run-artifact round trips."""

import datetime as dt
import io
import json
import logging
import os

import numpy as np
import pytest

from epiphase.dataio import (
    IfrStep,
    RegionSeries,
    StudyConfig,
    apply_start_rule,
    daily_summary,
    parse_model_flag,
    parse_series,
    read_results,
    read_summary_csv,
    write_results,
    write_series,
    write_simulated_series,
)
from epiphase.mcmc import PosteriorDraws


def csv_text(rows, header="date,deaths"):
    return header + "\n" + "\n".join(rows) + "\n"


class TestParseSeries:
    def test_basic_parse(self):
        text = csv_text(["2020-03-01,0", "2020-03-02,3", "2020-03-03,7"])
        series = parse_series(io.StringIO(text), region="uk", population_n=6.65e7)
        assert series.kind == "deaths"
        assert series.region == "uk"
        assert series.n_days == 3
        assert series.start == dt.date(2020, 3, 1)
        np.testing.assert_array_equal(series.counts, [0, 3, 7])

    def test_kind_from_header_and_override(self):
        text = csv_text(["2020-01-01,5"], header="date,cases")
        assert parse_series(io.StringIO(text)).kind == "cases"
        assert parse_series(io.StringIO(text), kind="deaths").kind == "deaths"

    def test_cumulative_differenced(self):
        text = csv_text(["2020-01-01,2", "2020-01-02,5", "2020-01-03,5"])
        series = parse_series(io.StringIO(text), cumulative=True)
        np.testing.assert_array_equal(series.counts, [2, 3, 0])

    def test_negative_increment_clamped_with_warning(self, caplog):
        # cumulative revisions can go down; daily counts must not
        text = csv_text(["2020-01-01,4", "2020-01-02,3"])
        with caplog.at_level(logging.WARNING):
            series = parse_series(io.StringIO(text), cumulative=True)
        np.testing.assert_array_equal(series.counts, [4, 0])
        assert any("clamped" in rec.message for rec in caplog.records)

    def test_date_gap_raises_with_row_number(self):
        text = csv_text(["2020-01-01,1", "2020-01-03,2"])
        with pytest.raises(ValueError, match="row 3"):
            parse_series(io.StringIO(text))

    def test_malformed_rows_raise(self):
        with pytest.raises(ValueError, match="row 2"):
            parse_series(io.StringIO(csv_text(["not-a-date,1"])))
        with pytest.raises(ValueError, match="not an integer"):
            parse_series(io.StringIO(csv_text(["2020-01-01,1.5"])))

    def test_header_validation(self):
        with pytest.raises(ValueError, match="date"):
            parse_series(io.StringIO("day,deaths\n1,2\n"))
        with pytest.raises(ValueError, match="one count column"):
            parse_series(io.StringIO("date,deaths,cases\n2020-01-01,1,2\n"))
        with pytest.raises(ValueError, match="header"):
            parse_series(io.StringIO(""))
        with pytest.raises(ValueError, match="no data rows"):
            parse_series(io.StringIO("date,deaths\n"))

    def test_write_then_parse_round_trip(self, tmp_path):
        text = csv_text(["2020-03-01,0", "2020-03-02,3"])
        series = parse_series(io.StringIO(text), region="x", population_n=100.0)
        path = tmp_path / "series.csv"
        write_series(str(path), series)
        again = parse_series(str(path), region="x", population_n=100.0)
        assert again.dates == series.dates
        np.testing.assert_array_equal(again.counts, series.counts)
        assert again.kind == series.kind


class TestStartRule:
    def make(self, counts):
        start = dt.date(2020, 2, 1)
        dates = tuple(start + dt.timedelta(days=i) for i in range(len(counts)))
        return RegionSeries("r", dates, np.asarray(counts, float), "deaths", 1e6)

    def test_drops_days_before_cumulative_threshold(self):
        series = self.make([1, 2, 3, 5, 9])  # cumulative 1,3,6,11,20
        trimmed = apply_start_rule(series, threshold=10)
        assert trimmed.trim_offset == 3
        assert trimmed.start == dt.date(2020, 2, 4)
        np.testing.assert_array_equal(trimmed.counts, [5, 9])

    def test_threshold_met_on_first_day(self):
        trimmed = apply_start_rule(self.make([12, 1]), threshold=10)
        assert trimmed.trim_offset == 0
        assert trimmed.n_days == 2

    def test_zero_threshold_is_identity(self):
        series = self.make([0, 1])
        assert apply_start_rule(series, threshold=0) is series

    def test_never_reaching_threshold_raises(self):
        with pytest.raises(ValueError, match="never reach"):
            apply_start_rule(self.make([1, 1, 1]), threshold=10)

    def test_offsets_accumulate(self):
        series = self.make([1, 2, 3, 5, 9])
        once = apply_start_rule(series, threshold=3)
        twice = apply_start_rule(once, threshold=10)
        assert twice.trim_offset == 3

    def test_through_restricts_calendar(self):
        series = self.make([1, 2, 3])
        cut = series.through(dt.date(2020, 2, 2))
        assert cut.n_days == 2
        with pytest.raises(ValueError):
            series.through(dt.date(2019, 1, 1))


class TestRegionSeriesValidation:
    def test_rejects_gapped_dates(self):
        dates = (dt.date(2020, 1, 1), dt.date(2020, 1, 3))
        with pytest.raises(ValueError, match="consecutive"):
            RegionSeries("r", dates, np.array([1.0, 2.0]), "deaths", 1e6)

    def test_rejects_negative_and_fractional_counts(self):
        dates = (dt.date(2020, 1, 1),)
        with pytest.raises(ValueError):
            RegionSeries("r", dates, np.array([-1.0]), "deaths", 1e6)
        with pytest.raises(ValueError):
            RegionSeries("r", dates, np.array([1.5]), "deaths", 1e6)

    def test_rejects_unknown_kind_and_bad_population(self):
        dates = (dt.date(2020, 1, 1),)
        with pytest.raises(ValueError):
            RegionSeries("r", dates, np.array([1.0]), "recoveries", 1e6)
        with pytest.raises(ValueError):
            RegionSeries("r", dates, np.array([1.0]), "deaths", 0.0)


class TestStudyConfig:
    def test_round_trip_scalar_ifr(self):
        cfg = StudyConfig(population_n=6.65e7, region="uk")
        again = StudyConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_round_trip_stepped_ifr(self, tmp_path):
        steps = (
            IfrStep(dt.date(2020, 3, 1), 0.012),
            IfrStep(dt.date(2020, 6, 1), 0.007),
        )
        cfg = StudyConfig(population_n=1e7, ifr=steps, model="pp")
        path = tmp_path / "study.json"
        cfg.to_json(str(path))
        again = StudyConfig.from_json(str(path))
        assert again.ifr == steps
        assert again.to_dict() == cfg.to_dict()

    def test_ifr_daily_step_lookup(self):
        steps = (
            IfrStep(dt.date(2020, 3, 1), 0.012),
            IfrStep(dt.date(2020, 6, 1), 0.007),
        )
        cfg = StudyConfig(population_n=1e7, ifr=steps)
        dates = (
            dt.date(2020, 2, 1),  # before the first step: first value holds
            dt.date(2020, 3, 1),
            dt.date(2020, 5, 31),
            dt.date(2020, 6, 1),
            dt.date(2020, 7, 1),
        )
        np.testing.assert_allclose(
            cfg.ifr_daily(dates), [0.012, 0.012, 0.012, 0.007, 0.007]
        )

    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            StudyConfig(population_n=1e6, ifr=1.2)
        with pytest.raises(ValueError):
            StudyConfig(population_n=1e6, model="fixedk:0")
        with pytest.raises(ValueError):
            StudyConfig(population_n=1e6, gi_mean=-1.0)
        with pytest.raises(ValueError):
            steps = (
                IfrStep(dt.date(2020, 6, 1), 0.01),
                IfrStep(dt.date(2020, 3, 1), 0.02),
            )
            StudyConfig(population_n=1e6, ifr=steps)

    def test_to_model_spec_carries_settings(self):
        cfg = StudyConfig(population_n=5e6, model="fixedk:4", lead_in=25)
        spec = cfg.to_model_spec()
        assert spec.phase_model == "fixedk"
        assert spec.k_phases == 4
        assert spec.population_n == 5e6
        assert spec.lead_in == 25
        pp_spec = cfg.to_model_spec("pp")
        assert pp_spec.phase_model == "pp"

    def test_parse_model_flag(self):
        assert parse_model_flag("fixedk:6") == ("fixedk", 6)
        assert parse_model_flag("PP") == ("pp", None)
        assert parse_model_flag(" dp ") == ("dp", None)
        with pytest.raises(ValueError):
            parse_model_flag("fixedk:x")
        with pytest.raises(ValueError):
            parse_model_flag("spline")


def fake_draws(rng, chains=2, kept=30, horizon=12, n_obs=8):
    scalars = {
        "r_1": rng.normal(1.2, 0.1, size=(chains, kept)),
        "sigma": rng.lognormal(2.0, 0.3, size=(chains, kept)),
    }
    return PosteriorDraws(
        scalars=scalars,
        rt=rng.uniform(0.5, 2.0, size=(chains, kept, horizon)),
        re=rng.uniform(0.5, 2.0, size=(chains, kept, horizon)),
        infections=rng.uniform(0, 50, size=(chains, kept, horizon)),
        fitted=rng.uniform(0, 5, size=(chains, kept, n_obs)),
        pointwise_loglik=rng.normal(-2, 0.4, size=(chains, kept, n_obs)),
        acceptance={"level": np.array([0.24, 0.22])},
        meta={"model": "fixedk:3", "rng_seed": 11},
    )


class TestRunArtifacts:
    def test_write_read_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        draws = fake_draws(rng)
        outdir = tmp_path / "run"
        paths = write_results(str(outdir), draws)
        loaded = read_results(str(outdir))
        for name, arr in draws.scalars.items():
            np.testing.assert_array_equal(loaded.scalars[name], arr)
        for key in ("rt", "re", "infections", "fitted", "pointwise_loglik"):
            np.testing.assert_array_equal(getattr(loaded, key), getattr(draws, key))
        assert loaded.meta == draws.meta
        np.testing.assert_array_equal(loaded.acceptance["level"], [0.24, 0.22])
        assert os.path.exists(paths["summary"])

    def test_writes_are_byte_deterministic(self, tmp_path):
        rng = np.random.default_rng(1)
        draws = fake_draws(rng)
        a, b = tmp_path / "a", tmp_path / "b"
        write_results(str(a), draws)
        write_results(str(b), draws)
        for rel in ("meta.json", "draws.csv", "summary.csv", "arrays/rt.npy",
                    "arrays/pointwise_loglik.npy"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_truncated_draws_detected(self, tmp_path):
        rng = np.random.default_rng(2)
        outdir = tmp_path / "run"
        write_results(str(outdir), fake_draws(rng))
        draws_path = outdir / "draws.csv"
        lines = draws_path.read_text().splitlines()
        draws_path.write_text("\n".join(lines[:-5]) + "\n")
        with pytest.raises(ValueError, match="truncated"):
            read_results(str(outdir))

    def test_schema_version_checked(self, tmp_path):
        rng = np.random.default_rng(3)
        outdir = tmp_path / "run"
        write_results(str(outdir), fake_draws(rng))
        meta = json.loads((outdir / "meta.json").read_text())
        meta["schema_version"] = 99
        (outdir / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(ValueError, match="schema version"):
            read_results(str(outdir))

    def test_missing_array_detected(self, tmp_path):
        rng = np.random.default_rng(4)
        outdir = tmp_path / "run"
        write_results(str(outdir), fake_draws(rng))
        os.unlink(outdir / "arrays" / "re.npy")
        with pytest.raises(ValueError, match="re.npy"):
            read_results(str(outdir))

    def test_corrupt_meta_detected(self, tmp_path):
        outdir = tmp_path / "run"
        os.makedirs(outdir)
        (outdir / "meta.json").write_text("{not json")
        with pytest.raises(ValueError, match="corrupt"):
            read_results(str(outdir))


class TestSummary:
    def test_quantiles_match_numpy_oracle(self, tmp_path):
        rng = np.random.default_rng(5)
        draws = fake_draws(rng)
        rows = daily_summary(draws)
        rt_rows = [r for r in rows if r["quantity"] == "rt"]
        assert len(rt_rows) == draws.horizon
        flat = draws.flat_daily("rt")
        day3 = [r for r in rt_rows if r["day"] == 3][0]
        assert day3["median"] == pytest.approx(np.quantile(flat[:, 2], 0.5), abs=1e-12)
        assert day3["lower95"] == pytest.approx(np.quantile(flat[:, 2], 0.025), abs=1e-12)
        assert day3["upper50"] == pytest.approx(np.quantile(flat[:, 2], 0.75), abs=1e-12)

    def test_summary_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        outdir = tmp_path / "run"
        draws = fake_draws(rng)
        write_results(str(outdir), draws)
        rows = read_summary_csv(str(outdir / "summary.csv"))
        assert rows == daily_summary(draws)

    def test_rejects_wrong_columns(self, tmp_path):
        path = tmp_path / "summary.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="columns"):
            read_summary_csv(str(path))


class TestSimulatedSeriesOutput:
    def test_day_indexed_output(self, tmp_path):
        from epiphase.renewal import EpidemicState

        state = EpidemicState(
            infections=np.array([10.0, 12.0]), deaths=np.array([0.0, 1.0]),
            population_n=100.0,
        )
        path = tmp_path / "sim.csv"
        write_simulated_series(str(path), state)
        lines = path.read_text().splitlines()
        assert lines[0] == "day,infections,deaths"
        assert lines[1] == "1,10,0"

    def test_date_indexed_output(self, tmp_path):
        from epiphase.renewal import EpidemicState

        state = EpidemicState(
            infections=np.array([10.0]), deaths=np.array([2.0]), population_n=100.0
        )
        path = tmp_path / "sim.csv"
        write_simulated_series(str(path), state, start_date=dt.date(2020, 3, 5))
        lines = path.read_text().splitlines()
        assert lines[0] == "date,infections,deaths"
        assert lines[1] == "2020-03-05,10,2"
