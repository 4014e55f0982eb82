"""Ingest observed series and study configuration; serialize run artifacts.

Input series are long-form CSV (date, count) with ISO 8601 dates, one row
per day, optionally cumulative. Study settings travel as a JSON document.
Results round-trip losslessly through a per-run directory: scalars as a
long-form CSV, daily trajectories and the pointwise log-likelihood matrix as
plain .npy arrays (deterministic bytes, no embedded timestamps), plus a tidy
quantile summary. All writes are atomic (temp file then rename).
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .mcmc import PosteriorDraws
from .priors import ExponentialPrior, GammaPrior, LogNormalPrior

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SERIES_KINDS = ("deaths", "cases")
SUMMARY_COLUMNS = ("quantity", "day", "median", "lower50", "upper50", "lower95", "upper95")
DAILY_QUANTITIES = ("rt", "re", "infections", "fitted")
RESULT_ARRAYS = ("rt", "re", "infections", "fitted", "pointwise_loglik")


def _atomic_write(path: str, payload: str | bytes) -> None:
    mode = "w" if isinstance(payload, str) else "wb"
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# observed series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionSeries:
    """One region's daily observed counts on a contiguous calendar.

    Counts are non-negative integers; exactly consecutive dates are
    enforced. trim_offset records days dropped from the front by the start
    rule so the original calendar is recoverable.
    """

    region: str
    dates: tuple[dt.date, ...]
    counts: np.ndarray
    kind: str
    population_n: float
    trim_offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SERIES_KINDS:
            raise ValueError(f"kind must be one of {SERIES_KINDS}")
        if self.population_n <= 0:
            raise ValueError("population must be positive")
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a non-empty vector")
        if len(self.dates) != counts.size:
            raise ValueError("dates and counts disagree in length")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be non-negative integers")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if (cur - prev).days != 1:
                raise ValueError(f"dates must be consecutive; gap after {prev.isoformat()}")
        object.__setattr__(self, "counts", counts)

    @property
    def n_days(self) -> int:
        return int(self.counts.size)

    @property
    def start(self) -> dt.date:
        return self.dates[0]

    @property
    def end(self) -> dt.date:
        return self.dates[-1]

    def through(self, last_date: dt.date) -> "RegionSeries":
        """Restrict the series to dates <= last_date."""
        keep = sum(1 for d in self.dates if d <= last_date)
        if keep == 0:
            raise ValueError(f"no observations on or before {last_date.isoformat()}")
        return replace(self, dates=self.dates[:keep], counts=self.counts[:keep])


def parse_series(
    source,
    region: str = "",
    population_n: float = 1.0,
    kind: str | None = None,
    cumulative: bool = False,
) -> RegionSeries:
    """Read a long-form (date, count) CSV into a RegionSeries.

    The header must name a date column and one count column; a count column
    named deaths or cases fixes the kind unless one is given. With
    cumulative=True the column is differenced to daily increments first.
    Negative increments (reporting corrections) are clamped to 0 with a
    logged warning. Date gaps and malformed rows raise with the row number.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as handle:
            text = handle.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty input: no header row") from None
    header = [h.strip().lower() for h in header]
    if "date" not in header:
        raise ValueError("header must contain a 'date' column")
    date_col = header.index("date")
    value_cols = [i for i, h in enumerate(header) if i != date_col]
    if len(value_cols) != 1:
        raise ValueError("expected exactly one count column beside 'date'")
    value_col = value_cols[0]
    if kind is None:
        kind = header[value_col] if header[value_col] in SERIES_KINDS else "deaths"

    dates: list[dt.date] = []
    values: list[float] = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            date = dt.date.fromisoformat(row[date_col].strip())
            value = float(row[value_col])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"row {row_no}: cannot parse {row!r} ({exc})") from None
        if not np.isfinite(value) or value != round(value):
            raise ValueError(f"row {row_no}: count {row[value_col]!r} is not an integer")
        if dates and (date - dates[-1]).days != 1:
            raise ValueError(
                f"row {row_no}: date {date.isoformat()} does not follow "
                f"{dates[-1].isoformat()} (series must be daily with no gaps)"
            )
        dates.append(date)
        values.append(value)
    if not dates:
        raise ValueError("no data rows found")

    counts = np.asarray(values)
    if cumulative:
        counts = np.diff(counts, prepend=0.0)
    negative = np.nonzero(counts < 0)[0]
    if negative.size:
        for idx in negative:
            logger.warning(
                "%s: negative daily count %d on %s clamped to 0 (reporting correction)",
                region or kind,
                int(counts[idx]),
                dates[idx].isoformat(),
            )
        counts = np.maximum(counts, 0.0)
    return RegionSeries(
        region=region, dates=tuple(dates), counts=counts, kind=kind, population_n=population_n
    )


def write_series(path: str, series: RegionSeries) -> None:
    """Serialize a RegionSeries back to the long-form CSV it parses from."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["date", series.kind])
    for date, count in zip(series.dates, series.counts):
        writer.writerow([date.isoformat(), int(count)])
    _atomic_write(path, buf.getvalue())


def apply_start_rule(series: RegionSeries, threshold: int = 10) -> RegionSeries:
    """Drop days before the cumulative count first reaches the threshold.

    Retained counts are unchanged; the original calendar survives via the
    retained dates plus trim_offset. threshold 0 is the identity.
    """
    if threshold <= 0:
        return series
    cum = np.cumsum(series.counts)
    hits = np.nonzero(cum >= threshold)[0]
    if hits.size == 0:
        raise ValueError(
            f"{series.region or series.kind}: cumulative {series.kind} never reach "
            f"{threshold}; series is uninformative for fitting"
        )
    first = int(hits[0])
    return replace(
        series,
        dates=series.dates[first:],
        counts=series.counts[first:],
        trim_offset=series.trim_offset + first,
    )


# ---------------------------------------------------------------------------
# study configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IfrStep:
    """Piecewise-constant infection fatality ratio from a given date onward."""

    start: dt.date
    value: float

    def __post_init__(self) -> None:
        if not 0.0 < self.value < 1.0:
            raise ValueError("IFR must lie in (0, 1)")


@dataclass(frozen=True)
class StudyConfig:
    """Everything a fit needs besides the observed series itself."""

    population_n: float
    ifr: float | tuple[IfrStep, ...] = 0.02
    gi_mean: float = 6.5
    gi_sd: float = 4.4
    delay_mean: float = 19.0
    delay_sd: float = 8.5
    regime: str = "deaths"
    model: str = "fixedk:5"
    region: str = ""
    start_threshold: int = 10
    seed_days: int = 6
    lead_in: int = 30
    horizon_end: dt.date | None = None
    level_prior: LogNormalPrior = field(default_factory=LogNormalPrior)
    dispersion_prior_mean: float = 5.0
    fixed_dispersion: float | None = None
    seed_prior_mean: float | None = None
    fixedk_t1_lower: float = 3.0
    fixedk_gap_upper: float = 100.0
    pp_rate_shape: float = 0.02
    pp_rate_rate: float = 1.0
    pp_k_max: int = 100
    dp_conc_shape: float = 1.0
    dp_conc_rate: float = 1.0
    dp_truncation: int = 36

    def __post_init__(self) -> None:
        if self.population_n <= 0:
            raise ValueError("population must be positive")
        if min(self.gi_mean, self.gi_sd, self.delay_mean, self.delay_sd) <= 0:
            raise ValueError("interval parameters must be positive")
        if isinstance(self.ifr, float):
            if not 0.0 < self.ifr < 1.0:
                raise ValueError("IFR must lie in (0, 1)")
        else:
            steps = tuple(self.ifr)
            if not steps:
                raise ValueError("IFR step list is empty")
            for a, b in zip(steps, steps[1:]):
                if b.start <= a.start:
                    raise ValueError("IFR steps must have strictly increasing dates")
            object.__setattr__(self, "ifr", steps)
        parse_model_flag(self.model)

    def ifr_daily(self, dates: tuple[dt.date, ...]) -> np.ndarray:
        """IFR per calendar day; before the first step the first value holds."""
        if isinstance(self.ifr, float):
            return np.full(len(dates), self.ifr)
        starts = [s.start for s in self.ifr]
        values = np.asarray([s.value for s in self.ifr])
        idx = np.searchsorted(starts, dates, side="right") - 1
        return values[np.maximum(idx, 0)]

    def mean_ifr(self) -> float:
        if isinstance(self.ifr, float):
            return self.ifr
        return float(np.mean([s.value for s in self.ifr]))

    def to_model_spec(self, model: str | None = None):
        from .mcmc import ModelSpec
        from .phases import DPPrior, PPPrior

        phase_model, k_phases = parse_model_flag(model or self.model)
        return ModelSpec(
            regime=self.regime,
            phase_model=phase_model,
            population_n=self.population_n,
            ifr=self.mean_ifr(),
            gi_mean=self.gi_mean,
            gi_sd=self.gi_sd,
            delay_mean=self.delay_mean,
            delay_sd=self.delay_sd,
            k_phases=k_phases,
            fixedk_t1_lower=self.fixedk_t1_lower,
            fixedk_gap_upper=self.fixedk_gap_upper,
            level_prior=self.level_prior,
            pp_prior=PPPrior(
                rate_prior=GammaPrior(self.pp_rate_shape, self.pp_rate_rate),
                k_max=self.pp_k_max,
                level_prior=self.level_prior,
            ),
            dp_prior=DPPrior(
                concentration_prior=GammaPrior(self.dp_conc_shape, self.dp_conc_rate),
                truncation_l=self.dp_truncation,
            ),
            dispersion_prior=ExponentialPrior(self.dispersion_prior_mean),
            fixed_dispersion=self.fixed_dispersion,
            seed_days=self.seed_days,
            lead_in=self.lead_in,
            seed_prior_mean=self.seed_prior_mean,
        )

    def to_dict(self) -> dict:
        ifr = (
            self.ifr
            if isinstance(self.ifr, float)
            else [[s.start.isoformat(), s.value] for s in self.ifr]
        )
        out = {
            "population": self.population_n,
            "ifr": ifr,
            "generation_interval": {"mean": self.gi_mean, "sd": self.gi_sd},
            "infection_to_death": {"mean": self.delay_mean, "sd": self.delay_sd},
            "regime": self.regime,
            "model": self.model,
            "region": self.region,
            "start_threshold": self.start_threshold,
            "seed_days": self.seed_days,
            "lead_in": self.lead_in,
            "level_prior": {"mu": self.level_prior.mu, "sigma": self.level_prior.sigma},
            "dispersion_prior_mean": self.dispersion_prior_mean,
            "fixed_dispersion": self.fixed_dispersion,
            "seed_prior_mean": self.seed_prior_mean,
            "fixedk": {"t1_lower": self.fixedk_t1_lower, "gap_upper": self.fixedk_gap_upper},
            "pp": {"rate_shape": self.pp_rate_shape, "rate_rate": self.pp_rate_rate,
                   "k_max": self.pp_k_max},
            "dp": {"conc_shape": self.dp_conc_shape, "conc_rate": self.dp_conc_rate,
                   "truncation": self.dp_truncation},
        }
        if self.horizon_end is not None:
            out["horizon_end"] = self.horizon_end.isoformat()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        ifr = data.get("ifr", 0.02)
        if isinstance(ifr, list):
            ifr = tuple(IfrStep(dt.date.fromisoformat(d), float(v)) for d, v in ifr)
        else:
            ifr = float(ifr)
        gi = data.get("generation_interval", {})
        delay = data.get("infection_to_death", {})
        level = data.get("level_prior", {})
        fixedk = data.get("fixedk", {})
        pp = data.get("pp", {})
        dp = data.get("dp", {})
        horizon_end = data.get("horizon_end")
        return cls(
            population_n=float(data["population"]),
            ifr=ifr,
            gi_mean=float(gi.get("mean", 6.5)),
            gi_sd=float(gi.get("sd", 4.4)),
            delay_mean=float(delay.get("mean", 19.0)),
            delay_sd=float(delay.get("sd", 8.5)),
            regime=data.get("regime", "deaths"),
            model=data.get("model", "fixedk:5"),
            region=data.get("region", ""),
            start_threshold=int(data.get("start_threshold", 10)),
            seed_days=int(data.get("seed_days", 6)),
            lead_in=int(data.get("lead_in", 30)),
            horizon_end=dt.date.fromisoformat(horizon_end) if horizon_end else None,
            level_prior=LogNormalPrior(
                mu=float(level.get("mu", 0.0)), sigma=float(level.get("sigma", 0.75))
            ),
            dispersion_prior_mean=float(data.get("dispersion_prior_mean", 5.0)),
            fixed_dispersion=(
                float(data["fixed_dispersion"])
                if data.get("fixed_dispersion") is not None
                else None
            ),
            seed_prior_mean=(
                float(data["seed_prior_mean"]) if data.get("seed_prior_mean") is not None else None
            ),
            fixedk_t1_lower=float(fixedk.get("t1_lower", 3.0)),
            fixedk_gap_upper=float(fixedk.get("gap_upper", 100.0)),
            pp_rate_shape=float(pp.get("rate_shape", 0.02)),
            pp_rate_rate=float(pp.get("rate_rate", 1.0)),
            pp_k_max=int(pp.get("k_max", 100)),
            dp_conc_shape=float(dp.get("conc_shape", 1.0)),
            dp_conc_rate=float(dp.get("conc_rate", 1.0)),
            dp_truncation=int(dp.get("truncation", 36)),
        )

    def to_json(self, path: str) -> None:
        _atomic_write(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str) -> "StudyConfig":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def parse_model_flag(flag: str) -> tuple[str, int | None]:
    """'fixedk:K' -> ('fixedk', K); 'pp' and 'dp' pass through."""
    flag = flag.strip().lower()
    if flag in ("pp", "dp"):
        return flag, None
    if flag.startswith("fixedk:"):
        try:
            k = int(flag.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad phase count in model flag {flag!r}") from None
        if k < 1:
            raise ValueError("fixedk phase count must be >= 1")
        return "fixedk", k
    raise ValueError(f"unknown model flag {flag!r}; expected fixedk:K, pp, or dp")


# ---------------------------------------------------------------------------
# run artifacts
# ---------------------------------------------------------------------------


def daily_summary(draws: PosteriorDraws) -> list[dict]:
    """Tidy per-day quantiles for every monitored daily quantity.

    One row per (quantity, day): posterior median with central 50% and 95%
    intervals. Days are 1-based on each quantity's own axis (model days for
    rt/re/infections, observed days for the fitted series).
    """
    rows = []
    for quantity in DAILY_QUANTITIES:
        flat = draws.flat_daily(quantity)
        qs = np.quantile(flat, [0.5, 0.25, 0.75, 0.025, 0.975], axis=0)
        for day in range(flat.shape[1]):
            rows.append(
                {
                    "quantity": quantity,
                    "day": day + 1,
                    "median": float(qs[0, day]),
                    "lower50": float(qs[1, day]),
                    "upper50": float(qs[2, day]),
                    "lower95": float(qs[3, day]),
                    "upper95": float(qs[4, day]),
                }
            )
    return rows


def _write_summary_csv(path: str, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(SUMMARY_COLUMNS))
    writer.writeheader()
    for row in rows:
        out = dict(row)
        for key in SUMMARY_COLUMNS[2:]:
            out[key] = repr(float(row[key]))
        writer.writerow(out)
    _atomic_write(path, buf.getvalue())


def read_summary_csv(path: str) -> list[dict]:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected summary columns {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "quantity": row["quantity"],
                    "day": int(row["day"]),
                    **{key: float(row[key]) for key in SUMMARY_COLUMNS[2:]},
                }
            )
    return rows


def write_results(outdir: str, draws: PosteriorDraws) -> dict[str, str]:
    """Persist one fit into a directory; returns the artifact paths.

    Layout: meta.json (schema version, run metadata, acceptance rates,
    row-count checksums), draws.csv (chain, draw, scalar, value in full
    precision), arrays/<name>.npy (daily trajectories and the pointwise
    log-likelihood matrix), summary.csv (per-day quantiles).
    """
    os.makedirs(os.path.join(outdir, "arrays"), exist_ok=True)
    paths = {
        "meta": os.path.join(outdir, "meta.json"),
        "draws": os.path.join(outdir, "draws.csv"),
        "arrays": os.path.join(outdir, "arrays"),
        "summary": os.path.join(outdir, "summary.csv"),
    }

    names = sorted(draws.scalars)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["chain", "draw", "scalar", "value"])
    n_rows = 0
    for name in names:
        arr = draws.scalars[name]
        for chain in range(arr.shape[0]):
            for draw in range(arr.shape[1]):
                writer.writerow([chain, draw, name, repr(float(arr[chain, draw]))])
                n_rows += 1
    _atomic_write(paths["draws"], buf.getvalue())

    for key in RESULT_ARRAYS:
        payload = io.BytesIO()
        np.save(payload, np.ascontiguousarray(getattr(draws, key)))
        _atomic_write(os.path.join(paths["arrays"], f"{key}.npy"), payload.getvalue())

    summary_rows = daily_summary(draws)
    _write_summary_csv(paths["summary"], summary_rows)

    meta = {
        "schema_version": SCHEMA_VERSION,
        "meta": draws.meta,
        "scalar_names": names,
        "n_chains": draws.n_chains,
        "n_kept": draws.n_kept,
        "draws_rows": n_rows,
        "summary_rows": len(summary_rows),
        "acceptance": {k: [float(x) for x in v] for k, v in sorted(draws.acceptance.items())},
    }
    _atomic_write(paths["meta"], json.dumps(meta, indent=2) + "\n")
    return paths


def read_results(outdir: str) -> PosteriorDraws:
    """Load a persisted fit; raises on schema mismatch or truncated files."""
    meta_path = os.path.join(outdir, "meta.json")
    try:
        with open(meta_path) as handle:
            meta = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{meta_path}: corrupt or truncated metadata ({exc})") from None
    version = meta.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"{meta_path}: schema version {version!r} not supported (expected {SCHEMA_VERSION})"
        )

    n_chains, n_kept = meta["n_chains"], meta["n_kept"]
    scalars = {
        name: np.full((n_chains, n_kept), np.nan) for name in meta["scalar_names"]
    }
    draws_path = os.path.join(outdir, "draws.csv")
    n_rows = 0
    with open(draws_path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["chain", "draw", "scalar", "value"]:
            raise ValueError(f"{draws_path}: unexpected header {header}")
        for row in reader:
            if len(row) != 4:
                raise ValueError(f"{draws_path}: malformed row {row!r}")
            scalars[row[2]][int(row[0]), int(row[1])] = float(row[3])
            n_rows += 1
    if n_rows != meta["draws_rows"]:
        raise ValueError(
            f"{draws_path}: expected {meta['draws_rows']} rows, found {n_rows} (truncated?)"
        )
    for name, arr in scalars.items():
        if np.any(np.isnan(arr)):
            raise ValueError(f"{draws_path}: missing entries for scalar {name!r}")

    arrays = {}
    for key in RESULT_ARRAYS:
        path = os.path.join(outdir, "arrays", f"{key}.npy")
        if not os.path.exists(path):
            raise ValueError(f"{outdir}: missing array file {key}.npy")
        try:
            arrays[key] = np.load(path)
        except Exception as exc:
            raise ValueError(f"{path}: corrupt or truncated array ({exc})") from None
    acceptance = {k: np.asarray(v) for k, v in meta.get("acceptance", {}).items()}
    return PosteriorDraws(
        scalars=scalars,
        rt=arrays["rt"],
        re=arrays["re"],
        infections=arrays["infections"],
        fitted=arrays["fitted"],
        pointwise_loglik=arrays["pointwise_loglik"],
        acceptance=acceptance,
        meta=meta["meta"],
    )


def write_simulated_series(path: str, state, start_date: dt.date | None = None) -> None:
    """Write an EpidemicState as a day-indexed CSV of infections and deaths."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    if start_date is None:
        writer.writerow(["day", "infections", "deaths"])
    else:
        writer.writerow(["date", "infections", "deaths"])
    deaths = state.deaths if state.deaths is not None else np.zeros_like(state.infections)
    for i in range(state.infections.size):
        label = (
            i + 1 if start_date is None else (start_date + dt.timedelta(days=i)).isoformat()
        )
        writer.writerow([label, int(round(state.infections[i])), int(round(deaths[i]))])
    _atomic_write(path, buf.getvalue())
