"""Batch command-line surface: simulate, fit, select, report.

Every command writes its outputs plus exactly one manifest.json recording
the resolved configuration, rng seeds, sha256 digests of the inputs and the
artifact list, so a run can be reproduced bit-exactly from the manifest.
Exit codes: 0 success, 1 user error (bad arguments, unreadable inputs),
2 runtime failure (sampler divergence, unexpected errors).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import os
import sys
from dataclasses import replace
from importlib.resources import files as resource_files

import numpy as np

from . import __version__
from .dataio import (
    SCHEMA_VERSION,
    StudyConfig,
    _atomic_write,
    daily_summary,
    parse_model_flag,
    parse_series,
    read_results,
    write_results,
    write_simulated_series,
)
from .diagnostics import diagnose
from .mcmc import FitConfig, SamplerDivergence, run_mcmc
from .selection import rank_models, score_model
from .simulate import ScenarioConfig, simulate

EXIT_OK = 0
EXIT_USER = 1
EXIT_RUNTIME = 2

DESK_CHAINS, DESK_ITERATIONS = 4, 20000
PAPER_CHAINS, PAPER_ITERATIONS = 8, 100000

BAND_COLUMNS = ("day", "median", "lower50", "upper50", "lower95", "upper95")


class _Parser(argparse.ArgumentParser):
    """argparse flags bad usage with exit code 1 (user error), not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(outdir, command, *, inputs, outputs, config, seed) -> str:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "created_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "rng_seed": seed,
        "inputs": {os.path.abspath(p): f"sha256:{_sha256(p)}" for p in inputs},
        "resolved_config": config,
        "outputs": sorted(os.path.relpath(p, outdir) for p in outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    _atomic_write(path, json.dumps(manifest, indent=2) + "\n")
    return path


def bundled_scenario_path() -> str:
    return str(resource_files("epiphase").joinpath("data/multiphase_scenario.json"))


def _write_band_csv(path: str, table: np.ndarray) -> None:
    """table rows: (median, lower50, upper50, lower95, upper95) per day."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(BAND_COLUMNS)
    for day, row in enumerate(table, start=1):
        writer.writerow([day] + [repr(float(v)) for v in row])
    _atomic_write(path, buf.getvalue())


def _band_table(flat: np.ndarray) -> np.ndarray:
    qs = np.quantile(flat, [0.5, 0.25, 0.75, 0.025, 0.975], axis=0)
    return qs.T


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config_path = args.config or bundled_scenario_path()
    config = ScenarioConfig.from_json(config_path)
    if args.seed is not None:
        config = replace(config, rng_seed=args.seed)
    state = simulate(config)
    os.makedirs(args.out, exist_ok=True)
    series_path = os.path.join(args.out, "series.csv")
    scenario_path = os.path.join(args.out, "scenario.json")
    write_simulated_series(series_path, state)
    config.to_json(scenario_path)
    _write_manifest(
        args.out,
        "simulate",
        inputs=[config_path],
        outputs=[series_path, scenario_path],
        config=config.to_dict(),
        seed=config.rng_seed,
    )
    deaths_total = int(state.deaths.sum()) if state.deaths is not None else 0
    print(
        f"simulated {state.infections.size} days: "
        f"{int(state.infections.sum())} infections, {deaths_total} deaths -> {series_path}"
    )
    return EXIT_OK


def _fit_scale(args) -> tuple[int, int]:
    chains = PAPER_CHAINS if args.paper_scale else DESK_CHAINS
    iterations = PAPER_ITERATIONS if args.paper_scale else DESK_ITERATIONS
    if args.chains is not None:
        chains = args.chains
    if args.iterations is not None:
        iterations = args.iterations
    return chains, iterations


def cmd_fit(args) -> int:
    study = StudyConfig.from_json(args.config)
    model_flag = args.model or study.model
    parse_model_flag(model_flag)
    kind = "deaths" if study.regime == "deaths" else "cases"
    series = parse_series(
        args.data,
        region=study.region,
        population_n=study.population_n,
        kind=kind,
        cumulative=args.cumulative,
    )
    if study.horizon_end is not None:
        series = series.through(study.horizon_end)
    ifr_daily = None
    if study.regime == "deaths" and not isinstance(study.ifr, float):
        ifr_daily = study.ifr_daily(series.dates)

    chains, iterations = _fit_scale(args)
    spec = study.to_model_spec(model_flag)
    fit_config = FitConfig(
        model=spec,
        n_chains=chains,
        n_iterations=iterations,
        rng_seed=args.seed,
        start_threshold=study.start_threshold,
        jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    try:
        draws = run_mcmc(series.counts, fit_config, ifr_daily=ifr_daily)
    except SamplerDivergence as exc:
        report_path = os.path.join(args.out, "divergence.json")
        _atomic_write(
            report_path,
            json.dumps({"error": str(exc), "chains": exc.snapshot}, indent=2) + "\n",
        )
        print(f"sampler diverged; report at {report_path}", file=sys.stderr)
        return EXIT_RUNTIME

    paths = write_results(args.out, draws)
    outputs = [paths["meta"], paths["draws"], paths["summary"]]
    outputs += [os.path.join(paths["arrays"], f) for f in sorted(os.listdir(paths["arrays"]))]

    occupancy_path = os.path.join(args.out, "occupied_phases.csv")
    occ = draws.flat_scalar("occupied_phases").astype(int)
    values, counts = np.unique(occ, return_counts=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["phases", "draws", "proportion"])
    for value, count in zip(values, counts):
        writer.writerow([int(value), int(count), repr(int(count) / occ.size)])
    _atomic_write(occupancy_path, buf.getvalue())
    outputs.append(occupancy_path)

    diag_path = os.path.join(args.out, "diagnostics.txt")
    try:
        report = diagnose(draws)
        _atomic_write(diag_path, report.summary() + "\n")
        if report.flagged:
            print(
                "warning: split-rhat above 1.05 for " + ", ".join(report.flagged),
                file=sys.stderr,
            )
    except ValueError as exc:
        _atomic_write(diag_path, f"diagnostics unavailable: {exc}\n")
    outputs.append(diag_path)

    resolved = study.to_dict()
    resolved.update(
        {
            "model": model_flag,
            "chains": chains,
            "iterations": iterations,
            "jobs": args.jobs,
            "cumulative_input": bool(args.cumulative),
        }
    )
    _write_manifest(
        args.out,
        "fit",
        inputs=[args.config, args.data],
        outputs=outputs,
        config=resolved,
        seed=args.seed,
    )
    print(
        f"fit {spec.describe()} ({study.regime}): {draws.n_chains} chains x "
        f"{draws.n_kept} kept draws -> {args.out}"
    )
    return EXIT_OK


def cmd_select(args) -> int:
    scores = []
    seen: dict[str, int] = {}
    for rundir in args.results:
        meta_path = os.path.join(rundir, "meta.json")
        if not os.path.exists(meta_path):
            raise ValueError(f"{rundir}: no meta.json; not a results directory")
        with open(meta_path) as handle:
            meta = json.load(handle)
        pointwise_path = os.path.join(rundir, "arrays", "pointwise_loglik.npy")
        if not os.path.exists(pointwise_path):
            raise ValueError(f"{rundir}: missing pointwise log-likelihood matrix")
        ll = np.load(pointwise_path)
        ll = ll.reshape(-1, ll.shape[-1])
        base = os.path.basename(os.path.normpath(rundir))
        seen[base] = seen.get(base, 0) + 1
        model_id = base if seen[base] == 1 else f"{base}#{seen[base]}"
        scores.append(score_model(model_id, ll, regime=meta["meta"].get("regime")))
    report = rank_models(scores)
    print(report.summary())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        txt_path = os.path.join(args.out, "ranking.txt")
        csv_path = os.path.join(args.out, "ranking.csv")
        _atomic_write(txt_path, report.summary() + "\n")
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["rank", "model", "waic", "p_waic", "loo", "delta_waic", "se_delta",
             "indistinguishable", "n_flagged_k"]
        )
        for rank, row in enumerate(report.rows, start=1):
            writer.writerow(
                [rank, row["model"], repr(row["waic"]), repr(row["p_waic"]), repr(row["loo"]),
                 repr(row["delta_waic"]), repr(row["se_delta"]),
                 int(row["indistinguishable"]), row["n_flagged_k"]]
            )
        _atomic_write(csv_path, buf.getvalue())
        _write_manifest(
            args.out,
            "select",
            inputs=[os.path.join(d, "meta.json") for d in args.results],
            outputs=[txt_path, csv_path],
            config={"results": [os.path.abspath(d) for d in args.results],
                    "winner": report.winner, "criteria_agree": report.criteria_agree},
            seed=None,
        )
    return EXIT_OK


def cmd_report(args) -> int:
    draws = read_results(args.results)
    outdir = args.out or os.path.join(args.results, "report")
    os.makedirs(outdir, exist_ok=True)
    outputs = []
    for quantity, filename in (
        ("rt", "rt.csv"),
        ("re", "re.csv"),
        ("infections", "infections.csv"),
        ("fitted", "fitted.csv"),
    ):
        path = os.path.join(outdir, filename)
        _write_band_csv(path, _band_table(draws.flat_daily(quantity)))
        outputs.append(path)

    population = float(draws.meta["population_n"])
    cumulative = np.cumsum(draws.flat_daily("infections"), axis=1) / population
    attack_path = os.path.join(outdir, "attack_rate.csv")
    _write_band_csv(attack_path, _band_table(cumulative))
    outputs.append(attack_path)

    _write_manifest(
        outdir,
        "report",
        inputs=[os.path.join(args.results, "meta.json")],
        outputs=outputs,
        config={"results": os.path.abspath(args.results)},
        seed=None,
    )
    final = cumulative[:, -1]
    lo, mid, hi = np.quantile(final, [0.025, 0.5, 0.975])
    print(
        f"attack rate at horizon: {100 * mid:.1f}% (95% CI {100 * lo:.1f}, {100 * hi:.1f}) "
        f"-> {outdir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="epiphase", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate an epidemic from a scenario config")
    p_sim.add_argument("--config", help="scenario JSON (default: bundled five-phase benchmark)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scenario rng seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a phase model to an observed series")
    p_fit.add_argument("--data", required=True, help="long-form CSV of date,count")
    p_fit.add_argument("--config", required=True, help="study config JSON")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--model", help="fixedk:K, pp, or dp (overrides the config)")
    p_fit.add_argument("--cumulative", action="store_true", help="input counts are cumulative")
    p_fit.add_argument("--paper-scale", action="store_true",
                       help=f"{PAPER_CHAINS} chains x {PAPER_ITERATIONS} iterations "
                            f"(default {DESK_CHAINS} x {DESK_ITERATIONS})")
    p_fit.add_argument("--chains", type=int, default=None, help="override chain count")
    p_fit.add_argument("--iterations", type=int, default=None, help="override iteration count")
    p_fit.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    p_fit.add_argument("--jobs", type=int, default=1, help="parallel chain workers")
    p_fit.set_defaults(func=cmd_fit)

    p_sel = sub.add_parser("select", help="rank fitted models by WAIC and PSIS-LOO")
    p_sel.add_argument("results", nargs="+", help="fit output directories")
    p_sel.add_argument("--out", help="directory for ranking.txt / ranking.csv")
    p_sel.set_defaults(func=cmd_select)

    p_rep = sub.add_parser("report", help="emit plot-ready CSV bands and the attack-rate table")
    p_rep.add_argument("results", help="fit output directory")
    p_rep.add_argument("--out", help="report directory (default <results>/report)")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SamplerDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # pragma: no cover - last-resort runtime guard
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
