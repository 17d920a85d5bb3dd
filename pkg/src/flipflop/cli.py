"""Command line entry point: ``flipflop <command>``.

Exit codes: 0 success, 2 input error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io, pipeline, svg
from .config import ConfigError, RunConfig, load_config
from .crystal import EmptyEnsembleError, LatticeDefinition, LatticeFormatError, format_lattice
from .fit import FitBounds, ModelContext, optimize
from .holeburn import NoResonanceError, class_table, evaluate_population, find_peaks, simulate_spectrum
from .kinetics import LEVELS, DecayCurve, Ramp, class_curve, ensemble_curve
from .rates import FieldRegime, log_histogram
from .spinham import EigensolverError, LabelCrossingError

logger = logging.getLogger("flipflop")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
PAIR_NAMES = ("ab", "bc", "ac")


class InputError(Exception):
    pass


def _regimes(choice: str) -> list[FieldRegime]:
    return list(FieldRegime) if choice == "both" else [FieldRegime(choice)]


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_rates(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    ens = pipeline.build_ensemble(cfg)
    centers = pipeline.select_centers(cfg, ens)
    logger.info("ensemble: %d ions, %d centres", len(ens), len(centers))
    for regime in _regimes(args.regime):
        cache = pipeline.couplings(cfg, ens, regime, centers, args.workers)
        rates = cache.rates(cfg.density(regime))
        io.write_rates(out / f"rates_{regime.value}.csv", (cache.center_ids, rates))
        series = []
        for k, pair in enumerate(PAIR_NAMES):
            centres, counts = log_histogram(rates[:, k])
            io.write_histogram(out / f"hist_{regime.value}_{pair}.csv", centres, counts)
            series.append(svg.Series(f"R_{pair}", centres, counts, step=True))
            mode = centres[np.argmax(counts)]
            print(f"{regime.value:7s} R_{pair}: histogram mode 10^{mode:+.3f} Hz, median {np.median(rates[:, k]):.4g} Hz")
        if args.svg:
            svg.plot(
                out / f"hist_{regime.value}.svg",
                series,
                title=f"flip-flop rates ({regime.value} field)",
                xlabel="log10(rate / Hz)",
                ylabel="ions per bin",
            )
    return EXIT_OK


def cmd_decay(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    regime = FieldRegime(args.regime)
    levels = LEVELS if args.level == "all" else (args.level,)
    times = cfg.kinetics.times()
    t0 = cfg.kinetics.t0 if regime is FieldRegime.APPLIED else None
    if t0 is not None:
        times = np.union1d(times, [t0])
    ens = pipeline.build_ensemble(cfg)
    if args.ion is not None:
        if not 0 <= args.ion < len(ens):
            raise InputError(f"ion id {args.ion} not in ensemble of {len(ens)} ions")
        centers = np.array([args.ion])
    else:
        centers = pipeline.select_centers(cfg, ens)
    zero = pipeline.couplings(cfg, ens, FieldRegime.ZERO, centers, args.workers).rates(cfg.density(FieldRegime.ZERO))
    if regime is FieldRegime.ZERO:
        rates, ramp = zero, None
    else:
        rates = pipeline.couplings(cfg, ens, regime, centers, args.workers).rates(cfg.density(regime))
        ramp = Ramp(t0, zero)
    if args.ion is not None and ramp is None:
        pops = np.column_stack([class_curve(rates[0], lv, times) for lv in levels])
    else:
        pops = np.column_stack([ensemble_curve(rates, lv, times, ramp) for lv in levels])
    if cfg.kinetics.normalize == "first":
        pops = pops / pops[0]
    curve = DecayCurve(times, pops, levels, None, regime.value, t0)
    name = f"decay_{regime.value}" + (f"_ion{args.ion}" if args.ion is not None else "")
    io.write_decay(out / f"{name}.csv", curve)
    if args.svg:
        series = [svg.Series(f"level {lv}", times, pops[:, k]) for k, lv in enumerate(levels)]
        svg.plot(out / f"{name}.svg", series, title=f"class-difference decay ({regime.value} field)", xlabel="t (s)", ylabel="population", xlog=True)
    print(f"wrote {out / (name + '.csv')} ({len(centers)} centre ions, {len(times)} times)")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    experiments = []
    for regime, paths in ((FieldRegime.ZERO, args.zero), (FieldRegime.APPLIED, args.applied)):
        for p in paths or []:
            experiments.append(io.ingest_decay(p, args.moving_average_ms, not args.no_normalize, regime.value))
    if not experiments:
        raise InputError("fit needs at least one --zero or --applied data file")
    budget = args.budget or cfg.fit.budget
    restarts = args.restarts or cfg.fit.restarts
    bounds = FitBounds(cfg.fit.gamma_bounds, cfg.fit.kappa_bounds)
    if budget < 100:
        raise InputError("budget must be >= 100")
    if args.dry_run:
        n = sum(e.populations.size for e in experiments)
        print(f"dry run: config and {len(experiments)} data files valid ({n} points); budget {budget}, {restarts} restarts")
        return EXIT_OK
    t = time.perf_counter()
    context = ModelContext.from_config(cfg, workers=args.workers)
    result = optimize(experiments, context, bounds, budget, restarts, cfg.fit_seed(), args.workers)
    report = result.report()
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit_report.txt").write_text(report + "\n", encoding="utf-8")
    io.write_trace(out / "fit_trace.csv", result.trace)
    io.write_sensitivity(out / "fit_sensitivity.csv", result.sensitivity)
    if args.svg:
        svg.plot(
            out / "fit_trace.svg",
            [svg.Series("best score", np.arange(len(result.trace)) + 1, result.trace[:, 3])],
            title="optimizer trace",
            xlabel="evaluation",
            ylabel="score",
            ylog=True,
        )
    print(report)
    logger.info("fit took %.1f s", time.perf_counter() - t)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    sc = cfg.spectrum
    grid = np.linspace(sc.scan_range[0], sc.scan_range[1], cfg.spectrum_points)
    if args.no_burn:
        absorption = simulate_spectrum(sc, None, grid)
        name = "spectrum_noburn"
    else:
        table = class_table(sc, args.burn)
        pops = table.populations("background" if args.background else "peak")
        absorption = simulate_spectrum(sc, pops, grid, table.burn_frequency)
        name = f"spectrum_{args.burn:g}MHz" + ("_background" if args.background else "")
        print(f"burn {table.burn_frequency:g} MHz, background {table.background_frequency:g} MHz")
        print("class  transition    peak init   background init")
        for e in table.entries:
            g, x = e.probed_transition
            print(
                f"{e.name:5s}  {g} -> {x:4s}    {tuple(int(v) for v in e.peak_init.as_array())}   "
                f"{tuple(int(v) for v in e.background_init.as_array())}"
            )
        half = sc.burn_interval
        window = (table.burn_frequency - half, table.burn_frequency + half)
        if window[0] >= grid[0] and window[1] <= grid[-1]:
            est = evaluate_population(grid, absorption, window, table.background_frequency)
            print(f"peak area {est.area:.6g} MHz, background level {est.background:.6g}")
    io.write_spectrum(out / f"{name}.csv", grid, absorption)
    peaks = find_peaks(grid, absorption)
    print("peaks at " + ", ".join(f"{p:.2f}" for p in peaks) + " MHz" if len(peaks) else "no peaks")
    if args.svg:
        svg.plot(out / f"{name}.svg", [svg.Series("absorption", grid, absorption)], title="simulated absorption", xlabel="detuning (MHz)", ylabel="absorption (a.u.)")
    return EXIT_OK


def cmd_gen_lattice_demo(args) -> int:
    """Write a small two-site demo lattice showing the file schema."""
    demo = LatticeDefinition(
        cell_vectors=np.diag([0.5, 0.6, 0.7]),
        fractional=np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.25, 0.25, 0.25]]),
        orientation=np.array([0, 1, 2, 3, 0]),
        site_label=np.array([1, 1, 1, 1, 2]),
        name="demo orthorhombic cell, four site-1 orientations plus one site-2 position",
    )
    out = Path(args.out_dir) / args.name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_lattice(demo), encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies suppress their defaults so flags given before the
    # subcommand are not overwritten
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=dflt(None), help="run config (default: bundled Pr:Y2SiO5 file)")
    common.add_argument("--seed", type=int, default=dflt(None), help="override [ensemble] seed")
    common.add_argument("--workers", type=int, default=dflt(1))
    common.add_argument("--out-dir", default=dflt("out"))
    common.add_argument("--svg", action="store_true", default=dflt(False), help="also write SVG plots")
    common.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    p = argparse.ArgumentParser(prog="flipflop", description="Nuclear-spin flip-flop rates, decay curves and fits.", parents=[_common(False)])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rates", parents=[common], help="per-ion rates and log-rate histograms")
    r.add_argument("--regime", choices=("zero", "applied", "both"), default="both")
    r.set_defaults(func=cmd_rates)

    d = sub.add_parser("decay", parents=[common], help="ensemble class-difference decay curves")
    d.add_argument("--level", choices=("a", "b", "c", "all"), default="all")
    d.add_argument("--regime", choices=("zero", "applied"), default="zero")
    d.add_argument("--ion", type=int, default=None, help="debug: single ion id instead of the ensemble")
    d.set_defaults(func=cmd_decay)

    f = sub.add_parser("fit", parents=[common], help="fit linewidths to measured decay curves")
    f.add_argument("--zero", nargs="*", type=Path, help="zero-field decay CSV files")
    f.add_argument("--applied", nargs="*", type=Path, help="applied-field decay CSV files")
    f.add_argument("--moving-average-ms", type=float, default=None)
    f.add_argument("--no-normalize", action="store_true")
    f.add_argument("--budget", type=int, default=None)
    f.add_argument("--restarts", type=int, default=None)
    f.add_argument("--dry-run", action="store_true", help="validate config and data only")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("spectrum", parents=[common], help="absorption after spectral initialization")
    s.add_argument("--burn", type=float, default=0.0, help="burn frequency, MHz")
    s.add_argument("--background", action="store_true", help="use the background populations")
    s.add_argument("--no-burn", action="store_true")
    s.set_defaults(func=cmd_spectrum)

    g = sub.add_parser("gen-lattice-demo", parents=[common], help="write a demo lattice file")
    g.add_argument("--name", default="demo.lattice")
    g.set_defaults(func=cmd_gen_lattice_demo)
    return p


INPUT_ERRORS = (InputError, ConfigError, LatticeFormatError, io.DataFormatError, NoResonanceError, FileNotFoundError)
NUMERIC_ERRORS = (LabelCrossingError, EigensolverError, EmptyEnsembleError, FloatingPointError, np.linalg.LinAlgError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, RuntimeError) as exc:
        # module invariants violated mid-run are reported as numerical failures
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
