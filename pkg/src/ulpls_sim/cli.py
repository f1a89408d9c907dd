"""Command-line front end.

Exit codes: 0 success, 1 parse or elaboration error, 2 convergence failure,
3 measurement failure, 4 bad arguments.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ._io import atomic_write
from .decks import validate_deck
from .devices import DeviceDomainError
from .engine import SimulationError, transient
from .measure import (BracketError, FunctionalPredicate, MeasurementError, REPORT_HEADER,
                      measure_waveform, min_vin_search, stimulus_of, with_vin,
                      write_report_csv)
from .netlist import AnalysisSpec, Circuit, NetlistError, load_circuit, parse_value
from .plot import emit_plot
from .variation import (CampaignError, ToleranceSpec, corners, default_workers, run_campaign,
                        sample_mc, temp_sweep, worst_case_sizing)

EXIT_OK, EXIT_PARSE, EXIT_CONVERGENCE, EXIT_MEASURE, EXIT_ARGS = 0, 1, 2, 3, 4


class ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def _value(text: str) -> float:
    try:
        return parse_value(text)
    except NetlistError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> float:
    v = _value(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return v


def _fraction(text: str) -> float:
    v = _value(text)
    if not 0 <= v < 0.5:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 0.5)")
    return v


def _values(text: str) -> list[float]:
    return [_value(t) for t in text.split(",") if t.strip()]


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _count(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ulpls-sim", description="Level-shifter simulation and characterization.")
    sub = p.add_subparsers(dest="command", required=True)

    def deck_cmd(name, help_text):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("deck", help="netlist file")
        s.add_argument("--vin", type=_positive, help="input pulse amplitude")
        s.add_argument("--vddh", type=_positive)
        s.add_argument("--vddl", type=_positive)
        s.add_argument("--temp", type=_value, help="temperature in Celsius")
        s.add_argument("--tstep", type=_positive)
        s.add_argument("--tstop", type=_positive)
        s.add_argument("--swing-high", type=float, default=0.9)
        s.add_argument("--swing-low", type=float, default=0.1)
        s.add_argument("--min-cycles", type=_count, default=3)
        return s

    s = deck_cmd("run", "single transient with report")
    s.add_argument("--out", help="waveform CSV")
    s.add_argument("--report", help="report CSV")
    s.add_argument("--plot", help="SVG plot of input and output")
    s.add_argument("--plot-nodes", type=_names, default=["in", "out"])

    s = deck_cmd("sweep", "sweep one parameter, one report row per value")
    s.add_argument("--param", required=True, choices=["vin", "vddl", "vddh", "temp"])
    s.add_argument("--values", required=True, type=_values)
    s.add_argument("--tie-vin", action="store_true",
                   help="with --param vddl, set the input amplitude equal to V_ddL")
    s.add_argument("--report", help="report CSV (default: stdout)")

    def campaign_opts(s):
        s.add_argument("--workers", type=_count, default=None,
                       help="parallel jobs (default from ULPLS_WORKERS, else 1)")
        s.add_argument("--out", help="per-variant CSV")
        s.add_argument("--report", help="per-variant report CSV")

    s = deck_cmd("mc", "Monte Carlo campaign")
    s.add_argument("-n", type=_count, default=200)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--supply-tol", type=_fraction, default=0.10)
    s.add_argument("--size-tol", type=_fraction, default=0.04)
    s.add_argument("--scope", type=_names, help="restrict size tolerance to these devices")
    s.add_argument("--hist", help="PDP histogram CSV")
    campaign_opts(s)

    s = deck_cmd("corners", "deterministic supply (and size) corners")
    s.add_argument("--axes", choices=["supply_only", "supply_and_size"], default="supply_only")
    s.add_argument("--supply-tol", type=_fraction, default=0.10)
    s.add_argument("--size-tol", type=_fraction, default=0.04)
    campaign_opts(s)

    s = deck_cmd("wc-sizing", "worst-case width combinations of two devices")
    s.add_argument("--devices", type=_names, default=["MN1", "MN2"])
    s.add_argument("--tol", type=_fraction, default=0.04)
    campaign_opts(s)

    s = deck_cmd("temp-sweep", "one run per temperature")
    s.add_argument("--temps", type=_values, default=[-40.0, 0.0, 27.0, 125.0])
    campaign_opts(s)

    s = deck_cmd("minvin", "minimum detectable input amplitude by bisection")
    s.add_argument("--lo", type=_positive, default=0.02)
    s.add_argument("--hi", type=_positive, default=0.4)
    s.add_argument("--tol", type=_positive, default=5e-3)

    s = sub.add_parser("validate", help="parse, elaborate and DC-solve a deck")
    s.add_argument("deck")
    return p


def _predicate(args) -> FunctionalPredicate:
    try:
        return FunctionalPredicate(args.swing_high, args.swing_low, args.min_cycles)
    except ValueError as exc:
        raise ArgumentError(str(exc)) from None


def _with_tran(c: Circuit, t_step: float | None, t_stop: float | None) -> Circuit:
    if t_step is None and t_stop is None:
        return c
    old = c.tran
    if old is None and (t_step is None or t_stop is None):
        raise ArgumentError("deck has no .tran card; give both --tstep and --tstop")
    new = AnalysisSpec("tran", t_step if t_step is not None else old.t_step,
                       t_stop if t_stop is not None else old.t_stop)
    rest = tuple(a for a in c.analyses if a.kind != "tran")
    return replace(c, analyses=rest + (new,))


def apply_overrides(c: Circuit, args) -> Circuit:
    if args.vin is not None:
        c = with_vin(c, args.vin)
    if args.vddh is not None:
        c = c.replace_device("vddh", dc=args.vddh)
    if args.vddl is not None:
        c = c.replace_device("vddl", dc=args.vddl)
    if args.temp is not None:
        c = c.with_temp(args.temp)
    return _with_tran(c, args.tstep, args.tstop)


def _load(path: str) -> Circuit:
    deck = Path(path)
    if not deck.is_file():
        raise ArgumentError(f"deck {path!r} does not exist")
    return load_circuit(deck.read_text())


def _report_text(reports) -> str:
    return REPORT_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)


def _cmd_run(args) -> int:
    c = apply_overrides(_load(args.deck), args)
    if c.tran is None:
        raise ArgumentError("deck has no .tran card; give --tstep and --tstop")
    w = transient(c)
    if args.out:
        w.to_csv(args.out)
    if args.plot:
        emit_plot(w, args.plot_nodes, args.plot)
    report = measure_waveform(w, c, _predicate(args))
    if args.report:
        write_report_csv(args.report, [report])
    else:
        sys.stdout.write(_report_text([report]))
    if report.n_cycles < args.min_cycles:
        print(f"warning: only {report.n_cycles} measured cycle(s) after start-up, "
              f"fewer than --min-cycles {args.min_cycles}; reported as non-functional",
              file=sys.stderr)
    elif not report.functional:
        print("warning: conversion not functional under the predicate", file=sys.stderr)
    if report.t_d_max != report.t_d_max:
        print("error: missing output edge", file=sys.stderr)
        return EXIT_MEASURE
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    pred = _predicate(args)
    reports = []
    for v in args.values:
        c = base
        if args.param == "vin":
            c = with_vin(c, v)
        elif args.param == "vddl":
            c = c.replace_device("vddl", dc=v)
            if args.tie_vin:
                c = with_vin(c, v)
        elif args.param == "vddh":
            c = c.replace_device("vddh", dc=v)
        else:
            c = c.with_temp(v)
        reports.append(measure_waveform(transient(c), c, pred))
    if args.report:
        write_report_csv(args.report, reports)
    else:
        sys.stdout.write(_report_text(reports))
    return EXIT_OK


def _finish_campaign(res, args) -> int:
    if args.out:
        atomic_write(args.out, res.mc_csv())
    if getattr(args, "hist", None):
        atomic_write(args.hist, res.hist_csv())
    good = [r for r in res.reports if r is not None]
    if args.report:
        write_report_csv(args.report, good)
    for v, r in zip(res.variants, res.reports):
        if r is None:
            continue
        print(f"{v.label or v.index}: functional={int(r.functional)} "
              f"tdr={r.t_d_rise * 1e9:.1f}ns tdf={r.t_d_fall * 1e9:.1f}ns "
              f"pavg={r.p_avg * 1e9:.2f}nW swing={(r.v_out_high - r.v_out_low) * 1e3:.0f}mV")
    for idx, msg in res.failures:
        print(f"variant {idx} failed: {msg}", file=sys.stderr)
    s = res.summary["pdp"]
    print(f"functional {res.n_functional}/{len(res.variants)}; "
          f"PDP mean {s.mean:.4g} J, std {s.std:.3g} J")
    return EXIT_OK


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def _cmd_mc(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    tol = ToleranceSpec(args.supply_tol, args.size_tol,
                        tuple(args.scope) if args.scope else None)
    res = run_campaign(sample_mc(base, tol, args.n, args.seed), predicate=_predicate(args),
                       workers=_workers(args))
    if not args.out:
        sys.stdout.write(res.mc_csv())
    return _finish_campaign(res, args)


def _cmd_corners(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    variants = corners(base, ToleranceSpec(args.supply_tol, args.size_tol), args.axes)
    res = run_campaign(variants, predicate=_predicate(args), workers=_workers(args))
    return _finish_campaign(res, args)


def _cmd_wc(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    try:
        variants = worst_case_sizing(base, args.devices, args.tol)
    except KeyError as exc:
        raise ArgumentError(str(exc)) from None
    res = run_campaign(variants, predicate=_predicate(args), workers=_workers(args))
    return _finish_campaign(res, args)


def _cmd_temp(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    try:
        res = temp_sweep(base, args.temps, workers=_workers(args), predicate=_predicate(args))
    except ValueError as exc:
        if isinstance(exc, (MeasurementError, NetlistError)):
            raise
        raise ArgumentError(str(exc)) from None
    return _finish_campaign(res, args)


def _cmd_minvin(args) -> int:
    base = apply_overrides(_load(args.deck), args)
    if base.tran is None:
        raise ArgumentError("deck has no .tran card; give --tstep and --tstop")
    stimulus_of(base)
    v = min_vin_search(base, _predicate(args), args.lo, args.hi, args.tol)
    print(f"minimum V_in: {v * 1e3:.1f} mV")
    return EXIT_OK


def _cmd_validate(args) -> int:
    deck = Path(args.deck)
    if not deck.is_file():
        raise ArgumentError(f"deck {args.deck!r} does not exist")
    d = validate_deck(deck.read_text())
    if d.ok:
        print(f"ok: {d.n_mosfets} MOSFETs, nodes {' '.join(d.nodes)}")
        return EXIT_OK
    print(f"{d.stage} error: {d.message}", file=sys.stderr)
    return EXIT_CONVERGENCE if d.stage == "dc" else EXIT_PARSE


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "mc": _cmd_mc, "corners": _cmd_corners,
            "wc-sizing": _cmd_wc, "temp-sweep": _cmd_temp, "minvin": _cmd_minvin,
            "validate": _cmd_validate}


_LIST_FLAGS = ("--temps", "--values")


def _glue_negative_lists(argv: list[str]) -> list[str]:
    # argparse takes "-40,0,27" for an option; bind it to its flag explicitly
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_FLAGS:
            nxt = next(it, None)
            if nxt is not None and nxt[:1] == "-" and nxt[1:2].isdigit():
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def dispatch(argv: list[str] | None = None) -> int:
    argv = _glue_negative_lists(sys.argv[1:] if argv is None else list(argv))
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ArgumentError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (NetlistError, DeviceDomainError) as exc:
        print(f"deck error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (MeasurementError, BracketError) as exc:
        print(f"measurement error: {exc}", file=sys.stderr)
        return EXIT_MEASURE
    except (SimulationError, CampaignError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (KeyError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ARGS


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
