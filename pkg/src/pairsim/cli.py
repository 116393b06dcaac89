"""Command-line entry point.

Results (JSON or CSV) go to stdout, everything else to stderr.  Exit status
is 0 on success, 1 for usage errors and 2 for data or validation errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import __version__, model
from .config import Config, ConfigError, load_config
from .io import TagFileError, TagFileHeader, read_tags, write_tags
from .model import ModelError
from .simulator import ConfigurationError, simulate_run
from .sweep import mu_from_power, plot_sweep_svg, run_sweep, write_sweep_csv
from .tia import AnalysisError, analyze, build_histogram, start_stop_intervals

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _diag(msg):
    print(msg, file=sys.stderr)


def _load(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    source = cfg.source
    if getattr(args, "power_uw", None) is not None:
        source = dataclasses.replace(source, mu=mu_from_power(args.power_uw * 1e-6, cfg.power_map))
    if getattr(args, "mu", None) is not None:
        source = dataclasses.replace(source, mu=args.mu)
    return cfg.replace(source=source)


def _print_resolved(cfg: Config, **extra):
    resolved = cfg.to_dict()
    resolved.update(extra)
    _diag("resolved parameters:\n" + _dump(resolved))


def cmd_model(args, out):
    cfg = _load(args)
    _print_resolved(cfg)
    pred = model.predict(cfg.source, cfg.detector_signal, cfg.detector_idler, cfg.window)
    out.write(_dump(pred.to_dict()) + "\n")


def cmd_optimal_mu(args, out):
    cfg = _load(args)
    _print_resolved(cfg)
    mu_opt = model.optimal_mu_for(cfg.source, cfg.detector_signal, cfg.detector_idler, cfg.window)
    at_opt = dataclasses.replace(cfg.source, mu=mu_opt)
    result = {
        "mu_opt": mu_opt,
        "car_at_mu_opt": model.car(at_opt, cfg.detector_signal, cfg.detector_idler, cfg.window),
    }
    if cfg.power_map.mu_per_watt > 0:
        result["power_w_at_mu_opt"] = mu_opt / cfg.power_map.mu_per_watt
    out.write(_dump(result) + "\n")


def cmd_simulate(args, out):
    cfg = _load(args)
    if args.pulses is not None:
        if args.pulses < 1:
            raise UsageError("--pulses must be >= 1")
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, n_pulses=args.pulses))
    run = cfg.run
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if args.block_size is not None:
        run = dataclasses.replace(run, block_size=args.block_size)
    cfg = cfg.replace(run=run)
    _print_resolved(cfg)
    tags = simulate_run(
        cfg.source, cfg.detector_signal, cfg.detector_idler, cfg.train, cfg.run, workers=args.threads
    )
    header = TagFileHeader(
        rep_rate_hz=cfg.source.rep_rate_hz,
        n_pulses=cfg.train.n_pulses,
        master_seed=cfg.run.seed,
        parameters=cfg.to_dict(),
        created={"generator": "pairsim", "version": __version__},
    )
    write_tags(args.out, header, tags)
    summary = {
        "path": args.out,
        "n_tags": len(tags),
        "n_signal": tags.count(0),
        "n_idler": tags.count(1),
        "duration_ps": tags.duration_ps,
        "diagnostics": tags.diagnostics,
    }
    out.write(_dump(summary) + "\n")


def cmd_analyze(args, out):
    cfg = _load(args)
    tia = cfg.tia
    for flag, name in (
        ("stop_delay_ps", "stop_delay_ps"),
        ("start_dead_time_ps", "start_dead_time_ps"),
        ("max_interval_ps", "max_interval_ps"),
    ):
        if getattr(args, flag) is not None:
            tia = dataclasses.replace(tia, **{name: getattr(args, flag)})
    if args.swap_channels:
        tia = dataclasses.replace(tia, swap_channels=True)
    car_cfg = cfg.car
    for flag, name in (
        ("window_ps", "window_ps"),
        ("slot_ps", "slot_spacing_ps"),
        ("n_accidental", "n_accidental"),
        ("search_ps", "peak_search_ps"),
    ):
        if getattr(args, flag) is not None:
            car_cfg = dataclasses.replace(car_cfg, **{name: getattr(args, flag)})
    header, reader = read_tags(args.tagfile)
    with reader:
        tags = reader.read_all()
    _diag(
        "resolved parameters:\n"
        + _dump({"tia": dataclasses.asdict(tia), "car": dataclasses.asdict(car_cfg), "file": header.to_dict()})
    )
    est = analyze(tags, tia, car_cfg)
    if args.histogram_csv:
        intervals = start_stop_intervals(tags, tia)
        lo = -min(tia.max_interval_ps, tia.stop_delay_ps)
        n_bins = -(-(tia.max_interval_ps - lo + 1) // args.bin_ps)
        hist = build_histogram(intervals, args.bin_ps, lo, n_bins)
        with open(args.histogram_csv, "w", encoding="utf-8") as fh:
            fh.write(hist.to_csv())
    out.write(_dump(est.to_dict()) + "\n")


def cmd_sweep(args, out):
    cfg = _load(args)
    settings = cfg.sweep
    if args.mode is not None:
        settings = dataclasses.replace(settings, mode=args.mode)
    if args.pulses is not None:
        if args.pulses < 1:
            raise UsageError("--pulses must be >= 1")
        settings = dataclasses.replace(settings, n_pulses=args.pulses)
    if args.seed is not None:
        cfg = cfg.replace(run=dataclasses.replace(cfg.run, seed=args.seed))
    cfg = cfg.replace(sweep=settings)
    if not settings.powers_w:
        raise UsageError("the config has no sweep.powers_w grid")
    _print_resolved(cfg)
    points = run_sweep(
        settings.powers_w,
        cfg.power_map,
        cfg.detector_signal,
        cfg.detector_idler,
        cfg.window,
        mode=settings.mode,
        n_pulses=settings.n_pulses,
        source_template=cfg.source,
        train_template=cfg.train,
        tia=cfg.tia,
        car_cfg=cfg.car,
        seed=cfg.run.seed,
        mu_overrides=settings.override_map(),
        workers=args.threads or 1,
        block_size=cfg.run.block_size,
    )
    if args.out == "-":
        write_sweep_csv(points, out)
    else:
        write_sweep_csv(points, args.out)
        out.write(_dump({"path": args.out, "n_points": len(points)}) + "\n")
    if args.svg:
        for path in plot_sweep_svg(points, args.svg):
            _diag(f"wrote {path}")
    for p in points:
        if p.flagged:
            _diag(f"warning: point at {p.power_w!r} W is flagged (CAR undefined or lower bound only)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pairsim", description="Pulsed photon-pair source simulator and CAR analysis")
    p.add_argument("--version", action="version", version=f"pairsim {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON configuration file")
        sp.add_argument("--mu", type=float, help="mean pairs per pulse (overrides config)")
        sp.add_argument("--power-uw", type=float, help="pump power in uW, mapped to mu via power_map")

    m = sub.add_parser("model", help="closed-form rate model")
    msub = m.add_subparsers(dest="quantity", parser_class=_Parser)
    msub.required = True
    mc = msub.add_parser("car", help="coincidence/accidental rates and CAR")
    common(mc)
    mc.set_defaults(func=cmd_model)

    o = sub.add_parser("optimal-mu", help="mean pair number that maximises the CAR")
    common(o)
    o.set_defaults(func=cmd_optimal_mu)

    s = sub.add_parser("simulate", help="Monte Carlo run written to a PTAG file")
    common(s)
    s.add_argument("--pulses", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--block-size", type=int)
    s.add_argument("--threads", type=int, help="worker threads (default: $PAIRSIM_THREADS or CPU count)")
    s.add_argument("--out", required=True, help="output .ptag path")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="CAR estimate from a PTAG file")
    a.add_argument("tagfile")
    a.add_argument("--config", help="JSON configuration for tia/car sections")
    a.add_argument("--window-ps", type=int)
    a.add_argument("--slot-ps", type=int)
    a.add_argument("--n-accidental", type=int)
    a.add_argument("--search-ps", type=int)
    a.add_argument("--stop-delay-ps", type=int)
    a.add_argument("--start-dead-time-ps", type=int)
    a.add_argument("--max-interval-ps", type=int)
    a.add_argument("--swap-channels", action="store_true")
    a.add_argument("--histogram-csv", help="write the interval histogram (bin_left_ps,count)")
    a.add_argument("--bin-ps", type=int, default=4)
    a.set_defaults(func=cmd_analyze)

    w = sub.add_parser("sweep", help="pump-power sweep to CSV (and SVG)")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True, help="CSV path, or - for stdout")
    w.add_argument("--svg", help="prefix for SVG figures")
    w.add_argument("--mode", choices=("analytic", "montecarlo"))
    w.add_argument("--pulses", type=int, help="Monte Carlo pulse budget per point")
    w.add_argument("--seed", type=int)
    w.add_argument("--threads", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def run_cli(argv=None, stdout=None) -> int:
    out = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args, out)
    except UsageError as exc:
        _diag(f"usage error: {exc}")
        return EXIT_USAGE
    except (ConfigError, ConfigurationError, TagFileError, AnalysisError, ModelError, ValueError) as exc:
        _diag(f"error: {exc}")
        return EXIT_DATA
    except OSError as exc:
        _diag(f"error: {exc}")
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_cli())
