"""Command-line front end.

Subcommands
-----------
rate      single-point key rate with its component breakdown
sweep     optimized rate-versus-distance grid written as CSV
simulate  Monte Carlo session tallies plus validation checks

Exit codes: 0 success, 2 configuration error, 3 infeasible estimation,
4 failed validation check.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import RunConfig, RunManifest, load_config
from .errors import ConfigError, DomainError, EstimationError
from .estimation import estimate, observations_from_channel
from .keyrate import asymptotic_rate, finite_rate
from .montecarlo import (
    SAMPLER_KINDS,
    CorrelationSampler,
    interval_coverage,
    simulate,
    soundness_check,
    variance_decay,
    write_tally_csv,
)
from .optimizer import SweepSpec, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VALIDATION = 4

SWEEP_COLUMNS = (
    "L_km", "delta_max", "xi", "mode", "model", "mu", "nu",
    "K_inf", "K_raw", "key_term", "ec_term", "status",
)


def _float_list(text: str) -> List[float]:
    """Comma-separated numbers, or ``start:stop:step`` with ``stop`` included."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(max(count, 0))]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _int_list(text: str) -> List[int]:
    values = _float_list(text)
    if any(v != int(v) for v in values):
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}")
    return [int(v) for v in values]


def _str_list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _load(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "mode", None):
        overrides.append(f"constraint_mode={args.mode}")
    if getattr(args, "model", None):
        overrides.append(f"correlation_model={args.model}")
    return load_config(args.config, overrides)


def _manifest_path(arg, output: Optional[Path], default: str) -> Optional[Path]:
    if arg is None:
        return None
    if arg != "auto":
        return Path(arg)
    if output is not None:
        return output.with_name(output.name + ".manifest.json")
    return Path(default)


def cmd_rate(args) -> int:
    cfg = _load(args)
    protocol, ch = cfg.protocol, cfg.channel
    obs = observations_from_channel(protocol, ch)
    bounds = estimate(obs, protocol, ch, debug_dir=args.debug_lp)
    result = asymptotic_rate(bounds, obs, ch, protocol)
    finite = None
    if cfg.n_rounds is not None:
        finite = finite_rate(bounds, obs, ch, protocol, cfg.n_rounds, cfg.security)

    fields = [
        ("K_inf", result.rate), ("K_raw", result.raw_rate),
        ("key_term", result.key_term), ("ec_term", result.ec_term),
        ("phase_error_ratio", result.phase_error_ratio),
        ("y1_z", bounds.y1_z), ("y1_x", bounds.y1_x), ("h1", bounds.h1),
        ("status", result.reason),
    ]
    if finite is not None:
        fields += [
            ("K_N", finite.rate), ("K_N_raw", finite.raw_rate),
            ("serfling", finite.serfling), ("privacy_cost", finite.privacy_cost),
            ("finite_status", finite.reason),
        ]
    if args.line:
        print("\t".join(f"{k}={v}" for k, v in fields))
    else:
        width = max(len(k) for k, _ in fields)
        print(f"distance {ch.distance:g} km, delta_max {protocol.delta_max:g}, xi {protocol.xi}, "
              f"{protocol.constraint_mode}/{protocol.correlation_model}")
        for k, v in fields:
            print(f"  {k:<{width}}  {v:.10g}" if isinstance(v, float) else f"  {k:<{width}}  {v}")
    path = _manifest_path(args.manifest, None, "rate.manifest.json")
    if path is not None:
        RunManifest.create(cfg, "rate").write(path)
    return EXIT_OK


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([
                f"{r.distance:g}", f"{r.delta_max:g}", r.xi, r.mode, r.model,
                repr(r.mu), repr(r.nu), repr(r.k_inf), repr(r.k_raw),
                repr(r.key_term), repr(r.ec_term), r.status,
            ])


def cmd_sweep(args) -> int:
    cfg = _load(args)
    protocol = cfg.protocol
    spec = SweepSpec(
        distances=args.distances,
        delta_max_values=args.delta_max if args.delta_max is not None else [protocol.delta_max],
        xi_values=args.xi if args.xi is not None else [protocol.xi],
        constraint_modes=args.modes or [protocol.constraint_mode],
        correlation_models=args.models or [protocol.correlation_model],
        mu_step=args.mu_step,
        nu_step=args.nu_step,
        refinements=args.refinements,
        include_baseline=args.baseline,
    )
    rows = sweep(spec, cfg.channel, protocol, workers=args.workers)
    out = Path(args.output)
    write_sweep_csv(rows, out)
    if args.figure:
        from .plotting import plot_rate_distance

        plot_rate_distance(rows, args.figure)
    path = _manifest_path(args.manifest, out, "sweep.manifest.json")
    if path is not None:
        RunManifest.create(cfg, "sweep", spec=repr(spec)).write(path)
    failed = sum(1 for r in rows if r.status.startswith(("infeasible", "error")))
    print(f"wrote {len(rows)} rows to {out} ({failed} failed)")
    return EXIT_OK if failed < len(rows) else EXIT_INFEASIBLE


def _report(lines, name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    lines.append(line)
    print(line)
    return passed


def cmd_simulate(args) -> int:
    cfg = _load(args)
    protocol, ch = cfg.protocol, cfg.channel
    sampler = CorrelationSampler(args.sampler, protocol.delta_max, protocol.xi)
    seeds = list(range(args.seed, args.seed + args.seeds))
    if args.variance_decay:
        decay_rounds = args.decay_rounds or [args.rounds]
        # replication requirements are checked before any simulation is run
        if len(decay_rounds) < 3 or len(seeds) < 30:
            raise ConfigError(
                "variance decay needs at least 3 round counts and 30 seeds "
                f"(got {len(decay_rounds)} and {len(seeds)})"
            )

    out = Path(args.output)
    lines: List[str] = []
    ok = True
    for seed in seeds:
        tally = simulate(args.rounds, protocol, ch, sampler, seed, debug=True)
        target = out if len(seeds) == 1 else out.with_name(f"{out.stem}_seed{seed}{out.suffix}")
        write_tally_csv(tally, target)
        if args.checks:
            check = interval_coverage(tally, protocol, protocol.delta_max)
            ok &= _report(lines, f"seed {seed} {check.name}", check.passed, check.detail)
            for check in soundness_check(tally, protocol, ch):
                ok &= _report(lines, f"seed {seed} {check.name}", check.passed, check.detail)
    if args.variance_decay:
        series = {
            int(n): [simulate(int(n), protocol, ch, sampler, s) for s in seeds]
            for n in args.decay_rounds
        }
        rep = variance_decay(series)
        detail = (f"exponent {rep.exponent:.3f} (threshold {rep.threshold}) over N="
                  + ",".join(str(n) for n in rep.n_values))
        ok &= _report(lines, "variance_decay", rep.passed, detail)
    if args.report:
        Path(args.report).write_text("\n".join(lines) + "\n")
    path = _manifest_path(args.manifest, out, "simulate.manifest.json")
    if path is not None:
        RunManifest.create(cfg, "simulate", seeds=seeds, sampler=args.sampler,
                           rounds=args.rounds).write(path)
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="decoycorr",
        description="Decoy-state BB84 key rates under finite-range intensity correlations.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--manifest", nargs="?", const="auto", default=None, metavar="PATH",
                       help="write the run manifest (default: beside the output)")

    p = sub.add_parser("rate", help="key rate at one configuration")
    common(p)
    p.add_argument("--mode", choices=("cs_linearized", "trace_distance"))
    p.add_argument("--model", choices=("model_independent", "deterministic"))
    p.add_argument("--line", action="store_true", help="single machine-readable line")
    p.add_argument("--debug-lp", metavar="DIR", help="dump every linear program to DIR")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("sweep", help="optimized rate versus distance")
    common(p)
    p.add_argument("--distances", type=_float_list, default=_float_list("0:300:10"),
                   help="km list or start:stop:step (default 0:300:10)")
    p.add_argument("--delta-max", type=_float_list, default=None)
    p.add_argument("--xi", type=_int_list, default=None)
    p.add_argument("--modes", type=_str_list, default=None)
    p.add_argument("--models", type=_str_list, default=None)
    p.add_argument("--baseline", action="store_true", help="add delta_max = 0 rows")
    p.add_argument("--mu-step", type=float, default=0.02)
    p.add_argument("--nu-step", type=float, default=0.02)
    p.add_argument("--refinements", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default="sweep.csv")
    p.add_argument("--figure", metavar="PATH", help="also render a rate-distance figure")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo tallies and validation")
    common(p)
    p.add_argument("--rounds", type=lambda s: int(float(s)), default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--sampler", choices=SAMPLER_KINDS, default="uniform_interval")
    p.add_argument("--no-checks", dest="checks", action="store_false",
                   help="skip interval and soundness checks")
    p.add_argument("--variance-decay", action="store_true")
    p.add_argument("--decay-rounds", type=lambda s: [int(v) for v in _float_list(s)], default=None)
    p.add_argument("-o", "--output", default="tally.csv")
    p.add_argument("--report", metavar="PATH", help="write the check lines to PATH")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
