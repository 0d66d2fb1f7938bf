"""Command-line front end.

Subcommands:
    waterlab run <cfg> [--seed N] [--out DIR] [--sweep key=v1,v2,...]
    waterlab verify
    waterlab fit-reference <csv> --omega W

Exit codes: 0 success, 1 validation error, 2 runtime/integration error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import IntegrationDivergenceError, ScenarioError, WaterlabError
from .reference import fit_reference, format_coefficients, load_demand_csv
from .scenario import parse_scenario, ScenarioConfig
from .wcn import run_closed_loop

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


def _write_outputs(log, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    log.write_csv(out_dir / "timeseries.csv")
    log.write_anomalies_csv(out_dir / "anomalies.csv")
    (out_dir / "summary.txt").write_text(log.summary_text())


def _apply_override(config: ScenarioConfig, key: str, raw: str) -> ScenarioConfig:
    """Apply one dotted sweep override (currently [sim] and [channel] keys)."""
    section, _, field = key.partition(".")
    if section == "sim" and field in ("horizon", "output_interval", "plant_dt"):
        return replace(config, **{field: float(raw)})
    if section == "sim" and field == "seed":
        return replace(config, seed=int(raw))
    if section == "channel" and field in ("drop_probability", "latency_min", "latency_max"):
        return replace(config, channel=replace(config.channel, **{field: float(raw)}))
    if section == "channel" and field == "seed":
        return replace(config, channel=replace(config.channel, seed=int(raw)))
    if section == "controller" and field in ("sample_period",):
        return replace(config, controller=replace(config.controller, sample_period_Ts=float(raw)))
    if section == "controller" and field in ("u_bar", "u_min", "u_max", "epsilon_band", "delta_bound"):
        return replace(config, controller=replace(config.controller, **{field: float(raw)}))
    if section == "controller" and field == "poly_degree":
        return replace(config, controller=replace(config.controller, poly_degree=int(raw)))
    if section == "controller" and field == "mode":
        return replace(config, controller=replace(config.controller, mode=raw))
    raise ScenarioError([f"--sweep does not support key {key!r}"])


def _run_single(cfg_path: str, seed: int | None, out_dir: str,
                override: tuple[str, str] | None) -> str:
    """Worker for one (possibly swept) run; returns the output directory."""
    config = parse_scenario(cfg_path)
    if override is not None:
        config = _apply_override(config, *override)
    if seed is not None:
        config = replace(config, seed=seed, channel=replace(config.channel, seed=seed))
    config.validate()
    log = run_closed_loop(config)
    _write_outputs(log, Path(out_dir))
    return out_dir


def cmd_run(args) -> int:
    try:
        if args.sweep:
            key, _, values_raw = args.sweep.partition("=")
            if not values_raw:
                print(f"error: --sweep needs key=v1,v2,..., got {args.sweep!r}", file=sys.stderr)
                return EXIT_VALIDATION
            values = [v for v in values_raw.split(",") if v]
            base_seed = args.seed
            if base_seed is None:
                base_seed = parse_scenario(args.scenario).seed
            jobs = []
            for index, value in enumerate(values):
                sub = Path(args.out) / f"{key.replace('.', '_')}_{value}"
                jobs.append((args.scenario, base_seed + index, str(sub), (key, value)))
            with ProcessPoolExecutor() as pool:
                for out_dir in pool.map(_run_single_star, jobs):
                    print(f"wrote {out_dir}")
            return EXIT_OK
        out_dir = _run_single(args.scenario, args.seed, args.out, None)
        print(f"wrote {out_dir}")
        return EXIT_OK
    except (ScenarioError, WaterlabError) as exc:
        if isinstance(exc, IntegrationDivergenceError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _run_single_star(job):
    return _run_single(*job)


def cmd_verify(_args) -> int:
    from .verify import run_all_checks

    results = run_all_checks()
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name}: {result.measured}")
        failed += 0 if result.passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_fit_reference(args) -> int:
    try:
        samples = load_demand_csv(args.demand_csv)
        ref = fit_reference(samples, args.omega)
    except (WaterlabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    sys.stdout.write(format_coefficients(ref))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waterlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("scenario", help="scenario .cfg path")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.add_argument("--sweep", default=None, metavar="KEY=V1,V2,...",
                       help="run one scenario per value, concurrently; seeds are seed+index")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run the analytic oracle suite")
    p_verify.set_defaults(func=cmd_verify)

    p_fit = sub.add_parser("fit-reference", help="fit demand samples and print coefficients")
    p_fit.add_argument("demand_csv", help="two-column CSV: t_seconds,demand_m3s")
    p_fit.add_argument("--omega", type=float, required=True, help="angular frequency (rad/s)")
    p_fit.set_defaults(func=cmd_fit_reference)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
