"""Command-line entry point: ``preacq run | report | verify``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .loop import (
    METRICS_COLUMNS,
    ConfigError,
    ExperimentConfig,
    learning_curve,
    run_experiment,
    write_learning_curve,
)
from .parallel import resolve_workers

log = logging.getLogger("preacq")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def load_config(path, overrides: dict | None = None) -> tuple[ExperimentConfig, Path | None]:
    """Parse a JSON config; ``output_dir`` is split off, everything else maps onto the experiment."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    out = data.pop("output_dir", None)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data), (Path(out) if out else None)


def cmd_run(args) -> int:
    overrides = {"policy": args.policy, "rounds": args.rounds,
                 "seeds": [args.seed] if args.seed is not None else None}
    try:
        config, out = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else out
    if out is None:
        print("config error: output_dir: set it in the config or pass --out", file=sys.stderr)
        return EXIT_CONFIG
    if out.exists() and any(out.iterdir()) and not (args.force or args.resume):
        print(f"refusing to overwrite non-empty {out}; pass --force or --resume", file=sys.stderr)
        return EXIT_CONFIG
    if args.force and not args.resume and out.exists():
        for p in ("metrics.csv", "learning_curve.csv", "config.json"):
            (out / p).unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(args.workers if args.workers is not None else config.workers)
    resolved = {**config.to_dict(), "output_dir": str(out)}
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    result = run_experiment(config, out, workers=workers, resume=args.resume)
    for row in result.summary():
        print(f"{row['policy']:>7} n_train={row['n_train']:4d} rmse={row['mean_rmse']:.6g} "
              f"[{row['ci95_lo']:.6g}, {row['ci95_hi']:.6g}]")
    for seed, err in result.errors.items():
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_RUNTIME if result.errors else EXIT_OK


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ConfigError(str(path), f"expected columns {METRICS_COLUMNS}, got {reader.fieldnames}")
        return [{**r, "n_train": int(r["n_train"]), "rmse": float(r["rmse"])} for r in reader]


def cmd_report(args) -> int:
    rows = []
    try:
        for p in args.metrics:
            rows.extend(read_metrics(p))
    except (OSError, ConfigError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    curve = learning_curve(rows)
    if args.output:
        write_learning_curve(args.output, curve)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=["policy", "n_train", "mean_rmse", "ci95_lo", "ci95_hi"])
        w.writeheader()
        w.writerows(curve)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .residual import CENTRAL_FIRST
    from .verify import perturbed_taps, run_checks

    taps = perturbed_taps(args.perturb_stencil) if args.perturb_stencil else CENTRAL_FIRST
    results = run_checks(first_taps=taps)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<18} {r.detail}  ({r.seconds:.2f}s)")
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preacq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an active learning experiment")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--policy", choices=["topk", "sbal", "random"])
    run.add_argument("--seed", type=int, help="run this single seed")
    run.add_argument("--rounds", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    run.add_argument("--resume", action="store_true", help="continue from checkpoints in the output directory")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="merge metrics CSVs into a learning curve")
    report.add_argument("metrics", nargs="+")
    report.add_argument("-o", "--output")
    report.set_defaults(func=cmd_report)

    verify = sub.add_parser("verify", help="run the fast property checks")
    verify.add_argument("--perturb-stencil", type=float, default=0.0, help=argparse.SUPPRESS)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map to exit code 1
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
