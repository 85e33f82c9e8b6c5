"""Command-line entry point: run and validate experiment configs."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from fpmimo.experiments import ConfigError, load_config, run_experiment, validate_config
from fpmimo.formats import registered_formats


def _default_threads() -> int:
    env = os.environ.get("FPMIMO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.get("out") or (Path(args.config).stem + "_out")
    manifest = run_experiment(cfg, out, seed=args.seed, threads=args.threads)
    print(f"{manifest['kind']}: wrote {len(manifest['outputs'])} file(s) to {out} "
          f"in {manifest['wall_time_s']}s")
    for name in manifest["outputs"]:
        print(f"  {name}")
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    diags = validate_config(cfg)
    for d in diags:
        print(d, file=sys.stderr)
    if not diags:
        print("ok")
    return 1 if diags else 0


def _cmd_formats(args) -> int:
    print(f"{'name':>10} {'(sig, exp)':>12} {'u':>12} {'x_min':>12} {'x_max':>12}")
    for name, fmt in registered_formats().items():
        print(f"{name:>10} {f'({fmt.sig_bits}, {fmt.exp_bits})':>12} "
              f"{fmt.unit_roundoff:>12.3g} {fmt.x_min:>12.3g} {fmt.x_max:>12.3g}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fpmimo",
        description="Finite-precision CG detection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config", help="path to a TOML experiment file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    run_p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker threads for trial chunks")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="check a config without running")
    val_p.add_argument("config")
    val_p.set_defaults(func=_cmd_validate)

    fmt_p = sub.add_parser("formats", help="print the format registry")
    fmt_p.set_defaults(func=_cmd_formats)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
