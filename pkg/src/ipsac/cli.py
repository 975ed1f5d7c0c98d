"""Command-line entry point: ``ipsac run --config exp.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import BASELINES, OBJECTIVES, PROFILES, load_config
from .errors import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipsac", description="Polarization-aware sensing/communication experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment sweep")
    r.add_argument("--config", required=True, help="YAML experiment file")
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--seeds", type=int, default=None, help="use seeds 0..N-1")
    r.add_argument("--profile", choices=sorted(PROFILES), default=None, help="array-size profile")
    r.add_argument("--baselines", default=None, help=f"comma-separated subset of {','.join(BASELINES)}")
    r.add_argument("--objective", choices=OBJECTIVES, default=None)
    r.add_argument("--dump-conic", action="store_true", help="write each first waveform problem in CBF format")
    r.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def _progress(i, n, row):
    state = "ok" if row.feasible else "infeasible"
    print(f"[{i}/{n}] {row.baseline} {row.sweep_axis}={row.sweep_value:g} seed={row.seed} "
          f"nmse={row.nmse_db:.2f}dB sinr={row.target_sinr_db:.2f}dB {state}", flush=True)


def cmd_run(args) -> int:
    from dataclasses import replace

    from .outputs import emit_outputs
    from .runner import run_experiment

    try:
        cfg = load_config(args.config)
        baselines = [b.strip() for b in args.baselines.split(",") if b.strip()] if args.baselines is not None else None
        cfg = cfg.with_overrides(profile=args.profile, seeds=args.seeds, baselines=baselines,
                                 objective=args.objective, out_dir=args.out,
                                 dump_conic=True if args.dump_conic else None)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            cfg = replace(cfg, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = run_experiment(cfg, progress=_progress)
    paths = emit_outputs(rows, cfg)
    for p in paths:
        print(f"wrote {p}")
    failed = [r for r in rows if r.error]
    if failed:
        print(f"{len(failed)} of {len(rows)} runs failed in the solver:", file=sys.stderr)
        for r in failed[:10]:
            print(f"  {r.baseline} {r.sweep_axis}={r.sweep_value:g} seed={r.seed}: {r.error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
