"""Command line entry point: one subcommand per experiment, plus replay and plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from ..mcmc import ConvergenceError
from .config import EXPERIMENTS, ConfigError, load_config, parse_config, read_manifest, sha256_file
from .experiments import run_experiment, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE = 0, 2, 3

log = logging.getLogger("rfspin")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfspin", description="Disordered spin system experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path)
        s.add_argument("--replicas", type=int)
        s.add_argument("--exact-cap", type=int, dest="exact_cap")
        s.add_argument("--workers", type=int)
    r = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path)
    pl = sub.add_parser("plot", help="static figure from an experiment CSV")
    pl.add_argument("csv", type=Path)
    pl.add_argument("--x", default="L")
    pl.add_argument("--y", required=True)
    pl.add_argument("--err")
    pl.add_argument("--out", type=Path, required=True)
    return p


def _config_for(args):
    data = json.loads(load_config(args.config).to_json()) if args.config else {}
    if data.get("experiment", args.command) != args.command:
        raise ConfigError(f"config is for {data['experiment']!r}, not {args.command!r}")
    data["experiment"] = args.command
    for key in ("seed", "replicas", "exact_cap", "workers"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.out is not None:
        data["output_dir"] = str(args.out)
    return parse_config(data)


def _run(args) -> int:
    config = _config_for(args)
    result = run_experiment(config)
    paths = write_outputs(result, config)
    for pth in paths:
        print(pth)
    print(json.dumps(result.summary, default=str))
    return EXIT_OK


def _replay(args) -> int:
    config, expected = read_manifest(args.manifest)
    out = args.out if args.out is not None else Path(tempfile.mkdtemp(prefix="rfspin-replay-"))
    write_outputs(run_experiment(config), config, out)
    bad = [name for name, digest in expected.items() if sha256_file(out / name) != digest]
    for name in bad:
        print(f"MISMATCH {name}")
    print("replay identical" if not bad else f"{len(bad)} outputs differ")
    return EXIT_OK if not bad else 1


def _plot(args) -> int:
    from .plot import plot_csv
    plot_csv(args.csv, args.x, args.y, args.out, err=args.err)
    print(args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "replay":
            return _replay(args)
        if args.command == "plot":
            return _plot(args)
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence gate failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
