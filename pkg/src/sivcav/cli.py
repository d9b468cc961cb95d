"""Command-line front end.

    sivcav run <config> [--out DIR] [--seed N] [--verbose]
    sivcav validate <config>
    sivcav fit <model> <csv>

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
Diagnostics go to stderr; data goes to files or stdout only.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_config
from .errors import ConfigError, SivCavError
from .fitting import MODELS, Spectrum, lm_fit
from .protocols import run_protocol


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sivcav",
        description="Cavity-coupled SiV spin-photon interface simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a protocol config")
    run.add_argument("config", help="path to the protocol config file")
    run.add_argument("--out", default=None,
                     help="output directory root (default: the config's "
                          "output_dir, or 'runs')")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--verbose", action="store_true")

    val = sub.add_parser("validate", help="validate a protocol config")
    val.add_argument("config", help="path to the protocol config file")

    fit = sub.add_parser("fit", help="fit a shipped model to CSV data")
    fit.add_argument("model", choices=sorted(MODELS),
                     help="model name")
    fit.add_argument("csv", help="CSV file with x in the first column and y "
                                 "in the second (header optional)")
    return p


def _read_xy_csv(path: str):
    xs, ys = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) < 2:
                raise SivCavError(f"{path}:{line_no}: need at least two columns")
            try:
                x, y = float(cells[0]), float(cells[1])
            except ValueError:
                if line_no == 1:
                    continue  # header row
                raise SivCavError(f"{path}:{line_no}: non-numeric data")
            xs.append(x)
            ys.append(y)
    if len(xs) < 2:
        raise SivCavError(f"{path}: no data rows found")
    return np.array(xs), np.array(ys)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = run_protocol(cfg, out_dir=args.out, seed=args.seed,
                            verbose=args.verbose)
    print(manifest.out_dir)
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: valid ({cfg.protocol}, hash {cfg.config_hash()[:8]})",
          file=sys.stderr)
    return 0


def _cmd_fit(args) -> int:
    x, y = _read_xy_csv(args.csv)
    order = np.argsort(x)
    spectrum = Spectrum(x[order], y[order])
    result = lm_fit(MODELS[args.model], spectrum)
    print(result.to_json())
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        raise SivCavError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SivCavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
