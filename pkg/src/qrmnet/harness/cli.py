"""Command-line entry point: ``qrmnet <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 selftest failure, 2 configuration or file
mismatch, 3 training divergence, 4 refused exhaustive search.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..baselines import SearchSpaceTooLarge
from ..chanest import DivergenceError
from ..neural import WeightFileError, load_params, save_params
from .config import ConfigError, load_config, model_hash
from .dataset import DatasetError, generate_ttis, read_dataset, write_dataset
from .evaluate import Weights, rows_to_csv, run_sweep
from .flops import FlopParams, format_table
from .selftest import run_selftest
from .sim import Link
from .train import train_ce, train_det

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_GUARD = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with an [experiment] section")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qrmnet", description="MIMO-OFDM receiver laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", parents=[common], help="generate and store seeded TTIs")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-ttis", type=int, help="defaults to n_ttis of the config")
    g.add_argument("--append", action="store_true", help="append records to an existing file")

    c = sub.add_parser("train-ce", parents=[common], help="train SRCNN on a dataset")
    c.add_argument("--dataset", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True, help="weight file")
    c.add_argument("--telemetry", type=Path, help="CSV of (epoch, loss, val_mse)")

    d = sub.add_parser("train-det", parents=[common], help="train the QRMNet GNN on a dataset")
    d.add_argument("--dataset", type=Path, required=True)
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--ce-weights", type=Path)
    src.add_argument("--perfect-csi", action="store_true")
    d.add_argument("--prior-source", choices=("qrm", "ep"), default="qrm")
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--telemetry", type=Path, help="CSV of (epoch, loss, val_ser)")

    e = sub.add_parser("evaluate", parents=[common], help="SER/BER/NMSE sweep to CSV")
    e.add_argument("--ce-weights", type=Path)
    e.add_argument("--det-weights", type=Path)
    e.add_argument("--det-ep-weights", type=Path)
    e.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")

    sub.add_parser("flops", parents=[common], help="multiplication counts per stage")
    sub.add_parser("selftest", parents=[common], help="fast oracle and invariant checks")
    return p


def _load_weights(path, cfg, kind):
    if path is None:
        return None
    params, h = load_params(path)
    expected = model_hash(cfg, kind)
    if h != expected:
        raise ConfigError(f"{path}: weight hash {h!r} does not match config ({expected!r})")
    return params


def _run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.command == "gen-dataset":
        n = args.n_ttis or cfg.n_ttis
        start = 0
        if args.append and args.out.exists():
            start = len(read_dataset(args.out, cfg)[1])
        ttis = generate_ttis(cfg, n, cfg.train_snr_db, cfg.seed, start=start)
        write_dataset(args.out, cfg, ttis, cfg.seed, append=args.append)
        print(f"wrote {n} TTIs to {args.out}")
    elif args.command == "train-ce":
        _, ttis = read_dataset(args.dataset, cfg)
        params, hist = train_ce(cfg, ttis, telemetry=args.telemetry)
        save_params(args.out, params, model_hash(cfg, "ce"))
        print(f"final train mse {hist[-1][1]:.4g}; weights in {args.out}")
    elif args.command == "train-det":
        _, ttis = read_dataset(args.dataset, cfg)
        ce = _load_weights(args.ce_weights, cfg, "ce")
        params, hist = train_det(cfg, ttis, Link(cfg), ce_params=ce, perfect_csi=args.perfect_csi,
                                 prior_source=args.prior_source, telemetry=args.telemetry)
        save_params(args.out, params, model_hash(cfg, "det"))
        print(f"final train loss {hist[-1][1]:.4g}; weights in {args.out}")
    elif args.command == "evaluate":
        w = Weights(_load_weights(args.ce_weights, cfg, "ce"),
                    _load_weights(args.det_weights, cfg, "det"),
                    _load_weights(args.det_ep_weights, cfg, "det"))
        text = rows_to_csv(run_sweep(cfg, w))
        if args.out is None:
            sys.stdout.write(text)
        else:
            args.out.write_text(text, encoding="utf-8")
    elif args.command == "flops":
        sys.stdout.write(format_table(FlopParams.from_config(cfg)))
    elif args.command == "selftest":
        return EXIT_OK if run_selftest(cfg.seed) else EXIT_FAIL
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, DatasetError, WeightFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
