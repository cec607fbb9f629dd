"""Command-line front end: ``stringkoop <verb> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 data/checkpoint error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .dataset import DatasetError
from .experiment import (
    ConfigError,
    cmd_dataset,
    cmd_error_curve,
    cmd_eval,
    cmd_fit_dmd,
    cmd_spectrum,
    cmd_train,
    load_config,
)
from .physics import IntegrationError
from .storage import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stringkoop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed list with a single seed")
        p.add_argument("--out", help="override out_dir")
        return p

    verb("dataset", "simulate and write a trajectory dataset")
    verb("fit-dmd", "fit the Hankel DMD baseline")
    verb("train", "train a neural model for each seed")
    p = verb("eval", "relative MSE/MAE tables")
    p.add_argument("--checkpoint", help="evaluate one checkpoint instead of all under out_dir")
    p = verb("error-curve", "per-timestep MAE curves in centimetres")
    p.add_argument("--checkpoint")
    p = verb("spectrum", "magnitude spectrum at the probe position")
    p.add_argument("--checkpoint", help="spectrum of a model prediction instead of ground truth")
    p.add_argument("--trajectory", type=int, default=0)
    p.add_argument("--split", default="test")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--window", type=int)
    p.add_argument("--nfft", type=int)
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
        cfg.dataset["seed"] = args.seed if args.verb == "dataset" else cfg.dataset.get("seed", 0)
    if args.verb == "dataset":
        cmd_dataset(cfg)
    elif args.verb == "fit-dmd":
        cmd_fit_dmd(cfg)
    elif args.verb == "train":
        cmd_train(cfg)
    elif args.verb == "eval":
        cmd_eval(cfg, args.checkpoint)
    elif args.verb == "error-curve":
        for path in cmd_error_curve(cfg, args.checkpoint):
            print(path)
    elif args.verb == "spectrum":
        print(cmd_spectrum(cfg, args.trajectory, args.start, args.window, args.split, args.checkpoint, args.nfft))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, ValueError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (IntegrationError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
