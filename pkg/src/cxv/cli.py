"""``cxv`` command line: train, eval, profile and selftest over a key=value config.

Failures print one line ``error: <category>: <message>`` to stderr and exit
nonzero; the category is the ``category`` attribute of the raised error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import selftest
from .config import RunConfig, load_config
from .errors import CheckpointError, CXVError, UsageError
from .model import build_model, profile
from .trainer import evaluate_checkpoint, run_schedule

EXIT_ERROR = 2
EXIT_FAILED = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides out.dir)")
    common.add_argument("--seed", type=int, help="overrides seed")
    common.add_argument("--precision", choices=("f32", "f64"), help="float width for this run")
    parser = _Parser(prog="cxv", description="Convolutional Xformers for Vision")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    tr = sub.add_parser("train", parents=[common], help="train through the configured schedule")
    tr.add_argument("--checkpoint", metavar="PATH", help="resume from this checkpoint")
    tr.add_argument("--epochs", type=int, metavar="N", help="stop this invocation after N epochs")
    ev = sub.add_parser("eval", parents=[common], help="print test top-1 of a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH", required=True)
    sub.add_parser("profile", parents=[common], help="print per-module params and MACs")
    sub.add_parser("selftest", parents=[common], help="run gradient, oracle and controller checks")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.out:
        updates["out.dir"] = args.out
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.precision:
        updates["precision"] = args.precision
    return cfg.replace(**updates) if updates else cfg


def echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg["out.dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.resolved.txt"
        path.write_text(cfg.to_text(), encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot write to output directory {out}: {exc.strerror}") from exc
    return path


def cmd_train(cfg: RunConfig, resume: Optional[str] = None, epochs: Optional[int] = None) -> int:
    records = run_schedule(cfg, resume=resume, max_total_epochs=epochs)
    if records:
        last = records[-1]
        print(f"epochs {len(records)}  last test top-1 {last.test_top1:.4f}")
    print(f"metrics: {Path(cfg['out.dir']) / 'metrics.csv'}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    acc = evaluate_checkpoint(cfg, checkpoint)
    print(f"top1 {acc:.4f}")
    return 0


def cmd_profile(cfg: RunConfig) -> int:
    report = profile(build_model(cfg.model_config(), seed=cfg["seed"]))
    print(f"model {cfg['model.name']}")
    print(report.table())
    return 0


def cmd_selftest() -> int:
    return 0 if selftest.run_all(verbose=True) else EXIT_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(message)s")
        cfg = resolve_config(args)
        echo_config(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.checkpoint, args.epochs)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "profile":
            return cmd_profile(cfg)
        return cmd_selftest()
    except CXVError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("error: interrupted: stopped by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
