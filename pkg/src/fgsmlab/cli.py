"""Command line entry point: ``python -m fgsmlab <command>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .attacks import AttackSpec
from .data import load_cifar10
from .runner import (SETTINGS, TrainConfig, analyze, emit_adversarial_set, evaluate,
                     load_checkpoint, plot, train)


def _attack_spec(args) -> AttackSpec:
    if args.steps == 0:
        return AttackSpec.fgsm(args.eps)
    return AttackSpec.pgd(args.eps, steps=args.steps, alpha=args.alpha,
                          random_start=not args.no_random_start)


def cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    settings = SETTINGS if args.setting == "all" else [args.setting] if args.setting else [None]
    for s in settings:
        cfg = config.with_setting(s) if s else config
        result = train(cfg)
        print(f"{cfg.setting}: {len(result.history)} epochs -> {result.run_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data = load_cifar10(args.data)
    rec = evaluate(ckpt, data, _attack_spec(args), seed=args.seed)
    for name, value in zip(rec.header(), rec.row()):
        print(f"{name},{value}")
    return 0


def cmd_attack(args) -> int:
    out = emit_adversarial_set(load_checkpoint(args.ckpt), load_cifar10(args.data),
                               _attack_spec(args), args.seed, args.out)
    print(f"wrote {len(out)} examples to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    report = analyze(args.metrics, args.drop, args.recovery, args.column)
    sys.stdout.write(report.text())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return 0


def cmd_plot(args) -> int:
    cols = [c for c in args.cols.split(",") if c]
    plot(args.metrics, cols, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


def _add_attack_args(p):
    p.add_argument("--eps", type=float, default=16 / 255)
    p.add_argument("--steps", type=int, default=10, help="PGD steps; 0 means FGSM")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--no-random-start", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgsmlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="FGSM adversarial training from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--setting", choices=[*SETTINGS, "all"],
                   help="override the regularization setting (default: as configured)")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a CIFAR-10 binary file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, nargs="+")
    _add_attack_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="write an adversarial copy of a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--out", required=True)
    _add_attack_args(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("analyze", help="detect double-descent episodes in a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--drop", type=float, default=0.05)
    p.add_argument("--recovery", type=float, default=0.8)
    p.add_argument("--column", default="robust_acc")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="render metric columns to SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--cols", required=True, help="comma-separated column names")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
