"""Command-line entry point: generate | train | attack | ablate | report."""

from __future__ import annotations

import argparse
import sys

from .experiment import (
    ConfigError,
    ExperimentConfig,
    cmd_ablate,
    cmd_attack,
    cmd_generate,
    cmd_report,
    cmd_train,
)
from .graphs import GraphParseError, GraphValidationError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--seed", type=int, help="restrict to a single seed")
    p.add_argument("--model", help="restrict to one architecture")
    p.add_argument("--budget", type=float, help="restrict to one budget fraction")
    p.add_argument("--toggles", help="comma list of relaxations to enable (others off)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtattack",
                                     description="graph-transformer adaptive attacks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "attack", "ablate"):
        _add_common(sub.add_parser(name))
    rep = sub.add_parser("report")
    rep.add_argument("--config", help="experiment config JSON (for the results dir)")
    rep.add_argument("--results", help="results directory (overrides config out)")
    rep.add_argument("--out", help="directory for CSV output")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.model:
        cfg.models = [m for m in cfg.models if m.arch == args.model]
        if not cfg.models:
            raise ConfigError(f"no configured model named {args.model!r}")
    if args.budget is not None:
        cfg.budgets = [args.budget]
    if args.toggles is not None:
        from .models import RelaxToggles

        names = [t for t in args.toggles.split(",") if t]
        valid = set(RelaxToggles().to_dict())
        bad = set(names) - valid
        if bad:
            raise ConfigError(f"unknown toggles {sorted(bad)}; valid: {sorted(valid)}")
        cfg.attack["toggles"] = {k: (k in names) for k in valid}
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            results_dir = args.results
            if results_dir is None:
                if not args.config:
                    raise ConfigError("report needs --results or --config")
                results_dir = ExperimentConfig.load(args.config).out
            written = cmd_report(results_dir, args.out)
            for path in written:
                print(path)
            return 0
        cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
        if args.command == "generate":
            ds = cmd_generate(cfg)
            print(f"wrote {len(ds.graphs)} graphs to {cfg.out}/dataset")
        elif args.command == "train":
            models = cmd_train(cfg, only_model=args.model)
            for arch in models:
                print(f"trained {arch} -> {cfg.out}/checkpoints/{arch}.json")
        elif args.command == "attack":
            table = cmd_attack(cfg, progress=True)
            print(f"wrote {len(table.rows)} result rows to {cfg.out}/results.json")
        elif args.command == "ablate":
            table = cmd_ablate(cfg, progress=True)
            print(f"wrote {len(table.rows)} ablation rows to {cfg.out}/ablation.json")
        return 0
    except (ConfigError, GraphParseError, GraphValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
