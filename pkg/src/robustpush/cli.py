"""Command line front end: run, sweep, compare, oracle."""

import argparse
import json
import os
import sys
from dataclasses import replace

from .harness import (
    CampaignResult,
    _jsonable,
    compare,
    load_config,
    oracle_check,
    run_campaign,
    run_sweep,
    write_campaign,
)
from .util import fmt17


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="experiment TOML file")
    sub.add_argument("--seed", type=int, default=None, help="override base_seed")
    sub.add_argument("--trials", type=int, default=None, help="override trial count")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--parallel", type=int, default=1, help="worker processes")
    sub.add_argument(
        "--sample-stride", type=int, default=None,
        help="record every k-th round to trajectory files (0 disables)",
    )


def _load(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    exp = cfg.experiment
    if args.seed is not None:
        exp = replace(exp, base_seed=args.seed)
    if args.trials is not None:
        exp = replace(exp, trials=args.trials)
    if getattr(args, "sample_stride", None) is not None:
        exp = replace(exp, sample_stride=args.sample_stride)
    if args.out is not None:
        exp = replace(exp, output_dir=args.out)
    return replace(cfg, experiment=exp)


def _print_aggregate(aggregate: dict) -> None:
    width = max(len(k) for k in aggregate)
    for key in sorted(aggregate):
        value = aggregate[key]
        print(f"  {key:<{width}}  {fmt17(value)}")


def _cmd_run(args) -> int:
    cfg = _load(args)
    result = run_campaign(cfg, parallel=args.parallel)
    print(f"campaign: {cfg.experiment.algorithm}, {cfg.experiment.trials} trials")
    _print_aggregate(result.aggregate)
    if cfg.experiment.output_dir:
        print(f"wrote {cfg.experiment.output_dir}/")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    result = run_sweep(cfg, parallel=args.parallel)
    print(f"sweep over {result.parameter}: {list(result.values)}")
    for value, campaign in zip(result.values, result.campaigns):
        a = campaign.aggregate
        print(
            f"  {result.parameter}={value}: epsilon={fmt17(a['epsilon_mean'])} "
            f"gamma={fmt17(a['gamma_mean'])} "
            f"isolated_fraction={fmt17(a['isolated_fraction'])}"
        )
    if cfg.experiment.output_dir:
        print(f"wrote {cfg.experiment.output_dir}/sweep.csv")
    return 0


def _cmd_compare(args) -> int:
    labeled = []
    for path in args.configs:
        label = os.path.splitext(os.path.basename(path))[0]
        cfg = load_config(path)
        exp = cfg.experiment
        if args.seed is not None:
            exp = replace(exp, base_seed=args.seed)
        if args.trials is not None:
            exp = replace(exp, trials=args.trials)
        labeled.append((label, replace(cfg, experiment=exp)))
    rows = compare(labeled, parallel=args.parallel)
    keys = ["label", "algorithm", "epsilon_mean", "gamma_mean", "xi_mean", "isolated_fraction"]
    print(",".join(keys))
    for row in rows:
        print(",".join(str(row.get(k, "")) if k in ("label", "algorithm")
                       else fmt17(row.get(k, float("nan"))) for k in keys))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        all_keys = ["label", "algorithm"] + sorted(
            k for k in rows[0] if k not in ("label", "algorithm")
        )
        lines = [",".join(all_keys)]
        for row in rows:
            cells = []
            for k in all_keys:
                v = row.get(k, "")
                cells.append(str(v) if isinstance(v, str) else fmt17(v))
            lines.append(",".join(cells))
        with open(os.path.join(args.out, "compare.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {args.out}/compare.csv")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _load(args)
    report = oracle_check(cfg)
    text = json.dumps(_jsonable(report), indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "oracle.json"), "w") as fh:
            fh.write(text + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="robustpush",
        description="push-sum subgradient optimization with malicious-node severing",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run one experiment campaign")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = subs.add_parser("sweep", help="run the configured parameter sweep")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = subs.add_parser("compare", help="run several configs and tabulate")
    p_cmp.add_argument("configs", nargs="+", help="experiment TOML files")
    p_cmp.add_argument("--seed", type=int, default=None, help="override base_seed in every config")
    p_cmp.add_argument("--trials", type=int, default=None, help="override trial count in every config")
    p_cmp.add_argument("--out", default=None, help="output directory")
    p_cmp.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_cmp.set_defaults(func=_cmd_compare)

    p_orc = subs.add_parser("oracle", help="print closed-form checks for a config")
    _add_common(p_orc)
    p_orc.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
