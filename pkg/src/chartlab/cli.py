"""Command-line entry point: ``chartlab {generate,chart,evaluate,baseline,sweep}``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, load_config
from .errors import ChartlabError, ConfigError, DataError

log = logging.getLogger("chartlab")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config (defaults if omitted)")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--seed", type=int, help="scenario seed (default: every seed in the config)")
    run.add_argument("--mode", choices=("static", "dynamic"), help="default: every mode in the config")

    p = argparse.ArgumentParser(prog="chartlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common, run], help="build scene, traffic, channels and datasets")
    c = sub.add_parser("chart", parents=[common, run], help="fit charts for generated datasets")
    c.add_argument("--supervision", type=float, action="append",
                   help="labeled percentage; repeatable (default: config list)")
    e = sub.add_parser("evaluate", parents=[common, run], help="metrics CSVs for fitted charts")
    e.add_argument("--supervision", type=float, action="append")
    sub.add_parser("baseline", parents=[common, run], help="RSSI fingerprinting and MUSIC baselines")
    sub.add_parser("sweep", parents=[common], help="full study over seeds, modes and supervision levels")
    return p


def _runs(cfg: ExperimentConfig, args):
    seeds = cfg.experiment.seeds if args.seed is None else (args.seed,)
    modes = cfg.experiment.modes if args.mode is None else (args.mode,)
    return [(s, m, args.out / pipeline.run_name(m, s)) for s in seeds for m in modes]


def _supervisions(cfg: ExperimentConfig, args):
    sups = tuple(args.supervision) if args.supervision else cfg.experiment.supervision
    for s in sups:
        if not 0 < s < 100:
            raise ConfigError(f"supervision {s} outside (0, 100)")
    return sups


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.command == "generate":
            seeds = None if args.seed is None else (args.seed,)
            modes = None if args.mode is None else (args.mode,)
            for m in pipeline.cmd_generate(cfg, args.out, seeds, modes):
                print(f"{pipeline.run_name(m['mode'], m['seed'])}: {m['n_records']} records, "
                      f"LoS fraction {m['los_fraction']:.3f}")
        elif args.command == "chart":
            sups = _supervisions(cfg, args)
            with pipeline.OutputLock(args.out):
                for seed, mode, run_dir in _runs(cfg, args):
                    ds = pipeline.open_dataset(cfg, run_dir)
                    P = pipeline.joint_similarities(cfg, pipeline.dissimilarities(cfg, run_dir, ds))
                    for sup in sups:
                        _, trace, _ = pipeline.cmd_chart(cfg, run_dir, sup, P=P, ds=ds)
                        print(f"{run_dir.name} {sup:g}%: KL {trace[0]:.4f} -> {trace[-1]:.4f}")
        elif args.command == "evaluate":
            sups = _supervisions(cfg, args)
            with pipeline.OutputLock(args.out):
                for seed, mode, run_dir in _runs(cfg, args):
                    for sup, rep in pipeline.cmd_evaluate(cfg, run_dir, sups).items():
                        print(f"{run_dir.name} {sup:g}%: CT {rep.ct:.3f} KS {rep.ks:.3f} TW {rep.tw:.3f} "
                              f"mean error {rep.stats.mean:.2f} m")
        elif args.command == "baseline":
            with pipeline.OutputLock(args.out):
                for seed, mode, run_dir in _runs(cfg, args):
                    reports, counts = pipeline.cmd_baseline(cfg, run_dir)
                    for method, rep in reports.items():
                        print(f"{run_dir.name} {method}: mean error {rep.stats.mean:.2f} m "
                              f"({counts[method]} unlocalizable)")
        elif args.command == "sweep":
            res = pipeline.cmd_sweep(cfg, args.out)
            for mode in cfg.experiment.modes:
                for sup in cfg.experiment.supervision:
                    print(f"{mode} {sup:g}%: mean error {res.mean_error(mode, sup):.2f} m")
    except ChartlabError as exc:
        print(f"chartlab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"chartlab: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
