"""Overview:
    fedfv.py : federated learning simulator with FedAvg and FedFV (fair averaging)

Usage:
    fedfv.py run [options] [--seed N]...
    fedfv.py ablate-order [options] [--seed N]...
    fedfv.py theory [--seed N]... [--count N] [--out DIR] [-v | --verbose]

    fedfv.py -h | --help

Options:
    -c, --config PATH    : experiment configuration file (INI); built-in defaults without it
    --seed N             : run seed; repeat the option for several seeds
    --algorithm NAME     : fedavg or fedfv
    --alpha A            : fraction of highest-loss clients that keep their gradients
    --tau T              : rounds of gradient history used against external conflicts
    --rounds T           : number of rounds
    --sample-frac F      : fraction of clients sampled per round
    --dropout P          : probability that a sampled client drops out
    --out DIR            : output directory
    --order-mode MODE    : loss_ascending, random or reverse
    --count N            : premise-holding ensembles of the theory sweep [default: 1000]
    -v, --verbose        : debug logging
    -h --help            : Show this screen and exit.

Exit status:
    0 success, 1 configuration error, 2 runtime error, 3 theory-suite failure
"""
from __future__ import annotations

import dataclasses
import logging
import pathlib as p
import sys
from typing import Any, Dict, MutableMapping, Optional, Sequence

from docopt import docopt
from schema import And, Or, Schema, SchemaError, Use

from FedFV.Harness import display_ablation, display_summary, display_theory_report, run_experiment, \
    run_order_ablation, run_theory_suite, TheoryReport
from FedFV.Settings import ExperimentConfig, read_config
from FedFV.Utility import ConfigError, Error

EXIT_CONFIG: int = 1
EXIT_RUNTIME: int = 2
EXIT_THEORY: int = 3


@dataclasses.dataclass(frozen=True)
class Options:
    """
    オプション格納
    """
    command: str  # run / ablate-order / theory
    config_file: Optional[p.Path]
    seeds: Sequence[int]
    count: int
    output_dir: Optional[p.Path]
    overrides: Dict[str, Dict[str, str]]  # 設定ファイルを上書きする section -> key -> 値
    verbose: bool


_OVERRIDES: Dict[str, tuple] = {
    "--algorithm": ("experiment", "algorithm"),
    "--order-mode": ("experiment", "order_mode"),
    "--out": ("experiment", "output_dir"),
    "--alpha": ("fedfv", "alpha"),
    "--tau": ("fedfv", "tau"),
    "--rounds": ("fedfv", "rounds"),
    "--sample-frac": ("fedfv", "sample_fraction"),
    "--dropout": ("fedfv", "dropout_prob"),
}


def main() -> None:
    """
    Main Procedure
    """
    options: Options = read_options()
    logging.basicConfig(level=logging.DEBUG if options.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if options.command == "theory":
            report: TheoryReport = run_theory_suite(seed=options.seeds[0] if options.seeds else 0,
                                                    count=options.count, output_dir=options.output_dir)
            display_theory_report(report)
            if report.failed:
                sys.exit(EXIT_THEORY)
            return
        config: ExperimentConfig = read_config(options.config_file, options.overrides)
        if options.command == "ablate-order":
            display_ablation(run_order_ablation(config))
        else:
            display_summary(run_experiment(config), f"{config.experiment.algorithm} summary")
    except ConfigError as e:
        print(e.args[0])
        sys.exit(EXIT_CONFIG)
    except Error as e:
        print(e.args[0])
        sys.exit(EXIT_RUNTIME)


def read_options() -> Options:
    """
    コマンドラインオプションの設定を読む。

    Returns:
        オプション設定(Options)
    """
    args: MutableMapping[str, Any] = docopt(__doc__)
    schema = Schema({
        "--config": Or(None, And(Use(p.Path), lambda path: path.is_file(),
                                 error=f"The specified file {args['--config']} does not exist.\n")),
        "--seed": [And(Use(int), lambda seed: seed >= 0, error="--seed must be a non-negative integer.\n")],
        "--count": And(Use(int), lambda count: count >= 1, error="--count must be a positive integer.\n"),
        object: object,
    })

    try:
        args = schema.validate(args)
    except SchemaError as e:
        print(e.code)
        sys.exit(EXIT_CONFIG)

    command: str = next(name for name in ("run", "ablate-order", "theory") if args[name])
    overrides: Dict[str, Dict[str, str]] = {}
    if command == "ablate-order":
        overrides["fedfv"] = {"alpha": "0", "tau": "0"}
    for option, (section, key) in _OVERRIDES.items():
        if args.get(option) is not None:
            overrides.setdefault(section, {})[key] = args[option]
    if args["--sample-frac"] is not None:
        overrides["fedfv"]["sample_count"] = ""
    if args["--seed"]:
        overrides.setdefault("experiment", {})["seeds"] = ",".join(str(seed) for seed in args["--seed"])

    return Options(command=command, config_file=args["--config"], seeds=args["--seed"], count=args["--count"],
                   output_dir=p.Path(args["--out"]) if args.get("--out") else None, overrides=overrides,
                   verbose=bool(args["--verbose"]))


if __name__ == '__main__':
    main()
    sys.exit(0)
