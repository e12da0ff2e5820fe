"""Command-line entry point: ``apla <subcommand> --config run.json [--seed N] [--out DIR] [--jobs N]``.

Exit status is 0 on success, 1 for configuration errors and 2 for data or
file-format errors.
"""

import argparse
import json
import os
import sys

from .data import gen_teacher_task, save_dataset
from .errors import ConfigError, DataError, DimensionError, GenerationError
from .experiments import (DIRECTIONS, ExperimentReport, SweepTable, ablate_components, ablate_selection,
                          load_config, sweep_blocks, sweep_rank, train)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


def _csv_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _int_list(text):
    try:
        return [int(item) for item in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; argparse would otherwise exit 2, the data-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="apla", description="Column-subset attention-projection tuning for small ViTs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True, help="run configuration (JSON)")
            p.add_argument("--seed", type=int, help="override the config seed")
            p.add_argument("--out", help="output directory (overrides out_dir)")
            p.add_argument("--jobs", type=int, default=1, help="rows trained in parallel")
        return p

    add("train", "train one configuration")
    add("ablate-components", "one run per component plus full fine-tuning").add_argument(
        "--components", type=_csv_list, help="comma-separated list (default: config sweep.components)")
    add("ablate-selection", "APLA under each column-selection strategy").add_argument(
        "--strategies", type=_csv_list, help="comma-separated list (default: config sweep.strategies)")
    add("sweep-rank", "APLA at several r").add_argument(
        "--r", type=_int_list, dest="r_values", help="comma-separated r values (default: config sweep.r)")
    add("sweep-blocks", "APLA on a growing number of blocks").add_argument(
        "--direction", choices=DIRECTIONS, help="default: config sweep.direction or top_to_bottom")
    add("gen-data", "write the config's synthetic teacher dataset to --out/dataset.bin")
    report = add("report", "render report.json or table.json files as markdown", config=False)
    report.add_argument("paths", nargs="+", help="report.json / table.json files or run directories")
    return parser


def _config(args):
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
    return config.replace(**changes) if changes else config


def _sweep_value(cli_value, config, key, default=None):
    value = cli_value if cli_value is not None else config.sweep.get(key, default)
    if value is None:
        raise ConfigError(f"no {key} given: pass the flag or set sweep.{key} in the config")
    return value


def _render(path):
    if os.path.isdir(path):
        for name in ("table.json", "report.json"):
            if os.path.exists(os.path.join(path, name)):
                path = os.path.join(path, name)
                break
        else:
            raise DataError(f"{path}: no report.json or table.json")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if "rows" in raw:
        return SweepTable(raw["title"], raw["columns"], raw["rows"], raw.get("notes", [])).to_markdown()
    if "body" in raw:
        return ExperimentReport(raw["body"], raw.get("timing", {}), raw.get("labels", {})).markdown()
    raise DataError(f"{path}: not a report or sweep table")


def run(args, out=None):
    out = out or sys.stdout
    if args.command == "report":
        for path in args.paths:
            out.write(_render(path))
        return
    config = _config(args)
    if args.command == "train":
        report = train(config)
        out.write(report.markdown())
        return
    if args.command == "gen-data":
        if "synth" not in config.data:
            raise ConfigError("gen-data needs a data.synth section")
        target = config.out_dir or "."
        s = config.data["synth"]
        seed = config.seed if s["seed"] is None else s["seed"]
        _, dataset = gen_teacher_task(config.model, seed, s["perturb"], (s["n_train"], s["n_val"], s["n_test"]),
                                      scale=s["scale"], tie_gap=s["tie_gap"])
        os.makedirs(target, exist_ok=True)
        path = os.path.join(target, "dataset.bin")
        save_dataset(dataset, path)
        out.write(f"wrote {len(dataset.labels)} samples to {path}\n")
        return
    if args.command == "ablate-components":
        table = ablate_components(config, _sweep_value(args.components, config, "components"), args.jobs)
    elif args.command == "ablate-selection":
        table = ablate_selection(config, _sweep_value(args.strategies, config, "strategies"), args.jobs)
    elif args.command == "sweep-rank":
        table = sweep_rank(config, _sweep_value(args.r_values, config, "r"), args.jobs)
    else:
        table = sweep_blocks(config, _sweep_value(args.direction, config, "direction", "top_to_bottom"), args.jobs)
    out.write(table.to_markdown())


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
