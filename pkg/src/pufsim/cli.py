"""Command-line entry point: ``pufsim {run,costs,gen-data,validate} CONFIG``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config
from .costs import AXES, DISPLAY_NAMES, METHODS, CostReport, cost_report, format_ratio
from .data import save_dataset
from .experiment import COSTS_HEADER, build_dataset, costs_rows, derived_cost_inputs, emit_reports, make_arch, run_experiment
from .nn import ModelArch


def sci(x: float) -> str:
    """``1.62e11`` style, three significant figures."""
    if x == 0:
        return "0"
    mantissa, exp = f"{x:.2e}".split("e")
    return f"{mantissa}e{int(exp)}"


def _static_arch(cfg: ExperimentConfig) -> tuple[ModelArch, float]:
    """Model shape and mean client size without generating any data."""
    if cfg.dataset.path is not None:
        fd = build_dataset(cfg, cfg.seeds[0])
        return make_arch(cfg, fd), float(sum(fd.sizes)) / fd.num_clients
    d = cfg.dataset
    arch = ModelArch(cfg.arch.kind, d.feature_dim, d.num_classes, cfg.arch.hidden_dim)
    n_train = int(0.8 * d.samples_per_class + 0.5) * d.num_classes
    return arch, n_train / cfg.clients


def config_cost_report(cfg: ExperimentConfig) -> CostReport:
    arch, mean_size = _static_arch(cfg)
    return cost_report(derived_cost_inputs(cfg, arch, mean_size), METHODS)


def format_cost_table(report: CostReport) -> str:
    head = f"{'method':<12} {'comm_bytes':>18} {'comp_flops':>18} {'storage_bytes':>20}"
    lines = [head, "-" * len(head)]
    for name, m in report.methods.items():
        total = m.total
        cells = []
        for a in AXES:
            value = total.axis(a)
            ratio = format_ratio(m.ratios[a], a in total.negligible)
            shown = "~0" if a in total.negligible else sci(value)
            cells.append(f"{shown} ({ratio})")
        lines.append(f"{DISPLAY_NAMES[name]:<12} {cells[0]:>18} {cells[1]:>18} {cells[2]:>20}")
    return "\n".join(lines)


def _cmd_validate(args) -> int:
    cfg = parse_config(Path(args.config))
    print(f"ok: {args.config} ({len(cfg.seeds)} seed(s), strategy {cfg.unlearn.strategy})")
    return 0


def _cmd_costs(args) -> int:
    cfg = parse_config(Path(args.config))
    report = config_cost_report(cfg)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False))
    elif args.format == "csv":
        writer = csv.DictWriter(sys.stdout, fieldnames=COSTS_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(costs_rows(report.to_dict()))
    else:
        print(format_cost_table(report))
    return 0


def _cmd_gen_data(args) -> int:
    cfg = parse_config(Path(args.config))
    seed = cfg.seeds[0] if args.seed is None else args.seed
    fd = build_dataset(cfg, seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "dataset.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(fd, out)
    print(f"wrote {out} ({fd.num_clients} clients, sizes {fd.sizes}, {len(fd.test)} test samples)")
    return 0


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config))
    report = run_experiment(cfg, n_jobs=args.jobs)
    out = args.out or cfg.output_dir
    emit_reports(report, out)
    failed = report.summary["seeds_failed"]
    print(f"wrote {out}/summary.json, rounds.csv, costs.csv ({report.summary['seeds_ok']} ok, {failed} failed)")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pufsim", description="Federated unlearning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train, unlearn, recover and write reports")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--jobs", type=int, default=1, help="threads for per-client training")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("costs", help="print the cost table without training")
    p.add_argument("config")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=_cmd_costs)

    p = sub.add_parser("gen-data", help="generate and partition the dataset, save it")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
