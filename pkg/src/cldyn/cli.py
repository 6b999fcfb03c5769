"""Command line entry point: ``cldyn {gen-data,train,eval,ablate,report}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 checkpoint re-scoring disagreed with the stored record (``eval --check``).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_from_mapping, load_config
from .continual import VARIANTS
from .datagen import PRESETS, SYSTEMS, load_suite, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

logger = logging.getLogger("cldyn")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; report those as config errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--seed", type=int, help="base seed; repetition k uses seed + k")
    p.add_argument("--reps", type=int, help="number of repetitions")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--parallel", type=int, help="worker processes for repetitions")
    p.add_argument("--dataset", choices=SYSTEMS)
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--epochs", type=int, help="override epochs per task")


def build_parser():
    parser = _Parser(prog="cldyn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-data", help="write a data set as CSV files plus a manifest")
    _common(p)
    p.add_argument("--data-path", help="raw file for the Libras / character data sets")
    p = sub.add_parser("train", help="run the continual protocol and write a results record")
    _common(p)
    p = sub.add_parser("eval", help="re-score stored checkpoints")
    p.add_argument("record", type=Path, help="results.json or the directory holding it")
    p.add_argument("--check", action="store_true",
                   help="exit 3 when re-scored curves differ from the record")
    p.add_argument("--out", type=Path, help="write the re-scored record here")
    p = sub.add_parser("ablate", help="run every variant of the ablation grid")
    _common(p)
    p = sub.add_parser("report", help="tables and plot data from results records")
    p.add_argument("inputs", nargs="+", type=Path, help="records or directories")
    p.add_argument("--out", type=Path, default=Path("report"))
    return parser


def _experiment_config(args, need_variant=True) -> ExperimentConfig:
    overrides = {"dataset.name": args.dataset, "model.variant": args.variant,
                 "run.seed": args.seed, "run.reps": args.reps, "run.parallel": args.parallel,
                 "run.out": str(args.out) if args.out else None, "train.epochs": args.epochs}
    if not need_variant and args.variant is None:
        overrides["model.variant"] = "cddp_target"
    if args.config is not None:
        return load_config(args.config, overrides)
    return config_from_mapping({}, overrides)


def cmd_gen_data(args):
    cfg = _experiment_config(args, need_variant=False)
    seed = cfg.seed
    tasks = load_suite(cfg.dataset, seed, getattr(args, "data_path", None) or cfg.data_path)
    out = Path(args.out or Path(cfg.out) / "data")
    preset = PRESETS[cfg.dataset]
    T = tasks[0].train[0].values.shape[0]
    write_dataset(tasks, out, {"system": cfg.dataset, "seed": seed, "dt": preset.dt, "T": T,
                               "context_len": cfg.context_len, "n_tasks": len(tasks)})
    print(f"wrote {len(tasks)} tasks to {out}")
    return EXIT_OK


def cmd_train(args):
    from .experiment import run_experiment

    cfg = _experiment_config(args)
    record = run_experiment(cfg, cfg.out)
    agg = record.aggregate
    print(f"{cfg.dataset} {cfg.variant}: AUC-NMSE {agg['auc_nmse']['mean']:.4f} "
          f"± {agg['auc_nmse']['stderr']:.4f}, AUC-NLL {agg['auc_nll']['mean']:.4f} "
          f"± {agg['auc_nll']['stderr']:.4f} over {cfg.reps} reps -> {cfg.out}")
    return EXIT_OK


def cmd_eval(args):
    from .experiment import RECORD_NAME, curves_match, rescore_checkpoints
    from .results import ResultsRecord, build_id

    path = args.record / RECORD_NAME if args.record.is_dir() else args.record
    record, curves = rescore_checkpoints(path)
    fresh = ResultsRecord(record.config, curves, build=build_id())
    ok = curves_match(record.curves, curves)
    for c in curves:
        print(f"seed {c.seed}: nmse {[round(v, 4) for v in c.nmse]} "
              f"nll {[round(v, 4) for v in c.nll]}")
    print("re-scored curves match the record" if ok else "re-scored curves DIFFER from the record")
    if args.out:
        fresh.save(args.out)
    if args.check and not ok:
        return EXIT_CHECK
    return EXIT_OK


def cmd_ablate(args):
    from .experiment import render_table, run_ablation, write_report

    cfg = _experiment_config(args, need_variant=False)
    records = run_ablation(cfg, cfg.out)
    rows = write_report(list(records.values()), cfg.out)
    print(render_table(rows), end="")
    return EXIT_OK


def cmd_report(args):
    from .experiment import find_records, render_table, write_report
    from .results import ResultsRecord

    paths = find_records(args.inputs)
    if not paths:
        raise ConfigError("no results records found")
    rows = write_report([ResultsRecord.load(p) for p in paths], args.out)
    print(render_table(rows), end="")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
