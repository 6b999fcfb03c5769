"""Repetitions of the continual protocol, ablation grids and report tables."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig
from .continual import VARIANTS, evaluate_seen, run_continual, write_loss_log
from .datagen import load_suite
from .estimators import load_checkpoint
from .metrics import LearningCurve
from .results import ResultsRecord, build_id

logger = logging.getLogger(__name__)

RECORD_NAME = "results.json"


def rep_seed(cfg: ExperimentConfig, rep):
    return cfg.seed + rep


def run_repetition(cfg: ExperimentConfig, rep, out_dir=None, checkpoints=True):
    """One seeded continual run; returns the curve as a dict (picklable).

    The seed drives the task partition, weight initialisation and
    evaluation noise.  Loss logs and checkpoints go to ``out_dir``.
    """
    seed = rep_seed(cfg, rep)
    suite = load_suite(cfg.dataset, seed, cfg.data_path)
    params = {**cfg.estimator_params(), "random_state": seed}
    run_dir = None if out_dir is None else Path(out_dir) / f"rep{rep:03d}"
    run = run_continual(cfg.variant, suite, params, eval_samples=cfg.eval_samples,
                        eval_seed=seed, pooling=cfg.pooling,
                        checkpoint_dir=run_dir if checkpoints else None, seed=seed)
    if run_dir is not None:
        for i, log in enumerate(run.loss_logs):
            write_loss_log(log, run_dir / f"loss_task{i + 1}.csv")
    return run.curve.to_dict()


def _run_repetition_star(args):
    return run_repetition(*args)


def run_experiment(cfg: ExperimentConfig, out_dir=None, checkpoints=True):
    """All repetitions of one variant; writes and returns a ``ResultsRecord``."""
    out_dir = Path(out_dir or cfg.out)
    t0 = time.perf_counter()
    jobs = [(cfg, rep, out_dir, checkpoints) for rep in range(cfg.reps)]
    if cfg.parallel > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            curves = list(pool.map(_run_repetition_star, jobs))
    else:
        curves = [run_repetition(*job) for job in jobs]
    record = ResultsRecord(cfg.to_dict(), curves, wall_clock=time.perf_counter() - t0,
                           build=build_id())
    record.save(out_dir / RECORD_NAME)
    record.write_curves_csv(out_dir / "curves.csv")
    return record


def run_ablation(cfg: ExperimentConfig, out_dir=None, variants=None, checkpoints=False):
    """Every variant of the ablation grid on one data set; one record per row."""
    out_dir = Path(out_dir or cfg.out)
    records = {}
    for name in variants or VARIANTS:
        records[name] = run_experiment(replace(cfg, variant=name), out_dir / name, checkpoints)
        logger.info("ablation row %s done", name)
    return records


def rescore_checkpoints(record_path, n_samples=None):
    """Re-evaluate the stored checkpoints next to a results record.

    Returns fresh learning curves built from ``rep*/task*.json``.
    """
    record_path = Path(record_path)
    record = ResultsRecord.load(record_path)
    cfg = ExperimentConfig.from_dict(record.config)
    curves = []
    for rep in range(cfg.reps):
        seed = rep_seed(cfg, rep)
        run_dir = record_path.parent / f"rep{rep:03d}"
        ckpts = sorted(run_dir.glob("task*.json"), key=lambda p: int(p.stem[4:]))
        if not ckpts:
            raise FileNotFoundError(f"no checkpoints in {run_dir}")
        suite = load_suite(cfg.dataset, seed, cfg.data_path)
        curve = LearningCurve(seed=seed, variant=cfg.variant)
        for i, path in enumerate(ckpts):
            est = load_checkpoint(path)
            if hasattr(est, "freeze"):
                est.freeze()
            nmse_v, nll_v, _ = evaluate_seen(est, suite, i + 1, n_samples or cfg.eval_samples,
                                             seed, cfg.pooling)
            curve.append(nmse_v, nll_v)
        curves.append(curve)
    return record, curves


def curves_match(a, b, tol=1e-9):
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if x.tasks_seen != y.tasks_seen:
            return False
        for u, v in zip(x.nmse + x.nll, y.nmse + y.nll):
            if abs(u - v) > tol * max(1.0, abs(u)):
                return False
    return True


# ------------------------------------------------------------------ report

def find_records(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob(RECORD_NAME)))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(p)
    return out


def _fmt(mean, stderr):
    return f"{mean:.2f} ± {stderr:.2f}"


def report_rows(records):
    """One row per record: data set, variant, reps, AUC mean/stderr."""
    rows = []
    for rec in records:
        agg = rec.aggregate
        rows.append({"dataset": rec.config["dataset"], "variant": rec.config["variant"],
                     "reps": len(rec.curves),
                     "auc_nmse_mean": agg["auc_nmse"]["mean"],
                     "auc_nmse_stderr": agg["auc_nmse"]["stderr"],
                     "auc_nll_mean": agg["auc_nll"]["mean"],
                     "auc_nll_stderr": agg["auc_nll"]["stderr"]})
    order = {name: i for i, name in enumerate(VARIANTS)}
    rows.sort(key=lambda r: (r["dataset"], order.get(r["variant"], len(order))))
    return rows


def render_table(rows):
    header = f"{'dataset':<18} {'variant':<22} {'reps':>4}  {'AUC-NMSE':>13}  {'AUC-NLL':>13}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['dataset']:<18} {r['variant']:<22} {r['reps']:>4}  "
                     f"{_fmt(r['auc_nmse_mean'], r['auc_nmse_stderr']):>13}  "
                     f"{_fmt(r['auc_nll_mean'], r['auc_nll_stderr']):>13}")
    return "\n".join(lines) + "\n"


def write_report(records, out_dir):
    """Text table, CSV table and plot-data CSV, regenerated from the records alone."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report_rows(records)
    (out_dir / "table.txt").write_text(render_table(rows))
    with open(out_dir / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                    for r in rows)
    with open(out_dir / "plot_data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "variant", "tasks_seen", "metric", "mean", "stderr"])
        for rec in records:
            agg = rec.aggregate
            for metric in ("nmse", "nll"):
                for t, m, s in zip(agg["tasks_seen"], agg[metric]["mean"], agg[metric]["stderr"]):
                    w.writerow([rec.config["dataset"], rec.config["variant"], t, metric,
                                repr(m), repr(s)])
    return rows
