"""Continual-learning protocol: sequential tasks, evaluation on all seen tasks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import BSSMForecaster, CDDPForecaster
from .metrics import LearningCurve, score_sequences
from .training import LOG_FIELDS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantSpec:
    parameter_transfer: bool
    probabilistic_params: bool
    memory_mode: str | None

    def __post_init__(self):
        if self.memory_mode not in (None, "learned", "zeros", "ones", "twos"):
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")


# rows of the ablation grid, in report order
VARIANTS = {
    "rnn": VariantSpec(True, False, None),
    "vcl_bssm": VariantSpec(True, True, None),
    "cddp_zeros": VariantSpec(False, True, "zeros"),
    "cddp_ones": VariantSpec(False, True, "ones"),
    "cddp_twos": VariantSpec(False, True, "twos"),
    "cddp_learned_transfer": VariantSpec(True, True, "learned"),
    "cddp_target": VariantSpec(False, True, "learned"),
}


def variant_name(spec: VariantSpec):
    for name, s in VARIANTS.items():
        if s == spec:
            return name
    return "custom"


def make_variant(spec, base_params=None):
    """Forecaster for a variant name or ``VariantSpec``.

    ``base_params`` are forwarded to the estimator (unknown keys for the
    chosen class are dropped, so one parameter dict serves every row).
    """
    if isinstance(spec, str):
        if spec not in VARIANTS:
            raise ValueError(f"unknown variant {spec!r}; choose from {sorted(VARIANTS)}")
        spec = VARIANTS[spec]
    base_params = dict(base_params or {})
    if spec.memory_mode is None:
        klass = BSSMForecaster
    else:
        if not spec.probabilistic_params and spec.memory_mode != "learned":
            raise ValueError("constant-memory variants need probabilistic parameters")
        klass = CDDPForecaster
        base_params["memory_mode"] = spec.memory_mode
    base_params["probabilistic"] = spec.probabilistic_params
    base_params["parameter_transfer"] = spec.parameter_transfer
    valid = klass().get_params()
    return klass(**{k: v for k, v in base_params.items() if k in valid})


@dataclass
class ContinualRun:
    curve: LearningCurve
    loss_logs: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    per_task_scores: list = field(default_factory=list)


def _model_digest(est):
    import hashlib

    h = hashlib.sha256()
    for k, v in sorted(est.model_.state_dict().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    mem = getattr(est.model_, "memory", None)
    if mem is not None:
        h.update(mem.digest().encode())
    return h.hexdigest()


def evaluate_seen(est, suite, upto, n_samples=30, seed=0, pooling="sequences"):
    """NMSE/NLL over the test splits of tasks ``0 .. upto - 1``.

    ``pooling="sequences"`` weights every sequence equally, ``"tasks"``
    averages per-task means.  Returns ``(nmse, nll, per_task)`` where
    ``per_task`` lists ``(nmse, nll)`` for each seen task.
    """
    per_task = []
    all_scores = []
    for j in range(upto):
        s = score_sequences(est.predict_distribution, suite[j].test, est.context_len_,
                            n_samples, seed + j)
        per_task.append((float(s[:, 0].mean()), float(s[:, 1].mean())))
        all_scores.append(s)
    if pooling == "sequences":
        pooled = np.concatenate(all_scores)
        return float(pooled[:, 0].mean()), float(pooled[:, 1].mean()), per_task
    if pooling == "tasks":
        arr = np.array(per_task)
        return float(arr[:, 0].mean()), float(arr[:, 1].mean()), per_task
    raise ValueError(f"unknown pooling {pooling!r}")


def run_continual(model, suite, base_params=None, eval_samples=30, eval_seed=0,
                  pooling="sequences", checkpoint_dir=None, seed=0):
    """Train on each task of ``suite`` in order and evaluate on all seen tasks.

    ``model`` is a forecaster, a variant name or a ``VariantSpec``.
    """
    if not suite:
        raise ValueError("empty task suite")
    name = model if isinstance(model, str) else None
    est = model if hasattr(model, "partial_fit") else make_variant(model, base_params)
    if name is None:
        name = variant_name(model) if isinstance(model, VariantSpec) else type(est).__name__
    curve = LearningCurve(seed=seed, variant=name)
    run = ContinualRun(curve)
    for i, task in enumerate(suite):
        est.partial_fit(task)
        run.loss_logs.append(est.loss_log_[-1])
        if hasattr(est, "freeze"):
            est.freeze()
        before = _model_digest(est)
        nmse_v, nll_v, per_task = evaluate_seen(est, suite, i + 1, eval_samples, eval_seed,
                                                pooling)
        if _model_digest(est) != before:
            raise RuntimeError("evaluation mutated the model")
        curve.append(nmse_v, nll_v)
        run.per_task_scores.append(per_task)
        logger.info("%s seed %d: after task %d nmse %.4f nll %.4f", name, seed, i + 1,
                    nmse_v, nll_v)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"task{i + 1}.json"
            est.save_checkpoint(path)
            run.checkpoints.append(str(path))
        if hasattr(est, "thaw"):
            est.thaw()
    return run


def write_loss_log(log, path):
    import csv

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in log:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_FIELDS})
