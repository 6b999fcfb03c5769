"""Forecast scores, learning curves and their area-under-curve summary."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

VAR_TINY = 1e-12


def nmse(pred_mean, truth, normalizer=None):
    """Mean squared error divided by the variance of ``truth``.

    The variance is pooled over all steps and dims of the target window.  When
    it is below 1e-12 the plain MSE is returned and a warning logged.
    ``normalizer`` overrides the variance (e.g. a data-set level value).
    """
    pred = np.asarray(pred_mean, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        raise ValueError("empty target window")
    mse = float(np.mean((pred - truth) ** 2))
    var = float(np.var(truth)) if normalizer is None else float(normalizer)
    if var < VAR_TINY:
        logger.warning("nmse: target variance %.3g below 1e-12; returning plain MSE", var)
        return mse
    return mse / var


def nll(pred_mean, pred_var, truth):
    """Gaussian negative log-likelihood averaged per step and dimension."""
    mean = np.asarray(pred_mean, dtype=np.float64)
    var = np.asarray(pred_var, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if not (mean.shape == var.shape == truth.shape):
        raise ValueError("pred_mean, pred_var and truth must share a shape")
    if np.any(var <= 0):
        raise ValueError("predictive variance must be positive")
    ll = -0.5 * (np.log(2.0 * np.pi * var) + (truth - mean) ** 2 / var)
    return float(-ll.mean())


@dataclass
class LearningCurve:
    tasks_seen: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    seed: int = 0
    variant: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (len(self.tasks_seen) == len(self.nmse) == len(self.nll)):
            raise ValueError("curve fields must have equal lengths")
        if list(self.tasks_seen) != list(range(1, len(self.tasks_seen) + 1)):
            raise ValueError("tasks_seen must be 1, 2, ..., n")

    def append(self, nmse_value, nll_value):
        self.tasks_seen.append(len(self.tasks_seen) + 1)
        self.nmse.append(float(nmse_value))
        self.nll.append(float(nll_value))

    def to_dict(self):
        return {"tasks_seen": list(self.tasks_seen), "nmse": list(self.nmse),
                "nll": list(self.nll), "seed": self.seed, "variant": self.variant}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["tasks_seen"]), list(d["nmse"]), list(d["nll"]), d.get("seed", 0),
                   d.get("variant", ""))


def auc(curve):
    """Arithmetic mean of NMSE and NLL over the points of a learning curve."""
    if isinstance(curve, LearningCurve):
        if not curve.tasks_seen:
            raise ValueError("empty learning curve")
        return float(np.mean(curve.nmse)), float(np.mean(curve.nll))
    values = np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty learning curve")
    return float(values.mean())


def mean_stderr(values):
    """Mean and standard error (sample std with ddof=1 over sqrt(n))."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def score_sequences(predict, sequences, context_len, n_samples=30, seed=0):
    """Per-sequence (nmse, nll) pairs for a prediction function.

    ``predict(contexts, horizon, n_samples, rng)`` must return a dict with
    ``point`` (or ``mean``) and ``var`` arrays of shape ``(N, horizon, D)``.
    """
    values = np.stack([np.asarray(getattr(s, "values", s), dtype=np.float64) for s in sequences])
    T = values.shape[1]
    if T <= context_len:
        raise ValueError(f"sequence length {T} must exceed the context length {context_len}")
    out = predict(values[:, :context_len], T - context_len, n_samples,
                  np.random.default_rng(seed))
    point = out.get("point", out["mean"])
    truth = values[:, context_len:]
    scores = np.array([[nmse(point[i], truth[i]), nll(out["mean"][i], out["var"][i], truth[i])]
                       for i in range(len(values))])
    return scores


def evaluate(model, test_sequences, context_len, n_samples=30, seed=0):
    """Unweighted means of per-sequence NMSE and NLL over ``test_sequences``.

    ``model`` is anything with ``predict_distribution(contexts, horizon,
    n_samples, rng)`` (the forecasters) or a bare prediction function.
    """
    fn = getattr(model, "predict_distribution", model)
    scores = score_sequences(fn, test_sequences, context_len, n_samples, seed)
    return float(scores[:, 0].mean()), float(scores[:, 1].mean())
