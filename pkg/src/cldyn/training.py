"""Per-task minibatch training and posterior-to-prior transfer."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "recon", "kl_x0", "kl_theta", "kl_pi", "total")


@dataclass
class TrainSchedule:
    epochs_per_task: int = 300
    batch_size: int = 9
    learning_rate: float = 0.005
    mc_samples: int = 1
    rng_seed: int = 0
    reset_optimizer: bool = True

    def __post_init__(self):
        if self.epochs_per_task < 0:
            raise ValueError("epochs_per_task must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.mc_samples < 1:
            raise ValueError("batch_size, learning_rate and mc_samples must be positive")


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a gradient turns non-finite; the model is rolled back."""


def _ssm_of(model):
    return getattr(model, "ssm", model)


def vcl_transfer(model):
    """Copy the weight posterior into the prior (deep copy, no aliasing)."""
    ssm = _ssm_of(model)
    ssm.prior_mean = ssm.q_mean.data.copy()
    ssm.prior_logvar = ssm.q_logvar.data.copy()
    return model


def _as_array(data):
    if hasattr(data, "train"):
        data = data.train
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=np.float64)
    return np.stack([np.asarray(getattr(s, "values", s), dtype=np.float64) for s in data])


def train_task(model, task, schedule: TrainSchedule, rng, optimizer=None, writes=None):
    """Minibatch Adam ascent on the ELBO over one task's training sequences.

    Returns ``(model, loss_log, optimizer)``.  ``loss_log`` has one entry per
    epoch holding batch-averaged ELBO terms.  Memory writes happen after each
    gradient step when the model has a writable memory (``writes`` overrides).
    On a non-finite loss the parameters are restored to the last completed
    epoch and ``TrainingDiverged`` is raised.
    """
    Y = _as_array(task)
    N = Y.shape[0]
    params = model.parameters()
    if optimizer is None or schedule.reset_optimizer:
        optimizer = tc.AdamState(lr=schedule.learning_rate)
    memory = getattr(model, "memory", None)
    if writes is None:
        writes = memory is not None and memory.write_enabled
    log = []
    for epoch in range(schedule.epochs_per_task):
        snapshot = [p.data.copy() for p in params]
        order = rng.permutation(N)
        sums = dict.fromkeys(LOG_FIELDS[1:], 0.0)
        n_batches = 0
        try:
            for start in range(0, N, schedule.batch_size):
                batch = Y[order[start:start + schedule.batch_size]]
                loss, br = model.loss(batch, rng, n_data=N)
                grads = tc.grad(loss, params)
                tc.adam_step(params, grads, optimizer)
                if writes:
                    model.observe_and_write(batch)
                for k, v in br.as_floats().items():
                    sums[k] += v
                n_batches += 1
        except (FloatingPointError, tc.NonFiniteGradient) as exc:
            for p, saved in zip(params, snapshot):
                p.data = saved
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        log.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
    return model, log, optimizer
