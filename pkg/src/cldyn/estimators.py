"""scikit-learn style forecasters around the state-space models.

``fit`` learns a single task from scratch; ``partial_fit`` learns the next
task of a continual stream.  ``predict`` maps context windows to forecasts.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cddp import CddpModel
from .metrics import score_sequences
from .ssm import SsmConfig, SsmModel
from .training import TrainSchedule, train_task, vcl_transfer
from .validation import check_sequences

CHECKPOINT_FORMAT = "cldyn-checkpoint"
CHECKPOINT_VERSION = 1


class _DynamicsForecaster(BaseEstimator):
    """Shared fitting, prediction and persistence logic."""

    def _ssm_config(self, T, D):
        C = self.context_len or max(1, math.floor(T / 3))
        if C >= T:
            raise ValueError(f"context_len {C} must be smaller than the sequence length {T}")
        return SsmConfig(latent_dim=self.latent_dim, obs_dim=D, context_len=C,
                         encoder_hidden=self.encoder_hidden, decoder_hidden=self.decoder_hidden,
                         transition_hidden=self.transition_hidden,
                         transition_var=self.transition_var, obs_var=self.obs_var,
                         learn_obs_var=self.learn_obs_var, mc_samples=self.mc_samples,
                         probabilistic=self.probabilistic,
                         posterior_logvar_init=self.posterior_logvar_init,
                         transition_residual=self.transition_residual)

    def _schedule(self):
        return TrainSchedule(self.epochs, self.batch_size, self.learning_rate, self.mc_samples,
                             self.random_state or 0, self.reset_optimizer)

    def _init_model(self, T, D):
        self.rng_ = np.random.default_rng(self.random_state)
        self.model_ = self._build(self._ssm_config(T, D), self.rng_)
        self.seq_len_ = T
        self.n_features_in_ = D
        self.n_tasks_seen_ = 0
        self.optimizer_ = None
        self.loss_log_ = []

    def _train(self, Y):
        self.model_, log, self.optimizer_ = train_task(self.model_, Y, self._schedule(),
                                                        self.rng_, self.optimizer_)
        self.n_tasks_seen_ += 1
        self.loss_log_.append(log)
        return self

    def fit(self, X, y=None):
        """Learn one task from scratch."""
        Y = check_sequences(X)
        self._init_model(Y.shape[1], Y.shape[2])
        return self._train(Y)

    def partial_fit(self, X, y=None):
        """Learn the next task, carrying knowledge over from earlier ones."""
        Y = check_sequences(X)
        if not hasattr(self, "model_"):
            self._init_model(Y.shape[1], Y.shape[2])
        elif Y.shape[2] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {Y.shape[2]}")
        elif self.parameter_transfer and self.probabilistic:
            vcl_transfer(self.model_)
        return self._train(Y)

    @property
    def context_len_(self):
        check_is_fitted(self, "model_")
        return self.model_.config.context_len

    def predict_distribution(self, X, horizon=None, n_samples=None, rng=None):
        """Predictive mean/variance of the ``horizon`` steps after each context.

        ``X`` holds context windows ``(N, C', D)`` with ``C' >= context_len_``;
        only the last ``context_len_`` rows are used.
        """
        check_is_fitted(self, "model_")
        Y = check_sequences(X, min_len=self.context_len_)
        horizon = horizon or self.seq_len_ - self.context_len_
        n_samples = n_samples or self.eval_samples
        rng = np.random.default_rng(self.random_state if rng is None else rng)
        return self._predict(Y[:, -self.context_len_:], horizon, n_samples, rng)

    def predict(self, X, horizon=None):
        """Point forecasts of shape ``(N, horizon, D)``."""
        out = self.predict_distribution(X, horizon)
        return out.get("point", out["mean"])

    def score(self, X, y=None):
        """Negative mean NMSE of forecasts after the context of each full sequence."""
        check_is_fitted(self, "model_")
        Y = check_sequences(X, min_len=self.context_len_ + 1)
        scores = score_sequences(self.predict_distribution, Y, self.context_len_,
                                 self.eval_samples, self.random_state or 0)
        return -float(scores[:, 0].mean())

    # ------------------------------------------------------------ persistence

    def _extra_state(self):
        return {}

    def _load_extra_state(self, extra):
        pass

    def save_checkpoint(self, path):
        check_is_fitted(self, "model_")
        state = {k: {"shape": list(np.shape(v)), "values": np.ravel(v).tolist()}
                 for k, v in self.model_.state_dict().items()}
        payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                   "estimator": type(self).__name__, "params": _jsonable(self.get_params()),
                   "seq_len": self.seq_len_, "n_features": self.n_features_in_,
                   "n_tasks_seen": self.n_tasks_seen_, "weights": state,
                   "rng_state": self.rng_.bit_generator.state, **self._extra_state()}
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_checkpoint(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a checkpoint file")
        if payload["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload['version']}")
        klass = {c.__name__: c for c in (BSSMForecaster, CDDPForecaster)}[payload["estimator"]]
        if cls is not _DynamicsForecaster and not issubclass(klass, cls):
            raise ValueError(f"checkpoint holds a {klass.__name__}")
        params = payload["params"]
        for k in ("encoder_hidden", "decoder_hidden"):
            params[k] = tuple(params[k])
        est = klass(**params)
        est._init_model(payload["seq_len"], payload["n_features"])
        est.model_.load_state_dict({k: np.array(v["values"]).reshape(v["shape"])
                                    for k, v in payload["weights"].items()})
        est.rng_.bit_generator.state = payload["rng_state"]
        est.n_tasks_seen_ = payload["n_tasks_seen"]
        est._load_extra_state(payload)
        return est


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


class BSSMForecaster(_DynamicsForecaster):
    """Bayesian state-space forecaster; with ``parameter_transfer`` each new
    task starts from the previous weight posterior as its prior.

    Parameters
    ----------
    latent_dim : int
    context_len : int or None
        Context rows fed to the encoder; ``None`` means ``floor(T / 3)``.
    probabilistic : bool
        ``False`` collapses the weight posterior to a point (plain RNN kernel).
    parameter_transfer : bool
    epochs, batch_size, learning_rate : training schedule per task.
    eval_samples : int
        Monte-Carlo paths used by ``predict``.
    """

    def __init__(self, latent_dim=8, context_len=None, encoder_hidden=(), decoder_hidden=(),
                 transition_hidden=40, transition_var=0.1, obs_var=0.1, learn_obs_var=False,
                 probabilistic=True, parameter_transfer=True, posterior_logvar_init=-6.0,
                 transition_residual=True,
                 epochs=300, batch_size=9, learning_rate=0.005, mc_samples=8, eval_samples=30,
                 reset_optimizer=True, random_state=0):
        self.latent_dim = latent_dim
        self.context_len = context_len
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.transition_hidden = transition_hidden
        self.transition_var = transition_var
        self.obs_var = obs_var
        self.learn_obs_var = learn_obs_var
        self.probabilistic = probabilistic
        self.parameter_transfer = parameter_transfer
        self.posterior_logvar_init = posterior_logvar_init
        self.transition_residual = transition_residual
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.mc_samples = mc_samples
        self.eval_samples = eval_samples
        self.reset_optimizer = reset_optimizer
        self.random_state = random_state

    def _build(self, config, rng):
        return SsmModel(config, rng)

    def _predict(self, contexts, horizon, n_samples, rng):
        return self.model_.predict(contexts, horizon, n_samples, rng)


class CDDPForecaster(_DynamicsForecaster):
    """Forecaster whose transition kernel is driven by mode descriptors
    retrieved from an episodic memory with a stick-breaking prior.

    ``memory_mode`` is ``"learned"`` or one of the constant ablations
    ``"zeros"``, ``"ones"``, ``"twos"`` (frozen, untrainable slots).
    """

    def __init__(self, latent_dim=8, context_len=None, encoder_hidden=(), decoder_hidden=(),
                 transition_hidden=40, transition_var=0.1, obs_var=0.1, learn_obs_var=False,
                 probabilistic=True, parameter_transfer=False, posterior_logvar_init=-6.0,
                 transition_residual=True,
                 memory_size=20, alpha0=1.0, memory_mode="learned", similarity="dot",
                 gibbs="mixture", kl_x0_mode="weighted",
                 epochs=300, batch_size=9, learning_rate=0.005, mc_samples=8, eval_samples=30,
                 reset_optimizer=True, random_state=0):
        self.latent_dim = latent_dim
        self.context_len = context_len
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.transition_hidden = transition_hidden
        self.transition_var = transition_var
        self.obs_var = obs_var
        self.learn_obs_var = learn_obs_var
        self.probabilistic = probabilistic
        self.parameter_transfer = parameter_transfer
        self.posterior_logvar_init = posterior_logvar_init
        self.transition_residual = transition_residual
        self.memory_size = memory_size
        self.alpha0 = alpha0
        self.memory_mode = memory_mode
        self.similarity = similarity
        self.gibbs = gibbs
        self.kl_x0_mode = kl_x0_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.mc_samples = mc_samples
        self.eval_samples = eval_samples
        self.reset_optimizer = reset_optimizer
        self.random_state = random_state

    def _build(self, config, rng):
        return CddpModel(config, self.memory_size, self.alpha0, self.memory_mode, rng,
                         self.similarity, self.kl_x0_mode)

    def _predict(self, contexts, horizon, n_samples, rng):
        return self.model_.posterior_predictive(contexts, horizon, n_samples, rng, self.gibbs)

    @property
    def memory_(self):
        check_is_fitted(self, "model_")
        return self.model_.memory

    def freeze(self):
        self.memory_.freeze()
        return self

    def thaw(self):
        if self.memory_mode == "learned":
            self.memory_.thaw()
        return self

    def _extra_state(self):
        return {"memory": self.model_.memory.to_dict()}

    def _load_extra_state(self, extra):
        from .epimem import EpisodicMemory

        self.model_.memory = EpisodicMemory.from_dict(extra["memory"])


def load_checkpoint(path):
    return _DynamicsForecaster.load_checkpoint(path)


__all__ = ["BSSMForecaster", "CDDPForecaster", "load_checkpoint"]
