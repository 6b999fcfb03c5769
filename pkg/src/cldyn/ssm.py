"""Bayesian state-space model with a mean-field Gaussian posterior over the
transition-kernel weights.

Shapes used throughout: ``S`` Monte-Carlo samples, ``N`` sequences (rows),
``T`` time steps, ``D`` observation dims, ``K`` latent dims.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import GaussianDiag, Tensor

VAR_FLOOR = 1e-6


@dataclass
class SsmConfig:
    """Architecture and likelihood settings of one state-space model.

    ``context_len`` is the number of leading observations fed to the encoder.
    ``control_dim`` is 0 for the plain model and ``latent_dim`` when the
    transition kernel is conditioned on a mode descriptor.
    """

    latent_dim: int = 8
    obs_dim: int = 1
    context_len: int = 5
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = ()
    transition_hidden: int = 40
    transition_var: float = 0.1
    obs_var: float = 0.1
    learn_obs_var: bool = False
    mc_samples: int = 1
    control_dim: int = 0
    probabilistic: bool = True
    posterior_logvar_init: float = -6.0
    transition_residual: bool = True

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        if self.transition_var <= 0 or self.obs_var <= 0:
            raise ValueError("transition_var and obs_var must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.control_dim not in (0, self.latent_dim):
            raise ValueError("control_dim must be 0 or latent_dim")


@dataclass
class ElboBreakdown:
    """Per-sequence ELBO terms; ``total = recon - kl_x0 - kl_theta - kl_pi``."""

    recon: Tensor
    kl_x0: Tensor
    kl_theta: Tensor
    kl_pi: Tensor
    total: Tensor

    def as_floats(self):
        """Batch-averaged values of every term."""
        return {k: float(np.mean(getattr(self, k).data))
                for k in ("recon", "kl_x0", "kl_theta", "kl_pi", "total")}

    def check_finite(self):
        bad = [k for k, v in self.as_floats().items() if not math.isfinite(v)]
        if bad:
            raise FloatingPointError(f"non-finite ELBO terms: {bad} ({self.as_floats()})")


class Mlp:
    """Dense layers with ``tanh`` + layer norm after every hidden layer."""

    def __init__(self, in_dim, hidden, out_dim, rng, name="mlp"):
        self.sizes = [in_dim, *hidden, out_dim]
        self.name = name
        self.weights = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = tc.parameter((a, b), rng, scale=1.0 / math.sqrt(a), name=f"{name}.W{i}")
            bias = tc.parameter((b,), name=f"{name}.b{i}")
            self.weights.append((W, bias))

    def __call__(self, x):
        n = len(self.weights)
        for i, (W, b) in enumerate(self.weights):
            x = tc.dense(x, W, b)
            if i < n - 1:
                x = tc.layer_norm(tc.tanh(x))
        return x

    def parameters(self):
        return [p for pair in self.weights for p in pair]


class SsmModel:
    """Encoder, probabilistic transition kernel and decoder.

    The transition kernel is a one-hidden-layer perceptron whose flattened
    weights ``theta`` carry a diagonal Gaussian posterior ``q`` and prior ``p``.
    Encoder, initial-state heads and decoder are point estimates.
    """

    def __init__(self, config: SsmConfig, rng=None):
        rng = np.random.default_rng(rng)
        self.config = cfg = config
        K, D, C = cfg.latent_dim, cfg.obs_dim, cfg.context_len
        self.encoder = Mlp(C * D, cfg.encoder_hidden, K, rng, "encoder")
        head_in = K + cfg.control_dim
        self.head_mean = Mlp(head_in, (), K, rng, "head_mean")
        self.head_var = Mlp(head_in, (), K, rng, "head_var")
        self.decoder = Mlp(K, cfg.decoder_hidden, D, rng, "decoder")

        H = cfg.transition_hidden
        self.theta_shapes = [("W1x", (K, H)), ("W1c", (cfg.control_dim, H)), ("b1", (H,)),
                             ("W2", (H, K)), ("b2", (K,))]
        chunks = []
        for nm, shape in self.theta_shapes:
            if nm == "W1x" or nm == "W1c":
                chunks.append(rng.standard_normal(shape).ravel() / math.sqrt(head_in))
            elif nm == "W2":
                chunks.append(rng.standard_normal(shape).ravel() / math.sqrt(H))
            else:
                chunks.append(np.zeros(int(np.prod(shape))))
        theta0 = np.concatenate(chunks)
        self.n_theta = theta0.size
        self.q_mean = Tensor(theta0, requires_grad=True, name="q_mean")
        self.q_logvar = Tensor(np.full(self.n_theta, cfg.posterior_logvar_init),
                               requires_grad=cfg.probabilistic, name="q_logvar")
        self.prior_mean = np.zeros(self.n_theta)
        self.prior_logvar = np.zeros(self.n_theta)
        self.obs_logvar = Tensor(np.full(D, math.log(cfg.obs_var)),
                                 requires_grad=cfg.learn_obs_var, name="obs_logvar")

    # ------------------------------------------------------------ parameters

    def parameters(self):
        params = (self.encoder.parameters() + self.head_mean.parameters()
                  + self.head_var.parameters() + self.decoder.parameters() + [self.q_mean])
        if self.config.probabilistic:
            params.append(self.q_logvar)
        if self.config.learn_obs_var:
            params.append(self.obs_logvar)
        return params

    def state_dict(self):
        out = {}
        for mod in (self.encoder, self.head_mean, self.head_var, self.decoder):
            for p in mod.parameters():
                out[p.name] = p.data.copy()
        out["q_mean"] = self.q_mean.data.copy()
        out["q_logvar"] = self.q_logvar.data.copy()
        out["prior_mean"] = self.prior_mean.copy()
        out["prior_logvar"] = self.prior_logvar.copy()
        out["obs_logvar"] = self.obs_logvar.data.copy()
        return out

    def load_state_dict(self, state):
        for mod in (self.encoder, self.head_mean, self.head_var, self.decoder):
            for p in mod.parameters():
                p.data = np.array(state[p.name], dtype=np.float64).reshape(p.shape)
        self.q_mean.data = np.array(state["q_mean"], dtype=np.float64)
        self.q_logvar.data = np.array(state["q_logvar"], dtype=np.float64)
        self.prior_mean = np.array(state["prior_mean"], dtype=np.float64)
        self.prior_logvar = np.array(state["prior_logvar"], dtype=np.float64)
        self.obs_logvar.data = np.array(state["obs_logvar"], dtype=np.float64)

    # ------------------------------------------------------------ distributions

    def theta_posterior(self):
        return GaussianDiag(self.q_mean, tc.exp(self.q_logvar))

    def theta_prior(self):
        return GaussianDiag(self.prior_mean, np.exp(self.prior_logvar))

    def kl_theta(self):
        if not self.config.probabilistic:
            return Tensor(0.0)
        return tc.kl_gaussian_diag(self.theta_posterior(), self.theta_prior())

    def sample_theta(self, rng, n_samples=1):
        """Draw ``(n_samples, P)`` transition weights; the mean alone when deterministic."""
        if not self.config.probabilistic:
            return tc.reshape(self.q_mean, (1, self.n_theta))
        return tc.sample_gaussian(self.theta_posterior(), rng, (n_samples,))

    def obs_var(self):
        return tc.exp(self.obs_logvar)

    # ------------------------------------------------------------ network pieces

    def _check_context(self, y_context):
        y = tc.as_tensor(y_context)
        C, D = self.config.context_len, self.config.obs_dim
        if y.shape[-2:] != (C, D):
            raise ValueError(f"context must end in shape ({C}, {D}), got {y.shape}")
        return y

    def encode_context(self, y_context):
        """Descriptor of a ``(C, D)`` or ``(N, C, D)`` context window."""
        y = self._check_context(y_context)
        flat = tc.reshape(y, y.shape[:-2] + (y.shape[-2] * y.shape[-1],))
        return self.encoder(flat)

    def init_from_descriptor(self, descriptor, control=None):
        """Initial-state posterior from a descriptor and an optional control vector."""
        inp = descriptor if control is None else tc.concat([control, descriptor], axis=-1)
        mean = self.head_mean(inp)
        var = tc.softplus(self.head_var(inp)) + VAR_FLOOR
        return GaussianDiag(mean, var)

    def init_state_posterior(self, y_context, control=None):
        d = self.encode_context(y_context)
        if control is not None:
            control = tc.as_tensor(control)
            if control.ndim < d.ndim:
                control = tc.broadcast_to(control, d.shape[:-1] + control.shape[-1:])
        return self.init_from_descriptor(d, control)

    def _theta_blocks(self, theta):
        theta = tc.as_tensor(theta)
        if theta.shape[-1] != self.n_theta:
            raise ValueError(f"theta has {theta.shape[-1]} entries, expected {self.n_theta}")
        lead = theta.shape[:-1]
        blocks, start = {}, 0
        for nm, shape in self.theta_shapes:
            n = int(np.prod(shape))
            piece = theta[..., start:start + n]
            if len(shape) == 1:
                shape = (1,) + shape
            blocks[nm] = tc.reshape(piece, lead + shape)
            start += n
        return blocks

    def _control_term(self, blocks, control):
        if self.config.control_dim == 0:
            if control is not None:
                raise ValueError("this model has no control input")
            return None
        if control is None:
            raise ValueError("mode-conditioned model needs a control input")
        return tc.matmul(tc.as_tensor(control), blocks["W1c"])

    def _transition_mean(self, x, blocks, cterm):
        pre = tc.matmul(x, blocks["W1x"]) + blocks["b1"]
        if cterm is not None:
            pre = pre + cterm
        h = tc.layer_norm(tc.tanh(pre))
        out = tc.matmul(h, blocks["W2"]) + blocks["b2"]
        # skip connection: the cell predicts an increment of the state
        return out + x if self.config.transition_residual else out

    def transition_step(self, x_prev, theta_sample, control=None):
        """Gaussian over the next latent state given one weight sample."""
        x = tc.as_tensor(x_prev)
        if x.shape[-1] != self.config.latent_dim:
            raise ValueError("x_prev has the wrong latent dimension")
        theta = tc.as_tensor(theta_sample)
        squeeze = x.ndim == 1
        if squeeze:
            x = tc.reshape(x, (1, x.shape[0]))
            if control is not None:
                control = tc.reshape(tc.as_tensor(control), (1, -1))
        blocks = self._theta_blocks(theta)
        mean = self._transition_mean(x, blocks, self._control_term(blocks, control))
        if squeeze:
            mean = tc.reshape(mean, (mean.shape[-1],))
        var = Tensor(np.full(mean.shape, self.config.transition_var))
        return GaussianDiag(mean, var)

    def decode(self, x_t):
        mean = self.decoder(x_t)
        var = tc.broadcast_to(self.obs_var(), mean.shape)
        return GaussianDiag(mean, var)

    # ------------------------------------------------------------ rollouts

    def rollout_means(self, x0, theta, control, steps, rng):
        """Sample latent paths for ``steps`` transitions; return decoded means.

        ``x0`` is ``(S, N, K)``; the result is ``(S, N, steps, D)``.
        """
        blocks = self._theta_blocks(theta)
        cterm = self._control_term(blocks, control)
        std = math.sqrt(self.config.transition_var)
        x = x0
        states = []
        for _ in range(steps):
            mean = self._transition_mean(x, blocks, cterm)
            x = mean + std * rng.standard_normal(mean.shape)
            states.append(tc.reshape(x, x.shape[:-1] + (1, x.shape[-1])))
        xs = tc.concat(states, axis=-2)
        return self.decoder(xs)

    def expected_loglik(self, Y, x0_dist, control, rng, n_samples=None):
        """Monte-Carlo estimate of E[log p(y_1:T | x_1:T)] per row of ``Y``.

        Random draws happen in a fixed order: weights, initial state, then
        one transition noise array per step.
        """
        S = n_samples or self.config.mc_samples
        Y = np.asarray(Y, dtype=np.float64)
        theta = self.sample_theta(rng, S)
        x0 = tc.sample_gaussian(x0_dist, rng, (S,))
        ymean = self.rollout_means(x0, theta, control, Y.shape[-2], rng)
        obs_var = self.obs_var()
        diff = ymean - Y
        ll = -0.5 * (math.log(2.0 * math.pi) + tc.log(obs_var) + diff * diff / obs_var)
        return ll.sum(axis=(-1, -2)).mean(axis=0)

    def elbo(self, Y, rng, n_data=1, control=None, n_samples=None):
        """Per-sequence ELBO for a batch ``Y`` of shape ``(N, T, D)``.

        ``n_data`` spreads the weight-posterior KL over a data set of that size.
        """
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 3 or Y.shape[2] != self.config.obs_dim:
            raise ValueError(f"expected (N, T, {self.config.obs_dim}) batch, got {Y.shape}")
        if Y.shape[1] <= self.config.context_len:
            raise ValueError("sequence length must exceed the context length")
        x0_dist = self.init_state_posterior(Y[:, :self.config.context_len], control)
        if control is not None:
            control = tc.as_tensor(control)
            if control.ndim == 1:
                control = tc.broadcast_to(control, (Y.shape[0], control.shape[0]))
        recon = self.expected_loglik(Y, x0_dist, control, rng, n_samples)
        kl_x0 = tc.kl_gaussian_diag(x0_dist, GaussianDiag(np.zeros(x0_dist.mean.shape),
                                                          np.ones(x0_dist.mean.shape)))
        kl_theta = self.kl_theta() * (1.0 / n_data)
        kl_pi = Tensor(np.zeros(Y.shape[0]))
        total = recon - kl_x0 - kl_theta - kl_pi
        out = ElboBreakdown(recon, kl_x0, kl_theta, kl_pi, total)
        out.check_finite()
        return out

    def loss(self, Y, rng, n_data=1):
        """Batch-averaged negative ELBO and its breakdown."""
        br = self.elbo(Y, rng, n_data=n_data)
        return -br.total.mean(), br

    def predict(self, y_context, horizon, n_samples=30, rng=None, control=None):
        """Predictive mean/variance of the ``horizon`` steps after the context.

        Returns a dict with ``mean`` and ``var`` of shape ``(N, horizon, D)``
        and ``samples`` of shape ``(n_samples, N, horizon, D)`` (decoded means
        of each sampled path).  A single ``(C, D)`` context drops the ``N`` axis.
        """
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = np.random.default_rng(rng)
        y = np.asarray(y_context, dtype=np.float64)
        single = y.ndim == 2
        if single:
            y = y[None]
        C = self.config.context_len
        with tc.no_grad():
            x0_dist = self.init_state_posterior(y[:, -C:], control)
            if control is not None:
                control = tc.as_tensor(control)
                if control.ndim == 1:
                    control = tc.broadcast_to(control, (y.shape[0], control.shape[0]))
            theta = self.sample_theta(rng, n_samples)
            x0 = tc.sample_gaussian(x0_dist, rng, (n_samples,))
            paths = self.rollout_means(x0, theta, control, C + horizon, rng).data[..., C:, :]
            obs_var = self.obs_var().data
        mean = paths.mean(axis=0)
        var = paths.var(axis=0) + obs_var
        out = {"mean": mean, "var": var, "samples": paths}
        if single:
            out = {"mean": mean[0], "var": var[0], "samples": paths[:, 0]}
        return out


def bssm_elbo(model: SsmModel, seq, rng, n_data=1, control=None):
    """ELBO breakdown of one ``(T, D)`` sequence (scalar tensors)."""
    values = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
    br = model.elbo(values[None], rng, n_data=n_data, control=control)
    return ElboBreakdown(*(t.sum() for t in (br.recon, br.kl_x0, br.kl_theta.reshape(1),
                                             br.kl_pi, br.total)))
