"""State-space model whose transition kernel is conditioned on descriptors
retrieved from an episodic memory under a stick-breaking prior."""
from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .epimem import EpisodicMemory, attention, dp_kl, stick_prior, write
from .ssm import ElboBreakdown, SsmConfig, SsmModel
from .tensorcore import GaussianDiag, Tensor


class CddpModel:
    """Mode-conditioned SSM plus memory.

    The SSM's initial-state heads act on ``concat(slot, descriptor)`` and play
    the role of the ``v1`` (mean) and ``v2`` (pre-variance) layers.
    """

    def __init__(self, config: SsmConfig, memory_size=20, alpha0=1.0, memory_mode="learned",
                 rng=None, similarity="dot", kl_x0_mode="weighted"):
        rng = np.random.default_rng(rng)
        if config.control_dim != config.latent_dim:
            config = SsmConfig(**{**config.__dict__, "control_dim": config.latent_dim})
        self.config = config
        self.ssm = SsmModel(config, rng)
        self.memory = EpisodicMemory.initialize(memory_size, config.latent_dim, memory_mode,
                                                alpha0, rng, similarity=similarity)
        self.memory_mode = memory_mode
        if kl_x0_mode not in ("weighted", "mixture_mc"):
            raise ValueError(f"unknown kl_x0_mode {kl_x0_mode!r}")
        self.kl_x0_mode = kl_x0_mode

    @property
    def v1(self):
        return self.ssm.head_mean

    @property
    def v2(self):
        return self.ssm.head_var

    def parameters(self):
        params = self.ssm.parameters()
        if self.memory.trainable:
            params.append(self.memory.slots)
        return params

    def state_dict(self):
        out = self.ssm.state_dict()
        out["memory.slots"] = self.memory.slots.data.copy()
        return out

    def load_state_dict(self, state):
        self.ssm.load_state_dict(state)
        self.memory.slots.data = np.array(state["memory.slots"], dtype=np.float64)

    def stick_prior(self):
        return stick_prior(self.memory.alpha0, self.memory.R)

    def mode_posterior(self, y_context):
        """Attention weights of shape (R,) or (N, R)."""
        return attention(self.ssm.encode_context(y_context), self.memory)

    def mode_init_posterior(self, descriptor, slot):
        return self.ssm.init_from_descriptor(tc.as_tensor(descriptor), tc.as_tensor(slot))

    def _expand(self, d, n):
        """Rows ordered mode-major: row ``r * n + b`` pairs slot r with sequence b."""
        R = self.memory.R
        r_idx = np.repeat(np.arange(R), n)
        b_idx = np.tile(np.arange(n), R)
        return r_idx, b_idx, tc.take_rows(self.memory.slots, r_idx), tc.take_rows(d, b_idx)

    def elbo(self, Y, rng, n_data=1, n_samples=None):
        Y = np.asarray(Y, dtype=np.float64)
        cfg = self.config
        if Y.ndim != 3 or Y.shape[2] != cfg.obs_dim:
            raise ValueError(f"expected (N, T, {cfg.obs_dim}) batch, got {Y.shape}")
        if Y.shape[1] <= cfg.context_len:
            raise ValueError("sequence length must exceed the context length")
        N, R = Y.shape[0], self.memory.R
        d = self.ssm.encode_context(Y[:, :cfg.context_len])
        w = attention(d, self.memory)
        r_idx, b_idx, m_rows, d_rows = self._expand(d, N)
        x0_dist = self.mode_init_posterior(d_rows, m_rows)
        recon_rows = self.ssm.expected_loglik(Y[b_idx], x0_dist, m_rows, rng, n_samples)
        std_normal = GaussianDiag(np.zeros(x0_dist.mean.shape), np.ones(x0_dist.mean.shape))
        kl_rows = tc.kl_gaussian_diag(x0_dist, std_normal)
        wt = tc.transpose(w)
        recon = (wt * tc.reshape(recon_rows, (R, N))).sum(axis=0)
        if self.kl_x0_mode == "weighted":
            kl_x0 = (wt * tc.reshape(kl_rows, (R, N))).sum(axis=0)
        else:
            kl_x0 = self._mixture_kl_x0(x0_dist, w, R, N, rng)
        kl_theta = self.ssm.kl_theta() * (1.0 / n_data)
        kl_pi = dp_kl(w, self.stick_prior())
        total = recon - kl_x0 - kl_theta - kl_pi
        out = ElboBreakdown(recon, kl_x0, kl_theta, kl_pi, total)
        out.check_finite()
        return out

    def _mixture_kl_x0(self, x0_dist, w, R, N, rng):
        """Single-sample MC estimate of KL(sum_r w_r N_r || N(0, I))."""
        K = self.config.latent_dim
        means = tc.reshape(x0_dist.mean, (R, N, K))
        vars_ = tc.reshape(x0_dist.var, (R, N, K))
        wt = tc.transpose(w)
        # one reparameterised draw per component; E_mix[f] = sum_r w_r E_r[f]
        z = means + tc.sqrt(vars_) * rng.standard_normal((R, N, K))
        z = tc.reshape(z, (R, 1, N, K))
        diff = z - tc.reshape(means, (1, R, N, K))
        logc = -0.5 * (np.log(2 * np.pi) + tc.log(tc.reshape(vars_, (1, R, N, K)))
                       + diff * diff / tc.reshape(vars_, (1, R, N, K))).sum(axis=-1)
        mx = np.max(logc.data, axis=1, keepdims=True)
        logq = tc.log((tc.exp(logc - mx) * tc.reshape(wt, (1, R, N))).sum(axis=1)) + mx[:, 0]
        logp = -0.5 * (np.log(2 * np.pi) + z * z).sum(axis=-1)
        per_comp = tc.reshape(logq - tc.reshape(logp, (R, N)), (R, N))
        return (wt * per_comp).sum(axis=0)

    def loss(self, Y, rng, n_data=1):
        br = self.elbo(Y, rng, n_data=n_data)
        return -br.total.mean(), br

    def posterior_predictive(self, y_context, horizon, n_samples=30, rng=None, gibbs="mixture"):
        """Mixture predictive over ``horizon`` steps after the context.

        Returns ``mean``/``var`` ``(N, horizon, D)``, ``weights`` ``(N, R)``,
        per-mode ``mode_mean``/``mode_var`` ``(R, N, horizon, D)`` and
        ``samples`` ``(n_samples, R, N, horizon, D)``.  ``gibbs="argmax"``
        reports the most-attended mode's mean as ``point``.
        """
        if horizon < 1 or n_samples < 1:
            raise ValueError("horizon and n_samples must be >= 1")
        rng = np.random.default_rng(rng)
        y = np.asarray(y_context, dtype=np.float64)
        single = y.ndim == 2
        if single:
            y = y[None]
        cfg = self.config
        C = cfg.context_len
        N, R = y.shape[0], self.memory.R
        with tc.no_grad():
            d = self.ssm.encode_context(y[:, -C:])
            w = attention(d, self.memory).data
            _, _, m_rows, d_rows = self._expand(d, N)
            x0_dist = self.mode_init_posterior(d_rows, m_rows)
            theta = self.ssm.sample_theta(rng, n_samples)
            x0 = tc.sample_gaussian(x0_dist, rng, (n_samples,))
            paths = self.ssm.rollout_means(x0, theta, m_rows, C + horizon, rng).data[..., C:, :]
            obs_var = self.ssm.obs_var().data
        D = paths.shape[-1]
        paths = paths.reshape(n_samples, R, N, horizon, D)
        mode_mean = paths.mean(axis=0)
        mode_var = paths.var(axis=0) + obs_var
        wr = w.T[:, :, None, None]
        mean = (wr * mode_mean).sum(axis=0)
        second = (wr * (mode_var + mode_mean ** 2)).sum(axis=0)
        var = np.maximum(second - mean ** 2, obs_var)
        top = np.argmax(w, axis=1)
        point = mean if gibbs == "mixture" else mode_mean[top, np.arange(N)]
        out = {"mean": mean, "var": var, "weights": w, "mode_mean": mode_mean,
               "mode_var": mode_var, "samples": paths, "point": point}
        if single:
            out = {"mean": mean[0], "var": var[0], "weights": w[0], "mode_mean": mode_mean[:, 0],
                   "mode_var": mode_var[:, 0], "samples": paths[:, :, 0], "point": point[0]}
        return out

    def predict(self, y_context, horizon, n_samples=30, rng=None, gibbs="mixture"):
        return self.posterior_predictive(y_context, horizon, n_samples, rng, gibbs)

    def observe_and_write(self, seq):
        """Write the descriptor of each given sequence (or batch) into memory."""
        values = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
        if values.ndim == 2:
            values = values[None]
        C = self.config.context_len
        with tc.no_grad():
            for v in values:
                d = self.ssm.encode_context(v[:C]).data
                w = attention(d, self.memory).data
                write(self.memory, d, w)
        return self.memory


def cddp_elbo(model: CddpModel, seq, rng, n_data=1):
    """ELBO breakdown of one ``(T, D)`` sequence (scalar tensors)."""
    values = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
    br = model.elbo(values[None], rng, n_data=n_data)
    return ElboBreakdown(*(t.sum() for t in (br.recon, br.kl_x0, br.kl_theta.reshape(1),
                                             br.kl_pi, br.total)))
