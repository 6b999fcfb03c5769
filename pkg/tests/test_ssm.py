import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cldyn import ssm as ssm_mod
from cldyn import tensorcore as tc
from cldyn.datagen import build_synthetic_suite
from cldyn.ssm import SsmConfig, SsmModel, bssm_elbo
from cldyn.tensorcore import GaussianDiag, Tensor
from cldyn.training import TrainSchedule, train_task, vcl_transfer
from helpers import numeric_grad, rel_error


def inv_softplus(v):
    return math.log(math.expm1(v))


def _zero(mlp):
    for p in mlp.parameters():
        p.data[...] = 0.0


def linear_toy(mu0, v0, mub, vb, q, w, b, r, C=1, probabilistic=True):
    """1-D model whose rollout is x_t = x_{t-1} + b2 + noise, y_t = w x_t + b + noise.

    With one hidden unit the layer norm outputs exactly zero, so only the
    output bias ``b2`` of the cell survives (a random-walk drift).
    """
    cfg = SsmConfig(latent_dim=1, obs_dim=1, context_len=C, transition_hidden=1,
                    transition_var=q, obs_var=r, probabilistic=probabilistic)
    m = SsmModel(cfg, rng=0)
    _zero(m.encoder)
    _zero(m.head_mean)
    _zero(m.head_var)
    m.head_mean.weights[-1][1].data[:] = mu0
    m.head_var.weights[-1][1].data[:] = inv_softplus(v0 - ssm_mod.VAR_FLOOR)
    m.q_mean.data[:] = 0.0
    m.q_mean.data[-1] = mub
    m.q_logvar.data[:] = -60.0
    m.q_logvar.data[-1] = math.log(vb)
    m.decoder.weights[0][0].data[:] = w
    m.decoder.weights[0][1].data[:] = b
    return m


def closed_form_loglik(y, mu0, v0, mub, vb, q, w, b, r):
    t = np.arange(1, len(y) + 1)
    m = mu0 + t * mub
    s = v0 + t ** 2 * vb + t * q
    return float(np.sum(-0.5 * math.log(2 * math.pi * r) - ((y - w * m - b) ** 2 + w * w * s) / (2 * r)))


def kalman_log_evidence(y, drift, q, w, b, r):
    m, P, ll = 0.0, 1.0, 0.0
    for yt in y:
        m, P = m + drift, P + q
        S = w * w * P + r
        resid = yt - w * m - b
        ll += -0.5 * (math.log(2 * math.pi * S) + resid ** 2 / S)
        K = P * w / S
        m, P = m + K * resid, (1 - K * w) * P
    return ll


def small_model(K=2, D=1, C=1, seed=0, **kw):
    return SsmModel(SsmConfig(latent_dim=K, obs_dim=D, context_len=C, transition_hidden=3, **kw),
                    rng=seed)


# ------------------------------------------------------------------ encoder / heads

def test_zero_encoder_gives_zero_descriptor():
    m = small_model(K=3, C=2)
    _zero(m.encoder)
    d = m.encode_context(np.random.default_rng(0).standard_normal((2, 1)))
    np.testing.assert_array_equal(d.data, np.zeros(3))


def test_identity_encoder_returns_flattened_context():
    m = small_model(K=4, D=2, C=2)
    m.encoder.weights[0][0].data[...] = np.eye(4)
    m.encoder.weights[0][1].data[...] = 0.0
    ctx = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(m.encode_context(ctx).data, ctx.ravel())


def test_encoder_rejects_wrong_context_length():
    m = small_model(C=3)
    with pytest.raises(ValueError, match="context"):
        m.encode_context(np.zeros((2, 1)))


def test_encoder_gradient_matches_fd():
    m = SsmModel(SsmConfig(latent_dim=3, obs_dim=2, context_len=2, encoder_hidden=(4,)), rng=1)
    ctx = np.random.default_rng(2).standard_normal((2, 2))
    weights = np.random.default_rng(3).standard_normal(3)
    params = m.encoder.parameters()
    grads = tc.grad((m.encode_context(ctx) * weights).sum(), params)
    for p, g in zip(params, grads):
        def f(v, p=p):
            old = p.data
            p.data = v
            out = float((m.encode_context(ctx).data * weights).sum())
            p.data = old
            return out
        assert rel_error(g, numeric_grad(f, p.data)) < 1e-6


@given(st.floats(-50, 50), st.integers(0, 1000))
def test_initial_state_variance_positive(bias, seed):
    m = small_model(K=2, C=1, seed=seed)
    m.head_var.weights[-1][1].data[:] = bias
    dist = m.init_state_posterior(np.array([[3.0]]))
    assert np.all(dist.var.data > 0)


def test_standard_initial_state_has_zero_kl():
    m = linear_toy(0.0, 1.0, 0.0, 1.0, 0.1, 1.0, 0.0, 0.1)
    dist = m.init_state_posterior(np.array([[0.7]]))
    kl = tc.kl_gaussian_diag(dist, GaussianDiag(np.zeros(1), np.ones(1)))
    assert abs(float(kl.data)) < 1e-12


# ------------------------------------------------------------------ transition / decoder

def test_zero_weights_transition():
    m = small_model(K=3, transition_residual=False)
    theta = np.zeros(m.n_theta)
    theta[-3:] = [0.5, -1.0, 2.0]
    x = np.array([1.0, 2.0, 3.0])
    step = m.transition_step(x, theta)
    np.testing.assert_array_equal(step.mean.data, [0.5, -1.0, 2.0])
    np.testing.assert_array_equal(step.var.data, np.full(3, 0.1))
    residual = small_model(K=3).transition_step(x, theta)
    np.testing.assert_array_equal(residual.mean.data, x + [0.5, -1.0, 2.0])


def test_zero_control_matches_unconditioned_kernel():
    plain = small_model(K=2, seed=4)
    cond = small_model(K=2, seed=4, control_dim=2)
    blocks = dict(zip([n for n, _ in plain.theta_shapes],
                      np.split(plain.q_mean.data, np.cumsum([np.prod(s) for _, s in
                                                             plain.theta_shapes])[:-1])))
    theta_c = np.concatenate([blocks["W1x"], np.zeros(2 * 3), blocks["b1"], blocks["W2"],
                              blocks["b2"]])
    x = np.array([0.3, -0.8])
    a = plain.transition_step(x, plain.q_mean.data).mean.data
    b = cond.transition_step(x, theta_c, control=np.zeros(2)).mean.data
    np.testing.assert_array_equal(a, b)


def test_transition_control_presence_is_checked():
    with pytest.raises(ValueError, match="control"):
        small_model(control_dim=2).transition_step(np.zeros(2), np.zeros(small_model(
            control_dim=2).n_theta))
    m = small_model()
    with pytest.raises(ValueError):
        m.transition_step(np.zeros(2), np.zeros(m.n_theta), control=np.zeros(2))
    with pytest.raises(ValueError):
        m.transition_step(np.zeros(2), np.zeros(m.n_theta + 1))


def test_transition_mean_gradient_matches_fd():
    m = small_model(K=2, seed=5, control_dim=2)
    x = np.array([0.4, -0.2])
    c = np.array([1.0, 0.5])
    theta0 = m.q_mean.data + 0.3 * np.random.default_rng(0).standard_normal(m.n_theta)
    theta = Tensor(theta0, requires_grad=True)
    (g,) = tc.grad(m.transition_step(x, theta, c).mean.sum(), [theta])

    def f(v):
        return float(m.transition_step(x, v, c).mean.data.sum())

    assert rel_error(g, numeric_grad(f, theta0)) < 1e-6


def test_zero_decoder_returns_bias():
    m = small_model(K=2, D=2)
    _zero(m.decoder)
    m.decoder.weights[0][1].data[:] = [1.5, -0.5]
    np.testing.assert_array_equal(m.decode(np.array([3.0, 4.0])).mean.data, [1.5, -0.5])


def test_decoder_log_density():
    from scipy.stats import norm

    m = small_model(K=2, D=3, obs_var=0.3)
    x = np.array([0.2, -1.0])
    dist = m.decode(x)
    at_mode = float(dist.log_prob(dist.mean.data).data)
    assert at_mode == pytest.approx(-0.5 * 3 * math.log(2 * math.pi * 0.3), abs=1e-12)
    y = np.array([0.1, 2.0, -0.4])
    oracle = norm.logpdf(y, dist.mean.data, math.sqrt(0.3)).sum()
    assert abs(float(dist.log_prob(y).data) - oracle) < 1e-10


# ------------------------------------------------------------------ ELBO

def test_elbo_terms_add_up_and_kls_nonnegative():
    m = small_model(K=2, C=2, seed=3)
    Y = np.random.default_rng(0).standard_normal((4, 6, 1))
    br = m.elbo(Y, np.random.default_rng(1), n_data=10)
    total = br.recon.data - br.kl_x0.data - br.kl_theta.data - br.kl_pi.data
    np.testing.assert_allclose(br.total.data, total)
    assert np.all(br.kl_x0.data >= 0) and float(br.kl_theta.data) >= 0
    np.testing.assert_array_equal(br.kl_pi.data, 0.0)


@given(st.integers(0, 10_000), st.floats(-8, 2))
def test_kl_terms_nonnegative_for_any_parameters(seed, logvar):
    m = small_model(K=2, C=1, seed=seed)
    rng = np.random.default_rng(seed)
    m.q_mean.data = rng.standard_normal(m.n_theta) * 3
    m.q_logvar.data = np.full(m.n_theta, logvar)
    m.prior_mean = rng.standard_normal(m.n_theta)
    br = m.elbo(rng.standard_normal((2, 3, 1)), rng)
    assert float(br.kl_theta.data) >= 0 and np.all(br.kl_x0.data >= 0)


def test_prior_matching_posteriors_give_recon_only():
    m = linear_toy(0.0, 1.0, 0.2, 0.05, 0.1, 1.0, 0.0, 0.1)
    vcl_transfer(m)
    br = bssm_elbo(m, np.arange(4.0)[:, None], np.random.default_rng(0))
    assert abs(float(br.kl_theta.data)) < 1e-12 and abs(float(br.kl_x0.data)) < 1e-12
    assert float(br.total.data) == pytest.approx(float(br.recon.data), abs=1e-12)


def test_expected_loglik_matches_closed_form_by_monte_carlo():
    p = dict(mu0=0.3, v0=0.5, mub=0.4, vb=0.02, q=0.1, w=1.5, b=-0.2, r=0.2)
    m = linear_toy(**p)
    y = np.array([0.5, 1.1])
    x0_dist = m.init_state_posterior(y[:1, None])
    rng = np.random.default_rng(0)
    draws = np.array([float(m.expected_loglik(y[None, :, None], GaussianDiag(
        x0_dist.mean.data[None], x0_dist.var.data[None]), None, rng, 1000).data[0])
        for _ in range(1000)])
    est, se = draws.mean(), draws.std(ddof=1) / math.sqrt(len(draws))
    exact = closed_form_loglik(y, **p)
    assert abs(est - exact) < 3 * se


@pytest.mark.parametrize("seed", range(20))
def test_elbo_below_kalman_log_evidence(seed):
    rng = np.random.default_rng(seed)
    mu0, v0 = rng.normal(0, 1), rng.uniform(0.1, 2.0)
    drift, q = rng.normal(0, 0.5), rng.uniform(0.05, 0.5)
    w, b, r = rng.normal(0, 1.5), rng.normal(0, 0.5), rng.uniform(0.05, 0.5)
    T = 5
    y = rng.normal(0, 1, T)
    m = linear_toy(mu0, v0, drift, 1.0, q, w, b, r, probabilistic=False)
    mc = float(m.elbo(y[None, :, None], np.random.default_rng(seed), n_samples=100_000)
               .total.data[0])
    kl0 = 0.5 * (v0 + mu0 ** 2 - 1 - math.log(v0))
    exact_elbo = closed_form_loglik(y, mu0, v0, drift, 0.0, q, w, b, r) - kl0
    assert mc == pytest.approx(exact_elbo, rel=0.02, abs=0.05)
    assert exact_elbo <= kalman_log_evidence(y, drift, q, w, b, r)


def test_bssm_elbo_end_to_end_gradient():
    m = small_model(K=2, C=1, seed=7, mc_samples=2)
    m.prior_mean = np.random.default_rng(1).standard_normal(m.n_theta) * 0.1
    y = np.random.default_rng(2).standard_normal((3, 1))
    params = m.parameters()

    def value():
        return float(bssm_elbo(m, y, np.random.default_rng(11), n_data=3).total.data)

    grads = tc.grad(bssm_elbo(m, y, np.random.default_rng(11), n_data=3).total, params)
    for p, g in zip(params, grads):
        def f(v, p=p):
            old = p.data
            p.data = v
            out = value()
            p.data = old
            return out
        assert rel_error(g, numeric_grad(f, p.data)) < 1e-4, p.name


def test_elbo_rejects_short_sequences():
    m = small_model(C=3)
    with pytest.raises(ValueError, match="exceed"):
        m.elbo(np.zeros((1, 3, 1)), np.random.default_rng(0))


def test_non_finite_elbo_is_reported():
    m = small_model()
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="recon"):
        m.elbo(np.full((1, 4, 1), np.inf), np.random.default_rng(0))


def test_deterministic_kernel_has_no_weight_kl():
    m = small_model(probabilistic=False)
    assert float(m.kl_theta().data) == 0.0
    assert m.q_logvar not in m.parameters()
    assert m.sample_theta(np.random.default_rng(0), 5).shape == (1, m.n_theta)


# ------------------------------------------------------------------ prediction

def test_degenerate_model_paths_identical(monkeypatch):
    monkeypatch.setattr(ssm_mod, "VAR_FLOOR", 1e-30)
    m = small_model(K=2, C=2, transition_var=1e-30, probabilistic=False)
    m.head_var.weights[-1][1].data[:] = -100.0
    _zero(m.head_var)
    m.head_var.weights[-1][1].data[:] = -100.0
    out = m.predict(np.ones((2, 1)), horizon=4, n_samples=6, rng=0)
    assert np.ptp(out["samples"], axis=0).max() < 1e-12


def test_predictive_variance_at_least_obs_var():
    m = small_model(K=2, C=2, obs_var=0.25)
    out = m.predict(np.random.default_rng(0).standard_normal((5, 2, 1)), 7, n_samples=3, rng=1)
    assert out["mean"].shape == out["var"].shape == (5, 7, 1)
    assert out["samples"].shape == (3, 5, 7, 1)
    assert np.all(out["var"] >= 0.25)


def test_predictive_moments_match_closed_form():
    p = dict(mu0=0.2, v0=0.3, mub=0.5, vb=0.04, q=0.1, w=1.2, b=0.1, r=0.15)
    m = linear_toy(**p)
    out = m.predict(np.array([[0.0]]), horizon=3, n_samples=100_000, rng=0)
    t = np.arange(2, 5)
    mean = p["w"] * (p["mu0"] + t * p["mub"]) + p["b"]
    var = p["w"] ** 2 * (p["v0"] + t ** 2 * p["vb"] + t * p["q"]) + p["r"]
    assert np.all(np.abs(out["mean"][:, 0] - mean) < 4 * np.sqrt(var / 1e5))
    np.testing.assert_allclose(out["var"][:, 0], var, rtol=0.02)


def test_predict_argument_checks():
    m = small_model(C=1)
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 1)), 0)
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 1)), 2, n_samples=0)


# ------------------------------------------------------------------ training smoke tests

def test_constant_sequence_approaches_entropy_bound():
    cfg = SsmConfig(latent_dim=2, obs_dim=1, context_len=2, transition_hidden=8, mc_samples=4)
    m = SsmModel(cfg, rng=0)
    Y = np.ones((1, 8, 1))
    _, log, _ = train_task(m, Y, TrainSchedule(800, 1, 0.01), np.random.default_rng(0))
    bound = -0.5 * math.log(2 * math.pi * cfg.obs_var) * 8
    assert log[-1]["recon"] <= bound + 1e-9
    # within 0.05 nats per step of the best attainable log-likelihood
    assert log[-1]["recon"] > bound - 0.05 * 8


def test_trained_model_separates_modes():
    suite = build_synthetic_suite("sine", 0)
    cfg = SsmConfig(latent_dim=8, obs_dim=1, context_len=5, mc_samples=2)
    m = SsmModel(cfg, rng=0)
    train_task(m, suite[0], TrainSchedule(20, 9, 0.005), np.random.default_rng(0))
    by_mode = {}
    for s in suite[0].test:
        by_mode.setdefault(s.mode_id, s.values[:5])
    a, b = list(by_mode.values())[:2]
    ma = m.init_state_posterior(a).mean.data
    mb = m.init_state_posterior(b).mean.data
    assert np.linalg.norm(ma - mb) > 1e-3
