import numpy as np
import pytest
from scipy import stats

from gbcal.datasets import ParameterError, SsmTruth, simulate_ssm
from gbcal.sampling import ar1_bridge, rwm_batch
from gbcal.ssm import (SsmJointTarget, build_ssm_phi_posterior,
                       ssm_empirical_losses, ssm_eta_b_grid_posterior,
                       ssm_eta_b_nested_draws, ssm_log_posterior_phi2)


def small_data(n_blocks=5, d_x=6, seed=0, **truth_kw):
    truth = SsmTruth(**truth_kw)
    return simulate_ssm(truth, n_blocks, d_x, seed=seed), truth


def brute_force_log_posterior(phi2, data, truth, eta, n_quad=120, half=8.0):
    """Integrate the interior latents by dense Gauss-Hermite style quadrature
    per block (tensorized over the bridge eigenbasis)."""
    from scipy.special import gammaln

    w_left, w_right, Q, V = ar1_bridge(truth, data.d_x)
    D, U = np.linalg.eigh(V)
    a, b = truth.invgamma_a, truth.invgamma_b
    t = phi2
    nA = 2 * data.n_blocks
    SA = float(np.sum((data.x_anchor - data.theta_anchor) ** 2))
    lp = (a * np.log(b) - gammaln(a) - (a + 1) * np.log(t) - b / t
          - 0.5 * nA * np.log(2 * np.pi * t) - SA / (2 * t))
    k = data.d_x - 2
    prior_mean = (data.theta_anchor[:, :1] * w_left
                  + data.theta_anchor[:, 1:] * w_right)
    for blk in range(data.n_blocks):
        # coordinates in the eigenbasis are independent Gaussians
        res = (data.x_missing[blk] - prior_mean[blk]) @ U
        for j in range(k):
            grid = np.linspace(-half * np.sqrt(D[j]), half * np.sqrt(D[j]), n_quad)
            prior = stats.norm.pdf(grid, scale=np.sqrt(D[j]))
            lik = stats.norm.pdf(res[j], loc=grid,
                                 scale=np.sqrt(t / max(eta, 1e-300))) ** 1.0
            if eta == 0:
                val = 1.0
            else:
                lik = np.exp(eta * stats.norm.logpdf(res[j], loc=grid,
                                                     scale=np.sqrt(t)))
                val = np.trapezoid(prior * lik, grid)
            lp += np.log(val)
    return lp


def test_log_posterior_matches_brute_force_quadrature():
    data, truth = small_data(n_blocks=3, seed=1)
    for eta in (0.3, 1.0, 2.5):
        for phi2 in (0.4, 1.0, 2.0):
            got = ssm_log_posterior_phi2(phi2, data, truth, eta)
            ref = brute_force_log_posterior(phi2, data, truth, eta)
            assert got == pytest.approx(ref, abs=1e-6)


def test_log_posterior_eta_zero_is_anchor_only():
    """At eta = 0 the interior emissions carry no information, so the
    posterior must be the anchor-likelihood InvGamma update exactly."""
    data, truth = small_data(seed=2)
    from scipy.special import gammaln

    a, b = truth.invgamma_a, truth.invgamma_b
    nA = 2 * data.n_blocks
    SA = float(np.sum((data.x_anchor - data.theta_anchor) ** 2))
    for phi2 in (0.5, 1.3):
        ref = (a * np.log(b) - gammaln(a) - (a + 1) * np.log(phi2) - b / phi2
               - 0.5 * nA * np.log(2 * np.pi * phi2) - SA / (2 * phi2))
        assert ssm_log_posterior_phi2(phi2, data, truth, 0.0) == pytest.approx(ref)


def test_log_posterior_eta_one_is_plain_bayes():
    """At eta = 1 integrating the latents must reproduce the marginal
    likelihood of all emissions given the anchors (checked against a dense
    multivariate normal per block)."""
    data, truth = small_data(n_blocks=4, seed=3)
    w_left, w_right, Q, V = ar1_bridge(truth, data.d_x)
    prior_mean = (data.theta_anchor[:, :1] * w_left
                  + data.theta_anchor[:, 1:] * w_right)
    from scipy.special import gammaln

    for phi2 in (0.6, 1.1):
        a, b = truth.invgamma_a, truth.invgamma_b
        nA = 2 * data.n_blocks
        SA = float(np.sum((data.x_anchor - data.theta_anchor) ** 2))
        ref = (a * np.log(b) - gammaln(a) - (a + 1) * np.log(phi2) - b / phi2
               - 0.5 * nA * np.log(2 * np.pi * phi2) - SA / (2 * phi2))
        cov = V + phi2 * np.eye(data.d_x - 2)
        for blk in range(data.n_blocks):
            ref += stats.multivariate_normal.logpdf(
                data.x_missing[blk], mean=prior_mean[blk], cov=cov)
        assert ssm_log_posterior_phi2(phi2, data, truth, 1.0) == pytest.approx(ref)


def test_negative_eta_rejected():
    data, truth = small_data()
    with pytest.raises(ParameterError):
        ssm_log_posterior_phi2(1.0, data, truth, -0.5)


def test_posterior_normalizes_and_concentrates():
    data, truth = small_data(n_blocks=200, seed=4)
    post = build_ssm_phi_posterior(data, truth, eta=1.0)
    mass = np.trapezoid(np.exp(post.log_density), post.phi2)
    assert mass == pytest.approx(1.0, abs=1e-6)
    # phi_M* = phi_A* = 1, so the posterior should sit near phi^2 = 1
    assert abs(post.mean_phi2() - 1.0) < 0.15


def test_posterior_tracks_interior_scale_with_eta():
    """With misspecified interior noise (phi_M* < phi_A*), increasing eta
    pulls the posterior toward the interior scale."""
    data, truth = small_data(n_blocks=300, seed=5, phi_M_star=0.5)
    m_low = build_ssm_phi_posterior(data, truth, eta=0.2).mean_phi2()
    m_high = build_ssm_phi_posterior(data, truth, eta=5.0).mean_phi2()
    assert m_high < m_low
    assert m_high < 0.6  # near the interior variance 0.25, far below 1


def test_block_predictive_agrees_with_direct_sum():
    data, truth = small_data(seed=6)
    calib, _ = small_data(n_blocks=7, seed=7)
    post = build_ssm_phi_posterior(data, truth, eta=0.8)
    per = post.block_log_predictive(calib)
    assert per.shape == (7,)
    # direct: integrate N(x_anchor; theta_anchor, phi2) over the posterior
    w = np.exp(post.log_weights)
    for j in range(7):
        dens = np.array([
            np.prod(stats.norm.pdf(calib.x_anchor[j], calib.theta_anchor[j],
                                   np.sqrt(t))) for t in post.phi2])
        assert per[j] == pytest.approx(np.log(np.sum(w * dens)), abs=1e-10)


def test_pooled_predictive_agrees_with_direct_sum():
    data, truth = small_data(seed=8)
    calib, _ = small_data(n_blocks=4, seed=9)
    post = build_ssm_phi_posterior(data, truth, eta=1.0)
    w = np.exp(post.log_weights)
    dens = np.array([
        np.prod(stats.norm.pdf(calib.x_anchor, calib.theta_anchor, np.sqrt(t)))
        for t in post.phi2])
    assert post.pooled_log_predictive(calib) == pytest.approx(
        np.log(np.sum(w * dens)), abs=1e-10)


def test_empirical_losses_shapes_and_large_eta_growth():
    train, truth = small_data(n_blocks=10, seed=10, phi_M_star=0.5)
    calib, _ = small_data(n_blocks=50, seed=11, phi_M_star=0.5)
    etas = np.array([20.0, 100.0, 1000.0])
    pooled, product = ssm_empirical_losses(train, calib, truth, etas)
    assert np.all(np.diff(pooled) > 0)
    assert np.all(np.diff(product) > 0)


def test_eta_b_grid_posterior_smoke():
    from gbcal.hypercal import SGrid

    train, truth = small_data(n_blocks=4, seed=20)
    calib, _ = small_data(n_blocks=3, seed=21)
    grid = SGrid.regular([(0.1, 1.0), (0.3, 1.0)], ["eta", "b"], 4)
    gp = ssm_eta_b_grid_posterior(train, calib, truth, grid, n_iter=3000,
                                  burn_in=1000, thin=10, seed=22)
    assert gp.normalization_check() == pytest.approx(1.0, abs=0.02)
    mean = gp.mean()
    assert 0.1 <= mean[0] <= 1.0 and 0.3 <= mean[1] <= 1.0


def test_eta_b_nested_draws_smoke():
    train, truth = small_data(n_blocks=4, seed=23)
    calib, _ = small_data(n_blocks=3, seed=24)
    bounds = [(0.1, 1.0), (0.3, 1.0)]
    draws, acc = ssm_eta_b_nested_draws(train, calib, truth, bounds,
                                        n_outer=300, inner_len=20, seed=25)
    assert draws.shape == (100, 2)
    assert 0.0 < acc < 1.0
    assert np.all((draws[:, 0] >= 0.1) & (draws[:, 0] <= 1.0))
    assert np.all((draws[:, 1] >= 0.3) & (draws[:, 1] <= 1.0))


def test_joint_target_matches_marginal_posterior():
    """Integrating the joint (log phi^2, latents) target over the latents by
    MCMC must reproduce the exact phi^2 marginal."""
    data, truth = small_data(n_blocks=4, seed=12)
    target = SsmJointTarget(data, truth)
    eta = 0.7
    B = 16
    init = np.tile(target.init_state(), (B, 1))
    draws, acc = rwm_batch(lambda st: target(st, eta), init,
                           n_iter=60000, burn_in=10000, thin=10, seed=13)
    phi2_draws = np.exp(draws[..., 0].ravel())
    post = build_ssm_phi_posterior(data, truth, eta)
    # compare CDFs on a grid through the bulk
    qs = np.quantile(phi2_draws, [0.1, 0.3, 0.5, 0.7, 0.9])
    w = np.exp(post.log_weights)
    cdf_exact = np.array([np.sum(w[post.phi2 <= q]) for q in qs])
    assert np.allclose(cdf_exact, [0.1, 0.3, 0.5, 0.7, 0.9], atol=0.06)


def test_joint_target_beta_limit_consistent():
    """The expm1-stabilized beta-loss term must approach the tempered
    log-likelihood difference as beta -> 1."""
    data, truth = small_data(n_blocks=3, seed=14)
    target = SsmJointTarget(data, truth)
    s1 = target.init_state()
    s2 = s1 + 0.1
    states = np.stack([s1, s2])
    eta = 0.9
    ref = target(states, eta)
    dref = ref[1] - ref[0]
    for beta in (1.001, 1.0001):
        got = target(states, eta, beta=beta)
        assert got[1] - got[0] == pytest.approx(dref, abs=0.05)
    got = target(states, eta, beta=1.0)
    assert got[1] - got[0] == pytest.approx(dref, abs=1e-8)


def test_joint_target_per_row_hyperparameters():
    data, truth = small_data(n_blocks=3, seed=15)
    target = SsmJointTarget(data, truth)
    s = target.init_state() + 0.05
    states = np.tile(s, (3, 1))
    etas = np.array([0.2, 0.7, 1.5])
    batch = target(states, etas)
    for i, e in enumerate(etas):
        single = target(s[None], e)
        assert batch[i] == pytest.approx(float(single[0]))
