import numpy as np
import pytest
from scipy import stats

from gbcal.datasets import ParameterError, SimpleDataset
from gbcal.hypercal import (GridPosterior, SGrid, build_grid_posterior,
                            compute_estimator_set, estimate_posterior_mean,
                            estimate_posterior_mode, grid_posterior_from_values,
                            harmonic_mean_estimator, kl_estimator,
                            log_pointwise_predictive, log_pooled_predictive,
                            log_product_predictive, nested_mcmc_product,
                            prior_exponential, prior_improper_flat,
                            prior_uniform, waic_estimator)
from gbcal.losses import gaussian_model


def gaussian_grid_posterior(mu=0.45, sd=0.1, kind="product", n=41, upper=1.0):
    """Posterior proportional to a truncated Gaussian; exact moments are
    available through scipy.stats.truncnorm."""
    grid = SGrid.regular([(0.0, upper)], ["eta"], n)
    x = grid.axes[0]
    log_pred = -0.5 * (x - mu) ** 2 / sd ** 2
    return grid_posterior_from_values(kind, grid, log_pred, prior_uniform(upper)(x))


def test_sgrid_validation():
    with pytest.raises(ParameterError):
        SGrid(axes=(np.array([0.0, 1.0]),), names=("eta",))
    with pytest.raises(ParameterError):
        SGrid(axes=(np.array([0.0, 0.5, 0.4, 1.0]),), names=("eta",))
    with pytest.raises(ParameterError):
        SGrid.regular([(0, 1)], ["a", "b"])
    g = SGrid.regular([(0, 1), (0, 2)], ["eta", "b"], 5)
    assert g.shape == (5, 5)
    pts = g.points()
    assert pts.shape == (25, 2)
    # axis 0 varies slowest
    assert np.all(pts[:5, 0] == 0.0)


def test_priors():
    u = prior_uniform(2.0)
    assert u(1.0) == pytest.approx(-np.log(2.0))
    assert u(2.5) == -np.inf
    e = prior_exponential(1 / 3)
    assert e(0.0) == pytest.approx(np.log(1 / 3))
    assert e(3.0) == pytest.approx(np.log(1 / 3) - 1.0)
    f = prior_improper_flat()
    assert f(100.0) == 0.0 and f(-1.0) == -np.inf


def test_grid_posterior_normalizes_to_one():
    gp = gaussian_grid_posterior()
    assert gp.normalization_check() == pytest.approx(1.0, abs=1e-6)


def test_grid_posterior_matches_truncated_normal():
    mu, sd = 0.45, 0.1
    gp = gaussian_grid_posterior(mu, sd)
    a, b = (0 - mu) / sd, (1 - mu) / sd
    assert gp.mean()[0] == pytest.approx(stats.truncnorm.mean(a, b, mu, sd), abs=1e-5)
    assert gp.sd()[0] == pytest.approx(stats.truncnorm.std(a, b, mu, sd), abs=1e-5)
    xs = np.array([0.2, 0.45, 0.8])
    assert np.allclose(gp.density(xs), stats.truncnorm.pdf(xs, a, b, mu, sd),
                       atol=1e-4)


def test_grid_posterior_sampling_matches_density():
    gp = gaussian_grid_posterior()
    draws = gp.sample(20000, seed=0)[:, 0]
    mu, sd = 0.45, 0.1
    a, b = (0 - mu) / sd, (1 - mu) / sd
    assert stats.kstest(draws, lambda t: stats.truncnorm.cdf(t, a, b, mu, sd)).pvalue > 1e-3


def test_grid_posterior_2d_normalizes():
    grid = SGrid.regular([(0.0, 1.0), (0.5, 2.0)], ["eta", "b"], 21)
    pts = grid.points()
    lp = (-0.5 * (pts[:, 0] - 0.5) ** 2 / 0.04
          - 0.5 * (pts[:, 1] - 1.2) ** 2 / 0.09)
    gp = grid_posterior_from_values("product", grid, lp, np.zeros(len(pts)))
    assert gp.normalization_check() == pytest.approx(1.0, abs=1e-3)
    assert gp.mean() == pytest.approx([0.5, 1.2], abs=5e-3)
    mode = estimate_posterior_mode(gp)
    assert mode.eta == pytest.approx(0.5, abs=5e-3)
    assert mode.b == pytest.approx(1.2, abs=5e-3)


def test_missing_lattice_point_warns_and_recovers():
    grid = SGrid.regular([(0.0, 1.0)], ["eta"], 41)
    x = grid.axes[0]
    lp = -0.5 * (x - 0.5) ** 2 / 0.01
    lp[7] = np.nan
    with pytest.warns(UserWarning, match="lattice points missing"):
        gp = grid_posterior_from_values("product", grid, lp, np.zeros_like(x))
    assert gp.mean()[0] == pytest.approx(0.5, abs=1e-3)


def test_mode_tie_breaks_toward_smaller_values():
    # perfectly flat posterior: the reported mode should sit at the low end
    grid = SGrid.regular([(0.0, 1.0)], ["eta"], 41)
    x = grid.axes[0]
    gp = grid_posterior_from_values("product", grid, np.zeros_like(x),
                                    np.zeros_like(x))
    assert estimate_posterior_mode(gp).eta == pytest.approx(0.0, abs=1e-6)


def test_mean_mode_consistency_on_skewed_density():
    grid = SGrid.regular([(0.0, 1.0)], ["eta"], 41)
    x = grid.axes[0]
    # Beta(2,5)-shaped: mode 0.2, mean 2/7
    with np.errstate(divide="ignore"):
        lp = np.log(x) + 4 * np.log1p(-x)
    gp = grid_posterior_from_values("product", grid, lp, np.zeros_like(x))
    assert estimate_posterior_mean(gp).eta == pytest.approx(2 / 7, abs=5e-3)
    assert estimate_posterior_mode(gp).eta == pytest.approx(0.2, abs=5e-3)


def test_export_csv(tmp_path):
    gp = gaussian_grid_posterior(n=11)
    p = tmp_path / "post.csv"
    gp.export_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "s_axis0,log_pred,log_prior,log_post_norm"
    assert len(lines) == 12


# --- Monte Carlo predictives ------------------------------------------------

def test_pointwise_predictive_matches_closed_form():
    """phi ~ N(m, v) posterior, y | phi ~ N(phi, 1): the predictive is
    N(m, v + 1) exactly."""
    m, v = 0.3, 0.25
    rng = np.random.default_rng(0)
    draws = m + np.sqrt(v) * rng.standard_normal(200000)
    model = gaussian_model(var=1.0)
    for y in (-1.0, 0.3, 2.0):
        got = log_pointwise_predictive(draws, model, y)
        ref = stats.norm.logpdf(y, loc=m, scale=np.sqrt(v + 1))
        assert got == pytest.approx(ref, abs=5e-3)


def test_product_predictive_additivity():
    rng = np.random.default_rng(1)
    draws = rng.standard_normal(5000)
    model = gaussian_model(var=1.0)
    y = np.array([0.5, -0.2, 1.1])
    total = log_product_predictive(draws, model, y)
    parts = sum(log_pointwise_predictive(draws, model, yi) for yi in y)
    assert total == pytest.approx(parts, abs=1e-10)


def test_pooled_predictive_matches_closed_form():
    m, v = 0.0, 0.5
    rng = np.random.default_rng(2)
    draws = m + np.sqrt(v) * rng.standard_normal(400000)
    model = gaussian_model(var=1.0)
    y = np.array([0.2, -0.4])
    J = len(y)
    Sigma = v * np.ones((J, J)) + np.eye(J)
    ref = stats.multivariate_normal.logpdf(y, mean=np.full(J, m), cov=Sigma)
    assert log_pooled_predictive(draws, model, y) == pytest.approx(ref, abs=5e-3)


def test_pooled_predictive_warns_on_degenerate_weights():
    model = gaussian_model(var=0.01)
    draws = np.linspace(-50, 50, 1000)
    with pytest.warns(UserWarning, match="dominated by few draws"):
        log_pooled_predictive(draws, model, np.array([0.0]))


def test_build_grid_posterior_with_exact_sampler():
    """Conjugate setup: prior flat on phi, x ~ N(phi, 1).  The calibration
    posterior over eta has a known shape we can cross-check by quadrature."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal(50) + 0.5
    y = rng.standard_normal(20) + 0.5
    model = gaussian_model(var=1.0)
    xbar, n = float(np.mean(x)), len(x)
    grid = SGrid.regular([(0.05, 1.0)], ["eta"], 21)

    def sampler_factory(s, seed):
        eta = s[0]
        r = np.random.default_rng(seed)
        return xbar + r.standard_normal(40000) / np.sqrt(n * eta)

    gp = build_grid_posterior("product", grid, prior_uniform(1.0), y,
                              sampler_factory, model, seed=0)
    # closed form: predictive per point is N(xbar, 1 + 1/(n eta))
    etas = grid.axes[0]
    ref = np.array([np.sum(stats.norm.logpdf(y, xbar, np.sqrt(1 + 1 / (n * e))))
                    for e in etas])
    ref_gp = grid_posterior_from_values("product", grid, ref,
                                        prior_uniform(1.0)(etas))
    assert gp.mean()[0] == pytest.approx(ref_gp.mean()[0], abs=0.02)


def test_build_grid_posterior_isolates_failures():
    model = gaussian_model(var=1.0)
    grid = SGrid.regular([(0.1, 1.0)], ["eta"], 10)

    def factory(s, seed):
        if abs(s[0] - grid.axes[0][4]) < 1e-12:
            raise RuntimeError("boom")
        return np.random.default_rng(seed).standard_normal(2000)

    with pytest.warns(UserWarning):
        gp = build_grid_posterior("product", grid, prior_improper_flat(),
                                  np.array([0.0]), factory, model)
    assert np.isfinite(gp.mean()[0])


# --- estimators -------------------------------------------------------------

def test_harmonic_mean_uniform_closed_form():
    # posterior Uniform(a, b): 1/E[1/s] = (b - a) / log(b / a)
    a, b = 0.2, 0.9
    grid = SGrid.regular([(a, b)], ["eta"], 41)
    x = grid.axes[0]
    gp = grid_posterior_from_values("product", grid, np.zeros_like(x),
                                    np.zeros_like(x))
    ref = (b - a) / np.log(b / a)
    assert harmonic_mean_estimator(gp) == pytest.approx(ref, rel=1e-6)


def test_harmonic_mean_diverges_with_boundary_mass():
    # appreciable density at eta = 0 makes E[1/eta] blow up
    grid = SGrid.regular([(0.0, 1.0)], ["eta"], 41)
    x = grid.axes[0]
    gp = grid_posterior_from_values("product", grid, np.zeros_like(x),
                                    np.zeros_like(x))
    with pytest.raises(ParameterError):
        harmonic_mean_estimator(gp)


def test_compute_estimator_set_handles_divergent_harmonic():
    grid = SGrid.regular([(0.0, 1.0)], ["eta"], 41)
    x = grid.axes[0]
    gp = grid_posterior_from_values("product", grid, np.zeros_like(x),
                                    np.zeros_like(x))
    est = compute_estimator_set(gp)
    assert est.harmonic_mean is None
    d = est.as_dict()
    assert "harmonic_mean" not in d and "mean" in d


def test_kl_estimator_recovers_sharp_posterior():
    """When the hyperposterior is a near point mass, the KL summary must
    return (nearly) that atom regardless of the predictive model."""
    s_star = 0.62
    gp = gaussian_grid_posterior(mu=s_star, sd=0.004)

    def predictive_sampler(s, size, rng):
        return s[0] + 0.05 * rng.standard_normal(size)

    def predictive_logpdf(sp, z):
        return stats.norm.logpdf(z, loc=sp, scale=0.05)

    hp = kl_estimator(gp, predictive_sampler, predictive_logpdf,
                      T=100, J_inner=200, seed=4)
    assert hp.eta == pytest.approx(s_star, abs=0.02)


def test_waic_estimator_gaussian_location():
    """WAIC over a tempering grid for the conjugate normal: compare the
    argmin against a direct evaluation of the same formula."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal(60)
    xbar, n = float(np.mean(x)), len(x)
    model = gaussian_model(var=1.0)
    grid = SGrid.regular([(0.1, 1.5)], ["eta"], 8)
    draws_per_s = [xbar + np.random.default_rng(7 + i).standard_normal(30000)
                   / np.sqrt(n * e) for i, e in enumerate(grid.axes[0])]
    hp, waic = waic_estimator(grid, draws_per_s, model, x)
    assert len(waic) == 8
    assert np.all(np.isfinite(waic))
    lo, hi = grid.axes[0][0], grid.axes[0][-1]
    assert lo <= hp.eta <= hi


def test_nested_mcmc_product_matches_grid_posterior():
    """Exactly solvable case: phi | s has a Gaussian tempered posterior and
    the calibration density is Gaussian, so the lattice posterior is exact.
    The nested sampler must agree in distribution."""
    n, J = 50, 8
    rng = np.random.default_rng(6)
    xbar = 0.2
    y = 0.2 + rng.standard_normal(J)
    model = gaussian_model(var=1.0)

    grid = SGrid.regular([(0.05, 1.0)], ["eta"], 41)
    etas = grid.axes[0]
    log_pred = np.array([np.sum(stats.norm.logpdf(y, xbar, np.sqrt(1 + 1 / (n * e))))
                         for e in etas])
    gp = grid_posterior_from_values("product", grid, log_pred,
                                    prior_uniform(1.0)(etas))

    def inner_kernel(s, phis, n_steps, seed):
        # exact refresh: draw each phi_j from its tempered posterior at s
        r = np.random.default_rng(seed)
        return xbar + r.standard_normal(phis.shape) / np.sqrt(n * s[0])

    def block_log_pred(phis):
        return stats.norm.logpdf(y, loc=phis[:, 0], scale=1.0)

    draws, acc = nested_mcmc_product(prior_uniform(1.0), [(0.05, 1.0)],
                                     np.zeros((J, 1)), inner_kernel,
                                     block_log_pred, n_outer=6000,
                                     inner_len=1, seed=7)
    ref = gp.sample(6000, seed=8)[:, 0]
    ks = stats.ks_2samp(draws[:, 0], ref).statistic
    assert 0.1 < acc < 0.9
    assert ks < 0.05
