"""State-space example: tempered posteriors for the emission scale phi.

Fitted model: every emission is N(theta_pos, phi^2) with a single unknown
phi and an InvGamma(a, b) prior on phi^2; the latent chain is the true AR(1).
Anchor latents (block endpoints) are observed, interior ones are not.  The
tempered update raises the interior-emission likelihood (or its beta-loss
analogue) to the power eta, with the interior latents as auxiliary
variables.

For the plain likelihood case the auxiliaries integrate out exactly: the
interior emissions given the anchors are Gaussian with an AR(1)-bridge
covariance inflated by phi^2/eta, leaving a one-dimensional phi^2 posterior
that we evaluate on an adaptive grid.  The beta-loss case has no closed form
and is sampled by MCMC over (log phi^2, interior latents).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .datasets import ParameterError, SsmDataset, SsmTruth
from .sampling import ar1_bridge


def _bridge_eig(truth: SsmTruth, d_x: int):
    w_left, w_right, Q, V = ar1_bridge(truth, d_x)
    D, U = np.linalg.eigh(V)
    return w_left, w_right, Q, D, U


def _interior_residuals(data: SsmDataset, truth: SsmTruth):
    """Interior emissions minus their prior conditional mean, rotated into
    the eigenbasis of the bridge covariance.  Returns (R, D, extras)."""
    w_left, w_right, Q, D, U = _bridge_eig(truth, data.d_x)
    prior_mean = (data.theta_anchor[:, :1] * w_left
                  + data.theta_anchor[:, 1:] * w_right)
    res = data.x_missing - prior_mean
    return res @ U, D, (w_left, w_right, Q, prior_mean)


def ssm_log_posterior_phi2(phi2, data: SsmDataset, truth: SsmTruth,
                           eta: float):
    """Unnormalized log posterior of phi^2 with interior latents integrated
    out, vectorized over phi2.  Valid for the plain (likelihood) loss."""
    if eta < 0:
        raise ParameterError("eta must be nonnegative")
    t = np.atleast_1d(np.asarray(phi2, dtype=float))
    a, b = truth.invgamma_a, truth.invgamma_b
    nA = 2 * data.n_blocks
    SA = float(np.sum((data.x_anchor - data.theta_anchor) ** 2))
    lp = (a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(t) - b / t
          - 0.5 * nA * np.log(2.0 * np.pi * t) - SA / (2.0 * t))
    if eta > 0 and data.d_x > 2:
        # tempering the interior emissions and reintegrating the latents
        # leaves (2 pi t)^{-(eta-1)nM/2} eta^{-nM/2} N(x_M; m, Sigma + (t/eta)I)
        R, D, _ = _interior_residuals(data, truth)
        nM = R.size
        ridge = D[None, :] + t[:, None] / eta            # (G, k)
        quad = np.sum(R ** 2, axis=0) @ (1.0 / ridge.T)  # (G,)
        logdet = data.n_blocks * np.sum(np.log(ridge), axis=1)
        lp += (-0.5 * (eta - 1.0) * nM * np.log(2.0 * np.pi * t)
               - 0.5 * nM * np.log(eta)
               - 0.5 * nM * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * quad)
    return lp if np.ndim(phi2) else float(lp[0])


@dataclass(frozen=True)
class SsmPhiPosterior:
    """Normalized phi^2 posterior on a grid, with predictive helpers."""

    phi2: np.ndarray        # grid, increasing
    log_density: np.ndarray  # normalized wrt phi2
    eta: float

    @property
    def log_weights(self) -> np.ndarray:
        """log of (density * trapezoid weight); sums to ~1 in probability."""
        w = np.gradient(self.phi2)
        return self.log_density + np.log(w)

    def mean_phi2(self) -> float:
        return float(np.sum(np.exp(self.log_weights) * self.phi2))

    def block_log_predictive(self, y: SsmDataset) -> np.ndarray:
        """Per-block log predictive density of calibration anchor pairs."""
        resid2 = np.sum((y.x_anchor - y.theta_anchor) ** 2, axis=1)  # (J,)
        t = self.phi2
        per = (-np.log(2.0 * np.pi * t)[None, :]
               - resid2[:, None] / (2.0 * t)[None, :])               # (J, G)
        return logsumexp(per + self.log_weights[None, :], axis=1)

    def pooled_log_predictive(self, y: SsmDataset) -> float:
        resid2 = np.sum((y.x_anchor - y.theta_anchor) ** 2, axis=1)
        t = self.phi2
        joint = (-len(resid2) * np.log(2.0 * np.pi * t)
                 - np.sum(resid2) / (2.0 * t))
        return float(logsumexp(joint + self.log_weights))

    def sample_phi2(self, size: int, seed: int) -> np.ndarray:
        p = np.exp(self.log_weights)
        p /= p.sum()
        rng = np.random.default_rng(seed)
        return rng.choice(self.phi2, size=size, p=p)


def build_ssm_phi_posterior(data: SsmDataset, truth: SsmTruth, eta: float,
                            n_grid: int = 801) -> SsmPhiPosterior:
    """Locate the phi^2 posterior on a coarse log grid, then refine."""
    coarse = np.exp(np.linspace(np.log(1e-6), np.log(1e6), 500))
    lp = ssm_log_posterior_phi2(coarse, data, truth, eta)
    top = np.max(lp)
    keep = np.where(lp > top - 45.0)[0]
    lo = coarse[max(keep[0] - 1, 0)]
    hi = coarse[min(keep[-1] + 1, len(coarse) - 1)]
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), n_grid))
    lp = ssm_log_posterior_phi2(grid, data, truth, eta)
    lp -= np.max(lp)
    norm = np.trapezoid(np.exp(lp), grid)
    return SsmPhiPosterior(phi2=grid, log_density=lp - np.log(norm), eta=eta)


def ssm_empirical_losses(data_train: SsmDataset, data_calib: SsmDataset,
                         truth: SsmTruth, etas) -> tuple[np.ndarray, np.ndarray]:
    """(pooled, product) calibration losses across a vector of eta values."""
    pooled = np.empty(len(etas))
    product = np.empty(len(etas))
    for i, eta in enumerate(np.asarray(etas, dtype=float)):
        post = build_ssm_phi_posterior(data_train, truth, eta)
        pooled[i] = -post.pooled_log_predictive(data_calib)
        product[i] = -float(np.sum(post.block_log_predictive(data_calib)))
    return pooled, product


def ssm_eta_b_grid_posterior(train: SsmDataset, calib: SsmDataset,
                             truth: SsmTruth, grid, n_iter: int = 30000,
                             burn_in: int = 10000, thin: int = 20,
                             seed: int = 0, scale_init: float = 0.3):
    """Lattice posterior over (eta, b) from the robust-loss update.

    One Metropolis chain per lattice point, advanced as a single batched
    sweep with per-row hyperparameters, then the per-block calibration
    predictive is averaged over the phi^2 draws and splined into a density.
    """
    from .hypercal import grid_posterior_from_values
    from .sampling import rwm_batch

    target = SsmJointTarget(train, truth)
    pts = grid.points()
    etas = pts[:, 0]
    betas = 1.0 / pts[:, 1]
    init = np.tile(target.init_state(), (len(pts), 1))
    draws, _ = rwm_batch(lambda st: target(st, etas, beta=betas), init,
                         n_iter=n_iter, burn_in=burn_in, thin=thin,
                         seed=seed, scale_init=scale_init)
    phi2 = np.exp(draws[:, :, 0])                                # (P, T)
    resid2 = np.sum((calib.x_anchor - calib.theta_anchor) ** 2, axis=1)
    T = phi2.shape[1]
    log_pred = np.empty(len(pts))
    # per lattice point to keep the (J, T) predictive matrix small
    for i in range(len(pts)):
        per = (-np.log(2.0 * np.pi * phi2[i])[None, :]
               - resid2[:, None] / (2.0 * phi2[i])[None, :])     # (J, T)
        log_pred[i] = float(np.sum(logsumexp(per, axis=1) - np.log(T)))
    return grid_posterior_from_values("product", grid, log_pred,
                                      np.zeros(len(pts)))


def ssm_eta_b_nested_draws(train: SsmDataset, calib: SsmDataset,
                           truth: SsmTruth, bounds, n_outer: int = 4000,
                           inner_len: int = 200, seed: int = 0,
                           scale_init: float = 0.3):
    """(eta, b) draws from the nested sampler matching the lattice target.

    The side chains (one per calibration block) live on the training
    posterior at the proposed hyperparameters and are refreshed by inner_len
    batched Metropolis steps per outer proposal.  Returns
    (draws (n_kept, 2), accept_rate).
    """
    from .hypercal import nested_mcmc_product
    from .sampling import rwm_batch

    target = SsmJointTarget(train, truth)
    resid2 = np.sum((calib.x_anchor - calib.theta_anchor) ** 2, axis=1)

    def inner_kernel(s, phis, n_steps, sd):
        eta, b = float(s[0]), float(s[1])
        draws, _ = rwm_batch(lambda st: target(st, eta, beta=1.0 / b),
                             phis, n_iter=n_steps, burn_in=n_steps - 1,
                             thin=1, seed=sd, scale_init=scale_init)
        return draws[:, 0, :]

    def block_log_pred(phis):
        phi2 = np.exp(phis[:, 0])
        return -np.log(2.0 * np.pi * phi2) - resid2 / (2.0 * phi2)

    phi0 = np.tile(target.init_state(), (calib.n_blocks, 1))
    return nested_mcmc_product(lambda s: 0.0, bounds, phi0, inner_kernel,
                               block_log_pred, n_outer=n_outer,
                               inner_len=inner_len, seed=seed)


class SsmJointTarget:
    """Batched log density over states [log phi^2, interior latents].

    eta (and, for the beta-loss variant, beta) may differ per batch row,
    which lets a whole hyperparameter lattice advance as one vectorized
    Metropolis sweep.  The beta-loss data term uses an expm1 form that is
    smooth through beta = 1, where it reduces to the log score (the shift is
    constant in the parameters, so the posterior is unaffected).
    """

    def __init__(self, data: SsmDataset, truth: SsmTruth):
        self.data = data
        self.truth = truth
        self.k = data.d_x - 2
        if self.k < 1:
            raise ParameterError("need interior positions for the joint target")
        w_left, w_right, self.Q, _ = ar1_bridge(truth, data.d_x)
        self.prior_mean = (data.theta_anchor[:, :1] * w_left
                           + data.theta_anchor[:, 1:] * w_right)  # (n, k)
        self.SA = float(np.sum((data.x_anchor - data.theta_anchor) ** 2))
        self.nA = 2 * data.n_blocks
        self.nM = data.n_blocks * self.k
        self.x_M = data.x_missing

    @property
    def dim(self) -> int:
        return 1 + self.nM

    def init_state(self) -> np.ndarray:
        return np.concatenate([[0.0], self.prior_mean.ravel()])

    def __call__(self, states: np.ndarray, eta, beta=None) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        B = states.shape[0]
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (B,))
        logt = states[:, 0]
        t = np.exp(logt)
        th = states[:, 1:].reshape(B, self.data.n_blocks, self.k)
        a, b = self.truth.invgamma_a, self.truth.invgamma_b
        # phi^2 prior plus log-scale Jacobian
        lp = a * np.log(b) - gammaln(a) - a * logt - b / t
        lp += -0.5 * self.nA * np.log(2.0 * np.pi * t) - self.SA / (2.0 * t)
        # AR(1) bridge prior on the latents
        res = th - self.prior_mean[None]
        lp += -0.5 * np.einsum("bnk,kl,bnl->b", res, self.Q, res)
        # tempered interior-emission term
        d2 = (self.x_M[None] - th) ** 2
        if beta is None:
            loglik = (-0.5 * self.nM * np.log(2.0 * np.pi * t)
                      - np.sum(d2, axis=(1, 2)) / (2.0 * t))
            lp += eta * loglik
        else:
            beta = np.broadcast_to(np.asarray(beta, dtype=float), (B,))
            logp = (-0.5 * np.log(2.0 * np.pi * t)[:, None, None]
                    - d2 / (2.0 * t)[:, None, None])
            bm1 = (beta - 1.0)[:, None, None]
            near_one = np.abs(bm1) < 1e-10
            safe = np.where(near_one, 1.0, bm1)
            with np.errstate(over="ignore"):
                data_term = np.where(near_one, -logp,
                                     -np.expm1(bm1 * logp) / safe)
            integral = (self.nM / beta * beta ** -0.5
                        * (2.0 * np.pi * t) ** ((1.0 - beta) / 2.0))
            loss = np.sum(data_term, axis=(1, 2)) + integral
            lp += -eta * loss
        return lp
