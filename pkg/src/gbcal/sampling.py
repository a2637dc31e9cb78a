"""MCMC machinery: adaptive random-walk Metropolis (single and batched),
two-stage semi-modular sampling, and exact Gaussian conditionals for the
state-space missing latents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import ParameterError, SsmTruth


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 10000
    burn_in: int = 2000
    thin: int = 10
    target_accept: float | None = None  # default 0.44 in 1-d, 0.234 otherwise
    init: np.ndarray | float = 0.0
    adapt_window: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.burn_in < self.n_iter:
            raise ParameterError("burn_in must be smaller than n_iter")
        if self.thin < 1:
            raise ParameterError("thin must be >= 1")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise ParameterError("target_accept must be in (0,1)")


@dataclass(frozen=True)
class Chain:
    draws: np.ndarray             # (n_draws, d)
    accept_rate: float
    log_density_trace: np.ndarray
    seed: int
    ess_estimate: np.ndarray      # per coordinate

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def dump_csv(self, path):
        d = self.draws.shape[1]
        header = "iter," + ",".join(f"coord_{k}" for k in range(d)) + ",log_density"
        body = np.column_stack([np.arange(self.n_draws), self.draws,
                                self.log_density_trace])
        np.savetxt(path, body, delimiter=",", header=header, comments="")


def ess_initial_positive(x: np.ndarray) -> float:
    """Effective sample size by the initial-positive-sequence rule on
    autocovariance pair sums."""
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m < 4 or np.var(x) == 0:
        return float(m)
    xc = x - x.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * m)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:m].real / m
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0)
    return float(min(m, m / tau))


def _default_target(d: int) -> float:
    return 0.44 if d == 1 else 0.234


def adaptive_rwm(log_target, config: ChainConfig) -> Chain:
    """Random-walk Metropolis with Robbins-Monro scale adaptation.

    A single global proposal scale (on the log scale) is steered toward the
    target acceptance rate during burn-in, on top of per-coordinate spread
    estimates learned from the history; both are frozen once burn-in ends, so
    the retained draws come from a fixed Markov kernel.
    """
    init = np.atleast_1d(np.asarray(config.init, dtype=float))
    d = len(init)
    target = config.target_accept or _default_target(d)
    rng = np.random.default_rng(config.seed)

    cur = init.copy()
    cur_lp = float(log_target(cur if d > 1 else cur[0]))
    if not np.isfinite(cur_lp):
        raise ParameterError(f"log_target not finite at init {init}: {cur_lp}")

    log_s = 0.0
    mean_est = cur.copy()
    var_est = np.ones(d)
    n_keep = (config.n_iter - config.burn_in) // config.thin
    draws = np.empty((n_keep, d))
    lp_trace = np.empty(n_keep)
    n_acc = 0
    window_acc = 0
    kept = 0
    for t in range(config.n_iter):
        step = np.exp(log_s) * np.sqrt(var_est) * rng.standard_normal(d)
        prop = cur + step
        prop_lp = float(log_target(prop if d > 1 else prop[0]))
        if np.isnan(prop_lp):
            raise ParameterError(f"log_target returned NaN at {prop}")
        alpha = min(1.0, np.exp(min(0.0, prop_lp - cur_lp)))
        if rng.random() < alpha:
            cur, cur_lp = prop, prop_lp
            n_acc += 1
            window_acc += 1
        if t < config.burn_in:
            gamma = (t + 1.0) ** -0.6
            log_s += gamma * (alpha - target)
            delta = cur - mean_est
            mean_est += delta / (t + 2.0)
            var_est += gamma * (delta * (cur - mean_est) - var_est)
            var_est = np.maximum(var_est, 1e-12)
            if (t + 1) % config.adapt_window == 0:
                if window_acc == 0:
                    warnings.warn("no acceptances over a full adaptation window; "
                                  "proposal scale may be collapsing")
                window_acc = 0
        else:
            k = t - config.burn_in
            if k % config.thin == 0 and kept < n_keep:
                draws[kept] = cur
                lp_trace[kept] = cur_lp
                kept += 1
    ess = np.array([ess_initial_positive(draws[:, j]) for j in range(d)])
    return Chain(draws=draws, accept_rate=n_acc / config.n_iter,
                 log_density_trace=lp_trace, seed=config.seed, ess_estimate=ess)


def rwm_batch(log_target_batch, init: np.ndarray, n_iter: int, burn_in: int,
              thin: int, seed: int, target_accept: float | None = None,
              scale_init: float = 1.0):
    """Many independent Metropolis chains advanced in lockstep.

    log_target_batch maps a (B, d) state matrix to B log densities; each row
    has its own adapted scale.  Used for per-lattice-point chains and for the
    inner refreshes of the nested sampler, where the chains share structure
    and vectorize well.  Returns (draws (B, n_keep, d), accept_rate (B,)).
    """
    init = np.asarray(init, dtype=float)
    B, d = init.shape
    target = target_accept or _default_target(d)
    rng = np.random.default_rng(seed)
    cur = init.copy()
    cur_lp = np.asarray(log_target_batch(cur), dtype=float)
    if not np.all(np.isfinite(cur_lp)):
        raise ParameterError("log_target not finite at some initial state")
    log_s = np.full(B, np.log(scale_init))
    n_keep = (n_iter - burn_in) // thin
    draws = np.empty((B, n_keep, d))
    n_acc = np.zeros(B)
    kept = 0
    for t in range(n_iter):
        prop = cur + np.exp(log_s)[:, None] * rng.standard_normal((B, d))
        prop_lp = np.asarray(log_target_batch(prop), dtype=float)
        if np.any(np.isnan(prop_lp)):
            raise ParameterError("log_target returned NaN")
        alpha = np.exp(np.minimum(0.0, prop_lp - cur_lp))
        acc = rng.random(B) < alpha
        cur[acc] = prop[acc]
        cur_lp[acc] = prop_lp[acc]
        n_acc += acc
        if t < burn_in:
            log_s += (t + 1.0) ** -0.6 * (alpha - target)
        else:
            k = t - burn_in
            if k % thin == 0 and kept < n_keep:
                draws[:, kept] = cur
                kept += 1
    return draws, n_acc / n_iter


def smi_two_stage_sample(smi_log_target, cond_theta, config: ChainConfig):
    """Sample (phi, theta', theta) for a semi-modular posterior.

    Stage 1 runs a Metropolis chain on the joint (phi, theta') Gibbs target;
    stage 2 draws theta from the exact conditional posterior given phi (the
    untempered module-2 update), one per retained draw.  The conditional
    never depends on the tempering, only on (x2, phi).
    """
    chain = adaptive_rwm(smi_log_target, config)
    rng = np.random.default_rng(config.seed + 10 ** 9)
    thetas = []
    keep = np.ones(chain.n_draws, dtype=bool)
    for i, row in enumerate(chain.draws):
        try:
            thetas.append(cond_theta(row[0], rng))
        except Exception:
            keep[i] = False
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} conditional draws failed and were dropped")
    theta = np.asarray(thetas)
    return chain.draws[keep], theta, chain


def ar1_bridge(truth: SsmTruth, d_x: int):
    """Conditional law of the interior chain positions of one block given its
    two endpoints.

    Returns (w_left, w_right, Q, V): mean = w_left*theta_left +
    w_right*theta_right, precision Q (tridiagonal, dense storage), covariance
    V = Q^{-1}, all for the k = d_x - 2 interior positions.
    """
    k = d_x - 2
    if k < 1:
        raise ParameterError("block has no interior positions")
    nu, s2 = truth.nu, truth.sigma_ar ** 2
    Q = np.zeros((k, k))
    idx = np.arange(k)
    Q[idx, idx] = (1.0 + nu ** 2) / s2
    Q[idx[:-1], idx[:-1] + 1] = -nu / s2
    Q[idx[:-1] + 1, idx[:-1]] = -nu / s2
    # linear terms: first interior sees nu*theta_left, the endpoint factor
    # N(theta_right; nu*theta_last_interior, s2) feeds nu*theta_right
    e_left = np.zeros(k); e_left[0] = nu / s2
    e_right = np.zeros(k); e_right[-1] = nu / s2
    V = np.linalg.inv(Q)
    w_left = V @ e_left
    w_right = V @ e_right
    return w_left, w_right, Q, V


def ssm_conditional_theta(x_M: np.ndarray, theta_anchor: np.ndarray, phi: float,
                          truth: SsmTruth, seed: int) -> np.ndarray:
    """Exact draw of the missing latents given anchors and interior emissions.

    x_M: (n_blocks, d_x-2) interior emissions; theta_anchor: (n_blocks, 2).
    The posterior is Gaussian per block with precision Q + I/phi^2.
    """
    x_M = np.atleast_2d(np.asarray(x_M, dtype=float))
    theta_anchor = np.atleast_2d(np.asarray(theta_anchor, dtype=float))
    n_blocks, k = x_M.shape
    w_left, w_right, Q, _ = ar1_bridge(truth, k + 2)
    prior_mean = (theta_anchor[:, :1] * w_left + theta_anchor[:, 1:] * w_right)
    P = Q + np.eye(k) / phi ** 2
    L = np.linalg.cholesky(P)
    rhs = (prior_mean @ Q.T) + x_M / phi ** 2
    mean = np.linalg.solve(P, rhs.T).T
    z = np.random.default_rng(seed).standard_normal((n_blocks, k))
    noise = np.linalg.solve(L.T, z.T).T
    return mean + noise
