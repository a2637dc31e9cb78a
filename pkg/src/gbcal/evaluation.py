"""Test-set evaluation: risk ratios, high-precision reference optima,
replicate studies, and concentration diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import ParameterError, SsmTruth, simulate_ssm, split_ssm_blocks
from .hypercal import (GridPosterior, SGrid, compute_estimator_set,
                       grid_posterior_from_values, prior_uniform)
from .ssm import build_ssm_phi_posterior


@dataclass(frozen=True)
class RiskRatioReport:
    s1: float | tuple
    s2: float | tuple
    kind: str                    # "product" | "pooled"
    value: float
    n_test_sets: int
    per_set_log_ratios: np.ndarray
    mc_se: float


def _report(s1, s2, kind, log_ratios) -> RiskRatioReport:
    log_ratios = np.asarray(log_ratios, dtype=float)
    ok = np.isfinite(log_ratios)
    if not np.all(ok):
        warnings.warn(f"{int((~ok).sum())} test sets dropped (non-finite ratio)")
        log_ratios = log_ratios[ok]
    ratios = np.exp(log_ratios)
    se = float(np.std(ratios, ddof=1) / np.sqrt(len(ratios))) if len(ratios) > 1 else 0.0
    return RiskRatioReport(s1=s1, s2=s2, kind=kind,
                           value=float(np.mean(ratios)),
                           n_test_sets=len(ratios),
                           per_set_log_ratios=log_ratios, mc_se=se)


def risk_ratio_product(s1, s2, test_sets, block_log_pred_at) -> RiskRatioReport:
    """Mean over test sets of the product of pointwise predictive ratios.

    block_log_pred_at(s, test_set) must return per-block log predictive
    densities under the posterior refit at s on the pooled training and
    calibration data.  All arithmetic stays in log space until the final
    per-set exponentiation.
    """
    with np.errstate(invalid="ignore"):
        logs = [float(np.sum(block_log_pred_at(s1, z))
                      - np.sum(block_log_pred_at(s2, z)))
                for z in test_sets]
    return _report(s1, s2, "product", logs)


def risk_ratio_pooled(s1, s2, test_sets, pooled_log_pred_at) -> RiskRatioReport:
    """Mean over test sets of the joint predictive ratio (an averaged
    intrinsic Bayes factor)."""
    logs = [float(pooled_log_pred_at(s1, z) - pooled_log_pred_at(s2, z))
            for z in test_sets]
    return _report(s1, s2, "pooled", logs)


def ssm_exact_block_log_ratio(post1, post2, anchor_var: float = 1.0,
                              r_max: float = 300.0, n_quad: int = 12001) -> float:
    """log of the expected per-block predictive ratio for fresh anchor pairs.

    The block score of an anchor-pair predictive depends on the data only
    through the anchor residual sum of squares, which for a fresh block is
    anchor_var times a chi-square with 2 degrees of freedom.  The expected
    ratio E[p1(block)/p2(block)] is therefore a one-dimensional integral,
    evaluated here by trapezoid quadrature; the expected product over a test
    set of j independent blocks is this expectation raised to the power j.

    This sidesteps the heavy right tail of the simulation estimator: near
    equal predictive quality the expected ratio is 1 + c with c far below
    the Monte Carlo error of any affordable number of simulated test sets.
    """
    from scipy.special import logsumexp

    r = np.linspace(0.0, r_max, n_quad)

    def logp(post):
        t = post.phi2
        per = (-np.log(2.0 * np.pi * t)[None, :]
               - r[:, None] / (2.0 * t)[None, :])
        return logsumexp(per + post.log_weights[None, :], axis=1)

    # chi-square(2) density of r / anchor_var, with the scale Jacobian
    log_w = (logp(post1) - logp(post2)
             - r / (2.0 * anchor_var) - np.log(2.0 * anchor_var))
    m = float(np.max(log_w))
    return m + float(np.log(np.trapezoid(np.exp(log_w - m), r)))


def high_precision_optimal_s(loss_fn, bounds, n_coarse: int = 81) -> tuple[float, bool]:
    """Argmin of an empirical calibration loss; returns (s, on_boundary)."""
    lo, hi = bounds
    grid = np.linspace(lo, hi, n_coarse)
    vals = np.array([loss_fn(s) for s in grid])
    i = int(np.argmin(vals))
    if i in (0, n_coarse - 1):
        return float(grid[i]), True
    a, b = grid[i - 1], grid[i + 1]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = loss_fn(c), loss_fn(d)
    while (b - a) > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = loss_fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = loss_fn(d)
    return float((a + b) / 2), False


# --- state-space replicate study ------------------------------------------

@dataclass(frozen=True)
class SsmStudyConfig:
    truth: SsmTruth = SsmTruth()
    n_total_blocks: int = 60
    n_train_blocks: int = 10
    d_x: int = 6
    n_replicates: int = 100
    n_test_sets: int = 30
    test_blocks: int = 100
    eta_upper: float = 1.0
    grid_points: int = 41
    kind: str = "product"
    risk_method: str = "simulate"   # "simulate" | "exact"
    seed: int = 0

    def __post_init__(self):
        if self.risk_method not in ("simulate", "exact"):
            raise ParameterError("risk_method must be 'simulate' or 'exact', "
                                 f"got {self.risk_method!r}")

    def config_hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


@dataclass
class ReplicateStudy:
    config: SsmStudyConfig
    estimator_sets: list
    risk_reports: list  # list of dicts: name -> RiskRatioReport

    def quantile_rows(self, against: str):
        """(min, q25, median, q75, max, mean) of risk ratios per estimator."""
        rows = {}
        names = self.risk_reports[0].keys()
        for name in names:
            vals = np.array([rep[name].value for rep in self.risk_reports
                             if name in rep])
            rows[name] = (vals.min(), *np.percentile(vals, [25, 50, 75]),
                          vals.max(), vals.mean())
        return rows

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for i, (est, reps) in enumerate(zip(self.estimator_sets,
                                                self.risk_reports)):
                rec = {"replicate": i,
                       "config_hash": self.config.config_hash(),
                       "seed": self.config.seed,
                       "estimators": est.as_dict(),
                       "risk_ratios": {k: v.value for k, v in reps.items()}}
                fh.write(json.dumps(rec) + "\n")

    def write_summary_csv(self, path):
        rows = self.quantile_rows("")
        with open(path, "w") as fh:
            fh.write("comparison,min,q25,median,q75,max,mean\n")
            for name, vals in rows.items():
                fh.write(name + "," + ",".join(f"{v:.6g}" for v in vals) + "\n")


def _ssm_eta_posterior(train, calib, truth, grid: SGrid, kind: str) -> GridPosterior:
    etas = grid.axes[0]
    log_pred = np.empty(len(etas))
    for i, eta in enumerate(etas):
        post = build_ssm_phi_posterior(train, truth, float(eta))
        if kind == "pooled":
            log_pred[i] = post.pooled_log_predictive(calib)
        else:
            log_pred[i] = float(np.sum(post.block_log_predictive(calib)))
    log_prior = prior_uniform(etas[-1])(etas)
    return grid_posterior_from_values(kind, grid, log_pred, log_prior)


def run_ssm_replicate(config: SsmStudyConfig, r: int):
    """One replicate of the state-space study; safe to run in a worker."""
    rs = np.random.SeedSequence(config.seed).spawn(config.n_replicates)[r] \
        .generate_state(4)
    grid = SGrid.regular([(0.0, config.eta_upper)], ["eta"], config.grid_points)
    full = simulate_ssm(config.truth, config.n_total_blocks, config.d_x,
                        int(rs[0]))
    train, calib = split_ssm_blocks(full, config.n_train_blocks, int(rs[1]))
    gp = _ssm_eta_posterior(train, calib, config.truth, grid, config.kind)
    est = compute_estimator_set(gp)
    eta_hat = est.mean.eta
    # refit at each reference eta on the pooled data (all blocks)
    posts = {}

    def block_pred(eta, z):
        if eta not in posts:
            posts[eta] = build_ssm_phi_posterior(full, config.truth, eta)
        return posts[eta].block_log_predictive(z)

    if config.risk_method == "exact":
        p_hat = build_ssm_phi_posterior(full, config.truth, eta_hat)
        anchor_var = config.truth.phi_A_star ** 2
        reports = {}
        for name, eta_ref in (("mean_vs_bayes", 1.0), ("mean_vs_cut", 0.0)):
            p_ref = build_ssm_phi_posterior(full, config.truth, eta_ref)
            log_r = ssm_exact_block_log_ratio(p_hat, p_ref, anchor_var)
            reports[name] = RiskRatioReport(
                s1=eta_hat, s2=eta_ref, kind="product",
                value=float(np.exp(config.test_blocks * log_r)),
                n_test_sets=0, per_set_log_ratios=np.empty(0), mc_se=0.0)
        return est, reports

    tests = [simulate_ssm(config.truth, config.test_blocks, config.d_x,
                          int(rs[2]) + 1000 * k)
             for k in range(config.n_test_sets)]
    reports = {
        "mean_vs_bayes": risk_ratio_product(eta_hat, 1.0, tests, block_pred),
        "mean_vs_cut": risk_ratio_product(eta_hat, 0.0, tests, block_pred),
    }
    return est, reports


def ssm_replicate_study(config: SsmStudyConfig, jobs: int = 1) -> ReplicateStudy:
    """Simulate, split, calibrate eta, refit on pooled data, and score
    predictive risk against the plain and fully cut updates.

    Risk ratios use the posterior mean of the chosen calibration kind as
    the data-driven estimate, compared against eta=1 (ordinary update) and
    eta=0 (anchors only).  Test sets are fresh realisations of the truth;
    with risk_method "exact" the test-set expectation is computed by
    quadrature over the anchor-residual distribution instead of simulation.
    Replicates are independently seeded, so jobs > 1 changes nothing but
    wall time.
    """
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_ssm_replicate,
                                    [config] * config.n_replicates,
                                    range(config.n_replicates)))
    else:
        results = [run_ssm_replicate(config, r)
                   for r in range(config.n_replicates)]
    est_sets = [r[0] for r in results]
    reports = [r[1] for r in results]
    return ReplicateStudy(config=config, estimator_sets=est_sets,
                          risk_reports=reports)


# --- asymptotic diagnostics -----------------------------------------------

@dataclass(frozen=True)
class ConcentrationReport:
    slope: float
    sup_distance: float | None
    gamma_shape: float | None
    gamma_rate: float | None


def concentration_diagnostics(posteriors_by_J: dict,
                              pooled_reference=None,
                              boundary_J: float | None = None) -> ConcentrationReport:
    """Summaries of how posteriors behave along a ladder of calibration sizes.

    posteriors_by_J maps J to a 1-d GridPosterior (product kind for the
    slope).  pooled_reference, when given, is (gp, log_target_fn) for the
    non-concentrating pooled check: log_target_fn(s) is the unnormalized log
    of the limiting density, compared in sup norm after normalization.  When
    boundary_J is set, the largest-J posterior is moment-matched to a Gamma
    for T = J*s.
    """
    Js = np.array(sorted(posteriors_by_J), dtype=float)
    sds = np.array([posteriors_by_J[int(J)].sd()[0] for J in Js])
    if len(Js) >= 2:
        slope = float(np.polyfit(np.log(Js), np.log(sds), 1)[0])
    else:
        slope = float("nan")
    sup = None
    if pooled_reference is not None:
        gp, log_target_fn = pooled_reference
        sup = pooled_limit_distance(gp, log_target_fn)
    shape = rate = None
    if boundary_J is not None:
        gp = posteriors_by_J[int(max(posteriors_by_J))]
        m = gp.mean()[0] * boundary_J
        v = (gp.sd()[0] * boundary_J) ** 2
        shape, rate = float(m * m / v), float(m / v)
    return ConcentrationReport(slope=slope, sup_distance=sup,
                               gamma_shape=shape, gamma_rate=rate)


def pooled_limit_distance(gp: GridPosterior, log_target_fn) -> float:
    """Sup distance between the normalized pooled posterior and the
    normalized limiting density exp(log_target_fn(s)); fold the s-prior into
    log_target_fn when it is not flat."""
    x, dens = gp.marginal(0)
    ref = np.asarray(log_target_fn(x), dtype=float)
    ref = np.exp(ref - np.max(ref))
    ref /= np.trapezoid(ref, x)
    return float(np.max(np.abs(dens - ref)))
