"""Posterior distributions over inference hyperparameters.

The workhorse is a lattice of hyperparameter values with a log predictive
score per point (pooled: joint density of all calibration data; product: sum
of pointwise densities), splined and normalized into a density.  A nested
Metropolis sampler provides an off-lattice alternative, and five point
estimators summarize either representation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline, UnivariateSpline
from scipy.special import logsumexp

from .datasets import HyperPoint, ParameterError

_FINE_1D = 4001
_FINE_2D = 301


@dataclass(frozen=True)
class SGrid:
    """Ordered lattice over one or two hyperparameter axes."""

    axes: tuple
    names: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if len(axes) not in (1, 2):
            raise ParameterError("grids support one or two axes")
        for a in axes:
            if len(a) < 4 or np.any(np.diff(a) <= 0):
                raise ParameterError("each axis must be strictly increasing "
                                     "with at least 4 points")
        if len(self.names) != len(axes):
            raise ParameterError("one name per axis")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def regular(cls, bounds, names, n: int = 41) -> "SGrid":
        axes = tuple(np.linspace(lo, hi, n) for lo, hi in bounds)
        return cls(axes=axes, names=tuple(names))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        """All lattice points, shape (prod(shape), ndim), axis 0 slowest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def prior_uniform(upper: float = 1.0):
    def lp(s):
        s = np.asarray(s, dtype=float)
        return np.where((s >= 0) & (s <= upper), -np.log(upper), -np.inf)
    return lp


def prior_exponential(rate: float = 1.0 / 3.0):
    def lp(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, np.log(rate) - rate * s, -np.inf)
    return lp


def prior_improper_flat():
    def lp(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, 0.0, -np.inf)
    return lp


@dataclass(frozen=True)
class GridPosterior:
    grid: SGrid
    log_pred: np.ndarray     # lattice shape
    log_prior: np.ndarray    # lattice shape
    kind: str                # "pooled" | "product"
    _spline: object = field(repr=False, default=None)
    _log_norm: float = field(repr=False, default=0.0)

    @property
    def bounds(self):
        return tuple((a[0], a[-1]) for a in self.grid.axes)

    def log_density(self, *coords):
        """Normalized log posterior density at arbitrary in-bounds points."""
        if self.grid.ndim == 1:
            return self._spline(np.asarray(coords[0], dtype=float)) - self._log_norm
        x, y = (np.asarray(c, dtype=float) for c in coords)
        return self._spline(x, y, grid=False) - self._log_norm

    def density(self, *coords):
        return np.exp(self.log_density(*coords))

    def _fine_axes(self):
        n = _FINE_1D if self.grid.ndim == 1 else _FINE_2D
        return tuple(np.linspace(a[0], a[-1], n) for a in self.grid.axes)

    def _fine_density(self):
        axes = self._fine_axes()
        if self.grid.ndim == 1:
            return axes, np.exp(self.log_density(axes[0]))
        gx, gy = np.meshgrid(*axes, indexing="ij")
        return axes, np.exp(self.log_density(gx, gy))

    def normalization_check(self) -> float:
        axes, dens = self._fine_density()
        total = dens
        for ax in reversed(axes):
            total = np.trapezoid(total, ax, axis=-1)
        return float(total)

    def marginal(self, axis: int = 0):
        """(grid, density) of the 1-d marginal along the chosen axis."""
        axes, dens = self._fine_density()
        if self.grid.ndim == 1:
            return axes[0], dens
        other = 1 - axis
        m = np.trapezoid(dens, axes[other], axis=other)
        return axes[axis], m

    def mean(self) -> np.ndarray:
        out = []
        for ax in range(self.grid.ndim):
            x, m = self.marginal(ax)
            m = m / np.trapezoid(m, x)
            out.append(float(np.trapezoid(x * m, x)))
        return np.array(out)

    def sd(self) -> np.ndarray:
        out = []
        mu = self.mean()
        for ax in range(self.grid.ndim):
            x, m = self.marginal(ax)
            m = m / np.trapezoid(m, x)
            out.append(float(np.sqrt(np.trapezoid((x - mu[ax]) ** 2 * m, x))))
        return np.array(out)

    def sample(self, size: int, seed: int) -> np.ndarray:
        """Draws from the splined density by fine-grid inversion (1-d) or
        cell sampling with jitter (2-d)."""
        rng = np.random.default_rng(seed)
        axes, dens = self._fine_density()
        if self.grid.ndim == 1:
            x = axes[0]
            cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2
                                                   * np.diff(x))])
            cdf /= cdf[-1]
            return np.interp(rng.random(size), cdf, x)[:, None]
        p = dens.ravel()
        p = p / p.sum()
        idx = rng.choice(len(p), size=size, p=p)
        ix, iy = np.unravel_index(idx, dens.shape)
        dx = axes[0][1] - axes[0][0]
        dy = axes[1][1] - axes[1][0]
        sx = axes[0][ix] + (rng.random(size) - 0.5) * dx
        sy = axes[1][iy] + (rng.random(size) - 0.5) * dy
        sx = np.clip(sx, axes[0][0], axes[0][-1])
        sy = np.clip(sy, axes[1][0], axes[1][-1])
        return np.column_stack([sx, sy])

    def to_hyperpoint(self, values) -> HyperPoint:
        kw = {name: float(v) for name, v in zip(self.grid.names, np.atleast_1d(values))}
        return HyperPoint(**kw)

    def export_csv(self, path):
        pts = self.grid.points()
        lpred = self.log_pred.ravel()
        lprior = self.log_prior.ravel()
        lpost = (lpred + lprior)
        lpost = lpost - self._log_norm
        header = ",".join(f"s_axis{i}" for i in range(self.grid.ndim))
        with open(path, "w") as fh:
            fh.write(header + ",log_pred,log_prior,log_post_norm\n")
            for row, a, b, c in zip(pts, lpred, lprior, lpost):
                coords = ",".join(repr(float(v)) for v in row)
                fh.write(f"{coords},{a!r},{b!r},{c!r}\n")


def grid_posterior_from_values(kind: str, grid: SGrid, log_pred: np.ndarray,
                               log_prior: np.ndarray) -> GridPosterior:
    """Assemble the splined, normalized posterior from lattice values.

    Lattice points with missing (non-finite) predictives are dropped from
    the 1-d spline fit with a warning; 2-d fits require a full lattice.
    """
    if kind not in ("pooled", "product"):
        raise ParameterError(f"kind must be pooled or product, got {kind!r}")
    log_pred = np.asarray(log_pred, dtype=float).reshape(grid.shape)
    log_prior = np.asarray(log_prior, dtype=float).reshape(grid.shape)
    log_post = log_pred + log_prior
    center = float(np.max(log_post[np.isfinite(log_post)]))
    log_post = log_post - center
    if grid.ndim == 1:
        x = grid.axes[0]
        ok = np.isfinite(log_post)
        if not np.all(ok):
            warnings.warn(f"{int((~ok).sum())} lattice points missing; spline "
                          "fit on the rest")
        spline = CubicSpline(x[ok], log_post[ok], bc_type="natural")
        fine = np.linspace(x[0], x[-1], _FINE_1D)
        log_norm = float(np.log(np.trapezoid(np.exp(spline(fine)), fine)))
    else:
        if not np.all(np.isfinite(log_post)):
            raise ParameterError("2-d grids need finite values at every point")
        spline = RectBivariateSpline(grid.axes[0], grid.axes[1], log_post,
                                     kx=3, ky=3, s=0)
        fx = np.linspace(grid.axes[0][0], grid.axes[0][-1], _FINE_2D)
        fy = np.linspace(grid.axes[1][0], grid.axes[1][-1], _FINE_2D)
        vals = np.exp(spline(fx, fy))
        log_norm = float(np.log(np.trapezoid(np.trapezoid(vals, fy, axis=1), fx)))
    return GridPosterior(grid=grid, log_pred=log_pred,
                         log_prior=log_prior + 0.0, kind=kind,
                         _spline=spline, _log_norm=log_norm)


# --- Monte Carlo predictives ----------------------------------------------

def _per_draw_log_density(draws: np.ndarray, model, y_pts: np.ndarray) -> np.ndarray:
    """(T, J) matrix of log p(y_j | phi_t); broadcasts when the model allows."""
    draws = np.asarray(draws)
    if draws.ndim == 1:
        draws = draws[:, None]
    T, d = draws.shape
    phi_arg = draws[:, 0:1] if d == 1 else tuple(draws[:, j:j + 1] for j in range(d))
    try:
        out = model.log_density(y_pts[None, :], phi_arg)
        if np.shape(out) == (T, len(y_pts)):
            return np.asarray(out)
    except Exception:
        pass
    return np.stack([model.log_density(y_pts, row if len(row) > 1 else row[0])
                     for row in draws])


def log_pointwise_predictive(draws, model, y_j) -> float:
    """Log of the Monte Carlo posterior predictive density at one point."""
    y = np.atleast_1d(np.asarray(y_j, dtype=float))
    mat = _per_draw_log_density(draws, model, y)
    out = logsumexp(mat, axis=0) - np.log(mat.shape[0])
    if np.any(np.isneginf(out)):
        warnings.warn("all draws give zero density at a calibration point")
    return float(out.sum())


def log_product_predictive(draws, model, y) -> float:
    """Sum over calibration points of log pointwise predictives."""
    from .datasets import SimpleDataset

    pts = y.points if isinstance(y, SimpleDataset) else np.asarray(y, dtype=float)
    mat = _per_draw_log_density(draws, model, pts)
    return float(np.sum(logsumexp(mat, axis=0) - np.log(mat.shape[0])))


def log_pooled_predictive(draws, model, y) -> float:
    """Log Monte Carlo estimate of the joint predictive of all of y.

    High variance at large J: the average is dominated by few draws, so the
    effective sample size of the implicit weights is checked.
    """
    from .datasets import SimpleDataset

    pts = y.points if isinstance(y, SimpleDataset) else np.asarray(y, dtype=float)
    mat = _per_draw_log_density(draws, model, pts)
    rows = mat.sum(axis=1)
    w = np.exp(rows - rows.max())
    ess = w.sum() ** 2 / np.sum(w * w)
    if ess < 10:
        warnings.warn(f"pooled predictive dominated by few draws (ESS {ess:.1f})")
    return float(logsumexp(rows) - np.log(len(rows)))


def build_grid_posterior(kind: str, grid: SGrid, log_prior_fn, y,
                         sampler_factory, model, seed: int = 0) -> GridPosterior:
    """One chain per lattice point, then spline-and-normalize.

    sampler_factory(s_tuple, seed) must return draws of phi targeting the
    tempered posterior at that lattice point.  A failing lattice point is
    marked missing rather than aborting the sweep.
    """
    pts = grid.points()
    log_pred = np.empty(len(pts))
    for i, s in enumerate(pts):
        try:
            draws = sampler_factory(tuple(s), seed + i)
            if kind == "pooled":
                log_pred[i] = log_pooled_predictive(draws, model, y)
            else:
                log_pred[i] = log_product_predictive(draws, model, y)
        except Exception as exc:  # noqa: BLE001 - isolate lattice failures
            warnings.warn(f"lattice point {tuple(s)} failed: {exc}")
            log_pred[i] = np.nan
    log_prior = _prior_on_lattice(log_prior_fn, pts)
    return grid_posterior_from_values(kind, grid, log_pred, log_prior)


def _prior_on_lattice(log_prior_fn, pts: np.ndarray) -> np.ndarray:
    if pts.shape[1] == 1:
        return np.asarray(log_prior_fn(pts[:, 0]), dtype=float)
    return np.asarray([log_prior_fn(tuple(p)) for p in pts], dtype=float)


# --- nested MCMC ----------------------------------------------------------

def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    y = np.where(y > span, 2 * span - y, y)
    return lo + y


def nested_mcmc(log_prior_fn, bounds, state0, inner_refresh, log_calib,
                n_outer: int, seed: int, s_init=None, prop_scale=None,
                burn_in: int = 200):
    """Metropolis over s with parameter draws refreshed by side chains.

    state0 holds the current parameter draws (one per calibration block for
    the product loss, a single one for pooled).  At each outer step a new s
    is proposed, inner_refresh(s', state, seed) advances the side chains
    under the proposed s, and the move is accepted with the prior ratio
    times the calibration-density ratio of the refreshed versus current
    draws.  Returns (s_draws, accept_rate).
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(bounds)
    rng = np.random.default_rng(seed)
    s = np.asarray(s_init, dtype=float) if s_init is not None else (lo + hi) / 2
    scale = np.asarray(prop_scale, dtype=float) if prop_scale is not None \
        else (hi - lo) / 10.0
    log_s_adapt = 0.0
    state = state0
    state = inner_refresh(s, state, int(rng.integers(2 ** 63)))
    cur_calib = float(log_calib(state))
    cur_prior = float(log_prior_fn(tuple(s) if d > 1 else s[0]))
    draws = np.empty((n_outer - burn_in, d))
    n_acc = 0
    for t in range(n_outer):
        prop = _reflect(s + np.exp(log_s_adapt) * scale * rng.standard_normal(d),
                        lo, hi)
        prop_prior = float(log_prior_fn(tuple(prop) if d > 1 else prop[0]))
        if np.isfinite(prop_prior):
            new_state = inner_refresh(prop, state, int(rng.integers(2 ** 63)))
            new_calib = float(log_calib(new_state))
            log_alpha = (prop_prior - cur_prior) + (new_calib - cur_calib)
            alpha = np.exp(min(0.0, log_alpha))
        else:
            alpha = 0.0
        if rng.random() < alpha:
            s, state, cur_calib, cur_prior = prop, new_state, new_calib, prop_prior
            n_acc += 1
        if t < burn_in:
            log_s_adapt += (t + 1.0) ** -0.6 * (alpha - 0.234)
        else:
            draws[t - burn_in] = s
    return draws, n_acc / n_outer


def nested_mcmc_product(log_prior_fn, bounds, phi0: np.ndarray, inner_kernel,
                        block_log_pred, n_outer: int, inner_len: int,
                        seed: int, **kw):
    """Product-loss nested sampler: one side chain per calibration block.

    inner_kernel(s, phis (J, d), n_steps, seed) -> refreshed phis;
    block_log_pred(phis) -> per-block log p(y_j | phi_j).
    """
    refresh = lambda s, st, sd: inner_kernel(s, st, inner_len, sd)
    calib = lambda st: float(np.sum(block_log_pred(st)))
    return nested_mcmc(log_prior_fn, bounds, np.asarray(phi0, dtype=float),
                       refresh, calib, n_outer, seed, **kw)


def nested_mcmc_pooled(log_prior_fn, bounds, phi0: np.ndarray, inner_kernel,
                       pooled_log_pred, n_outer: int, inner_len: int,
                       seed: int, **kw):
    """Pooled-loss nested sampler: a single side chain and the joint
    calibration density ratio."""
    phi0 = np.atleast_2d(np.asarray(phi0, dtype=float))
    refresh = lambda s, st, sd: inner_kernel(s, st, inner_len, sd)
    calib = lambda st: float(pooled_log_pred(st[0]))
    return nested_mcmc(log_prior_fn, bounds, phi0, refresh, calib,
                       n_outer, seed, **kw)


# --- estimators -----------------------------------------------------------

@dataclass(frozen=True)
class EstimatorSet:
    mean: HyperPoint
    mode: HyperPoint
    harmonic_mean: HyperPoint | None = None
    kl: HyperPoint | None = None
    waic: HyperPoint | None = None
    mc_se: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {}
        for name in ("mean", "mode", "harmonic_mean", "kl", "waic"):
            hp = getattr(self, name)
            if hp is None:
                continue
            out[name] = {k: v for k, v in vars(hp).items() if v is not None}
        out["mc_se"] = dict(self.mc_se)
        return out


def compute_estimator_set(gp: GridPosterior, with_harmonic: bool = True) -> EstimatorSet:
    """Mean, mode and (for a nonnegative scalar axis) the harmonic mean.

    The KL and WAIC summaries need extra inputs (predictive simulators,
    training chains) and are attached by their dedicated functions.
    """
    mean = estimate_posterior_mean(gp)
    mode = estimate_posterior_mode(gp)
    hm = None
    if with_harmonic and gp.grid.ndim == 1:
        try:
            hm = gp.to_hyperpoint([harmonic_mean_estimator(gp)])
        except ParameterError:
            hm = None
    return EstimatorSet(mean=mean, mode=mode, harmonic_mean=hm)


def estimate_posterior_mean(gp: GridPosterior) -> HyperPoint:
    return gp.to_hyperpoint(gp.mean())


def estimate_posterior_mode(gp: GridPosterior, tie_tol: float = 1e-9) -> HyperPoint:
    """Fine-grid argmax with golden-section refinement along each axis.

    Near-ties resolve toward the smallest first-axis value, which prefers
    the less informative update.  A boundary mode is returned as-is.
    """
    axes, dens = gp._fine_density()
    flat = dens.ravel()
    near = np.where(flat >= flat.max() * (1 - tie_tol))[0]
    idx = near.min()
    if gp.grid.ndim == 1:
        x = axes[0]
        i = idx
        lo = x[max(i - 1, 0)]
        hi = x[min(i + 1, len(x) - 1)]
        best = _golden_max_1d(lambda t: gp.log_density(t), lo, hi)
        # refinement must not move off a flat stretch or a grid maximum
        if gp.log_density(x[i]) >= gp.log_density(best) - tie_tol and x[i] < best:
            best = float(x[i])
        return gp.to_hyperpoint([best])
    ix, iy = np.unravel_index(idx, dens.shape)
    cx, cy = float(axes[0][ix]), float(axes[1][iy])
    for _ in range(3):
        lo = axes[0][max(ix - 1, 0)]
        hi = axes[0][min(ix + 1, len(axes[0]) - 1)]
        cx = _golden_max_1d(lambda t: gp.log_density(t, cy), lo, hi)
        lo = axes[1][max(iy - 1, 0)]
        hi = axes[1][min(iy + 1, len(axes[1]) - 1)]
        cy = _golden_max_1d(lambda t: gp.log_density(cx, t), lo, hi)
    return gp.to_hyperpoint([cx, cy])


def _golden_max_1d(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return float((a + b) / 2)


def harmonic_mean_estimator(gp: GridPosterior, axis: int = 0) -> float:
    """1 / E[1/eta] under the posterior; errors out when the boundary mass
    makes E[1/eta] diverge."""
    x, m = gp.marginal(axis)
    m = m / np.trapezoid(m, x)
    if x[0] <= 0:
        pos = x > 0
        full = np.trapezoid(m[pos] / x[pos], x[pos])
        inner = x > max(x[pos][0] * 4, 1e-8)
        part = np.trapezoid(m[inner] / x[inner], x[inner])
        if not np.isfinite(full) or (full - part) > 0.05 * abs(full):
            raise ParameterError("posterior mass at eta=0 makes the harmonic "
                                 "mean diverge")
        inv_mean = full
    else:
        inv_mean = np.trapezoid(m / x, x)
    return float(1.0 / inv_mean)


def kl_estimator(gp: GridPosterior, predictive_sampler, predictive_logpdf,
                 grid_K: int = 41, T: int = 400, J_inner: int = 1000,
                 seed: int = 0) -> HyperPoint:
    """Minimum-KL point summary of the hyperposterior.

    Draw s_t from the posterior, simulate z from each predictive
    p_{s_t}(z|y,x), score every candidate s' by the average log predictive
    density of the simulated z, smooth over the candidate grid and take the
    argmax (equivalently the KL argmin).
    """
    rng = np.random.default_rng(seed)
    s_draws = gp.sample(T, seed=seed + 1)
    zs = [np.atleast_1d(predictive_sampler(s_draws[t], J_inner, rng))
          for t in range(T)]
    z = np.concatenate(zs)
    lo, hi = gp.bounds[0]
    cand = np.linspace(lo, hi, grid_K)
    if lo <= 0:
        cand = cand.copy()
        cand[0] = min(1e-6, (cand[1] - cand[0]) / 100 + lo) if cand[1] > 0 else cand[0]
    w = np.empty(grid_K)
    se = np.empty(grid_K)
    for i, sp in enumerate(cand):
        vals = predictive_logpdf(sp, z)
        w[i] = float(np.mean(vals))
        se[i] = float(np.std(vals) / np.sqrt(len(vals)))
    se = np.maximum(se, 1e-12)
    try:
        sm = UnivariateSpline(cand, w, w=1.0 / se, k=3, s=len(cand))
        fine = np.linspace(cand[0], cand[-1], _FINE_1D)
        best = float(fine[np.argmax(sm(fine))])
    except Exception:
        best = float(cand[np.argmax(w)])
    return gp.to_hyperpoint([best] + [np.nan] * (gp.grid.ndim - 1)) \
        if gp.grid.ndim == 1 else gp.to_hyperpoint([best, np.nan])


def waic_estimator(grid: SGrid, draws_per_s, model, x):
    """Argmin over the lattice of WAIC computed from training-data pointwise
    log densities; returns (HyperPoint, waic values).

    WAIC = -2 (lppd - p_waic) with p_waic the summed posterior variances of
    the pointwise log densities.  A warning fires when many points carry
    variance above 0.4, where the penalty is known to be unreliable.
    """
    from .datasets import SimpleDataset

    pts = x.points if isinstance(x, SimpleDataset) else np.asarray(x, dtype=float)
    lattice = grid.points()
    waic = np.empty(len(lattice))
    for i, draws in enumerate(draws_per_s):
        mat = _per_draw_log_density(draws, model, pts)
        lppd = float(np.sum(logsumexp(mat, axis=0) - np.log(mat.shape[0])))
        var_i = np.var(mat, axis=0, ddof=1)
        if np.mean(var_i > 0.4) > 0.10:
            warnings.warn("WAIC penalty unreliable: many points with high "
                          "posterior variance of the log density")
        waic[i] = -2.0 * (lppd - float(np.sum(var_i)))
    if grid.ndim == 1:
        xax = grid.axes[0]
        spline = CubicSpline(xax, waic, bc_type="natural")
        fine = np.linspace(xax[0], xax[-1], _FINE_1D)
        best = float(fine[np.argmin(spline(fine))])
        names = grid.names
        return HyperPoint(**{names[0]: best}), waic
    i = int(np.argmin(waic))
    kw = {n: float(v) for n, v in zip(grid.names, lattice[i])}
    return HyperPoint(**kw), waic
