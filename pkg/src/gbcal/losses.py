"""Loss functions turning data into Gibbs energies.

All losses are returned on the log scale (never exponentiated here).  The
beta-loss needs the integral of the model density raised to a power; models
may register a closed form, otherwise adaptive Gauss-Hermite quadrature is
used, with a wide trapezoid rule available for cross-checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .datasets import HyperPoint, ModularDataset, ParameterError, SimpleDataset
from .oracles.quadrature import aghq_marginal

LOSS_KINDS = ("NegLogLik", "BetaLoss", "SmiEta", "SmiGamma", "SmiEtaBeta")
INTEGRAL_METHODS = ("ClosedForm", "GaussHermite", "Trapezoid")


@dataclass(frozen=True)
class ObservationModel:
    """Per-point log density plus optional extras.

    log_density(points, phi) must be vectorized over points.  power_integral
    (phi, beta) -> int p(x|phi)^beta dx may be omitted; quadrature then fills
    in.  sampler(phi, size, rng) is only needed for predictive simulation.
    """

    log_density: Callable[[np.ndarray, Any], np.ndarray]
    power_integral: Callable[[Any, float], float] | None = None
    sampler: Callable[..., np.ndarray] | None = None


def gaussian_model(var: float | None = None) -> ObservationModel:
    """Normal observation model.

    If var is given, phi is the mean; otherwise phi = (mean, var).  The
    power integral has the closed form beta^{-1/2} (2 pi var)^{(1-beta)/2}.
    """

    def unpack(phi):
        return (phi, var) if var is not None else (phi[0], phi[1])

    def log_density(x, phi):
        m, v = unpack(phi)
        x = np.asarray(x, dtype=float)
        return -0.5 * np.log(2.0 * np.pi * v) - (x - m) ** 2 / (2.0 * v)

    def power_integral(phi, beta):
        _, v = unpack(phi)
        return beta ** -0.5 * (2.0 * np.pi * v) ** ((1.0 - beta) / 2.0)

    def sampler(phi, size, rng):
        m, v = unpack(phi)
        return m + np.sqrt(v) * rng.standard_normal(size)

    return ObservationModel(log_density, power_integral, sampler)


def shifted_gaussian_model(var: float) -> ObservationModel:
    """Normal model with mean phi + theta, for the suspect module: the
    parameter is the pair (phi, theta)."""

    def log_density(x, phi_theta):
        m = phi_theta[0] + phi_theta[1]
        x = np.asarray(x, dtype=float)
        return -0.5 * np.log(2.0 * np.pi * var) - (x - m) ** 2 / (2.0 * var)

    def power_integral(phi_theta, beta):
        return beta ** -0.5 * (2.0 * np.pi * var) ** ((1.0 - beta) / 2.0)

    def sampler(phi_theta, size, rng):
        return phi_theta[0] + phi_theta[1] + np.sqrt(var) * rng.standard_normal(size)

    return ObservationModel(log_density, power_integral, sampler)


@dataclass(frozen=True)
class LossSpec:
    kind: str
    hyper: HyperPoint
    integral_method: str = "ClosedForm"
    gh_points: int = 31

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ParameterError(f"unknown loss kind {self.kind!r}")
        if self.integral_method not in INTEGRAL_METHODS:
            raise ParameterError(f"unknown integral method {self.integral_method!r}")
        h = self.hyper
        if self.kind in ("BetaLoss", "SmiEtaBeta"):
            if h.beta is None and h.b is None:
                raise ParameterError(f"{self.kind} requires beta (or b)")
            if abs(h.beta_value - 1.0) < 1e-12:
                raise ParameterError(
                    "beta=1 is the log-score limit; use kind='NegLogLik'")
        if self.kind == "SmiGamma" and h.gamma is None:
            raise ParameterError("SmiGamma requires gamma")
        if self.kind in ("SmiEta", "SmiEtaBeta") and h.eta is None:
            raise ParameterError(f"{self.kind} requires eta")


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, SimpleDataset) else np.asarray(x, dtype=float)


def neg_log_lik(model: ObservationModel, phi, x) -> float:
    pts = _points(x)
    if len(pts) == 0:
        return 0.0
    ld = model.log_density(pts, phi)
    if np.any(np.isneginf(ld)):
        warnings.warn("zero density at a data point; loss is +inf")
        return np.inf
    return float(-np.sum(ld))


def power_integral_quadrature(model: ObservationModel, phi, beta: float,
                              method: str = "GaussHermite",
                              gh_points: int = 31) -> float:
    """int p(x|phi)^beta dx for a scalar observation space.

    GaussHermite adapts nodes to the mode and curvature of log p; Trapezoid
    uses a wide fixed grid (mode +- 10 curvature-scales, 4001 points) and is
    meant as an independent cross-check.
    """
    res = minimize_scalar(lambda t: -float(model.log_density(np.array([t]), phi)[0]))
    mode = float(res.x)
    h = 1e-4
    f = lambda t: float(model.log_density(np.array([t]), phi)[0])
    curv = -(f(mode + h) - 2 * f(mode) + f(mode - h)) / h ** 2
    if curv <= 0:
        raise ParameterError("density mode has nonpositive curvature; cannot "
                             "build an adaptive rule")
    if method == "GaussHermite":
        logI = aghq_marginal(lambda t: beta * f(t), dim=1, k_points=gh_points,
                             mode=mode, hessian=beta * curv)
        return float(np.exp(logI))
    if method == "Trapezoid":
        scale = 1.0 / np.sqrt(curv)
        grid = np.linspace(mode - 10 * scale, mode + 10 * scale, 4001)
        vals = np.exp(beta * model.log_density(grid, phi))
        return float(np.trapezoid(vals, grid))
    raise ParameterError(f"unknown quadrature method {method!r}")


def beta_loss(model: ObservationModel, phi, x, beta: float,
              integral_method: str | None = None, gh_points: int = 31) -> float:
    """Density-power loss: -(1/(beta-1)) sum_i p(x_i|phi)^{beta-1}
    + (n/beta) int p(x|phi)^beta dx."""
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    if abs(beta - 1.0) < 1e-12:
        raise ParameterError("beta=1 is handled by neg_log_lik, not beta_loss")
    pts = _points(x)
    n = len(pts)
    if integral_method is None:
        integral_method = "ClosedForm" if model.power_integral else "GaussHermite"
    if integral_method == "ClosedForm":
        if model.power_integral is None:
            raise ParameterError("model registers no closed-form power integral")
        integral = model.power_integral(phi, beta)
    else:
        integral = power_integral_quadrature(model, phi, beta, integral_method,
                                             gh_points)
    if not np.isfinite(integral):
        raise ParameterError(f"power integral diverges at beta={beta}")
    if n == 0:
        return 0.0
    data_term = -np.sum(np.exp((beta - 1.0) * model.log_density(pts, phi))) / (beta - 1.0)
    return float(data_term + n / beta * integral)


def smi_loss_eta(model1: ObservationModel, model2: ObservationModel,
                 phi, theta_aux, x: ModularDataset, eta: float) -> float:
    """Module-1 negative log-likelihood plus eta times the module-2 one
    evaluated at the auxiliary copy theta'."""
    if eta < 0:
        raise ParameterError("eta must be nonnegative")
    return (neg_log_lik(model1, phi, x.x1)
            + eta * neg_log_lik(model2, (phi, theta_aux), x.x2))


def smi_loss_eta_beta(model1: ObservationModel, model2: ObservationModel,
                      phi, theta_aux, x: ModularDataset, eta: float, beta: float,
                      integral_method: str | None = None) -> float:
    """Module-1 negative log-likelihood plus eta times the module-2 beta-loss."""
    if eta < 0:
        raise ParameterError("eta must be nonnegative")
    return (neg_log_lik(model1, phi, x.x1)
            + eta * beta_loss(model2, (phi, theta_aux), x.x2, beta, integral_method))


def smi_loss_gamma(model1: ObservationModel, marginal_log_lik: Callable[[Any], float],
                   phi, x: ModularDataset, gamma: float) -> float:
    """Module-1 negative log-likelihood plus gamma times the negative log of
    the module-2 likelihood with its private parameter integrated out.

    marginal_log_lik(phi) -> log int p(x2|phi, theta') pi(theta') dtheta';
    closed-form, Laplace, or AGHQ versions all fit this slot.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0,1]")
    term2 = -gamma * marginal_log_lik(phi) if gamma > 0 else 0.0
    return neg_log_lik(model1, phi, x.x1) + term2
