"""Extended Kalman filter and smoother over the AR(1)-augmented state.

The 7 serially correlated measurement errors are carried as extra state
variables, giving a 13-dimensional augmented state observed without noise.
This keeps missing observations exact: an unobserved entry simply drops its
row from the update.  The filter produces the Gaussian prediction-error
log-likelihood; the smoother is the fixed-interval backward recursion on
the per-step linearizations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .model import (assemble_system, forcing_curve, forcing_curve_slope,
                    stationary_measurement_cov)
from .params import Constants, ModelParams

# Weakly informative initialization: data-anchored means with variance
# inflation kappa on per-variable scales (GtC, GtC/yr, GtC/yr, W/m^2, K, K).
INIT_KAPPA = 100.0
INIT_SCALES = np.array([100.0, 2.0, 2.0, 1.0, 0.5, 0.2])

_STATUS_MESSAGES = {
    _kernels.STATUS_CHOL: "innovation covariance not positive definite",
    _kernels.STATUS_DOMAIN: "state left the domain of the physical equations",
    _kernels.STATUS_NONFINITE: "non-finite likelihood contribution",
}


class FilterError(RuntimeError):
    """Numerical failure inside the filter, carrying the failing step."""

    def __init__(self, status: int, t: int, year: int | None = None):
        self.status = status
        self.t = t
        self.year = year
        where = f"year {year}" if year is not None else f"step {t}"
        msg = _STATUS_MESSAGES.get(status, f"status {status}")
        super().__init__(f"filter failed at {where}: {msg}")


class InitializationError(ValueError):
    pass


@dataclass
class GaussianBelief:
    """Mean and covariance of the 13-dim augmented state at one time."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.shape != (13,) or self.cov.shape != (13, 13):
            raise ValueError("belief must be 13-dimensional")


@dataclass
class FilterOutput:
    """Per-step filter quantities plus the total log-likelihood.

    Innovations and their covariances are NaN-padded to the full 7-vector
    layout; obs_mask marks which entries were observed.  trans_jac[t] is the
    augmented-state Jacobian used to predict from t to t+1.
    """

    years: np.ndarray
    loglik: float
    step_loglik: np.ndarray
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    trans_jac: np.ndarray
    innovations: np.ndarray
    innovation_cov: np.ndarray
    obs_mask: np.ndarray
    params: ModelParams
    consts: Constants

    @property
    def n_steps(self) -> int:
        return len(self.years)

    def predicted_belief(self, t: int) -> GaussianBelief:
        return GaussianBelief(self.pred_mean[t], self.pred_cov[t])

    def filtered_belief(self, t: int) -> GaussianBelief:
        return GaussianBelief(self.filt_mean[t], self.filt_cov[t])


@dataclass
class SmootherOutput:
    """Smoothed mean and covariance of the augmented state at every time."""

    years: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def state_mean(self) -> np.ndarray:
        """Smoothed means of the 6 physical states, (n, 6)."""
        return self.mean[:, :6]

    def state_sd(self) -> np.ndarray:
        return np.sqrt(np.maximum(
            np.diagonal(self.cov, axis1=1, axis2=2)[:, :6], 0.0))


def kernel_args_from_theta(theta: np.ndarray, y0: np.ndarray,
                           consts: Constants, linear_forcing: bool):
    """Kernel argument tuple straight from a canonical parameter vector.

    Optimizer hot path: mirrors kernel_inputs + init_belief without the
    dataclass roundtrip, with identical arithmetic.  Raises ValueError on
    invalid parameters.
    """
    d, c0 = consts.delta, consts.c_preind
    phys = np.ascontiguousarray(theta[:11])
    h_d = phys[10]
    if phys[9] <= 0 or h_d <= 0:
        raise ValueError("non-positive heat capacity")
    mu = np.array([theta[11], theta[12], theta[13], theta[14], theta[15],
                   theta[16], h_d * theta[16]])
    rho = theta[17]
    phi = np.ascontiguousarray(theta[18:25])
    s2eps = theta[25:32]
    s2eta = theta[32:37]
    if np.any(np.abs(phi) >= 1) or abs(rho) >= 1:
        raise ValueError("non-stationary error process")
    if np.any(s2eps < 0) or np.any(s2eta < 0):
        raise ValueError("negative variance")
    P = np.diag(s2eps)
    cross = rho * np.sqrt(s2eps[5] * s2eps[6])
    P[5, 6] = P[6, 5] = cross
    Pd = d * P
    q = d * s2eta
    Rq = np.zeros((6, 6))
    Rq[0, 0] = d * d * (q[0] + q[1])
    Rq[0, 1] = Rq[1, 0] = -d * q[0]
    Rq[0, 2] = Rq[2, 0] = -d * q[1]
    for i in range(5):
        Rq[1 + i, 1 + i] = q[i]
    f1, f2, f3 = phys[4], phys[5], phys[6]
    arg0 = c0 + f2 * c0 * c0
    if arg0 <= 0:
        raise ValueError("forcing curve ill-defined at the pre-industrial stock")
    gf0 = f1 * np.log(arg0) + f3 * np.sqrt(c0)
    lin_slope = f1 * (1.0 + 2.0 * f2 * c0) / arg0 + f3 / (2.0 * np.sqrt(c0))

    m0 = np.zeros(13)
    for i in range(6):
        a = y0[i] - mu[i]
        if np.isfinite(a):
            m0[i] = a
    P0 = np.zeros((13, 13))
    P0[:6, :6] = np.diag(INIT_KAPPA * INIT_SCALES ** 2)
    stat = P / (1.0 - np.outer(phi, phi))
    P0[6:, 6:] = 0.5 * (stat + stat.T)
    return (phys, mu, phi, Pd, Rq, m0, P0, d, c0, gf0, lin_slope,
            linear_forcing, False)


def kernel_inputs(params: ModelParams, consts: Constants = Constants()):
    """Flatten a parameter set into the arrays the compiled kernels take."""
    p = params.apply_form()
    p.validate()
    phys = p.physical.as_array()
    sysm = assemble_system(p.physical, p.offsets, p.noise, consts)
    Pd = consts.delta * sysm.P
    Rq = sysm.R @ (consts.delta * sysm.Q) @ sysm.R.T
    gf0 = forcing_curve(consts.c_preind, p.physical.f1, p.physical.f2,
                        p.physical.f3)
    lin_slope = forcing_curve_slope(consts.c_preind, p.physical.f1,
                                    p.physical.f2, p.physical.f3)
    return (phys, sysm.mu, p.noise.phi.astype(float), Pd, Rq,
            consts.delta, consts.c_preind, gf0, lin_slope,
            params.linear_forcing, False)


def init_belief(first_obs: np.ndarray, params: ModelParams,
                consts: Constants = Constants()) -> GaussianBelief:
    """Prior belief for the first observation year.

    Physical means are anchored at the first observations with intercepts
    removed (missing entries default to zero); their covariance is diagonal
    with variance INIT_KAPPA times the squared per-variable scale.  The
    measurement-error block starts at mean zero with its stationary
    covariance.
    """
    first_obs = np.asarray(first_obs, dtype=float)
    if first_obs.shape != (7,):
        raise ValueError("first_obs must be the 7-entry observation row")
    if not np.any(np.isfinite(first_obs)):
        raise InitializationError(
            "cannot initialize: every entry of the first observation is missing")
    p = params.apply_form()
    o = p.offsets
    anchors = [first_obs[0] - o.mu_c, first_obs[1] - o.mu_o,
               first_obs[2] - o.mu_l, first_obs[3] - o.mu_f,
               first_obs[4] - o.mu_m, first_obs[5] - o.mu_d]
    mean = np.zeros(13)
    for i, a in enumerate(anchors):
        mean[i] = a if np.isfinite(a) else 0.0
    cov = np.zeros((13, 13))
    cov[:6, :6] = np.diag(INIT_KAPPA * INIT_SCALES ** 2)
    cov[6:, 6:] = stationary_measurement_cov(p.noise)
    return GaussianBelief(mean, cov)


def _check_alignment(y: np.ndarray, e_tot: np.ndarray, f_ex: np.ndarray):
    n = y.shape[0]
    if y.shape != (n, 7):
        raise ValueError(f"observations must be (n, 7), got {y.shape}")
    if e_tot.shape != (n,) or f_ex.shape != (n,):
        raise ValueError("covariates must align with the observation years")
    if not (np.all(np.isfinite(e_tot)) and np.all(np.isfinite(f_ex))):
        raise ValueError("covariates must be complete (no missing values)")


def log_likelihood_raw(params: ModelParams, y: np.ndarray, e_tot: np.ndarray,
                       f_ex: np.ndarray, consts: Constants = Constants(),
                       init: GaussianBelief | None = None):
    """Likelihood-only pass on raw arrays; returns (status, t_fail, loglik).

    status 0 means success.  This is the optimizer hot path; it never
    raises for numerical failures.
    """
    _check_alignment(y, e_tot, f_ex)
    if init is None:
        init = init_belief(y[0], params, consts)
    ki = kernel_inputs(params, consts)
    return _kernels.ekf_loglik(np.ascontiguousarray(y, dtype=float),
                               np.ascontiguousarray(e_tot, dtype=float),
                               np.ascontiguousarray(f_ex, dtype=float),
                               *ki[:5], init.mean, init.cov, *ki[5:])


def ekf_filter(params: ModelParams, observations, covariates,
               consts: Constants = Constants(),
               init: GaussianBelief | None = None) -> FilterOutput:
    """Run the filter over aligned observation and covariate tables.

    observations/covariates may be the table objects from statclim.data or
    raw pieces (years, (n, 7) array) / (years, e_total, f_ex).  Raises
    FilterError on numerical failure, carrying the failing year.
    """
    years, y = _obs_arrays(observations)
    cov_years, e_tot, f_ex = _cov_arrays(covariates)
    if not np.array_equal(years, cov_years):
        raise ValueError("observation and covariate tables must share years")
    _check_alignment(y, e_tot, f_ex)
    if init is None:
        init = init_belief(y[0], params, consts)
    ki = kernel_inputs(params, consts)
    (status, t_fail, step_ll, pred_mean, pred_cov, filt_mean, filt_cov,
     trans_jac, innov, innov_cov) = _kernels.ekf_filter(
        np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(e_tot, dtype=float),
        np.ascontiguousarray(f_ex, dtype=float),
        *ki[:5], init.mean, init.cov, *ki[5:])
    if status != _kernels.STATUS_OK:
        raise FilterError(status, int(t_fail), int(years[int(t_fail)]))
    return FilterOutput(
        years=years, loglik=float(step_ll.sum()), step_loglik=step_ll,
        pred_mean=pred_mean, pred_cov=pred_cov, filt_mean=filt_mean,
        filt_cov=filt_cov, trans_jac=trans_jac, innovations=innov,
        innovation_cov=innov_cov, obs_mask=np.isfinite(y),
        params=params, consts=consts)


def rts_smooth(filt: FilterOutput) -> SmootherOutput:
    """Fixed-interval smoother on the stored filter pass.

    Backward recursion using the per-step transition Jacobians; at the final
    time the smoothed belief equals the filtered one.
    """
    n = filt.n_steps
    mean = filt.filt_mean.copy()
    cov = filt.filt_cov.copy()
    for t in range(n - 2, -1, -1):
        F = filt.trans_jac[t]
        P_pred = filt.pred_cov[t + 1]
        try:
            cf = cho_factor(P_pred, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FilterError(_kernels.STATUS_CHOL, t + 1,
                              int(filt.years[t + 1])) from exc
        G = cho_solve(cf, F @ filt.filt_cov[t]).T
        mean[t] = filt.filt_mean[t] + G @ (mean[t + 1] - filt.pred_mean[t + 1])
        Pt = filt.filt_cov[t] + G @ (cov[t + 1] - filt.pred_cov[t + 1]) @ G.T
        cov[t] = 0.5 * (Pt + Pt.T)
    return SmootherOutput(years=filt.years, mean=mean, cov=cov)


def standardized_residuals(filt: FilterOutput) -> np.ndarray:
    """One-step-ahead prediction residuals scaled by their own sd, (n, 7).

    Missing observations stay NaN.  Under a correctly specified model these
    are draws from iid standard normals.
    """
    var = np.diagonal(filt.innovation_cov, axis1=1, axis2=2)
    with np.errstate(invalid="ignore"):
        return filt.innovations / np.sqrt(var)


def _obs_arrays(observations):
    if hasattr(observations, "values") and hasattr(observations, "years"):
        return (np.asarray(observations.years, dtype=int),
                np.asarray(observations.values, dtype=float))
    years, values = observations
    return np.asarray(years, dtype=int), np.asarray(values, dtype=float)


def _cov_arrays(covariates):
    if hasattr(covariates, "e_total") and hasattr(covariates, "f_ex"):
        return (np.asarray(covariates.years, dtype=int),
                np.asarray(covariates.e_total, dtype=float),
                np.asarray(covariates.f_ex, dtype=float))
    years, e_tot, f_ex = covariates
    return (np.asarray(years, dtype=int), np.asarray(e_tot, dtype=float),
            np.asarray(f_ex, dtype=float))


def check_domain(params: ModelParams, consts: Constants = Constants()):
    """Raise DomainError if the forcing curve is ill-defined at c_preind."""
    p = params.apply_form()
    forcing_curve(consts.c_preind, p.physical.f1, p.physical.f2,
                  p.physical.f3)
