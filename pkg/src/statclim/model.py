"""Physical equations of the climate model and their state-space matrices.

The latent state is x = (C, S_ocn, S_lnd, F_co2, T_m, T_d).  One time step
advances the carbon budget, the two sink fluxes, the CO2 forcing and the
two-box energy balance; emissions and non-CO2 forcing enter as covariates.
All functions here are pure and operate on plain floats/arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import (Constants, MeasurementOffsets, ModelParams, NoiseParams,
                     PhysicalParams)


class DomainError(ValueError):
    """Raised when a state leaves the domain of the physical equations."""


def forcing_curve(c: float, f1: float, f2: float, f3: float) -> float:
    """Raw forcing curve f1*log(c + f2*c^2) + f3*sqrt(c) in W/m^2.

    c is the CO2 stock in GtC and must satisfy c > 0 and c + f2*c^2 > 0.
    """
    if c <= 0:
        raise DomainError(f"CO2 stock must be positive, got c={c}")
    arg = c + f2 * c * c
    if arg <= 0:
        raise DomainError(
            f"log argument non-positive: c + f2*c^2 = {arg} at c={c}, f2={f2}")
    return f1 * np.log(arg) + f3 * np.sqrt(c)


def forcing_curve_slope(c: float, f1: float, f2: float, f3: float) -> float:
    """Derivative of forcing_curve with respect to the stock."""
    if c <= 0:
        raise DomainError(f"CO2 stock must be positive, got c={c}")
    arg = c + f2 * c * c
    if arg <= 0:
        raise DomainError(
            f"log argument non-positive: c + f2*c^2 = {arg} at c={c}, f2={f2}")
    return f1 * (1.0 + 2.0 * f2 * c) / arg + f3 / (2.0 * np.sqrt(c))


def forcing_anomaly(c: float, params: PhysicalParams,
                    consts: Constants = Constants()) -> float:
    """CO2 radiative forcing anomaly over the pre-industrial stock, W/m^2.

    Evaluates the forcing curve at c and subtracts its value at the
    pre-industrial stock, so the anomaly vanishes at c = c_preind.
    """
    p = params
    return (forcing_curve(c, p.f1, p.f2, p.f3)
            - forcing_curve(consts.c_preind, p.f1, p.f2, p.f3))


def sink_flux_anomaly(c: float, t: float, b: float, coeff_c: float,
                      consts: Constants = Constants()) -> float:
    """Deterministic sink flux anomaly b*c*exp(-coeff_c*t) - b*c_preind, GtC/yr.

    The sink strengthens with the CO2 stock (carbon-cycle feedback, b) and
    weakens with warming (climate feedback, coeff_c); the pre-industrial
    term makes the flux zero at equilibrium.  The caller adds any stochastic
    innovation.
    """
    if c <= 0:
        raise DomainError(f"CO2 stock must be positive, got c={c}")
    return b * c * np.exp(-coeff_c * t) - b * consts.c_preind


def _sink_temperature(x: np.ndarray, mixed_layer: bool) -> float:
    # Sinks respond to deep-ocean temperature in the estimated discretization;
    # the mixed-layer alternative is kept for sensitivity runs.
    return x[4] if mixed_layer else x[5]


def transition_mean(x: np.ndarray, e_next: float, f_ex: float,
                    p: PhysicalParams, consts: Constants = Constants(),
                    linear_forcing: bool = False,
                    sink_uses_mixed_layer: bool = False) -> np.ndarray:
    """Conditional mean of the next state given the current one.

    x is the current 6-state, e_next the total CO2 emissions (GtC/yr) of the
    step being entered, f_ex the current exogenous non-CO2 forcing (W/m^2).
    The new sink fluxes are evaluated at the current stock and temperature,
    and the carbon budget uses those new fluxes; the mixed-layer update is
    driven by the current CO2 forcing state plus f_ex.
    """
    x = np.asarray(x, dtype=float)
    d = consts.delta
    t_sink = _sink_temperature(x, sink_uses_mixed_layer)
    s_ocn = sink_flux_anomaly(x[0], t_sink, p.b1, p.c1, consts)
    s_lnd = sink_flux_anomaly(x[0], t_sink, p.b2, p.c2, consts)
    if linear_forcing:
        slope = forcing_curve_slope(consts.c_preind, p.f1, p.f2, p.f3)
        f_co2 = slope * (x[0] - consts.c_preind)
    else:
        f_co2 = forcing_anomaly(x[0], p, consts)
    t_m = ((1.0 - (p.gamma + p.lam) * d / p.h_m) * x[4]
           + (p.gamma * d / p.h_m) * x[5]
           + (d / p.h_m) * (x[3] + f_ex))
    t_d = (p.gamma * d / p.h_d) * x[4] + (1.0 - p.gamma * d / p.h_d) * x[5]
    c = x[0] + d * (e_next - s_ocn - s_lnd)
    return np.array([c, s_ocn, s_lnd, f_co2, t_m, t_d])


def transition_jacobian(x: np.ndarray, p: PhysicalParams,
                        consts: Constants = Constants(),
                        linear_forcing: bool = False,
                        sink_uses_mixed_layer: bool = False) -> np.ndarray:
    """6x6 Jacobian of transition_mean with respect to the current state.

    Nonzero pattern: the carbon and sink rows depend on the stock and the
    sink-driving temperature; the forcing row on the stock; the temperature
    rows on both temperatures, with the mixed-layer row also picking up the
    forcing state with weight delta/h_m.
    """
    x = np.asarray(x, dtype=float)
    d = consts.delta
    J = np.zeros((6, 6))
    t_col = 4 if sink_uses_mixed_layer else 5
    t_sink = _sink_temperature(x, sink_uses_mixed_layer)
    e1 = np.exp(-p.c1 * t_sink)
    e2 = np.exp(-p.c2 * t_sink)
    # sink rows
    J[1, 0] = p.b1 * e1
    J[1, t_col] += -p.b1 * p.c1 * x[0] * e1
    J[2, 0] = p.b2 * e2
    J[2, t_col] += -p.b2 * p.c2 * x[0] * e2
    # carbon budget: c' = c + d*(e - s_ocn' - s_lnd')
    J[0, 0] = 1.0 - d * (J[1, 0] + J[2, 0])
    J[0, t_col] += -d * (J[1, t_col] + J[2, t_col])
    # forcing row
    if linear_forcing:
        J[3, 0] = forcing_curve_slope(consts.c_preind, p.f1, p.f2, p.f3)
    else:
        J[3, 0] = forcing_curve_slope(x[0], p.f1, p.f2, p.f3)
    # energy balance rows
    J[4, 3] = d / p.h_m
    J[4, 4] = 1.0 - (p.gamma + p.lam) * d / p.h_m
    J[4, 5] = p.gamma * d / p.h_m
    J[5, 4] = p.gamma * d / p.h_d
    J[5, 5] = 1.0 - p.gamma * d / p.h_d
    return J


def covariate_shift(e_next: float, f_ex: float, p: PhysicalParams,
                    consts: Constants = Constants()) -> np.ndarray:
    """Additive covariate/constant part of the state update (6-vector).

    Collects the terms that do not depend on the current state: emissions
    and the pre-industrial sink constants in the carbon row, the sink
    constants themselves, the pre-industrial forcing level, and the
    exogenous forcing in the mixed-layer row.
    """
    d = consts.delta
    g0 = forcing_curve(consts.c_preind, p.f1, p.f2, p.f3)
    return np.array([
        d * e_next + d * (p.b1 + p.b2) * consts.c_preind,
        -p.b1 * consts.c_preind,
        -p.b2 * consts.c_preind,
        -g0,
        (d / p.h_m) * f_ex,
        0.0,
    ])


def stationary_measurement_cov(noise: NoiseParams) -> np.ndarray:
    """Stationary covariance (I - Phi^2)^{-1} P of the AR(1) measurement errors.

    P is diagonal in the innovation variances except for the symmetric
    deep-ocean/heat-content entry rho*sigma_d*sigma_ohc.  Requires every
    AR coefficient to be strictly inside the unit interval.
    """
    if np.any(np.abs(noise.phi) >= 1):
        raise ValueError(
            f"stationarity requires |phi| < 1 for every series, got {noise.phi}")
    P = innovation_cov(noise)
    denom = 1.0 - np.outer(noise.phi, noise.phi)
    out = P / denom
    return 0.5 * (out + out.T)


def innovation_cov(noise: NoiseParams) -> np.ndarray:
    """7x7 covariance P of the measurement-error innovations."""
    P = np.diag(noise.sigma2_eps.astype(float))
    cross = noise.rho * np.sqrt(noise.sigma2_eps[5] * noise.sigma2_eps[6])
    P[5, 6] = P[6, 5] = cross
    return P


@dataclass
class SystemMatrices:
    """Constant matrices of the state-space form for a fixed parameter set.

    A: 7x6 observation loading (identity pattern, h_d in the heat-content row).
    mu: 7 measurement intercepts (heat-content entry derived as h_d*mu_d).
    R: 6x5 map from the 5 state innovations into the 6 state equations.
    Q: 5x5 diagonal state-innovation covariance.
    P: 7x7 measurement-innovation covariance.
    Phi: 7x7 diagonal AR(1) coefficient matrix.
    """

    A: np.ndarray
    mu: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Phi: np.ndarray


def assemble_system(p: PhysicalParams, offsets: MeasurementOffsets,
                    noise: NoiseParams,
                    consts: Constants = Constants()) -> SystemMatrices:
    """Build the constant state-space matrices for one parameter set."""
    A = np.zeros((7, 6))
    for i in range(6):
        A[i, i] = 1.0
    A[6, 5] = p.h_d

    R = np.zeros((6, 5))
    R[0, 0] = -consts.delta
    R[0, 1] = -consts.delta
    R[1, 0] = 1.0
    R[2, 1] = 1.0
    R[3, 2] = 1.0
    R[4, 3] = 1.0
    R[5, 4] = 1.0

    return SystemMatrices(
        A=A,
        mu=offsets.vector(p.h_d),
        R=R,
        Q=np.diag(noise.sigma2_eta.astype(float)),
        P=innovation_cov(noise),
        Phi=np.diag(noise.phi.astype(float)),
    )


def system_for(params: ModelParams,
               consts: Constants = Constants()) -> SystemMatrices:
    p = params.apply_form()
    return assemble_system(p.physical, p.offsets, p.noise, consts)
