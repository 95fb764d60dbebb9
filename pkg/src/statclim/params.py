"""Parameter containers for the statistical climate model.

The model is parameterized by a 37-entry vector: 11 physical coefficients,
6 measurement intercepts, the deep-ocean/heat-content error correlation,
7 AR(1) coefficients, 7 measurement-error innovation variances and 5 state
innovation variances.  Restrictions (pinned entries) are tracked through a
boolean free-mask over that canonical ordering.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

import numpy as np

# Canonical ordering of the full parameter vector.
PARAM_NAMES: tuple[str, ...] = (
    "b1", "b2", "c1", "c2", "f1", "f2", "f3", "gamma", "lambda", "h_m", "h_d",
    "mu_c", "mu_o", "mu_l", "mu_f", "mu_m", "mu_d", "rho",
    "phi_c", "phi_ocn", "phi_lnd", "phi_f", "phi_m", "phi_d", "phi_ohc",
    "s2eps_c", "s2eps_ocn", "s2eps_lnd", "s2eps_f", "s2eps_m", "s2eps_d",
    "s2eps_ohc",
    "s2eta_ocn", "s2eta_lnd", "s2eta_f", "s2eta_m", "s2eta_d",
)
N_PARAMS = len(PARAM_NAMES)
IDX = {name: i for i, name in enumerate(PARAM_NAMES)}

PHI_SLICE = slice(IDX["phi_c"], IDX["phi_ohc"] + 1)
S2EPS_SLICE = slice(IDX["s2eps_c"], IDX["s2eps_ohc"] + 1)
S2ETA_SLICE = slice(IDX["s2eta_ocn"], IDX["s2eta_d"] + 1)

# The nine physical coefficients drawn in parameter-uncertainty projections.
PHYS9_NAMES = ("b1", "b2", "c1", "c2", "f1", "gamma", "lambda", "h_m", "h_d")
PHYS9_IDX = np.array([IDX[n] for n in PHYS9_NAMES])

OBS_NAMES = ("c_star", "s_ocn_star", "s_lnd_star", "f_co2_star",
             "t_m_star", "t_d_star", "ohc_star")
STATE_NAMES = ("c", "s_ocn", "s_lnd", "f_co2", "t_m", "t_d")


@dataclass(frozen=True)
class Constants:
    """Fixed physical constants (not estimated).

    c_preind: pre-industrial atmospheric CO2 stock, GtC.
    t_preind: pre-industrial surface temperature anomaly, degC.
    delta: time step, years.
    gtc_per_ppm: conversion factor from ppm CO2 to GtC.
    """

    c_preind: float = 591.3060
    t_preind: float = 0.0
    delta: float = 1.0
    gtc_per_ppm: float = 2.127

    def __post_init__(self):
        if self.c_preind <= 0:
            raise ValueError(f"c_preind must be positive, got {self.c_preind}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


@dataclass
class PhysicalParams:
    """Coefficients of the carbon-cycle, forcing and energy-balance blocks.

    b1, b2: ocean/land sink sensitivity to the CO2 stock, 1/yr.
    c1, c2: sink climate-feedback coefficients, 1/degC.
    f1: log-term forcing coefficient, W/m^2.
    f2: quadratic-in-stock coefficient inside the log, 1/GtC.
    f3: square-root forcing coefficient, W m^-2 GtC^-1/2.
    gamma: mixed-layer/deep-ocean heat exchange, W m^-2 K^-1.
    lam: climate feedback, W m^-2 K^-1.
    h_m, h_d: mixed-layer and deep-ocean heat capacities, W yr m^-2 K^-1.
    """

    b1: float = 0.01
    b2: float = 0.02
    c1: float = 0.05
    c2: float = 0.05
    f1: float = 5.0
    f2: float = 0.0
    f3: float = 0.0
    gamma: float = 1.0
    lam: float = 1.0
    h_m: float = 10.0
    h_d: float = 100.0

    def validate(self) -> None:
        if self.h_m <= 0 or self.h_d <= 0:
            raise ValueError(
                f"heat capacities must be positive: h_m={self.h_m}, h_d={self.h_d}")

    def as_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.c1, self.c2, self.f1, self.f2,
                         self.f3, self.gamma, self.lam, self.h_m, self.h_d])


class ForcingForm(enum.Enum):
    """Functional form of the CO2 stock -> radiative forcing curve.

    The general curve is f1*log(C + f2*C^2) + f3*sqrt(C); each variant pins
    a subset of (f1, f2, f3).
    """

    UNRESTRICTED = "unrestricted"
    SQRT_PLUS_LOG = "sqrtlog"
    LOG2 = "log2"
    SQRT_ONLY = "sqrt"
    LOG_ONLY = "log"
    HANSEN98 = "hansen98"

    @property
    def pinned(self) -> dict[str, float]:
        """Coefficients fixed (not estimated) under this variant."""
        return {
            ForcingForm.UNRESTRICTED: {},
            ForcingForm.SQRT_PLUS_LOG: {"f2": 0.0},
            ForcingForm.LOG2: {"f3": 0.0},
            ForcingForm.SQRT_ONLY: {"f1": 0.0, "f2": 0.0},
            ForcingForm.LOG_ONLY: {"f2": 0.0, "f3": 0.0},
            ForcingForm.HANSEN98: {"f1": 5.04, "f2": 0.00023507, "f3": 0.0},
        }[self]

    @property
    def restrictions(self) -> int:
        """Number of restrictions relative to the unrestricted curve."""
        return len(self.pinned)


@dataclass
class NoiseParams:
    """Innovation variances and serial-correlation structure of the errors.

    sigma2_eta: 5 state-innovation variances (ocn, lnd, f, m, d).
    sigma2_eps: 7 measurement-error innovation variances
        (c, ocn, lnd, f, m, d, ohc).
    phi: 7 AR(1) coefficients of the measurement errors, each in (-1, 1).
    rho: correlation between the deep-ocean-temperature and ocean-heat-content
        measurement innovations, in (-1, 1).
    """

    sigma2_eta: np.ndarray = field(
        default_factory=lambda: np.full(5, 0.1))
    sigma2_eps: np.ndarray = field(
        default_factory=lambda: np.full(7, 0.1))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(7))
    rho: float = 0.0

    def __post_init__(self):
        self.sigma2_eta = np.asarray(self.sigma2_eta, dtype=float)
        self.sigma2_eps = np.asarray(self.sigma2_eps, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.sigma2_eta.shape != (5,) or self.sigma2_eps.shape != (7,) \
                or self.phi.shape != (7,):
            raise ValueError("noise parameter arrays have wrong shapes")

    def validate(self) -> None:
        if np.any(self.sigma2_eta < 0) or np.any(self.sigma2_eps < 0):
            raise ValueError("variances must be non-negative")
        if np.any(np.abs(self.phi) >= 1):
            raise ValueError(f"AR coefficients must lie in (-1, 1), got {self.phi}")
        if abs(self.rho) >= 1:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")


@dataclass
class MeasurementOffsets:
    """Intercepts aligning each observed series with its latent state.

    The ocean-heat-content equation has no free intercept of its own: its
    intercept is h_d * mu_d and is always derived, never stored.
    """

    mu_c: float = 0.0
    mu_o: float = 0.0
    mu_l: float = 0.0
    mu_f: float = 0.0
    mu_m: float = 0.0
    mu_d: float = 0.0

    def vector(self, h_d: float) -> np.ndarray:
        """7-entry intercept vector in observation order."""
        return np.array([self.mu_c, self.mu_o, self.mu_l, self.mu_f,
                         self.mu_m, self.mu_d, h_d * self.mu_d])


@dataclass
class ClimateState:
    """Latent physical state: (c, s_ocn, s_lnd, f_co2, t_m, t_d).

    c: atmospheric CO2 stock, GtC (positive).
    s_ocn, s_lnd: ocean and land sink flux anomalies, GtC/yr.
    f_co2: CO2 radiative forcing anomaly, W/m^2.
    t_m, t_d: mixed-layer and deep-ocean temperature anomalies, degC.
    """

    c: float
    s_ocn: float = 0.0
    s_lnd: float = 0.0
    f_co2: float = 0.0
    t_m: float = 0.0
    t_d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.s_ocn, self.s_lnd, self.f_co2,
                         self.t_m, self.t_d])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "ClimateState":
        return cls(*np.asarray(x, dtype=float))


def default_free_mask(form: ForcingForm) -> np.ndarray:
    """Estimated-vs-pinned mask: series intercepts mu_c..mu_f are pinned at
    zero (the carbon and forcing data are already anomalies), plus the
    coefficients fixed by the forcing variant."""
    mask = np.ones(N_PARAMS, dtype=bool)
    for name in ("mu_c", "mu_o", "mu_l", "mu_f"):
        mask[IDX[name]] = False
    for name in form.pinned:
        mask[IDX[name]] = False
    return mask


@dataclass
class ModelParams:
    """Full parameter set of the model plus its estimation bookkeeping.

    free_mask marks which canonical entries are estimated; pinned entries
    keep their stored values.  linear_forcing replaces the forcing curve by
    its tangent at the pre-industrial stock, which makes the transition
    exactly linear when c1 = c2 = 0 (diagnostic switch used to cross-check
    the filter against closed-form Gaussian results).
    """

    physical: PhysicalParams = field(default_factory=PhysicalParams)
    offsets: MeasurementOffsets = field(default_factory=MeasurementOffsets)
    noise: NoiseParams = field(default_factory=NoiseParams)
    forcing_form: ForcingForm = ForcingForm.LOG_ONLY
    free_mask: np.ndarray | None = None
    linear_forcing: bool = False

    def __post_init__(self):
        if self.free_mask is None:
            self.free_mask = default_free_mask(self.forcing_form)
        self.free_mask = np.asarray(self.free_mask, dtype=bool)
        if self.free_mask.shape != (N_PARAMS,):
            raise ValueError("free_mask must cover all canonical entries")

    @property
    def n_free(self) -> int:
        return int(self.free_mask.sum())

    def to_vector(self) -> np.ndarray:
        p, o, n = self.physical, self.offsets, self.noise
        return np.concatenate([
            p.as_array(),
            [o.mu_c, o.mu_o, o.mu_l, o.mu_f, o.mu_m, o.mu_d, n.rho],
            n.phi, n.sigma2_eps, n.sigma2_eta,
        ])

    @classmethod
    def from_vector(cls, theta: np.ndarray, form: ForcingForm,
                    free_mask: np.ndarray | None = None,
                    linear_forcing: bool = False) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N_PARAMS,):
            raise ValueError(f"expected a {N_PARAMS}-vector, got {theta.shape}")
        phys = PhysicalParams(*theta[:11])
        offs = MeasurementOffsets(*theta[11:17])
        noise = NoiseParams(sigma2_eta=theta[S2ETA_SLICE].copy(),
                            sigma2_eps=theta[S2EPS_SLICE].copy(),
                            phi=theta[PHI_SLICE].copy(), rho=theta[17])
        return cls(physical=phys, offsets=offs, noise=noise,
                   forcing_form=form, free_mask=free_mask,
                   linear_forcing=linear_forcing)

    def apply_form(self) -> "ModelParams":
        """Return a copy with the forcing-variant pins written into place."""
        theta = self.to_vector()
        for name, value in self.forcing_form.pinned.items():
            theta[IDX[name]] = value
        return ModelParams.from_vector(theta, self.forcing_form,
                                       self.free_mask.copy(),
                                       self.linear_forcing)

    def replace_vector(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams.from_vector(theta, self.forcing_form,
                                       self.free_mask.copy(),
                                       self.linear_forcing)

    def validate(self) -> None:
        self.physical.validate()
        self.noise.validate()

    def copy(self) -> "ModelParams":
        return ModelParams(
            physical=dataclasses.replace(self.physical),
            offsets=dataclasses.replace(self.offsets),
            noise=NoiseParams(self.noise.sigma2_eta.copy(),
                              self.noise.sigma2_eps.copy(),
                              self.noise.phi.copy(), self.noise.rho),
            forcing_form=self.forcing_form,
            free_mask=self.free_mask.copy(),
            linear_forcing=self.linear_forcing,
        )
