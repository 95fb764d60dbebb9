"""Built-in parameter sets and synthetic inputs.

The package ships no observational data; these presets provide (i) benchmark
parameter values from a maximum-likelihood fit to the 1959-2022 historical
record, (ii) the data-generating values used by the estimator benchmark
study, and (iii) smooth synthetic emission/forcing paths shaped like the
historical record, so that simulation studies, demos and tests run
self-contained.
"""
from __future__ import annotations

import numpy as np

from .data import CovariateTable, ScenarioTable
from .model import transition_mean
from .params import (Constants, ForcingForm, MeasurementOffsets, ModelParams,
                     NoiseParams, PhysicalParams)

# Noise values for the benchmark sets.  Variances reported as zero at two
# decimals are replaced by small positive stand-ins (simulation needs
# non-degenerate laws and the log transform strictly positive values).
# Several measurement variances are set at instrument-precision rather than
# fitted-residual magnitudes: the concentration and forcing records are
# near-deterministic transforms of the same underlying measurements, and the
# deep-temperature/heat-content records share one data source.  These
# choices reproduce the published precision of the estimator benchmark
# (tight f1, b1, b2, h_d; dispersed gamma, lambda, h_m).
_NOISE = dict(
    sigma2_eta=np.array([0.002, 0.70, 0.0005, 0.0005, 0.02]),
    sigma2_eps=np.array([0.10, 0.12, 0.42, 2e-5, 0.01, 1e-5, 0.002]),
    phi=np.array([0.78, 0.56, 0.39, 0.57, 0.15, 0.89, 0.89]),
    rho=0.87,
)


def _noise() -> NoiseParams:
    return NoiseParams(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                          for k, v in _NOISE.items()})


def fitted_params() -> ModelParams:
    """Point estimates from fitting the model to the 1959-2022 record."""
    return ModelParams(
        physical=PhysicalParams(b1=0.01, b2=0.02, c1=0.08, c2=0.09, f1=5.58,
                                f2=0.0, f3=0.0, gamma=1.46, lam=1.42,
                                h_m=9.37, h_d=265.90),
        offsets=MeasurementOffsets(mu_m=0.30, mu_d=0.20),
        noise=_noise(),
        forcing_form=ForcingForm.LOG_ONLY,
    )


def mc_truth_params() -> ModelParams:
    """Data-generating values for the estimator benchmark study."""
    return ModelParams(
        physical=PhysicalParams(b1=0.01, b2=0.02, c1=0.09, c2=0.09, f1=5.58,
                                f2=0.0, f3=0.0, gamma=1.44, lam=1.44,
                                h_m=8.97, h_d=265.88),
        offsets=MeasurementOffsets(mu_m=0.28, mu_d=0.05),
        noise=_noise(),
        forcing_form=ForcingForm.LOG_ONLY,
    )


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _e_ff(years: np.ndarray) -> np.ndarray:
    # Fossil emissions: exponential growth reaching ~10 GtC/yr by 2022.
    return 2.46 * np.exp(0.0223 * (years - 1959.0))


def _e_luc(years: np.ndarray) -> np.ndarray:
    # Land-use change: slow rise through the 19th-20th century, mild decline
    # after the 1990s.
    return (0.30 + 1.05 * _logistic((years - 1900.0) / 35.0)
            - 0.25 * _logistic((years - 1995.0) / 12.0))


def _f_nonco2(years: np.ndarray) -> np.ndarray:
    # Non-CO2 anthropogenic forcing: ~0.4 W/m^2 around 1960, ~1.2 by 2022.
    return 1.32 * _logistic((years - 1975.0) / 22.0)


_VOLCANOES = ((1815.5, -3.0), (1883.5, -2.2), (1902.5, -1.0), (1963.5, -1.5),
              (1982.5, -2.0), (1991.5, -2.5))


def _f_nat(years: np.ndarray) -> np.ndarray:
    # Natural forcing: a small solar cycle plus decaying volcanic pulses.
    out = 0.05 * np.sin(2.0 * np.pi * (years - 1957.0) / 10.8)
    for year0, mag in _VOLCANOES:
        dt = years - year0
        out = out + np.where(dt >= 0, mag * np.exp(-dt / 1.5), 0.0)
    return out


def synthetic_covariates(first_year: int = 1959,
                         last_year: int = 2022) -> CovariateTable:
    """Smooth covariate paths shaped like the historical record.

    Valid for any year range inside 1750-2022.
    """
    if first_year < 1750 or last_year > 2022 or first_year > last_year:
        raise ValueError("synthetic covariates cover 1750-2022")
    years = np.arange(first_year, last_year + 1)
    yf = years.astype(float)
    return CovariateTable(years, _e_ff(yf), _e_luc(yf), _f_nonco2(yf),
                          _f_nat(yf))


def spinup_state(params: ModelParams, consts: Constants = Constants(),
                 start_year: int = 1750, end_year: int = 1959) -> np.ndarray:
    """Deterministic state at end_year from a pre-industrial start.

    Iterates the noise-free transition under the synthetic covariates,
    beginning at the pre-industrial fixed point.  Used to anchor simulation
    studies at a state consistent with the model dynamics.
    """
    cov = synthetic_covariates(start_year, end_year)
    p = params.apply_form()
    x = np.array([consts.c_preind, 0.0, 0.0, 0.0, 0.0, 0.0])
    e_tot, f_ex = cov.e_total, cov.f_ex
    for t in range(1, len(cov.years)):
        x = transition_mean(x, e_tot[t], f_ex[t - 1], p.physical, consts,
                            linear_forcing=p.linear_forcing)
    return x


def mitigation_scenario(first_year: int = 2023, last_year: int = 2100,
                        e_start: float | None = None) -> ScenarioTable:
    """Strong-mitigation demo scenario.

    Emissions fall linearly from their 2022-like level, cross zero in the
    mid-2050s and level out at net-negative values; non-CO2 forcing decays
    toward a floor; natural forcing is held at its last in-sample value.
    """
    years = np.arange(first_year, last_year + 1)
    yf = years.astype(float)
    if e_start is None:
        e_start = float(_e_ff(np.array([2022.0]))[0]
                        + _e_luc(np.array([2022.0]))[0])
    e_total = np.maximum(e_start * (1.0 - (yf - 2022.0) / 33.0), -2.0)
    f_nonco2 = 0.55 + (_f_nonco2(np.array([2022.0]))[0] - 0.55) \
        * np.exp(-(yf - 2022.0) / 40.0)
    f_nat = np.full_like(yf, _f_nat(np.array([2022.0]))[0])
    return ScenarioTable(years, e_total, np.zeros_like(e_total), f_nonco2,
                         f_nat, merged_emissions=True)
