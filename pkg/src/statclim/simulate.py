"""Forward simulation, uncertainty decomposition and the estimator MC study.

Every path owns a counter-based random stream keyed by (master_seed,
path_index), and all uncertainty setups consume the identical draw layout
(parameter, initial-state, state-innovation and measurement-error blocks),
switching contributions on or off by zeroing their scale factors.  Ensembles
are therefore bit-identical across worker counts and, with a degenerate
parameter covariance and zeroed noise, the full-uncertainty setup reproduces
the deterministic path exactly.
"""
from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, ssm
from .estimate import EstimateOptions, EstimationError, maximize_likelihood
from .model import (forcing_curve, forcing_curve_slope, innovation_cov,
                    stationary_measurement_cov)
from .params import (Constants, ModelParams, PARAM_NAMES, PHYS9_IDX,
                     OBS_NAMES, STATE_NAMES)
from .ssm import FilterError, GaussianBelief


class UncertaintySetup(enum.Enum):
    """Which stochastic ingredients a projection run switches on."""

    DETERMINISTIC = "det"
    PARAM_ONLY = "param"
    PARAM_STATE = "param-state"
    PARAM_STATE_MEAS = "full"

    @property
    def draw_params(self) -> bool:
        return self is not UncertaintySetup.DETERMINISTIC

    @property
    def draw_init(self) -> bool:
        return self is not UncertaintySetup.DETERMINISTIC

    @property
    def draw_state(self) -> bool:
        return self in (UncertaintySetup.PARAM_STATE,
                        UncertaintySetup.PARAM_STATE_MEAS)

    @property
    def draw_meas(self) -> bool:
        return self is UncertaintySetup.PARAM_STATE_MEAS


@dataclass
class Scenario:
    """Covariate path over a projection horizon plus the starting belief tag.

    init_source is one of "preindustrial", "filtered-first", "filtered-last",
    "smoothed-last"; the caller resolves it into an actual belief.
    """

    years: np.ndarray
    e_total: np.ndarray
    f_ex: np.ndarray
    init_source: str = "filtered-last"

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.e_total = np.asarray(self.e_total, dtype=float)
        self.f_ex = np.asarray(self.f_ex, dtype=float)
        if not (len(self.years) == len(self.e_total) == len(self.f_ex)):
            raise ValueError("scenario columns misaligned")
        if len(self.years) > 1 and np.any(np.diff(self.years) != 1):
            raise ValueError("scenario years must be contiguous")
        if not (np.all(np.isfinite(self.e_total))
                and np.all(np.isfinite(self.f_ex))):
            raise ValueError("scenario covariates must be complete")

    @classmethod
    def from_table(cls, table, init_source: str = "filtered-last") -> "Scenario":
        return cls(table.years, table.e_total, table.f_ex, init_source)


@dataclass
class PathEnsemble:
    """Simulated state and observation trajectories for one setup.

    Paths that left the model domain or went non-finite are flagged invalid
    and excluded from quantiles and probabilities; their count is reported.
    """

    years: np.ndarray
    states: np.ndarray        # (n_paths, n_years, 6)
    observations: np.ndarray  # (n_paths, n_years, 7)
    valid: np.ndarray         # (n_paths,)
    master_seed: int
    setup: UncertaintySetup
    mu_m: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())

    def variable_paths(self, variable: str, scale: str = "state") -> np.ndarray:
        """(n_valid_paths, n_years) trajectories of one variable."""
        if scale == "state":
            idx = STATE_NAMES.index(variable)
            return self.states[self.valid, :, idx]
        if scale == "observation":
            name = variable if variable in OBS_NAMES else variable + "_star"
            idx = OBS_NAMES.index(name)
            return self.observations[self.valid, :, idx]
        raise ValueError(f"scale must be 'state' or 'observation', got {scale}")


def _psd_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L' = cov, tolerating semidefinite input.

    An all-zero covariance maps to an exactly zero factor so that degenerate
    draws reproduce the mean bit-for-bit.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        vals = np.maximum(vals, 0.0)
        return vecs * np.sqrt(vals)


def _params_valid(theta9: np.ndarray, f2: float, c_check: float) -> bool:
    # theta9 = (b1, b2, c1, c2, f1, gamma, lambda, h_m, h_d); f2 rides along
    # from the fixed block and governs the forcing log argument.
    if theta9[7] <= 0 or theta9[8] <= 0:
        return False
    return c_check + f2 * c_check * c_check > 0


def sample_physical_params(theta_hat: np.ndarray, cov_phys: np.ndarray,
                           rng: np.random.Generator, f2: float = 0.0,
                           c_check: float = 4.0 * 591.3060,
                           max_tries: int = 1000) -> np.ndarray:
    """One multivariate-normal draw of the 9 physical coefficients.

    Draws violating hard validity (non-positive heat capacities, or an
    ill-defined forcing curve at stocks up to c_check) are rejected and
    redrawn, up to max_tries.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    L = _psd_cholesky(np.asarray(cov_phys, dtype=float))
    for _ in range(max_tries):
        draw = theta_hat + L @ rng.standard_normal(9)
        if _params_valid(draw, f2, c_check):
            return draw
    raise RuntimeError(
        f"rejection cap {max_tries} exceeded when drawing physical parameters")


def _path_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=np.array([master_seed, index], dtype=np.uint64)))


@dataclass
class _SimPieces:
    # Precomputed, path-independent simulation inputs.
    theta: np.ndarray
    phys_base: np.ndarray
    mu6: np.ndarray
    mu_d: float
    phi: np.ndarray
    L_param: np.ndarray
    L_init6: np.ndarray
    m0: np.ndarray
    eta_sd: np.ndarray
    L_xi: np.ndarray
    L_eps0: np.ndarray
    kparams: tuple


def _prepare(params: ModelParams, setup: UncertaintySetup,
             cov_phys: np.ndarray | None, init: GaussianBelief,
             consts: Constants) -> _SimPieces:
    p = params.apply_form()
    p.validate()
    theta = p.to_vector()
    phys = p.physical.as_array()
    if setup.draw_params:
        if cov_phys is None:
            raise ValueError(f"setup {setup.value} needs a physical-parameter "
                             f"covariance")
        L_param = _psd_cholesky(cov_phys)
    else:
        L_param = np.zeros((9, 9))
    L_init6 = (_psd_cholesky(init.cov[:6, :6]) if setup.draw_init
               else np.zeros((6, 6)))
    eta_sd = (np.sqrt(consts.delta * p.noise.sigma2_eta)
              if setup.draw_state else np.zeros(5))
    if setup.draw_meas:
        L_xi = _psd_cholesky(consts.delta * innovation_cov(p.noise))
        L_eps0 = _psd_cholesky(consts.delta
                               * stationary_measurement_cov(p.noise))
    else:
        L_xi = np.zeros((7, 7))
        L_eps0 = np.zeros((7, 7))
    ki = ssm.kernel_inputs(p, consts)
    mu6 = np.array([p.offsets.mu_c, p.offsets.mu_o, p.offsets.mu_l,
                    p.offsets.mu_f, p.offsets.mu_m, p.offsets.mu_d])
    return _SimPieces(theta=theta, phys_base=phys, mu6=mu6,
                      mu_d=p.offsets.mu_d, phi=p.noise.phi.astype(float),
                      L_param=L_param, L_init6=L_init6, m0=init.mean.copy(),
                      eta_sd=eta_sd, L_xi=L_xi, L_eps0=L_eps0,
                      kparams=(ki[5], ki[6], ki[9], ki[10]))


def _simulate_range(pieces: _SimPieces, e_tot, f_ex, lo: int, hi: int,
                    master_seed: int, c_check: float):
    delta, c0, lin_flag, sink_mixed = pieces.kparams
    n = len(e_tot)
    m = hi - lo
    states = np.zeros((m, n, 6))
    obs = np.zeros((m, n, 7))
    valid = np.ones(m, dtype=bool)
    theta9_hat = pieces.theta[PHYS9_IDX].copy()
    f2 = pieces.phys_base[5]
    for j in range(m):
        # Each path consumes the same draw layout regardless of setup:
        # parameters, initial state, state innovations, error start, error
        # innovations.  Disabled blocks multiply zero factors.
        rng = _path_rng(master_seed, lo + j)
        tries = 0
        while True:
            cand = theta9_hat + pieces.L_param @ rng.standard_normal(9)
            tries += 1
            if _params_valid(cand, f2, c_check):
                break
            if tries >= 1000:
                raise RuntimeError("rejection cap exceeded in path draws")
        phys = pieces.phys_base.copy()
        phys[[0, 1, 2, 3, 4, 7, 8, 9, 10]] = cand
        x0 = pieces.m0[:6] + pieces.L_init6 @ rng.standard_normal(6)
        eta = rng.standard_normal((n - 1, 5)) * pieces.eta_sd
        eps0 = pieces.L_eps0 @ rng.standard_normal(7)
        xi = rng.standard_normal((n - 1, 7)) @ pieces.L_xi.T
        gf0 = forcing_curve(c0, phys[4], phys[5], phys[6])
        lin_slope = forcing_curve_slope(c0, phys[4], phys[5], phys[6])
        xpath, _, ok = _kernels.simulate_state_path(
            x0, e_tot, f_ex, eta, phys, delta, c0, gf0, lin_slope,
            lin_flag, sink_mixed)
        eps = _kernels.simulate_eps_path(eps0, xi, pieces.phi)
        if not ok or not np.all(np.isfinite(xpath)):
            valid[j] = False
        states[j] = xpath
        obs[j, :, :6] = xpath + pieces.mu6 + eps[:, :6]
        obs[j, :, 6] = phys[10] * (pieces.mu_d + xpath[:, 5]) + eps[:, 6]
    return states, obs, valid


def _simulate_chunk(args):
    return _simulate_range(*args)


def simulate_paths(params: ModelParams, scenario: Scenario,
                   setup: UncertaintySetup, n_paths: int, master_seed: int,
                   cov_phys: np.ndarray | None = None,
                   init: GaussianBelief | None = None,
                   consts: Constants = Constants(),
                   jobs: int = 1,
                   c_check: float | None = None) -> PathEnsemble:
    """Simulate n_paths trajectories of states and observations.

    The first scenario year carries the initial condition; transitions use
    the scenario covariates from the second year on.  init defaults to the
    pre-industrial fixed point with zero spread.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if init is None:
        mean = np.zeros(13)
        mean[0] = consts.c_preind
        init = GaussianBelief(mean, np.zeros((13, 13)))
    pieces = _prepare(params, setup, cov_phys, init, consts)
    if c_check is None:
        c_check = 4.0 * consts.c_preind
    e_tot = np.ascontiguousarray(scenario.e_total, dtype=float)
    f_ex = np.ascontiguousarray(scenario.f_ex, dtype=float)

    bounds = _chunk_bounds(n_paths, jobs)
    if len(bounds) == 1:
        parts = [_simulate_range(pieces, e_tot, f_ex, 0, n_paths,
                                 master_seed, c_check)]
    else:
        tasks = [(pieces, e_tot, f_ex, lo, hi, master_seed, c_check)
                 for lo, hi in bounds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_simulate_chunk, tasks))
    states = np.concatenate([p[0] for p in parts], axis=0)
    obs = np.concatenate([p[1] for p in parts], axis=0)
    valid = np.concatenate([p[2] for p in parts], axis=0)
    return PathEnsemble(years=scenario.years.copy(), states=states,
                        observations=obs, valid=valid,
                        master_seed=master_seed, setup=setup,
                        mu_m=pieces.mu6[4])


def _chunk_bounds(n: int, jobs: int) -> list[tuple[int, int]]:
    jobs = max(1, int(jobs))
    if jobs == 1 or n < 2 * jobs:
        return [(0, n)]
    size = -(-n // jobs)
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


@dataclass
class QuantileBands:
    years: np.ndarray
    probs: tuple
    values: np.ndarray  # (n_probs, n_years)

    def band(self, prob: float) -> np.ndarray:
        return self.values[self.probs.index(prob)]


def quantile_bands(ensemble: PathEnsemble,
                   probs: tuple = (0.025, 0.5, 0.975),
                   variable: str = "t_m",
                   scale: str = "state") -> QuantileBands:
    """Pointwise quantiles across valid paths (linear interpolation)."""
    data = ensemble.variable_paths(variable, scale)
    if data.shape[0] < 2:
        raise ValueError("need at least 2 valid paths for quantile bands")
    values = np.quantile(data, list(probs), axis=0)
    return QuantileBands(years=ensemble.years, probs=tuple(probs),
                         values=values)


def exceedance_probability(ensemble: PathEnsemble, threshold: float,
                           variable: str = "t_m", scale: str = "state",
                           window: tuple[int, int] | None = None) -> float:
    """Fraction of valid paths whose maximum exceeds threshold in the window.

    For surface temperature the state scale is T_m + mu_m (trend without
    transitory errors) and the observation scale is the synthetic
    measurement itself.
    """
    years = ensemble.years
    if window is None:
        window = (int(years[0]), int(years[-1]))
    lo, hi = window
    if lo < years[0] or hi > years[-1] or lo > hi:
        raise ValueError(f"window {window} outside ensemble horizon "
                         f"[{years[0]}, {years[-1]}]")
    mask = (years >= lo) & (years <= hi)
    if scale == "state" and variable == "t_m":
        vals = ensemble.variable_paths("t_m", "state") + ensemble.mu_m
    else:
        vals = ensemble.variable_paths(variable, scale)
    if vals.shape[0] == 0:
        raise ValueError("no valid paths")
    return float(np.mean(np.max(vals[:, mask], axis=1) > threshold))


INIT_SOURCES = ("preindustrial", "filtered-first", "filtered-last",
                "smoothed-last")


def initial_belief_from_history(params: ModelParams, observations,
                                covariates, source: str,
                                consts: Constants = Constants()
                                ) -> tuple[GaussianBelief, int]:
    """Resolve an initial-belief tag into a belief and its anchor year.

    "preindustrial" needs no history; the filtered/smoothed variants run the
    filter over the supplied historical tables and take the belief at the
    first or last year.
    """
    if source == "preindustrial":
        mean = np.zeros(13)
        mean[0] = consts.c_preind
        return GaussianBelief(mean, np.zeros((13, 13))), 1750
    if source not in INIT_SOURCES:
        raise ValueError(f"unknown initial-belief source {source!r}; "
                         f"choose from {INIT_SOURCES}")
    filt = ssm.ekf_filter(params, observations, covariates, consts)
    if source == "filtered-first":
        return filt.filtered_belief(0), int(filt.years[0])
    if source == "filtered-last":
        return filt.filtered_belief(filt.n_steps - 1), int(filt.years[-1])
    smooth = ssm.rts_smooth(filt)
    return (GaussianBelief(smooth.mean[-1], smooth.cov[-1]),
            int(filt.years[-1]))


def projection_scenario(scenario_table, anchor_year: int, e_anchor: float,
                        f_ex_anchor: float,
                        init_source: str = "filtered-last") -> Scenario:
    """Prepend the end-of-history anchor year to a future covariate table.

    The first year of the resulting scenario carries the initial condition;
    the table must start the year after the anchor.
    """
    if hasattr(scenario_table, "check_follows"):
        scenario_table.check_follows(anchor_year)
    years = np.concatenate([[anchor_year], scenario_table.years])
    e_total = np.concatenate([[e_anchor], scenario_table.e_total])
    f_ex = np.concatenate([[f_ex_anchor], scenario_table.f_ex])
    return Scenario(years, e_total, f_ex, init_source)


def simulate_dataset(params: ModelParams, e_tot: np.ndarray,
                     f_ex: np.ndarray, x0: np.ndarray,
                     rng: np.random.Generator,
                     consts: Constants = Constants()):
    """One synthetic dataset (states, observations) at fixed parameters.

    States start at x0 exactly; state innovations and AR(1) measurement
    errors (from their stationary law) are switched fully on.  Used by the
    Monte Carlo estimator study.
    """
    p = params.apply_form()
    n = len(e_tot)
    ki = ssm.kernel_inputs(p, consts)
    phys = p.physical.as_array()
    eta = rng.standard_normal((n - 1, 5)) \
        * np.sqrt(consts.delta * p.noise.sigma2_eta)
    L_xi = _psd_cholesky(consts.delta * innovation_cov(p.noise))
    L_eps0 = _psd_cholesky(consts.delta * stationary_measurement_cov(p.noise))
    eps0 = L_eps0 @ rng.standard_normal(7)
    xi = rng.standard_normal((n - 1, 7)) @ L_xi.T
    xpath, _, ok = _kernels.simulate_state_path(
        np.asarray(x0, dtype=float), np.ascontiguousarray(e_tot, dtype=float),
        np.ascontiguousarray(f_ex, dtype=float), eta, phys,
        *ki[5:7], ki[7], ki[8], ki[9], ki[10])
    if not ok:
        raise RuntimeError("synthetic state path left the model domain")
    eps = _kernels.simulate_eps_path(eps0, xi, p.noise.phi.astype(float))
    mu6 = np.array([p.offsets.mu_c, p.offsets.mu_o, p.offsets.mu_l,
                    p.offsets.mu_f, p.offsets.mu_m, p.offsets.mu_d])
    y = np.zeros((n, 7))
    y[:, :6] = xpath + mu6 + eps[:, :6]
    y[:, 6] = p.physical.h_d * (p.offsets.mu_d + xpath[:, 5]) + eps[:, 6]
    return xpath, y


@dataclass
class MCStudyResult:
    """Columnwise summary of repeated simulate-then-estimate replications."""

    free_names: list[str]
    true_values: np.ndarray
    estimates: np.ndarray  # (n_ok, k)
    n_requested: int
    n_failed: int
    master_seed: int
    n_iteration_capped: int = 0

    @property
    def mc_mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def mc_std(self) -> np.ndarray:
        return self.estimates.std(axis=0, ddof=1)

    def column(self, name: str) -> np.ndarray:
        return self.estimates[:, self.free_names.index(name)]


def _mc_replications(true_params, e_tot, f_ex, x0, reps, master_seed,
                     options, start_at_truth, consts):
    rows = []
    for r in reps:
        rng = _path_rng(master_seed, r)
        _, y = simulate_dataset(true_params, e_tot, f_ex, x0, rng, consts)
        years = np.arange(len(e_tot))
        init = true_params.copy() if start_at_truth else None
        try:
            res = maximize_likelihood((years, y), (years, e_tot, f_ex),
                                      form=true_params.forcing_form,
                                      init=init, options=options,
                                      consts=consts)
            rows.append((r, res.theta_free, res.trace.converged))
        except (EstimationError, FilterError):
            rows.append((r, None, False))
    return rows


def _mc_chunk(args):
    return _mc_replications(*args)


def mc_study(true_params: ModelParams, covariates, n_reps: int,
             n_obs: int = 64, master_seed: int = 0,
             x0: np.ndarray | None = None,
             options: EstimateOptions | None = None,
             start_at_truth: bool = True, jobs: int = 1,
             consts: Constants = Constants()) -> MCStudyResult:
    """Simulate n_reps datasets at true_params and re-estimate each one.

    Replications are keyed by (master_seed, replication_index), so results
    do not depend on the worker count.  Replications whose estimation fails
    are dropped and counted.
    """
    cov_years, e_tot, f_ex = ssm._cov_arrays(covariates)
    if len(cov_years) < n_obs:
        raise ValueError(f"covariates cover {len(cov_years)} years, "
                         f"need {n_obs}")
    e_tot, f_ex = e_tot[:n_obs], f_ex[:n_obs]
    if x0 is None:
        from .presets import spinup_state
        x0 = spinup_state(true_params, consts,
                          end_year=int(cov_years[0]))
    if options is None:
        options = EstimateOptions(n_starts=1, compute_se=False, max_iter=700,
                                  ftol=1e-10)
    true_params = true_params.apply_form()

    bounds = _chunk_bounds(n_reps, jobs)
    if len(bounds) == 1:
        parts = [_mc_replications(true_params, e_tot, f_ex, x0,
                                  range(n_reps), master_seed, options,
                                  start_at_truth, consts)]
    else:
        tasks = [(true_params, e_tot, f_ex, x0, range(lo, hi), master_seed,
                  options, start_at_truth, consts) for lo, hi in bounds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_mc_chunk, tasks))
    rows = [row for part in parts for row in part]
    rows.sort(key=lambda r: r[0])
    estimates = np.array([th for _, th, _ in rows if th is not None])
    n_failed = sum(1 for _, th, _ in rows if th is None)
    n_capped = sum(1 for _, th, conv in rows if th is not None and not conv)
    if len(estimates) == 0:
        raise EstimationError("every Monte Carlo replication failed")
    free_idx = np.flatnonzero(true_params.free_mask)
    return MCStudyResult(
        free_names=[PARAM_NAMES[i] for i in free_idx],
        true_values=true_params.to_vector()[free_idx],
        estimates=estimates, n_requested=n_reps, n_failed=n_failed,
        master_seed=master_seed, n_iteration_capped=n_capped)
