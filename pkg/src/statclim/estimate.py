"""Maximum-likelihood estimation, model selection, and residual diagnostics.

Estimation runs a quasi-Newton ascent on the filter log-likelihood in an
unconstrained reparameterization (variances and heat capacities through log,
correlations through atanh), with jittered multi-starts.  Standard errors
come from the central-difference Hessian at the optimum, mapped back to the
natural scale by the transform Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import ssm
from .model import DomainError
from .params import (Constants, ForcingForm, IDX, ModelParams, N_PARAMS,
                     PARAM_NAMES, PHYS9_NAMES, default_free_mask)

_BIG = 1e12


class EstimationError(RuntimeError):
    pass


def _transform_kind(name: str) -> str:
    if name.startswith("s2") or name in ("h_m", "h_d"):
        return "pos"
    if name.startswith("phi") or name == "rho":
        return "corr"
    return "identity"


# Characteristic magnitudes of the identity-transformed parameters.  Dividing
# by these puts every unconstrained coordinate on a comparable curvature
# scale, which the quasi-Newton search needs to converge in a reasonable
# number of iterations.
_IDENTITY_SCALES = {
    "b1": 0.01, "b2": 0.01, "c1": 0.1, "c2": 0.1,
    "f1": 1.0, "f2": 1e-4, "f3": 0.1, "gamma": 1.0, "lambda": 1.0,
    "mu_c": 1.0, "mu_o": 1.0, "mu_l": 1.0, "mu_f": 1.0,
    "mu_m": 0.3, "mu_d": 0.3,
}

# Wide physically-motivated search boxes.  The energy-balance block has a
# known ridge where gamma, lambda and h_m escape together on unlucky short
# samples; boxing the search to physical magnitudes keeps those fits finite
# without binding for realistic estimates.
_NATURAL_BOUNDS = {
    "b1": (-0.5, 0.5), "b2": (-0.5, 0.5),
    "c1": (-2.0, 2.0), "c2": (-2.0, 2.0),
    "f1": (-50.0, 50.0), "f2": (-4e-4, 4e-3), "f3": (-5.0, 5.0),
    "gamma": (1e-3, 30.0), "lambda": (1e-3, 30.0),
    "h_m": (0.5, 100.0), "h_d": (5.0, 5000.0),
    "mu_c": (-50.0, 50.0), "mu_o": (-50.0, 50.0), "mu_l": (-50.0, 50.0),
    "mu_f": (-50.0, 50.0), "mu_m": (-10.0, 10.0), "mu_d": (-10.0, 10.0),
}


class ParamTransform:
    """Bijection between free natural parameters and an unconstrained vector.

    Positive parameters map through log (variant "alt": softplus), bounded
    correlations through atanh (variant "alt": a scaled logistic); everything
    else is passed through unchanged.  Pinned entries are excluded.
    """

    def __init__(self, template: ModelParams, variant: str = "default"):
        if variant not in ("default", "alt"):
            raise ValueError(f"unknown transform variant {variant!r}")
        self.variant = variant
        self.template = template.apply_form()
        self.free_idx = np.flatnonzero(template.free_mask)
        self.free_names = [PARAM_NAMES[i] for i in self.free_idx]
        self.kinds = [_transform_kind(n) for n in self.free_names]
        self.scales = np.array([_IDENTITY_SCALES.get(n, 1.0)
                                for n in self.free_names])

    @property
    def n_free(self) -> int:
        return len(self.free_idx)

    def pack(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ValueError("cannot pack non-finite parameter values")
        u = np.empty(self.n_free)
        for j, (i, kind) in enumerate(zip(self.free_idx, self.kinds)):
            x = theta[i]
            if kind == "pos":
                if x <= 0:
                    raise ValueError(
                        f"{PARAM_NAMES[i]} must be positive to pack, got {x}")
                u[j] = np.log(x) if self.variant == "default" \
                    else np.log(np.expm1(x))
            elif kind == "corr":
                if abs(x) >= 1:
                    raise ValueError(
                        f"{PARAM_NAMES[i]} must lie in (-1, 1), got {x}")
                u[j] = np.arctanh(x) if self.variant == "default" \
                    else 2.0 * np.arctanh(x)
            else:
                u[j] = x / self.scales[j]
        return u

    def unpack(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        theta = self.template.to_vector()
        for j, (i, kind) in enumerate(zip(self.free_idx, self.kinds)):
            if kind == "pos":
                theta[i] = np.exp(u[j]) if self.variant == "default" \
                    else np.log1p(np.exp(u[j]))
            elif kind == "corr":
                theta[i] = np.tanh(u[j]) if self.variant == "default" \
                    else np.tanh(0.5 * u[j])
            else:
                theta[i] = u[j] * self.scales[j]
        return theta

    def jacobian_diag(self, u: np.ndarray) -> np.ndarray:
        """d(natural)/d(unconstrained), elementwise over free entries."""
        u = np.asarray(u, dtype=float)
        jac = np.ones(self.n_free)
        for j, kind in enumerate(self.kinds):
            if kind == "pos":
                jac[j] = np.exp(u[j]) if self.variant == "default" \
                    else 1.0 / (1.0 + np.exp(-u[j]))
            elif kind == "corr":
                x = np.tanh(u[j]) if self.variant == "default" \
                    else np.tanh(0.5 * u[j])
                jac[j] = (1.0 - x * x) if self.variant == "default" \
                    else 0.5 * (1.0 - x * x)
            else:
                jac[j] = self.scales[j]
        return jac

    def bounds(self) -> list[tuple[float, float]]:
        # Identical natural-space coverage under both variants.
        corr_lim = 7.0 if self.variant == "default" else 14.0
        out = []
        for j, (name, kind) in enumerate(zip(self.free_names, self.kinds)):
            if kind == "pos":
                lo, hi = _NATURAL_BOUNDS.get(name, (None, None))
                if lo is None:
                    out.append((-40.0, 15.0))
                elif self.variant == "default":
                    out.append((np.log(lo), np.log(hi)))
                else:
                    out.append((np.log(np.expm1(lo)), np.log(np.expm1(hi))))
            elif kind == "corr":
                out.append((-corr_lim, corr_lim))
            else:
                lo, hi = _NATURAL_BOUNDS.get(name, (-1e4, 1e4))
                out.append((lo / self.scales[j], hi / self.scales[j]))
        return out


@dataclass
class EstimateOptions:
    n_starts: int = 5
    jitter: float = 0.25
    seed: int = 0
    max_iter: int = 500
    grad_eps: float = 1e-6
    ftol: float = 1e-11
    gtol: float = 1e-6
    transform_variant: str = "default"
    compute_se: bool = True


@dataclass
class OptimizerTrace:
    start_logliks: list[float]
    best_start: int
    iterations: int
    n_evals: int
    grad_norm: float
    converged: bool


@dataclass
class EstimationResult:
    """Point estimates with uncertainty and convergence metadata.

    cov_free is the natural-scale covariance of the free parameters (delta
    method through the transform); loglik is re-evaluated at the estimate,
    not taken from the optimizer.
    """

    params: ModelParams
    loglik: float
    n_years: int
    free_names: list[str]
    theta_free: np.ndarray
    u_hat: np.ndarray
    cov_u: np.ndarray | None
    cov_free: np.ndarray | None
    se: np.ndarray | None
    t_stats: np.ndarray | None
    hessian_warning: bool
    trace: OptimizerTrace
    transform_variant: str = "default"

    @property
    def k(self) -> int:
        return len(self.free_names)

    @property
    def bic(self) -> float:
        return bic(self.loglik, self.k, self.n_years)

    def se_for(self, name: str) -> float:
        if self.se is None or name not in self.free_names:
            raise KeyError(f"no standard error for {name!r}")
        return float(self.se[self.free_names.index(name)])

    def estimate_for(self, name: str) -> float:
        return float(self.params.to_vector()[IDX[name]])

    def cov_physical(self) -> np.ndarray:
        """9x9 covariance of (b1,b2,c1,c2,f1,gamma,lambda,h_m,h_d).

        Pinned physical coefficients get zero rows/columns so that
        parameter-uncertainty draws keep them fixed.
        """
        if self.cov_free is None:
            raise EstimationError("standard errors were not computed")
        out = np.zeros((9, 9))
        pos = {n: j for j, n in enumerate(self.free_names)}
        for a, na in enumerate(PHYS9_NAMES):
            for b, nb in enumerate(PHYS9_NAMES):
                if na in pos and nb in pos:
                    out[a, b] = self.cov_free[pos[na], pos[nb]]
        return out


def _objective_factory(y, e_tot, f_ex, transform: ParamTransform,
                       consts: Constants):
    from . import _kernels
    linear_forcing = transform.template.linear_forcing
    y = np.ascontiguousarray(y, dtype=float)
    e_tot = np.ascontiguousarray(e_tot, dtype=float)
    f_ex = np.ascontiguousarray(f_ex, dtype=float)
    y0 = y[0]

    def neg_loglik(u: np.ndarray) -> float:
        try:
            args = ssm.kernel_args_from_theta(transform.unpack(u), y0,
                                              consts, linear_forcing)
            status, _, ll = _kernels.ekf_loglik(y, e_tot, f_ex, *args)
        except (DomainError, ValueError):
            return _BIG
        if status != 0 or not np.isfinite(ll):
            return _BIG
        return -ll

    return neg_loglik


def default_initial_params(observations, form: ForcingForm,
                           free_mask: np.ndarray | None = None) -> ModelParams:
    """Literature-scale starting point with data-scaled variances.

    Innovation variances start at a fraction of the variance of the
    differenced observed series, which puts every series' likelihood
    contribution on a comparable footing.
    """
    _, y = ssm._obs_arrays(observations)
    params = ModelParams(forcing_form=form, free_mask=free_mask)
    theta = params.to_vector()
    with np.errstate(invalid="ignore"):
        dvar = np.array([_nanvar_diff(y[:, j]) for j in range(7)])
    s2eps = np.maximum(0.25 * dvar, 1e-4)
    s2eta = np.maximum(0.25 * dvar[[1, 2, 3, 4, 5]], 1e-4)
    for j in range(7):
        theta[IDX["s2eps_c"] + j] = s2eps[j]
        theta[IDX["phi_c"] + j] = 0.3
    for j in range(5):
        theta[IDX["s2eta_ocn"] + j] = s2eta[j]
    theta[IDX["rho"]] = 0.5
    return params.replace_vector(theta).apply_form()


def _nanvar_diff(col: np.ndarray) -> float:
    vals = col[np.isfinite(col)]
    if len(vals) < 3:
        return 1.0
    return float(np.var(np.diff(vals)))


def maximize_likelihood(observations, covariates,
                        form: ForcingForm = ForcingForm.LOG_ONLY,
                        init: ModelParams | None = None,
                        options: EstimateOptions | None = None,
                        consts: Constants = Constants(),
                        free_mask: np.ndarray | None = None,
                        extra_starts: list[np.ndarray] | None = None
                        ) -> EstimationResult:
    """Maximize the filter log-likelihood over the free parameters.

    Runs n_starts quasi-Newton searches (the supplied/default start plus
    jittered copies, plus any extra_starts given as natural full vectors)
    and returns the best local optimum found.  The reported loglik is
    re-evaluated at the estimate.
    """
    options = options or EstimateOptions()
    years, y = ssm._obs_arrays(observations)
    cov_years, e_tot, f_ex = ssm._cov_arrays(covariates)
    if not np.array_equal(years, cov_years):
        raise ValueError("observation and covariate tables must share years")

    if init is None:
        init = default_initial_params((years, y), form, free_mask)
    else:
        init = init.apply_form()
        if free_mask is not None:
            init = ModelParams.from_vector(init.to_vector(), form, free_mask,
                                           init.linear_forcing)
    transform = ParamTransform(init, options.transform_variant)
    objective = _objective_factory(y, e_tot, f_ex, transform, consts)

    u0 = transform.pack(init.to_vector())
    if objective(u0) >= _BIG:
        raise EstimationError("initial parameters give no finite likelihood")

    rng = np.random.default_rng(options.seed)
    starts = [u0]
    for _ in range(max(0, options.n_starts - 1)):
        starts.append(u0 + options.jitter * rng.standard_normal(len(u0)))
    for theta_extra in (extra_starts or []):
        starts.append(transform.pack(np.asarray(theta_extra)))

    best = None
    best_idx = -1
    start_lls = []
    total_nit = 0
    total_nfev = 0
    for s_idx, u_s in enumerate(starts):
        if objective(u_s) >= _BIG:
            start_lls.append(float("-inf"))
            continue
        res = optimize.minimize(
            objective, u_s, method="L-BFGS-B", bounds=transform.bounds(),
            options={"maxiter": options.max_iter, "ftol": options.ftol,
                     "gtol": options.gtol, "eps": options.grad_eps,
                     "maxcor": 30, "maxfun": 40 * options.max_iter})
        total_nit += res.nit
        total_nfev += res.nfev
        start_lls.append(-float(res.fun))
        if best is None or res.fun < best.fun:
            best = res
            best_idx = s_idx
    if best is None:
        raise EstimationError("no start produced a finite likelihood")

    theta_hat = transform.unpack(best.x)
    params_hat = transform.template.replace_vector(theta_hat)
    status, _, ll_hat = ssm.log_likelihood_raw(params_hat, y, e_tot, f_ex,
                                               consts)
    if status != 0:
        raise EstimationError("likelihood not finite at the returned optimum")

    trace = OptimizerTrace(
        start_logliks=start_lls, best_start=best_idx, iterations=int(total_nit),
        n_evals=int(total_nfev),
        grad_norm=float(np.max(np.abs(np.atleast_1d(best.jac)))),
        converged=bool(best.success))
    result = EstimationResult(
        params=params_hat, loglik=float(ll_hat), n_years=len(years),
        free_names=transform.free_names,
        theta_free=theta_hat[transform.free_idx], u_hat=np.asarray(best.x),
        cov_u=None, cov_free=None, se=None, t_stats=None,
        hessian_warning=False, trace=trace,
        transform_variant=options.transform_variant)
    if options.compute_se:
        standard_errors(result, objective, transform)
    return result


def numerical_hessian(fn, x: np.ndarray, rel_step: float = 1e-3) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.zeros((k, k))
    f0 = fn(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = (fn(x + ei + ej) - fn(x + ei - ej)
                       - fn(x - ei + ej) + fn(x - ei - ej)) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    return H


def standard_errors(result: EstimationResult, neg_loglik,
                    transform: ParamTransform) -> EstimationResult:
    """Attach delta-method standard errors and t-statistics to a result.

    The covariance is the inverse negative Hessian of the log-likelihood in
    the unconstrained space; a non-negative-definite Hessian is flagged and
    handled by clipping its eigenvalues.
    """
    H_neg = numerical_hessian(neg_loglik, result.u_hat)
    # Hessian of the log-likelihood is -H_neg; its negative should be PD.
    eigvals, eigvecs = np.linalg.eigh(H_neg)
    floor = 1e-10 * max(1.0, float(np.max(np.abs(eigvals))))
    if np.any(eigvals <= 0):
        result.hessian_warning = True
        eigvals = np.maximum(eigvals, floor)
    cov_u = (eigvecs / eigvals) @ eigvecs.T
    jac = transform.jacobian_diag(result.u_hat)
    cov_free = cov_u * np.outer(jac, jac)
    se = np.sqrt(np.maximum(np.diag(cov_free), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstats = np.where(se > 0, result.theta_free / se, np.nan)
    result.cov_u = cov_u
    result.cov_free = cov_free
    result.se = se
    result.t_stats = tstats
    return result


def lr_test(restricted_loglik: float, unrestricted_loglik: float,
            df: int) -> tuple[float, float]:
    """Likelihood-ratio statistic and chi-square p-value."""
    if df < 1:
        raise ValueError("df must be at least 1")
    if unrestricted_loglik < restricted_loglik - 1e-6:
        raise ValueError(
            f"unrestricted loglik {unrestricted_loglik} below restricted "
            f"{restricted_loglik}: models are not nested or optimization failed")
    statistic = max(0.0, 2.0 * (unrestricted_loglik - restricted_loglik))
    return statistic, float(stats.chi2.sf(statistic, df))


def bic(loglik: float, k: int, n: int) -> float:
    """Bayesian information criterion -2*loglik + k*log(n)."""
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    return -2.0 * loglik + k * np.log(n)


def ecs_with_se(lambda_hat: float, var_lambda: float, f2x: float = 3.93,
                f2x_ci_halfwidth: float = 0.47) -> tuple[float, float]:
    """Equilibrium climate sensitivity f2x/lambda with delta-method se.

    f2x is the forcing from doubled CO2 with a Gaussian 90% CI half-width;
    its variance is (halfwidth/1.6449)^2.  The gradient of x/y propagates
    both variances.
    """
    if lambda_hat <= 0:
        raise ValueError(f"lambda must be positive, got {lambda_hat}")
    var_f2x = (f2x_ci_halfwidth / 1.6449) ** 2
    ecs = f2x / lambda_hat
    grad = np.array([1.0 / lambda_hat, -f2x / lambda_hat ** 2])
    var = grad @ np.diag([var_f2x, var_lambda]) @ grad
    return float(ecs), float(np.sqrt(var))


@dataclass
class SeriesDiagnostics:
    """Moment and correlation statistics of one residual series."""

    name: str
    n: int
    mean: float | None = None
    std: float | None = None
    skew: float | None = None
    kurt: float | None = None
    sc: float | None = None
    jb: float | None = None
    dw: float | None = None
    lb1: float | None = None
    lb5: float | None = None
    lb10: float | None = None
    arch: float | None = None

    @property
    def available(self) -> bool:
        return self.mean is not None


@dataclass
class DiagnosticsReport:
    series: list[SeriesDiagnostics] = field(default_factory=list)

    def row(self, name: str) -> SeriesDiagnostics:
        for s in self.series:
            if s.name == name:
                return s
        raise KeyError(name)


MIN_DIAGNOSTIC_OBS = 12


def residual_diagnostics(residuals: np.ndarray,
                         names: tuple[str, ...] = (
                             "C", "OCN", "LND", "Forc", "Temp", "O-Temp",
                             "OHC")) -> DiagnosticsReport:
    """Moment/serial-correlation diagnostics of standardized residuals.

    Missing entries are dropped per series.  Kurtosis is raw (Gaussian = 3);
    SC is the no-intercept OLS slope of e_t on e_{t-1}; the ARCH statistic
    uses one lag of squared residuals.
    """
    residuals = np.asarray(residuals, dtype=float)
    report = DiagnosticsReport()
    for j, name in enumerate(names):
        e = residuals[:, j]
        e = e[np.isfinite(e)]
        n = len(e)
        if n < MIN_DIAGNOSTIC_OBS:
            report.series.append(SeriesDiagnostics(name=name, n=n))
            continue
        mean = float(np.mean(e))
        std = float(np.std(e, ddof=1))
        m2 = float(np.mean((e - mean) ** 2))
        skew = float(np.mean((e - mean) ** 3) / m2 ** 1.5)
        kurt = float(np.mean((e - mean) ** 4) / m2 ** 2)
        jb = n / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0)
        sc = float(np.sum(e[1:] * e[:-1]) / np.sum(e[:-1] ** 2))
        dw = float(np.sum(np.diff(e) ** 2) / np.sum(e ** 2))
        lb = {p: _ljung_box(e, p) for p in (1, 5, 10)}
        report.series.append(SeriesDiagnostics(
            name=name, n=n, mean=mean, std=std, skew=skew, kurt=kurt,
            sc=sc, jb=float(jb), dw=dw, lb1=lb[1], lb5=lb[5], lb10=lb[10],
            arch=_arch_stat(e)))
    return report


def _autocorr(e: np.ndarray, k: int) -> float:
    d = e - e.mean()
    return float(np.sum(d[k:] * d[:-k]) / np.sum(d * d))


def _ljung_box(e: np.ndarray, p: int) -> float:
    n = len(e)
    acc = sum(_autocorr(e, k) ** 2 / (n - k) for k in range(1, p + 1))
    return float(n * (n + 2) * acc)


def _arch_stat(e: np.ndarray) -> float:
    # LM statistic: n*R^2 of e_t^2 on an intercept and e_{t-1}^2.
    z = e ** 2
    y, x = z[1:], z[:-1]
    n = len(y)
    X = np.column_stack([np.ones(n), x])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst <= 0:
        return 0.0
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst
    return float(n * r2)


def _write_params_rows(path, params: ModelParams, se_by_name: dict) -> None:
    import csv
    from pathlib import Path
    theta = params.to_vector()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "std_err", "t_stat", "free"])
        for i, name in enumerate(PARAM_NAMES):
            se, tstat = se_by_name.get(name, ("", ""))
            w.writerow([name, repr(float(theta[i])), se, tstat,
                        int(params.free_mask[i])])


def write_estimate_csv(result: EstimationResult, path) -> None:
    """parameter,estimate,std_err,t_stat,free rows for the full vector."""
    se_by_name = {}
    if result.se is not None:
        for j, name in enumerate(result.free_names):
            se_by_name[name] = (repr(float(result.se[j])),
                                repr(float(result.t_stats[j])))
    _write_params_rows(path, result.params, se_by_name)


def write_params_csv(params: ModelParams, path) -> None:
    """Same schema as write_estimate_csv for a bare parameter set."""
    _write_params_rows(path, params.apply_form(), {})


def load_params_csv(path, form: ForcingForm,
                    free_mask: np.ndarray | None = None) -> ModelParams:
    """Rebuild a ModelParams from a write_estimate_csv file."""
    import csv
    values = {}
    mask = np.zeros(N_PARAMS, dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            name = row["parameter"]
            if name not in IDX:
                raise ValueError(f"{path}: unknown parameter {name!r}")
            values[name] = float(row["estimate"])
            mask[IDX[name]] = bool(int(row.get("free", "1") or 1))
    missing = [n for n in PARAM_NAMES if n not in values]
    if missing:
        raise ValueError(f"{path}: missing parameters {missing}")
    theta = np.array([values[n] for n in PARAM_NAMES])
    return ModelParams.from_vector(theta, form,
                                   mask if free_mask is None else free_mask)


def write_cov_phys_csv(cov: np.ndarray, path) -> None:
    import csv
    from pathlib import Path
    cov = np.asarray(cov, dtype=float)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter"] + list(PHYS9_NAMES))
        for i, name in enumerate(PHYS9_NAMES):
            w.writerow([name] + [repr(float(v)) for v in cov[i]])


def load_cov_phys_csv(path) -> np.ndarray:
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["parameter"] + list(PHYS9_NAMES):
            raise ValueError(f"{path}: unexpected header {header}")
        rows = {row[0]: [float(v) for v in row[1:]] for row in reader}
    return np.array([rows[name] for name in PHYS9_NAMES])


def write_comparison_csv(rows: list["FormComparison"], path) -> None:
    """Model-comparison table across forcing variants."""
    import csv
    from pathlib import Path
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["form", "loglik", "n_params", "bic", "lr_stat", "df",
                    "p_value"])
        for r in rows:
            w.writerow([
                r.form.value, repr(float(r.loglik)), r.n_params,
                repr(float(r.bic)),
                "" if r.lr_stat is None else repr(float(r.lr_stat)),
                r.df, "" if r.p_value is None else repr(float(r.p_value))])


_DIAG_FIELDS = ("mean", "std", "skew", "kurt", "sc", "jb", "dw", "lb1",
                "lb5", "lb10", "arch")


def write_diagnostics_csv(report: DiagnosticsReport, path) -> None:
    import csv
    from pathlib import Path
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "n"] + list(_DIAG_FIELDS))
        for s in report.series:
            vals = ["" if getattr(s, f) is None else repr(float(getattr(s, f)))
                    for f in _DIAG_FIELDS]
            w.writerow([s.name, s.n] + vals)


FORM_ORDER = (ForcingForm.UNRESTRICTED, ForcingForm.SQRT_PLUS_LOG,
              ForcingForm.LOG2, ForcingForm.SQRT_ONLY, ForcingForm.LOG_ONLY,
              ForcingForm.HANSEN98)


@dataclass
class FormComparison:
    form: ForcingForm
    loglik: float
    n_params: int
    bic: float
    lr_stat: float | None
    df: int
    p_value: float | None


def compare_forcing_forms(observations, covariates,
                          options: EstimateOptions | None = None,
                          consts: Constants = Constants(),
                          init: ModelParams | None = None
                          ) -> tuple[list[FormComparison], dict]:
    """Estimate every forcing variant and test it against the unrestricted one.

    Restricted variants are estimated first; their optima seed additional
    starts for the unrestricted fit so that the nesting inequality holds in
    practice, not just in theory.
    """
    options = options or EstimateOptions()
    results: dict[ForcingForm, EstimationResult] = {}
    for form in FORM_ORDER:
        if form is ForcingForm.UNRESTRICTED:
            continue
        init_f = None
        if init is not None:
            init_f = ModelParams.from_vector(
                init.to_vector(), form, default_free_mask(form)).apply_form()
        results[form] = maximize_likelihood(observations, covariates, form,
                                            init=init_f, options=options,
                                            consts=consts)
    extra = [results[f].params.to_vector() for f in results]
    init_u = None
    if init is not None:
        init_u = ModelParams.from_vector(
            init.to_vector(), ForcingForm.UNRESTRICTED,
            default_free_mask(ForcingForm.UNRESTRICTED)).apply_form()
    results[ForcingForm.UNRESTRICTED] = maximize_likelihood(
        observations, covariates, ForcingForm.UNRESTRICTED, init=init_u,
        options=options, consts=consts, extra_starts=extra)

    ll_u = results[ForcingForm.UNRESTRICTED].loglik
    rows = []
    for form in FORM_ORDER:
        res = results[form]
        if form is ForcingForm.UNRESTRICTED:
            stat, p = None, None
        else:
            stat, p = lr_test(res.loglik, ll_u, form.restrictions)
        rows.append(FormComparison(
            form=form, loglik=res.loglik, n_params=res.k,
            bic=res.bic, lr_stat=stat, df=form.restrictions, p_value=p))
    return rows, results
