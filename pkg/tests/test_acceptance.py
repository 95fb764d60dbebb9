"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the lines.  The two
criteria that need real historical/scenario data are skipped unless
STATCLIM_DATA_DIR points to a directory with observations.csv,
covariates.csv and scenario.csv in the canonical schemas.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import admissible_state, random_physical
from _oracles import filter_vs_reference, random_linear_instance
from statclim import data, presets, simulate, ssm
from statclim.cli import RunConfig, dispatch
from statclim.estimate import (EstimateOptions, bic, ecs_with_se, lr_test,
                               maximize_likelihood, residual_diagnostics,
                               write_cov_phys_csv, write_params_csv)
from statclim.model import transition_jacobian, transition_mean
from statclim.params import Constants, ForcingForm
from statclim.simulate import (UncertaintySetup, mc_study, quantile_bands,
                               simulate_paths)

DATA_DIR = os.environ.get("STATCLIM_DATA_DIR", "")


def _report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"\nACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# Published model-comparison table: (loglik, n_params, bic, lr p-value, df).
COMPARISON_TABLE = {
    "unrestricted": (925.79, 33, -1714.34, None, 0),
    "sqrtlog": (924.78, 32, -1716.48, 0.1552, 1),
    "log2": (923.77, 32, -1714.45, 0.0444, 1),
    "sqrt": (917.17, 31, -1705.41, 0.00018, 2),
    "log": (923.76, 31, -1718.60, 0.1313, 2),
    "hansen98": (911.21, 30, -1697.67, None, 3),
}


def test_01_information_criterion_and_lr_arithmetic():
    t0 = time.time()
    ll_u = COMPARISON_TABLE["unrestricted"][0]
    ok = True
    details = []
    for name, (ll, k, bic_ref, p_ref, df) in COMPARISON_TABLE.items():
        b = bic(ll, k, 64)
        if abs(b - bic_ref) > 0.01:
            ok = False
            details.append(f"bic[{name}]={b:.3f} vs {bic_ref}")
        if p_ref is not None:
            _, p = lr_test(ll, ll_u, df)
            if abs(p - p_ref) > 0.002:
                ok = False
                details.append(f"p[{name}]={p:.4f} vs {p_ref}")
    _report(1, "BIC and likelihood-ratio arithmetic", ok,
            "; ".join(details) or f"all six BICs and four p-values "
            f"reproduced ({time.time() - t0:.2f}s)")


def test_02_climate_sensitivity_delta_method():
    ecs, se = ecs_with_se(1.42, 0.51 ** 2, 3.93, 0.47)
    ok = 2.76 <= ecs <= 2.79 and 0.98 <= se <= 1.06
    _report(2, "equilibrium climate sensitivity", ok,
            f"ECS={ecs:.4f}, se={se:.4f}")


def test_03_filter_against_joint_gaussian_oracle():
    t0 = time.time()
    rng = np.random.default_rng(31_415)
    worst_ll, worst_mean = 0.0, 0.0
    for _ in range(50):
        params, e_tot, f_ex, y = random_linear_instance(rng, n_steps=5)
        filt, smooth, ref_ll, ref_smooth = filter_vs_reference(
            params, e_tot, f_ex, y)
        worst_ll = max(worst_ll, abs(filt.loglik - ref_ll) / abs(ref_ll))
        worst_mean = max(worst_mean, float(np.max(
            np.abs(smooth.mean - ref_smooth)
            / np.maximum(1.0, np.abs(ref_smooth)))))
    ok = worst_ll < 1e-8 and worst_mean < 1e-8
    _report(3, "filter/smoother vs brute-force joint Gaussian", ok,
            f"50 instances, worst rel: loglik {worst_ll:.2e}, "
            f"smoothed means {worst_mean:.2e} ({time.time() - t0:.1f}s)")


def test_04_jacobian_vs_finite_differences():
    t0 = time.time()
    rng = np.random.default_rng(2_718)
    consts = Constants()
    worst = 0.0
    for _ in range(100):
        p = random_physical(rng)
        x = admissible_state(rng)
        J = transition_jacobian(x, p, consts)
        J_fd = np.zeros((6, 6))
        for j in range(6):
            h = 1e-5 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            J_fd[:, j] = (transition_mean(xp, 4.0, 0.2, p, consts)
                          - transition_mean(xm, 4.0, 0.2, p, consts)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(J - J_fd)
                                        / np.maximum(1.0, np.abs(J)))))
    ok = worst < 1e-6
    _report(4, "transition Jacobian vs central differences", ok,
            f"100 states, worst rel err {worst:.2e} ({time.time() - t0:.1f}s)")


def test_05_preindustrial_fixed_point():
    consts = Constants()
    p = presets.fitted_params().apply_form().physical
    x0 = np.array([consts.c_preind, 0, 0, 0, 0, 0], dtype=float)
    x = x0.copy()
    for _ in range(500):
        x = transition_mean(x, 0.0, 0.0, p, consts)
    drift = float(np.max(np.abs(x - x0)))
    ok = drift < 1e-10
    _report(5, "pre-industrial fixed point over 500 steps", ok,
            f"max drift {drift:.2e}")


def test_06_measurement_error_stationarity():
    t0 = time.time()
    from statclim._kernels import simulate_eps_path
    from statclim.model import innovation_cov, stationary_measurement_cov
    noise = presets.fitted_params().apply_form().noise
    rng = np.random.default_rng(606)
    n = 10_000
    L = np.linalg.cholesky(innovation_cov(noise) + 1e-18 * np.eye(7))
    xi = rng.standard_normal((n - 1, 7)) @ L.T
    eps = simulate_eps_path(np.zeros(7), xi, noise.phi)[500:]
    stat = stationary_measurement_cov(noise)
    ok = True
    details = []
    for i in range(7):
        e = eps[:, i]
        d = e - e.mean()
        acf1 = float(np.sum(d[1:] * d[:-1]) / np.sum(d * d))
        vr = float(e.var() / stat[i, i])
        if abs(acf1 - noise.phi[i]) > 0.1 or abs(vr - 1.0) > 0.10:
            ok = False
            details.append(f"series {i}: acf1 {acf1:.3f} (phi {noise.phi[i]}), "
                           f"var ratio {vr:.3f}")
    _report(6, "simulated error stationarity", ok,
            "; ".join(details) or f"lag-1 autocorr within 0.1, variances "
            f"within 10% ({time.time() - t0:.1f}s)")


MC_TABLE = {  # published: (average, mc std); zero-printed stds floored later
    "b1": (0.01, 0.00), "b2": (0.02, 0.00),
    "f1": (5.58, 0.01), "h_d": (265.81, 0.25),
}
MC_REPS = 200


@pytest.mark.slow
def test_07_monte_carlo_estimator_study():
    t0 = time.time()
    truth = presets.mc_truth_params()
    cov = presets.synthetic_covariates(1959, 2022)
    result = mc_study(truth, cov, n_reps=MC_REPS, n_obs=64, master_seed=2024,
                      jobs=2)
    ok = result.n_failed <= MC_REPS // 20
    details = [f"{result.n_failed} failed reps"] if not ok else []
    for name, (avg_ref, std_ref) in MC_TABLE.items():
        col = result.column(name)
        our_avg, our_std = float(col.mean()), float(col.std(ddof=1))
        # two-sample comparison: our average vs the published average, both
        # carrying Monte Carlo error (published stds floored at half their
        # rounding unit)
        tol = 3.0 * np.sqrt(our_std ** 2 / len(col)
                            + max(std_ref, 0.005) ** 2 / 1000.0)
        good = abs(our_avg - avg_ref) <= tol
        ok = ok and good
        details.append(f"{name}: avg {our_avg:.4f} vs {avg_ref} "
                       f"(tol {tol:.4f}, std {our_std:.4f})"
                       + ("" if good else " <-- OUT"))
    f1_std = float(result.column("f1").std(ddof=1))
    good = 0.005 <= f1_std <= 0.02
    ok = ok and good
    details.append(f"f1 mc-std {f1_std:.4f} in [0.005, 0.02]"
                   + ("" if good else " <-- OUT"))
    _report(7, f"Monte Carlo estimator study ({MC_REPS} reps)", ok,
            "; ".join(details) + f" ({time.time() - t0:.0f}s)")


def _quantile_se(sample: np.ndarray, p: float) -> float:
    n = len(sample)
    delta = 0.01
    q_hi = np.quantile(sample, min(p + delta, 1.0))
    q_lo = np.quantile(sample, max(p - delta, 0.0))
    density = max((q_hi - q_lo) / (2 * delta), 1e-12)
    return float(np.sqrt(p * (1 - p) / n) * density)


@pytest.mark.slow
def test_08_uncertainty_band_nesting():
    t0 = time.time()
    consts = Constants()
    params = presets.fitted_params()
    scen_tab = presets.mitigation_scenario(2023, 2080)
    scenario = simulate.projection_scenario(scen_tab, 2022, 10.0, 1.2)
    mean = np.zeros(13)
    mean[:6] = [834.0, 2.2, 4.4, 1.9, 1.15, 0.28]
    cov0 = np.zeros((13, 13))
    cov0[:6, :6] = np.diag([4.0, 0.1, 0.2, 0.01, 0.01, 0.004])
    from statclim.model import stationary_measurement_cov
    cov0[6:, 6:] = stationary_measurement_cov(params.apply_form().noise)
    belief = ssm.GaussianBelief(mean, cov0)
    se = np.array([0.001, 0.0026, 0.02, 0.04, 0.01, 0.29, 0.25, 1.2, 0.41])
    cov_phys = np.diag(se ** 2)

    n_paths = 10_000
    widths, ses = {}, {}
    order = (UncertaintySetup.PARAM_ONLY, UncertaintySetup.PARAM_STATE,
             UncertaintySetup.PARAM_STATE_MEAS)
    for setup in order:
        ens = simulate_paths(params, scenario, setup, n_paths, 888,
                             cov_phys=cov_phys, init=belief, consts=consts)
        paths = ens.variable_paths("t_m", "observation")
        bands = quantile_bands(ens, variable="t_m", scale="observation")
        widths[setup] = bands.band(0.975) - bands.band(0.025)
        ses[setup] = np.array([
            np.hypot(_quantile_se(paths[:, t], 0.975),
                     _quantile_se(paths[:, t], 0.025))
            for t in range(paths.shape[1])])
        del ens
    ok = True
    details = []
    for a, b in zip(order[:-1], order[1:]):
        slack = 3.0 * np.hypot(ses[a], ses[b])
        margin = widths[b] - widths[a] + slack
        if np.any(margin < 0):
            ok = False
            yr = int(np.argmin(margin))
            details.append(f"{a.value} > {b.value} at year index {yr}")
    _report(8, "uncertainty band nesting (10^4 paths)", ok,
            "; ".join(details) or f"widths nested within 3 MC standard "
            f"errors at every year ({time.time() - t0:.0f}s)")


@pytest.mark.slow
def test_09_projection_and_mc_study_determinism(tmp_path, fitted_params,
                                                hist_covariates,
                                                synthetic_dataset):
    t0 = time.time()
    _, y = synthetic_dataset
    root = tmp_path
    obs = data.ObservationTable(hist_covariates.years, y)
    data.write_observations(obs, root / "observations.csv")
    data.write_covariates(hist_covariates, root / "covariates.csv")
    data.write_covariates(presets.mitigation_scenario(2023, 2050),
                          root / "scenario.csv")
    write_params_csv(fitted_params, root / "params.csv")
    se = np.array([0.001, 0.0026, 0.02, 0.04, 0.01, 0.29, 0.25, 1.2, 0.41])
    write_cov_phys_csv(np.diag(se ** 2), root / "cov_phys.csv")

    def run(command, out, jobs):
        cfg = RunConfig()
        cfg.set("data", "observations", root / "observations.csv")
        cfg.set("data", "covariates", root / "covariates.csv")
        cfg.set("data", "scenario", root / "scenario.csv")
        cfg.set("data", "params", root / "params.csv")
        cfg.set("data", "cov_phys", root / "cov_phys.csv")
        cfg.set("simulate", "n_paths", 500)
        cfg.set("simulate", "seed", 77)
        cfg.set("simulate", "jobs", jobs)
        cfg.set("mc", "n_reps", 6)
        cfg.set("mc", "seed", 99)
        cfg.set("mc", "jobs", jobs)
        cfg.set("mc", "free", "b1,f1,lambda,s2eps_m,phi_m")
        cfg.set("output", "dir", out)
        assert dispatch(command, cfg) == 0, f"{command} failed"
        return out

    files = {"project": ("project_bands.csv", "trajectories.csv",
                         "exceedance.json"),
             "mc-study": ("mc_table.csv", "mc_meta.json")}
    ok = True
    details = []
    for command, artifacts in files.items():
        outs = [run(command, root / f"{command}-{tag}", jobs)
                for tag, jobs in (("a1", 1), ("a2", 1), ("j2", 2))]
        for name in artifacts:
            blobs = [(o / name).read_bytes() for o in outs]
            if not (blobs[0] == blobs[1] == blobs[2]):
                ok = False
                details.append(f"{command}/{name} differs")
    _report(9, "byte-identical outputs across runs and worker counts", ok,
            "; ".join(details) or f"project and mc-study stable "
            f"({time.time() - t0:.0f}s)")


def _load_historical():
    root = Path(DATA_DIR)
    obs = data.load_observations(root / "observations.csv")
    cov = data.load_covariates(root / "covariates.csv")
    return root, obs, cov


@pytest.mark.skipif(not DATA_DIR, reason="historical data files not supplied "
                    "(set STATCLIM_DATA_DIR)")
def test_10_conditional_historical_estimation():
    t0 = time.time()
    _, obs, cov = _load_historical()
    result = maximize_likelihood(obs, cov, form=ForcingForm.LOG_ONLY,
                                 options=EstimateOptions(seed=1))
    checks = {"b1": (0.01, 0.005), "f1": (5.58, 0.01), "lambda": (1.42, 0.51),
              "h_d": (265.90, 0.41)}
    ok = abs(result.loglik - 923.76) <= 1.0
    details = [f"loglik {result.loglik:.2f} vs 923.76"]
    for name, (ref, se_ref) in checks.items():
        est = result.estimate_for(name)
        good = abs(est - ref) <= 3 * max(se_ref, 0.005)
        ok = ok and good
        details.append(f"{name}={est:.3f} vs {ref}" + ("" if good else " OUT"))
    filt = ssm.ekf_filter(result.params, obs, cov)
    resid = ssm.standardized_residuals(filt)
    report = residual_diagnostics(resid)
    dw_ref = {"C": 1.93, "OCN": 1.71, "LND": 2.18, "Forc": 1.89,
              "Temp": 2.01, "O-Temp": 2.37, "OHC": 2.37}
    for name, ref in dw_ref.items():
        dw = report.row(name).dw
        good = abs(dw - ref) <= 0.15
        ok = ok and good
        details.append(f"DW[{name}]={dw:.2f}" + ("" if good else " OUT"))
    _report(10, "historical estimation (conditional)", ok,
            "; ".join(details) + f" ({time.time() - t0:.0f}s)")


@pytest.mark.skipif(not DATA_DIR, reason="scenario data files not supplied "
                    "(set STATCLIM_DATA_DIR)")
def test_11_conditional_scenario_exceedance():
    t0 = time.time()
    root, obs, cov = _load_historical()
    scen_tab = data.load_scenario(root / "scenario.csv")
    params_csv = root / "params.csv"
    if params_csv.exists():
        from statclim.estimate import load_cov_phys_csv, load_params_csv
        params = load_params_csv(params_csv, ForcingForm.LOG_ONLY)
        cov_phys = load_cov_phys_csv(root / "cov_phys.csv")
    else:
        result = maximize_likelihood(obs, cov, form=ForcingForm.LOG_ONLY,
                                     options=EstimateOptions(seed=1))
        params = result.params
        cov_phys = result.cov_physical()
    belief, anchor = simulate.initial_belief_from_history(
        params, obs, cov, "filtered-last")
    scenario = simulate.projection_scenario(
        scen_tab, anchor, float(cov.e_total[-1]), float(cov.f_ex[-1]))
    window = (int(scen_tab.years[0]), min(2100, int(scen_tab.years[-1])))
    probs = {}
    for setup, scale in ((UncertaintySetup.PARAM_STATE_MEAS, "observation"),
                         (UncertaintySetup.PARAM_ONLY, "state")):
        ens = simulate_paths(params, scenario, setup, 100_000, 42,
                             cov_phys=cov_phys, init=belief)
        probs[(setup.value, scale)] = simulate.exceedance_probability(
            ens, 1.5, scale=scale, window=window)
        del ens
    p_obs = probs[("full", "observation")]
    p_state = probs[("param", "state")]
    ok = 0.85 <= p_obs <= 0.95 and 0.02 <= p_state <= 0.12
    _report(11, "scenario exceedance (conditional)", ok,
            f"observation/full {p_obs:.3f}, state/param {p_state:.3f} "
            f"({time.time() - t0:.0f}s)")
