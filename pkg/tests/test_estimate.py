import numpy as np
import pytest

from statclim import presets, ssm
from statclim.estimate import (EstimateOptions, EstimationError,
                               ParamTransform, bic, ecs_with_se,
                               load_cov_phys_csv, load_params_csv, lr_test,
                               maximize_likelihood, numerical_hessian,
                               residual_diagnostics, write_cov_phys_csv,
                               write_estimate_csv)
from statclim.params import (Constants, ForcingForm, IDX, ModelParams,
                             N_PARAMS)
from statclim.simulate import simulate_dataset


def random_valid_theta(rng):
    params = ModelParams()
    theta = params.to_vector()
    theta[:9] = rng.normal(0, 1, 9) * [0.01, 0.01, 0.1, 0.1, 1, 1e-4, 0.1, 1, 1]
    theta[IDX["h_m"]] = rng.uniform(1, 20)
    theta[IDX["h_d"]] = rng.uniform(20, 400)
    theta[IDX["mu_m"]] = rng.normal(0, 0.3)
    theta[IDX["mu_d"]] = rng.normal(0, 0.3)
    theta[IDX["rho"]] = rng.uniform(-0.99, 0.99)
    for j in range(7):
        theta[IDX["phi_c"] + j] = rng.uniform(-0.99, 0.99)
        theta[IDX["s2eps_c"] + j] = rng.uniform(1e-6, 10)
    for j in range(5):
        theta[IDX["s2eta_ocn"] + j] = rng.uniform(1e-6, 10)
    return theta


@pytest.mark.parametrize("variant", ["default", "alt"])
def test_pack_unpack_round_trip(variant):
    rng = np.random.default_rng(17)
    params = ModelParams()
    tr = ParamTransform(params, variant)
    for _ in range(100):
        theta = random_valid_theta(rng)
        back = tr.unpack(tr.pack(theta))
        free = params.free_mask
        np.testing.assert_allclose(back[free], theta[free], rtol=1e-12,
                                   atol=1e-14)


def test_transform_fixed_points():
    params = ModelParams()
    tr = ParamTransform(params)
    theta = params.to_vector()
    theta[IDX["phi_m"]] = 0.0
    theta[IDX["s2eps_m"]] = 1.0
    u = tr.pack(theta)
    assert u[tr.free_names.index("phi_m")] == 0.0
    assert u[tr.free_names.index("s2eps_m")] == 0.0


def test_pack_rejects_invalid():
    params = ModelParams()
    tr = ParamTransform(params)
    theta = params.to_vector()
    theta[IDX["s2eps_c"]] = -1.0
    with pytest.raises(ValueError):
        tr.pack(theta)
    theta = params.to_vector()
    theta[IDX["phi_c"]] = 1.0
    with pytest.raises(ValueError):
        tr.pack(theta)


def test_pinned_entries_not_in_transform():
    tr = ParamTransform(ModelParams(forcing_form=ForcingForm.LOG_ONLY))
    assert "f2" not in tr.free_names and "f3" not in tr.free_names
    assert "mu_c" not in tr.free_names
    assert tr.n_free == 31


def test_bic_values():
    assert bic(923.76, 31, 64) == pytest.approx(-1718.60, abs=0.01)
    assert bic(925.79, 33, 64) == pytest.approx(-1714.34, abs=0.01)
    assert bic(0.0, 0, 1) == 0.0


def test_lr_test_values():
    stat, p = lr_test(923.76, 925.79, df=2)
    assert stat == pytest.approx(4.06, abs=1e-9)
    assert p == pytest.approx(0.1313, abs=2e-3)
    stat, p = lr_test(917.17, 925.79, df=2)
    assert stat == pytest.approx(17.24, abs=1e-9)
    assert p == pytest.approx(0.00018, abs=5e-5)
    stat, p = lr_test(10.0, 10.0, df=1)
    assert stat == 0.0 and p == 1.0


def test_lr_test_rejects_bad_ordering():
    with pytest.raises(ValueError, match="nested"):
        lr_test(100.0, 90.0, df=1)


def test_ecs_delta_method():
    ecs, se = ecs_with_se(1.42, 0.51 ** 2, 3.93, 0.47)
    assert 2.76 <= ecs <= 2.79
    assert 0.98 <= se <= 1.06
    assert ecs_with_se(3.93, 0.0, 3.93, 0.0) == (1.0, 0.0)
    _, se0 = ecs_with_se(1.42, 0.0, 3.93, 0.0)
    assert se0 == 0.0
    with pytest.raises(ValueError):
        ecs_with_se(-1.0, 0.1)


def test_numerical_hessian_exact_on_quadratic():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(5, 5))
    H = A @ A.T + 5 * np.eye(5)

    def f(x):
        return 0.5 * x @ H @ x

    x0 = rng.normal(size=5)
    H_num = numerical_hessian(f, x0)
    np.testing.assert_allclose(H_num, H, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(np.linalg.inv(H_num), np.linalg.inv(H),
                               rtol=1e-6, atol=1e-9)


def naive_diagnostics(e):
    # Straight-loop re-implementation, no shared code with the package.
    n = len(e)
    mean = sum(e) / n
    m2 = sum((v - mean) ** 2 for v in e) / n
    m3 = sum((v - mean) ** 3 for v in e) / n
    m4 = sum((v - mean) ** 4 for v in e) / n
    skew = m3 / m2 ** 1.5
    kurt = m4 / m2 ** 2
    jb = n / 6 * (skew ** 2 + (kurt - 3) ** 2 / 4)
    sc = sum(e[t] * e[t - 1] for t in range(1, n)) \
        / sum(e[t - 1] ** 2 for t in range(1, n))
    dw = sum((e[t] - e[t - 1]) ** 2 for t in range(1, n)) \
        / sum(v ** 2 for v in e)

    def acf(k):
        num = sum((e[t] - mean) * (e[t - k] - mean) for t in range(k, n))
        den = sum((v - mean) ** 2 for v in e)
        return num / den

    lb = {p: n * (n + 2) * sum(acf(k) ** 2 / (n - k)
                               for k in range(1, p + 1)) for p in (1, 5, 10)}
    z = [v ** 2 for v in e]
    zy, zx = z[1:], z[:-1]
    m = len(zy)
    xb, yb = sum(zx) / m, sum(zy) / m
    beta = sum((a - xb) * (b - yb) for a, b in zip(zx, zy)) \
        / sum((a - xb) ** 2 for a in zx)
    alpha = yb - beta * xb
    ssr = sum((b - alpha - beta * a) ** 2 for a, b in zip(zx, zy))
    sst = sum((b - yb) ** 2 for b in zy)
    arch = m * (1 - ssr / sst)
    return dict(mean=mean, skew=skew, kurt=kurt, jb=jb, sc=sc, dw=dw,
                lb1=lb[1], lb5=lb[5], lb10=lb[10], arch=arch)


def test_diagnostics_match_naive_reimplementation():
    rng = np.random.default_rng(21)
    for _ in range(5):
        e = rng.normal(size=50)
        report = residual_diagnostics(np.tile(e[:, None], (1, 7)))
        row = report.series[0]
        ref = naive_diagnostics(list(e))
        for key, val in ref.items():
            assert getattr(row, key) == pytest.approx(val, abs=1e-10), key


def test_diagnostics_alternating_series_dw():
    e = np.tile([1.0, -1.0], 32)
    report = residual_diagnostics(np.tile(e[:, None], (1, 7)))
    assert report.series[0].dw == pytest.approx(63 * 4 / 64, rel=1e-12)
    assert report.series[0].dw == pytest.approx(3.94, abs=5e-3)


def test_diagnostics_symmetric_sample_jb():
    rng = np.random.default_rng(3)
    half = rng.normal(size=32)
    e = np.concatenate([half, -half])
    report = residual_diagnostics(np.tile(e[:, None], (1, 7)))
    row = report.series[0]
    assert row.skew == pytest.approx(0.0, abs=1e-12)
    n, kurt = len(e), row.kurt
    assert row.jb == pytest.approx(n * (kurt - 3) ** 2 / 24, rel=1e-10)


def test_diagnostics_insufficient_data_marker():
    resid = np.full((8, 7), np.nan)
    resid[:, 0] = 1.0
    report = residual_diagnostics(resid)
    assert not report.series[1].available
    assert report.series[1].n == 0


@pytest.fixture(scope="module")
def small_fit_setup():
    """Synthetic dataset plus a 6-parameter estimation problem."""
    consts = Constants()
    truth = presets.mc_truth_params()
    cov = presets.synthetic_covariates(1959, 2022)
    x0 = presets.spinup_state(truth, consts)
    rng = np.random.Generator(np.random.Philox(key=[1234, 0]))
    _, y = simulate_dataset(truth, cov.e_total, cov.f_ex, x0, rng, consts)
    mask = np.zeros(N_PARAMS, dtype=bool)
    for name in ("b1", "f1", "lambda", "s2eps_m", "phi_m", "rho"):
        mask[IDX[name]] = True
    return consts, truth, cov, y, mask


def test_small_fit_recovers_and_reports(small_fit_setup):
    consts, truth, cov, y, mask = small_fit_setup
    res = maximize_likelihood((cov.years, y), cov, init=truth,
                              options=EstimateOptions(n_starts=1),
                              consts=consts, free_mask=mask)
    assert res.trace.converged
    assert res.k == 6
    # loglik is re-evaluated at the estimate, not taken from the optimizer
    status, _, ll = ssm.log_likelihood_raw(res.params, y, cov.e_total,
                                           cov.f_ex, consts)
    assert res.loglik == ll
    assert np.all(res.se >= 0)
    # sharply identified coefficients end up near their generating values
    assert abs(res.estimate_for("b1") - 0.01) < 5 * res.se_for("b1")
    assert abs(res.estimate_for("f1") - 5.58) < 5 * res.se_for("f1")


def test_restart_at_optimum_terminates_quickly(small_fit_setup):
    consts, truth, cov, y, mask = small_fit_setup
    first = maximize_likelihood((cov.years, y), cov, init=truth,
                                options=EstimateOptions(n_starts=1,
                                                        compute_se=False),
                                consts=consts, free_mask=mask)
    again = maximize_likelihood((cov.years, y), cov, init=first.params,
                                options=EstimateOptions(n_starts=1,
                                                        compute_se=False),
                                consts=consts, free_mask=mask)
    assert again.trace.iterations <= 3
    assert abs(again.loglik - first.loglik) < 1e-6


def test_transform_invariance_of_maximizer(small_fit_setup):
    # The maximizer in natural space must not depend on which bijection maps
    # it to the unconstrained space.  Uses an interior-identified free set
    # (boundary-pegged parameters are a separate regime).
    consts, truth, cov, y, _ = small_fit_setup
    mask = np.zeros(N_PARAMS, dtype=bool)
    for name in ("b1", "f1", "lambda", "s2eps_m", "phi_m", "s2eta_lnd"):
        mask[IDX[name]] = True
    fits = {}
    for variant in ("default", "alt"):
        res = maximize_likelihood(
            (cov.years, y), cov, init=truth,
            options=EstimateOptions(n_starts=1, compute_se=False,
                                    transform_variant=variant),
            consts=consts, free_mask=mask)
        fits[variant] = res.theta_free
    np.testing.assert_allclose(fits["default"], fits["alt"], rtol=1e-4,
                               atol=1e-6)


def test_estimation_error_when_start_invalid(small_fit_setup):
    consts, truth, cov, y, mask = small_fit_setup
    bad = truth.copy()
    bad.physical.h_m = -5.0
    with pytest.raises((EstimationError, ValueError)):
        maximize_likelihood((cov.years, y), cov, init=bad,
                            options=EstimateOptions(n_starts=1),
                            consts=consts, free_mask=mask)


@pytest.mark.slow
def test_full_fit_recovers_forcing_coefficient(consts):
    # One simulated dataset, all 31 parameters estimated: the forcing
    # coefficient comes back within three benchmark-study standard
    # deviations of its generating value.
    truth = presets.mc_truth_params()
    cov = presets.synthetic_covariates(1959, 2022)
    x0 = presets.spinup_state(truth, consts)
    rng = np.random.Generator(np.random.Philox(key=[41, 11]))
    _, y = simulate_dataset(truth, cov.e_total, cov.f_ex, x0, rng, consts)
    res = maximize_likelihood((cov.years, y), cov, init=truth,
                              options=EstimateOptions(n_starts=1,
                                                      compute_se=False,
                                                      max_iter=700,
                                                      ftol=1e-10),
                              consts=consts)
    assert abs(res.estimate_for("f1") - 5.58) <= 3 * 0.01


def test_params_csv_round_trip(tmp_path, small_fit_setup):
    consts, truth, cov, y, mask = small_fit_setup
    res = maximize_likelihood((cov.years, y), cov, init=truth,
                              options=EstimateOptions(n_starts=1),
                              consts=consts, free_mask=mask)
    path = tmp_path / "params.csv"
    write_estimate_csv(res, path)
    back = load_params_csv(path, ForcingForm.LOG_ONLY)
    np.testing.assert_allclose(back.to_vector(), res.params.to_vector(),
                               rtol=1e-15)
    np.testing.assert_array_equal(back.free_mask, mask)

    cov_path = tmp_path / "cov_phys.csv"
    write_cov_phys_csv(res.cov_physical(), cov_path)
    np.testing.assert_allclose(load_cov_phys_csv(cov_path),
                               res.cov_physical(), rtol=1e-15)
