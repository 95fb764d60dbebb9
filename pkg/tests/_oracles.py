"""Independent brute-force references used to cross-check the filter.

Everything here avoids the Kalman recursions entirely: the joint Gaussian
law of the stacked observation vector is assembled from the linear system
matrices and evaluated directly.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from statclim import ssm
from statclim.model import (assemble_system, innovation_cov,
                            transition_jacobian, transition_mean)
from statclim.params import (Constants, MeasurementOffsets, ModelParams,
                             NoiseParams, PhysicalParams)


def linear_system_pieces(params: ModelParams, e_tot, f_ex,
                         consts: Constants = Constants()):
    """Affine representation z_{t+1} = F z_t + c_t + w of a linear instance.

    Valid only when the parameter set makes the transition affine
    (c1 = c2 = 0 and linear_forcing on).
    """
    p = params.apply_form()
    assert p.physical.c1 == 0.0 and p.physical.c2 == 0.0
    assert params.linear_forcing
    x_ref = np.array([consts.c_preind, 0.0, 0.0, 0.0, 0.0, 0.0])
    J = transition_jacobian(x_ref, p.physical, consts, linear_forcing=True)
    sysm = assemble_system(p.physical, p.offsets, p.noise, consts)
    F = np.zeros((13, 13))
    F[:6, :6] = J
    F[6:, 6:] = sysm.Phi
    n = len(e_tot)
    c_seq = np.zeros((n - 1, 13))
    for t in range(n - 1):
        mean_ref = transition_mean(x_ref, e_tot[t + 1], f_ex[t], p.physical,
                                   consts, linear_forcing=True)
        c_seq[t, :6] = mean_ref - J @ x_ref
    Sw = np.zeros((13, 13))
    Sw[:6, :6] = sysm.R @ (consts.delta * sysm.Q) @ sysm.R.T
    Sw[6:, 6:] = consts.delta * innovation_cov(p.noise)
    H = np.zeros((7, 13))
    H[:, :6] = sysm.A
    H[:, 6:] = np.eye(7)
    return F, c_seq, Sw, H, sysm.mu


def joint_gaussian_reference(m0, P0, F, c_seq, Sw, H, d, y):
    """Exact log-likelihood and smoothed means from the stacked joint law.

    y is (n, 7) with NaN for missing entries.  Returns (loglik,
    smoothed_means (n, 13)).
    """
    n = y.shape[0]
    k = F.shape[0]
    M = np.zeros((n, k))
    V = np.zeros((n, n, k, k))
    M[0] = m0
    V[0, 0] = P0
    for t in range(n - 1):
        M[t + 1] = F @ M[t] + c_seq[t]
        for s in range(t + 1):
            V[s, t + 1] = V[s, t] @ F.T
            V[t + 1, s] = V[s, t + 1].T
        V[t + 1, t + 1] = F @ V[t, t] @ F.T + Sw

    pairs = [(t, i) for t in range(n) for i in range(7)
             if np.isfinite(y[t, i])]
    y_obs = np.array([y[t, i] for t, i in pairs])
    mean_y = np.array([d[i] + H[i] @ M[t] for t, i in pairs])
    cov_y = np.array([[H[i] @ V[t, s] @ H[j] for s, j in pairs]
                      for t, i in pairs])
    loglik = stats.multivariate_normal.logpdf(y_obs, mean=mean_y, cov=cov_y)

    resid = np.linalg.solve(cov_y, y_obs - mean_y)
    smoothed = np.zeros((n, k))
    for t in range(n):
        cross = np.column_stack([V[t, s] @ H[j] for s, j in pairs])
        smoothed[t] = M[t] + cross @ resid
    return float(loglik), smoothed


def random_linear_instance(rng: np.random.Generator, n_steps: int = 5,
                           missing_prob: float = 0.25,
                           consts: Constants = Constants()):
    """A random affine instance plus simulated observations with gaps."""
    phys = PhysicalParams(
        b1=rng.uniform(0.005, 0.025), b2=rng.uniform(0.005, 0.03),
        c1=0.0, c2=0.0, f1=rng.uniform(3.0, 7.0), f2=0.0, f3=0.0,
        gamma=rng.uniform(0.5, 2.0), lam=rng.uniform(0.5, 2.5),
        h_m=rng.uniform(5.0, 15.0), h_d=rng.uniform(50.0, 300.0))
    offsets = MeasurementOffsets(
        mu_c=rng.normal(0, 0.5), mu_o=rng.normal(0, 0.2),
        mu_l=rng.normal(0, 0.2), mu_f=rng.normal(0, 0.2),
        mu_m=rng.normal(0, 0.3), mu_d=rng.normal(0, 0.2))
    noise = NoiseParams(
        sigma2_eta=rng.uniform(0.01, 0.5, 5),
        sigma2_eps=rng.uniform(0.01, 0.5, 7),
        phi=rng.uniform(-0.85, 0.85, 7), rho=rng.uniform(-0.8, 0.8))
    params = ModelParams(physical=phys, offsets=offsets, noise=noise,
                         linear_forcing=True)
    e_tot = rng.uniform(0.0, 10.0, n_steps)
    f_ex = rng.uniform(-1.0, 1.0, n_steps)

    from statclim.simulate import simulate_dataset
    x0 = np.array([consts.c_preind + rng.uniform(0, 80),
                   rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 0.5),
                   rng.normal(0, 0.5), rng.normal(0, 0.3)])
    _, y = simulate_dataset(params, e_tot, f_ex, x0, rng, consts)
    mask = rng.uniform(size=y.shape) < missing_prob
    mask[0, 0] = False  # keep the stock anchor in the first year
    y = np.where(mask, np.nan, y)
    if not np.any(np.isfinite(y[0])):
        y[0, 0] = consts.c_preind
    return params, e_tot, f_ex, y


def filter_vs_reference(params, e_tot, f_ex, y,
                        consts: Constants = Constants()):
    """Run the production filter and the brute-force reference on one instance."""
    init = ssm.init_belief(y[0], params, consts)
    F, c_seq, Sw, H, d = linear_system_pieces(params, e_tot, f_ex, consts)
    ref_ll, ref_smooth = joint_gaussian_reference(
        init.mean, init.cov, F, c_seq, Sw, H, d, y)
    years = np.arange(len(e_tot))
    filt = ssm.ekf_filter(params, (years, y), (years, e_tot, f_ex), consts)
    smooth = ssm.rts_smooth(filt)
    return filt, smooth, ref_ll, ref_smooth
