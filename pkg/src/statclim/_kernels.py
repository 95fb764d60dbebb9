"""Hot numerical kernels for the filter recursion.

The extended Kalman pass dominates runtime: every likelihood evaluation
inside the optimizer, every numerical gradient/Hessian entry and every
Monte Carlo replication runs it.  The kernels below are written as plain
numpy-on-loops code and compiled with numba when available; setting the
environment variable STATCLIM_DISABLE_JIT=1 (or uninstalling numba) runs
the identical bodies as pure numpy.  benchmarks/bench_filter.py compares
the two paths.

State layout inside the kernels: 13-vector z = (x, eps) with x the 6
physical states and eps the 7 AR(1) measurement errors; measurements are
noiseless selections y = mu + [A | I] z.  Missing observations are NaN
entries in y and are dropped row-wise from the update.

Status codes returned by the passes: 0 ok, 1 innovation covariance not
positive definite, 2 state left the domain of the physical equations,
3 non-finite value encountered.  t_fail carries the failing time index.
"""
from __future__ import annotations

import os

import numpy as np

LOG2PI = float(np.log(2.0 * np.pi))

STATUS_OK = 0
STATUS_CHOL = 1
STATUS_DOMAIN = 2
STATUS_NONFINITE = 3


def _jit_disabled_by_env() -> bool:
    return os.environ.get("STATCLIM_DISABLE_JIT", "").strip().lower() in {
        "1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

JIT_ENABLED = _numba is not None and not _jit_disabled_by_env()


def kernel_backend() -> str:
    """Active kernel backend, "numba" or "numpy"."""
    return "numba" if JIT_ENABLED else "numpy"


if JIT_ENABLED:
    def _compile(fn):
        return _numba.njit(cache=True)(fn)
else:
    def _compile(fn):
        return fn


def _cholesky_lower(a):
    # In-place-free lower Cholesky with a success flag instead of exceptions.
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not np.isfinite(s):
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


def _chol_solve_vec(L, b):
    # Solve (L L') x = b.
    n = L.shape[0]
    y = np.zeros(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


def _chol_solve_mat(L, B):
    # Solve (L L') X = B column-wise for a (n, m) right-hand side.
    n, m = B.shape
    X = np.zeros((n, m))
    for j in range(m):
        X[:, j] = _chol_solve_vec(L, B[:, j].copy())
    return X


def _transition6(x, e_next, f_ex, phys, delta, c0, gf0, lin_slope, lin_flag,
                 sink_mixed):
    # One deterministic state step; returns (new_state, in_domain).
    out = np.zeros(6)
    c = x[0]
    if not (c > 0.0):
        return out, False
    b1, b2, c1, c2 = phys[0], phys[1], phys[2], phys[3]
    f1, f2, f3 = phys[4], phys[5], phys[6]
    gam, lam, hm, hd = phys[7], phys[8], phys[9], phys[10]
    t_sink = x[4] if sink_mixed else x[5]
    s_ocn = b1 * c * np.exp(-c1 * t_sink) - b1 * c0
    s_lnd = b2 * c * np.exp(-c2 * t_sink) - b2 * c0
    if lin_flag:
        f_co2 = lin_slope * (c - c0)
    else:
        arg = c + f2 * c * c
        if not (arg > 0.0):
            return out, False
        f_co2 = f1 * np.log(arg) + f3 * np.sqrt(c) - gf0
    out[0] = c + delta * (e_next - s_ocn - s_lnd)
    out[1] = s_ocn
    out[2] = s_lnd
    out[3] = f_co2
    out[4] = ((1.0 - (gam + lam) * delta / hm) * x[4]
              + (gam * delta / hm) * x[5] + (delta / hm) * (x[3] + f_ex))
    out[5] = (gam * delta / hd) * x[4] + (1.0 - gam * delta / hd) * x[5]
    return out, True


def _jacobian6(x, phys, delta, lin_slope, lin_flag, sink_mixed):
    J = np.zeros((6, 6))
    c = x[0]
    b1, b2, c1, c2 = phys[0], phys[1], phys[2], phys[3]
    f1, f2, f3 = phys[4], phys[5], phys[6]
    gam, lam, hm, hd = phys[7], phys[8], phys[9], phys[10]
    tcol = 4 if sink_mixed else 5
    t_sink = x[4] if sink_mixed else x[5]
    e1 = np.exp(-c1 * t_sink)
    e2 = np.exp(-c2 * t_sink)
    J[1, 0] = b1 * e1
    J[1, tcol] += -b1 * c1 * c * e1
    J[2, 0] = b2 * e2
    J[2, tcol] += -b2 * c2 * c * e2
    J[0, 0] = 1.0 - delta * (J[1, 0] + J[2, 0])
    J[0, tcol] += -delta * (J[1, tcol] + J[2, tcol])
    if lin_flag:
        J[3, 0] = lin_slope
    else:
        J[3, 0] = f1 * (1.0 + 2.0 * f2 * c) / (c + f2 * c * c) \
            + f3 / (2.0 * np.sqrt(c))
    J[4, 3] = delta / hm
    J[4, 4] = 1.0 - (gam + lam) * delta / hm
    J[4, 5] = gam * delta / hm
    J[5, 4] = gam * delta / hd
    J[5, 5] = 1.0 - gam * delta / hd
    return J


def _obs_matrix(hd):
    # H = [A | I7]: identity selection of the six states plus the AR error
    # of each series; the heat-content row loads h_d times deep temperature.
    H = np.zeros((7, 13))
    for i in range(6):
        H[i, i] = 1.0
    H[6, 5] = hd
    for i in range(7):
        H[i, 6 + i] = 1.0
    return H


def _symmetrize(P):
    n = P.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = v
            P[j, i] = v
    return P


def _predict(m_f, P_f, e_next, f_ex, phys, phi, Pd, Rq, delta, c0, gf0,
             lin_slope, lin_flag, sink_mixed):
    xnew, ok = _transition6(m_f[:6].copy(), e_next, f_ex, phys, delta, c0,
                            gf0, lin_slope, lin_flag, sink_mixed)
    F = np.zeros((13, 13))
    m_pred = np.zeros(13)
    if not ok:
        return m_pred, F, F, False
    J = _jacobian6(m_f[:6].copy(), phys, delta, lin_slope, lin_flag,
                   sink_mixed)
    F[:6, :6] = J
    for i in range(7):
        F[6 + i, 6 + i] = phi[i]
        m_pred[6 + i] = phi[i] * m_f[6 + i]
    m_pred[:6] = xnew
    P_pred = F @ P_f @ F.T
    P_pred[:6, :6] += Rq
    P_pred[6:, 6:] += Pd
    _symmetrize(P_pred)
    return m_pred, F, P_pred, True


def _update(y_row, m_pred, P_pred, mu, H):
    # Measurement update on the observed entries only; returns the filtered
    # moments, the per-step log-likelihood and the innovation pieces.
    idx = np.where(np.isfinite(y_row))[0]
    p = idx.shape[0]
    if p == 0:
        return (m_pred.copy(), P_pred.copy(), 0.0, idx, np.zeros(0),
                np.zeros((0, 0)), STATUS_OK)
    Hs = H[idx]
    v = y_row[idx] - mu[idx] - Hs @ m_pred
    S = Hs @ P_pred @ Hs.T
    L, ok = _cholesky_lower(S)
    if not ok:
        return (m_pred.copy(), P_pred.copy(), 0.0, idx, v, S, STATUS_CHOL)
    alpha = _chol_solve_vec(L, v)
    logdet = 0.0
    for i in range(p):
        logdet += 2.0 * np.log(L[i, i])
    ll = -0.5 * (p * LOG2PI + logdet + v @ alpha)
    M = Hs @ P_pred
    K = _chol_solve_mat(L, M).T
    m_f = m_pred + K @ v
    IKH = np.eye(13) - K @ Hs
    P_f = IKH @ P_pred @ IKH.T
    _symmetrize(P_f)
    if not np.isfinite(ll):
        return (m_f, P_f, ll, idx, v, S, STATUS_NONFINITE)
    return (m_f, P_f, ll, idx, v, S, STATUS_OK)


def _ekf_loglik(y, e_tot, f_ex, phys, mu, phi, Pd, Rq, m0, P0, delta, c0,
                gf0, lin_slope, lin_flag, sink_mixed):
    # Lean pass, likelihood only: the optimizer hot path.
    n = y.shape[0]
    H = _obs_matrix(phys[10])
    loglik = 0.0
    m_f = m0.copy()
    P_f = P0.copy()
    for t in range(n):
        if t == 0:
            m_pred, P_pred = m0.copy(), P0.copy()
        else:
            m_pred, _, P_pred, ok = _predict(
                m_f, P_f, e_tot[t], f_ex[t - 1], phys, phi, Pd, Rq, delta,
                c0, gf0, lin_slope, lin_flag, sink_mixed)
            if not ok:
                return STATUS_DOMAIN, t, np.nan
        m_f, P_f, ll, idx, v, S, status = _update(y[t], m_pred, P_pred, mu, H)
        if status != STATUS_OK:
            return status, t, np.nan
        loglik += ll
    return STATUS_OK, -1, loglik


def _ekf_filter(y, e_tot, f_ex, phys, mu, phi, Pd, Rq, m0, P0, delta, c0,
                gf0, lin_slope, lin_flag, sink_mixed):
    # Full pass with stored moments for smoothing and residual analysis.
    # trans_jac[t] maps the filtered moments at t to the prediction at t+1.
    n = y.shape[0]
    H = _obs_matrix(phys[10])
    pred_mean = np.zeros((n, 13))
    pred_cov = np.zeros((n, 13, 13))
    filt_mean = np.zeros((n, 13))
    filt_cov = np.zeros((n, 13, 13))
    trans_jac = np.zeros((n, 13, 13))
    innov = np.full((n, 7), np.nan)
    innov_cov = np.full((n, 7, 7), np.nan)
    step_ll = np.zeros(n)
    m_f = m0.copy()
    P_f = P0.copy()
    status = STATUS_OK
    t_fail = -1
    for t in range(n):
        if t == 0:
            m_pred, P_pred = m0.copy(), P0.copy()
        else:
            m_pred, F, P_pred, ok = _predict(
                m_f, P_f, e_tot[t], f_ex[t - 1], phys, phi, Pd, Rq, delta,
                c0, gf0, lin_slope, lin_flag, sink_mixed)
            trans_jac[t - 1] = F
            if not ok:
                status, t_fail = STATUS_DOMAIN, t
                break
        pred_mean[t] = m_pred
        pred_cov[t] = P_pred
        m_f, P_f, ll, idx, v, S, st = _update(y[t], m_pred, P_pred, mu, H)
        if st != STATUS_OK:
            status, t_fail = st, t
            break
        filt_mean[t] = m_f
        filt_cov[t] = P_f
        step_ll[t] = ll
        for i in range(idx.shape[0]):
            innov[t, idx[i]] = v[i]
            for j in range(idx.shape[0]):
                innov_cov[t, idx[i], idx[j]] = S[i, j]
    return (status, t_fail, step_ll, pred_mean, pred_cov, filt_mean,
            filt_cov, trans_jac, innov, innov_cov)


def _simulate_state_path(x0, e_tot, f_ex, eta, phys, delta, c0, gf0,
                         lin_slope, lin_flag, sink_mixed):
    # Deterministic-plus-innovation state trajectory for one path.
    # eta has shape (n-1, 5); row t-1 drives the step into time t.
    n = e_tot.shape[0]
    states = np.zeros((n, 6))
    states[0] = x0
    for t in range(1, n):
        xnew, ok = _transition6(states[t - 1], e_tot[t], f_ex[t - 1], phys,
                                delta, c0, gf0, lin_slope, lin_flag,
                                sink_mixed)
        if not ok:
            return states, t, False
        e = eta[t - 1]
        xnew[0] += -delta * (e[0] + e[1])
        xnew[1] += e[0]
        xnew[2] += e[1]
        xnew[3] += e[2]
        xnew[4] += e[3]
        xnew[5] += e[4]
        states[t] = xnew
    return states, -1, True


def _simulate_eps_path(eps0, xi, phi):
    # AR(1) measurement-error trajectory; xi has shape (n-1, 7).
    n = xi.shape[0] + 1
    eps = np.zeros((n, 7))
    eps[0] = eps0
    for t in range(1, n):
        for i in range(7):
            eps[t, i] = phi[i] * eps[t - 1, i] + xi[t - 1, i]
    return eps


_cholesky_lower = _compile(_cholesky_lower)
_chol_solve_vec = _compile(_chol_solve_vec)
_chol_solve_mat = _compile(_chol_solve_mat)
_transition6 = _compile(_transition6)
_jacobian6 = _compile(_jacobian6)
_obs_matrix = _compile(_obs_matrix)
_symmetrize = _compile(_symmetrize)
_predict = _compile(_predict)
_update = _compile(_update)
ekf_loglik = _compile(_ekf_loglik)
ekf_filter = _compile(_ekf_filter)
simulate_state_path = _compile(_simulate_state_path)
simulate_eps_path = _compile(_simulate_eps_path)
