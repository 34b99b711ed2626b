"""Independent reference computations used as test oracles.

Nothing here calls into the code paths it is used to check.
"""

import math

import mpmath
import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid


def rates_bruteforce(counts):
    """Rates recomputed one cell at a time with plain Python floats."""
    n_ages, n_years = len(counts), len(counts[0])
    out = [[0.0] * (n_years - 1) for _ in range(n_ages)]
    for i in range(n_ages):
        for j in range(n_years - 1):
            alive = float(counts[i][j])
            deaths = max(alive - float(counts[i][j + 1]), 0.0)
            out[i][j] = deaths / alive
    return np.array(out)


def pe_scalar_mp(a1, a2, b1, b2, b3, x, dps=50):
    """Power-exponential curve in arbitrary precision, x clipped at 0.5."""
    with mpmath.workdps(dps):
        xt = max(mpmath.mpf(x), mpmath.mpf("0.5"))
        background = mpmath.mpf(a1) * mpmath.exp(mpmath.mpf(a2) * xt) / xt
        hump = mpmath.mpf(b1) * mpmath.power(xt * mpmath.exp(-mpmath.mpf(b2) * xt), mpmath.mpf(b3))
        return background + hump


def random_safe_params(rng):
    """Random curve parameters with a hump peaking at 15-30 and height 5e-4..3e-3."""
    b2 = 1.0 / rng.uniform(15, 30)
    b3 = rng.uniform(4, 12)
    height = rng.uniform(5e-4, 3e-3)
    b1 = height / math.exp(b3 * (math.log(1.0 / b2) - 1.0))
    return (rng.uniform(0.003, 0.012), rng.uniform(0.06, 0.10), b1, b2, b3)


# --- dense linear-Gaussian state-space oracle ------------------------------

def joint_gaussian(alpha, beta, lam, s2e, s2w, m0, C0, n):
    """Mean and covariance of (k_0..k_n, y_1..y_n) stacked, y year-major."""
    alpha, beta = np.asarray(alpha, float), np.asarray(beta, float)
    p = alpha.size
    times = np.arange(n + 1)
    k_mean = m0 + lam * times
    k_cov = C0 + s2w * np.minimum.outer(times, times).astype(float)
    # y_t = alpha + beta k_t + eps
    A = np.zeros((n * p, n + 1))
    for t in range(1, n + 1):
        A[(t - 1) * p:t * p, t] = beta
    y_mean = np.tile(alpha, n) + A @ k_mean
    y_cov = A @ k_cov @ A.T + s2e * np.eye(n * p)
    ky_cov = k_cov @ A.T
    mean = np.concatenate([k_mean, y_mean])
    cov = np.block([[k_cov, ky_cov], [ky_cov.T, y_cov]])
    return mean, cov


def condition(mean, cov, idx_keep, idx_obs, values):
    s11 = cov[np.ix_(idx_keep, idx_keep)]
    s12 = cov[np.ix_(idx_keep, idx_obs)]
    s22 = cov[np.ix_(idx_obs, idx_obs)]
    gain = np.linalg.solve(s22, s12.T).T
    m = mean[idx_keep] + gain @ (values - mean[idx_obs])
    return m, s11 - gain @ s12.T


def dense_filter(y, alpha, beta, lam, s2e, s2w, m0, C0):
    """E[k_t | y_1..y_t] and Var[k_t | y_1..y_t] for t = 1..n."""
    y = np.asarray(y, float)
    p, n = y.shape
    mean, cov = joint_gaussian(alpha, beta, lam, s2e, s2w, m0, C0, n)
    flat = y.T.reshape(-1)
    ms, vs = [], []
    for t in range(1, n + 1):
        obs = np.arange(n + 1, n + 1 + t * p)
        m, v = condition(mean, cov, [t], obs, flat[: t * p])
        ms.append(m[0])
        vs.append(v[0, 0])
    return np.array(ms), np.array(vs)


def dense_smoother(y, alpha, beta, lam, s2e, s2w, m0, C0):
    """Posterior mean vector and covariance of k_0..k_n given all of y."""
    y = np.asarray(y, float)
    p, n = y.shape
    mean, cov = joint_gaussian(alpha, beta, lam, s2e, s2w, m0, C0, n)
    return condition(mean, cov, list(range(n + 1)), list(range(n + 1, n + 1 + n * p)), y.T.reshape(-1))


# --- quadrature posteriors --------------------------------------------------

class GridCDF:
    """Normalised CDF of an unnormalised log-density tabulated on a grid."""

    def __init__(self, grid, logdens):
        grid = np.asarray(grid, float)
        w = np.exp(logdens - np.max(logdens))
        cdf = cumulative_trapezoid(w, grid, initial=0.0)
        self.grid, self.cdf = grid, cdf / cdf[-1]

    def __call__(self, x):
        return np.interp(x, self.grid, self.cdf, left=0.0, right=1.0)


def ks_pvalue(samples, cdf):
    return stats.kstest(np.asarray(samples), cdf).pvalue


def ks_statistic(samples, cdf):
    return stats.kstest(np.asarray(samples), cdf).statistic


def ks_critical_1pct(n):
    return stats.kstwo.ppf(0.99, n)
