"""Bayesian Lee-Carter-type state-space model.

Observation and state equations, on the natural-log rate scale::

    y[:, t] = alpha + beta * k[t] + eps[t],     eps[t] ~ N(0, sigma2_eps * I)
    k[t]    = k[t-1] + lam + omega[t],          omega[t] ~ N(0, sigma2_omega)

``k[0] ~ N(m0, C0)`` is the state one step before the first observed year,
so a fit on ``n`` years carries ``n + 1`` states. The latent path is drawn by
forward filtering, backward sampling; the static parameters by conjugate
Gibbs updates (see ``docs/gibbs_updates.md``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MortalitySurface, _open_for_write
from .exceptions import DataError, NumericError

BACKWARD_CLAMP_TOL = 1e-14


class VarianceClampWarning(RuntimeWarning):
    """A smoothing variance came out slightly negative and was set to 0."""


def _check_all_finite(arr, what):
    arr = np.asarray(arr, dtype=float)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericError(f"non-finite {what} at index {idx}")
    return arr


@dataclass(frozen=True, eq=False)
class SSMParams:
    alpha: np.ndarray
    beta: np.ndarray
    lam: float
    sigma2_eps: float
    sigma2_omega: float

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float, ndmin=1)
        beta = np.array(self.beta, dtype=float, ndmin=1)
        if alpha.ndim != 1 or alpha.shape != beta.shape:
            raise DataError("alpha and beta must be 1-d vectors of equal length")
        for name, v in (("alpha", alpha), ("beta", beta)):
            _check_all_finite(v, name)
            v.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        for name in ("lam", "sigma2_eps", "sigma2_omega"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not math.isfinite(self.lam):
            raise NumericError("lam must be finite")
        # zero variances are allowed for degenerate/limit computations
        if not (self.sigma2_eps >= 0 and self.sigma2_omega >= 0):
            raise DataError("variances must be non-negative")
        if not (math.isfinite(self.sigma2_eps) and math.isfinite(self.sigma2_omega)):
            raise NumericError("variances must be finite")

    @property
    def n_ages(self):
        return self.alpha.size

    @classmethod
    def initial(cls, n_ages, alpha=-5.0, beta=0.2, lam=-0.8, sigma2_eps=0.2, sigma2_omega=0.065):
        """Chain starting point used by default in :func:`gibbs`."""
        return cls(np.full(n_ages, alpha), np.full(n_ages, beta), lam, sigma2_eps, sigma2_omega)

    def __eq__(self, other):
        if not isinstance(other, SSMParams):
            return NotImplemented
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and (self.lam, self.sigma2_eps, self.sigma2_omega)
            == (other.lam, other.sigma2_eps, other.sigma2_omega)
        )


@dataclass(frozen=True)
class Priors:
    mu_alpha: float = 0.0
    s2_alpha: float = 100.0
    mu_beta: float = 0.0
    s2_beta: float = 100.0
    mu_lambda: float = 0.0
    s2_lambda: float = 100.0
    a_eps: float = 2.1
    b_eps: float = 0.3
    a_omega: float = 2.1
    b_omega: float = 0.3
    m0: float = 0.0
    C0: float = 100.0

    def __post_init__(self):
        for name in ("s2_alpha", "s2_beta", "s2_lambda", "a_eps", "b_eps", "a_omega", "b_omega", "C0"):
            if not getattr(self, name) > 0:
                raise DataError(f"prior {name} must be > 0")


@dataclass(frozen=True)
class GibbsConfig:
    n_samples: int = 12000
    burn_in: int = 8000
    keep_last: int = 4000
    seed: int = 20120101

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_samples:
            raise DataError("burn_in must satisfy 0 <= burn_in < n_samples")
        if not 0 < self.keep_last <= self.n_samples - self.burn_in:
            raise DataError("keep_last must satisfy 0 < keep_last <= n_samples - burn_in")


@dataclass(frozen=True, eq=False)
class FilteredMoments:
    """Kalman filter output for observation times ``t = 1..n``.

    ``m`` and ``C`` have length ``n + 1``; entry 0 holds the prior
    ``(m0, C0)``. ``a``, ``R`` (state prediction) and ``f`` (observation
    prediction, shape ``(n_ages, n)``) have one entry per observed year,
    entry ``t - 1`` for time ``t``. The one-step observation covariance
    ``Q_t = beta beta' R_t + sigma2_eps I`` is rebuilt on demand by :meth:`Q`.
    """

    m: np.ndarray
    C: np.ndarray
    a: np.ndarray
    R: np.ndarray
    f: np.ndarray
    beta: np.ndarray
    sigma2_eps: float

    @property
    def n_years(self):
        return self.a.size

    def Q(self, t):
        return self.R[t - 1] * np.outer(self.beta, self.beta) + self.sigma2_eps * np.eye(self.beta.size)


def kalman_forward(y, p, m0=0.0, C0=100.0):
    """Forward Kalman filter for the scalar-state model.

    ``y`` has shape ``(n_ages, n_years)``. ``Q_t`` is never formed: the gain
    ``s_t = R_t beta' Q_t^{-1}`` follows from the Sherman-Morrison identity
    as ``R_t beta' / (sigma2_eps + R_t beta'beta)``, so each step is O(n_ages).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] < 1:
        raise DataError("y must be an (n_ages, n_years) matrix with at least one year")
    if y.shape[0] != p.n_ages:
        raise DataError(f"y has {y.shape[0]} ages, parameters have {p.n_ages}")
    _check_all_finite(y, "observation")
    n = y.shape[1]
    beta, alpha = p.beta, p.alpha
    bb = float(beta @ beta)
    m = np.empty(n + 1)
    C = np.empty(n + 1)
    a = np.empty(n)
    R = np.empty(n)
    f = np.empty((p.n_ages, n))
    m[0], C[0] = m0, C0
    for t in range(1, n + 1):
        a[t - 1] = m[t - 1] + p.lam
        R[t - 1] = C[t - 1] + p.sigma2_omega
        f[:, t - 1] = alpha + beta * a[t - 1]
        denom = p.sigma2_eps + R[t - 1] * bb
        if denom == 0.0:
            m[t], C[t] = a[t - 1], R[t - 1]
            continue
        gain = R[t - 1] * beta / denom
        m[t] = a[t - 1] + gain @ (y[:, t - 1] - f[:, t - 1])
        # equals R (1 - s beta) without the cancellation
        C[t] = R[t - 1] * p.sigma2_eps / denom
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(C))):
        raise NumericError("Kalman filter produced non-finite moments")
    return FilteredMoments(m, C, a, R, f, beta.copy(), p.sigma2_eps)


def backward_sample(fm, p, rng, size=None):
    """Draw latent paths ``k[0..n]`` given filtered moments.

    ``k[n] ~ N(m_n, C_n)`` then, for ``t = n-1 .. 0``,
    ``k[t] ~ N(h_t, H_t)`` with ``h_t = m_t + C_t/R_{t+1} (k[t+1] - a_{t+1})``
    and ``H_t = C_t - C_t^2 / R_{t+1}``. Returns shape ``(n + 1,)``, or
    ``(size, n + 1)`` when ``size`` is given.
    """
    n = fm.n_years
    shape = () if size is None else (int(size),)
    k = np.empty(shape + (n + 1,))
    k[..., n] = fm.m[n] + math.sqrt(max(fm.C[n], 0.0)) * rng.standard_normal(shape)
    for t in range(n - 1, -1, -1):
        c, r_next = fm.C[t], fm.R[t]
        if r_next == 0.0:
            h, var = fm.m[t] + 0.0 * k[..., t + 1], 0.0
        else:
            h = fm.m[t] + (c / r_next) * (k[..., t + 1] - fm.a[t])
            var = c - c * c / r_next
            if var < 0:
                if -var < BACKWARD_CLAMP_TOL:
                    warnings.warn(f"H_{t} = {var:.3g} clamped to 0", VarianceClampWarning, stacklevel=2)
                    var = 0.0
                else:
                    raise NumericError(f"negative smoothing variance H_{t} = {var:.6g}")
        k[..., t] = h + math.sqrt(var) * rng.standard_normal(shape)
    return k


def ffbs(y, p, priors, rng):
    fm = kalman_forward(y, p, priors.m0, priors.C0)
    return backward_sample(fm, p, rng)


# --- conjugate full conditionals ----------------------------------------

def alpha_beta_conditional(y, k, sigma2_eps, priors):
    """Joint normal full conditional of ``(alpha_x, beta_x)`` for every age.

    ``k`` holds the states of the observed years (length ``n``). The design
    ``[1, k_t]`` is shared by all ages, so one 2x2 posterior precision
    serves every row. Returns ``(means, cov)`` with ``means`` of shape
    ``(n_ages, 2)``.
    """
    k = np.asarray(k, dtype=float)
    design = np.column_stack([np.ones_like(k), k])
    prior_prec = np.diag([1.0 / priors.s2_alpha, 1.0 / priors.s2_beta])
    prec = prior_prec + design.T @ design / sigma2_eps
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    rhs = prior_prec @ np.array([priors.mu_alpha, priors.mu_beta]) + (y @ design) / sigma2_eps
    return rhs @ cov, cov


def sample_alpha_beta(y, k, sigma2_eps, priors, rng):
    means, cov = alpha_beta_conditional(y, k, sigma2_eps, priors)
    chol = np.linalg.cholesky(cov)
    draws = means + rng.standard_normal(means.shape) @ chol.T
    return draws[:, 0], draws[:, 1]


def alpha_conditional(y, beta, k, sigma2_eps, priors):
    """Normal full conditional of ``alpha`` given ``beta`` (mean vector, variance)."""
    n = np.asarray(k).size
    prec = 1.0 / priors.s2_alpha + n / sigma2_eps
    resid = (np.asarray(y) - np.outer(beta, k)).sum(axis=1)
    return (priors.mu_alpha / priors.s2_alpha + resid / sigma2_eps) / prec, 1.0 / prec


def lambda_conditional(k_path, sigma2_omega, priors):
    """Normal full conditional of the drift from the increments of ``k[0..n]``."""
    d = np.diff(np.asarray(k_path, dtype=float))
    prec = 1.0 / priors.s2_lambda + d.size / sigma2_omega
    return (priors.mu_lambda / priors.s2_lambda + d.sum() / sigma2_omega) / prec, 1.0 / prec


def sample_lambda(k_path, sigma2_omega, priors, rng):
    mean, var = lambda_conditional(k_path, sigma2_omega, priors)
    return mean + math.sqrt(var) * rng.standard_normal()


def _inv_gamma(shape, scale, rng):
    return scale / rng.gamma(shape)


def sigma2_eps_conditional(y, alpha, beta, k, priors):
    """Inverse-gamma ``(shape, scale)`` for the observation variance."""
    resid = np.asarray(y) - alpha[:, None] - np.outer(beta, k)
    return priors.a_eps + resid.size / 2.0, priors.b_eps + 0.5 * float(np.sum(resid**2))


def sample_sigma2_eps(y, alpha, beta, k, priors, rng):
    return _inv_gamma(*sigma2_eps_conditional(y, alpha, beta, k, priors), rng)


def sigma2_omega_conditional(k_path, lam, priors):
    """Inverse-gamma ``(shape, scale)`` for the state innovation variance."""
    d = np.diff(np.asarray(k_path, dtype=float)) - lam
    return priors.a_omega + d.size / 2.0, priors.b_omega + 0.5 * float(d @ d)


def sample_sigma2_omega(k_path, lam, priors, rng):
    return _inv_gamma(*sigma2_omega_conditional(k_path, lam, priors), rng)


# --- sampler ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SSMPosterior:
    """Kept Gibbs draws stored column-wise.

    ``k`` has shape ``(n_draws, n_years + 1)``; column 0 is the pre-sample
    state. ``trace`` holds the full scalar chains (burn-in included).
    """

    ages: np.ndarray
    years: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    sigma2_eps: np.ndarray
    sigma2_omega: np.ndarray
    k: np.ndarray
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.lam.shape[0]
        if g == 0:
            raise DataError("posterior must contain at least one draw")
        for name in ("alpha", "beta", "sigma2_eps", "sigma2_omega", "k"):
            if getattr(self, name).shape[0] != g:
                raise DataError(f"{name} has {getattr(self, name).shape[0]} draws, expected {g}")

    def __len__(self):
        return self.lam.shape[0]

    def draw(self, g):
        return (
            SSMParams(self.alpha[g], self.beta[g], self.lam[g], self.sigma2_eps[g], self.sigma2_omega[g]),
            self.k[g],
        )

    def __iter__(self):
        return (self.draw(g) for g in range(len(self)))

    @classmethod
    def from_draws(cls, draws, ages=None, years=None):
        draws = list(draws)
        params = [d[0] for d in draws]
        n_ages = params[0].n_ages
        k = np.array([d[1] for d in draws], dtype=float)
        return cls(
            ages=np.arange(n_ages) if ages is None else np.asarray(ages),
            years=np.arange(k.shape[1] - 1) if years is None else np.asarray(years),
            alpha=np.array([p.alpha for p in params]),
            beta=np.array([p.beta for p in params]),
            lam=np.array([p.lam for p in params]),
            sigma2_eps=np.array([p.sigma2_eps for p in params]),
            sigma2_omega=np.array([p.sigma2_omega for p in params]),
            k=k,
        )

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        first = parts[0]
        return cls(
            first.ages, first.years,
            *(np.concatenate([getattr(p, name) for p in parts])
              for name in ("alpha", "beta", "lam", "sigma2_eps", "sigma2_omega", "k")),
            trace={f"chain{i}_{key}": v for i, p in enumerate(parts) for key, v in p.trace.items()},
        )

    def interval(self, name, level=0.95):
        lo = (1 - level) / 2
        return np.quantile(getattr(self, name), [lo, 1 - lo], axis=0)

    def to_csv(self, path):
        """Long-format export ``draw,param,index,value``.

        ``index`` is the age for alpha/beta, the calendar year for k (the
        pre-sample state gets ``years[0] - 1``) and 0 for scalars.
        """
        k_years = np.concatenate([[int(self.years[0]) - 1], self.years]) if len(self.years) else []
        with _open_for_write(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "param", "index", "value"])
            for g in range(len(self)):
                for name, idx in (("alpha", self.ages), ("beta", self.ages), ("k", k_years)):
                    for i, v in zip(idx, getattr(self, name)[g]):
                        w.writerow([g, name, int(i), f"{v:.17g}"])
                for name in ("lam", "sigma2_eps", "sigma2_omega"):
                    w.writerow([g, "lambda" if name == "lam" else name, 0, f"{getattr(self, name)[g]:.17g}"])

    def write_traces(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, values in self.trace.items():
            with _open_for_write(directory / f"trace_{name}.csv") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "value"])
                for i, v in enumerate(values):
                    w.writerow([i, f"{v:.17g}"])


def gibbs(y, priors=Priors(), cfg=GibbsConfig(), rng=None, init=None, ages=None, years=None, fixed_k=None):
    """Gibbs sampler over the latent path and all static parameters.

    Each sweep draws ``k`` by FFBS, then ``(alpha, beta)`` jointly per age,
    ``lam``, ``sigma2_eps`` and ``sigma2_omega`` from their conjugate
    conditionals. The last ``cfg.keep_last`` sweeps are kept, unthinned.
    ``fixed_k`` (length ``n + 1``) skips the FFBS step, which is only useful
    for checking the parameter updates in isolation.
    """
    y = _check_all_finite(y, "observation")
    if y.ndim != 2 or y.shape[1] < 2:
        raise DataError("gibbs needs an (n_ages, n_years) matrix with at least 2 years")
    n_ages, n = y.shape
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    p = init if init is not None else SSMParams.initial(n_ages)
    if p.n_ages != n_ages:
        raise DataError("initial parameters do not match the number of ages")

    keep_from = cfg.n_samples - cfg.keep_last
    g_total = cfg.keep_last
    out = {
        "alpha": np.empty((g_total, n_ages)),
        "beta": np.empty((g_total, n_ages)),
        "lam": np.empty(g_total),
        "sigma2_eps": np.empty(g_total),
        "sigma2_omega": np.empty(g_total),
        "k": np.empty((g_total, n + 1)),
    }
    trace = {name: np.empty(cfg.n_samples) for name in ("lambda", "sigma2_eps", "sigma2_omega")}
    alpha, beta = p.alpha.copy(), p.beta.copy()
    lam, s2e, s2w = p.lam, p.sigma2_eps, p.sigma2_omega

    for it in range(cfg.n_samples):
        if fixed_k is None:
            k = ffbs(y, SSMParams(alpha, beta, lam, s2e, s2w), priors, rng)
        else:
            k = np.asarray(fixed_k, dtype=float)
        alpha, beta = sample_alpha_beta(y, k[1:], s2e, priors, rng)
        lam = sample_lambda(k, s2w, priors, rng)
        s2e = sample_sigma2_eps(y, alpha, beta, k[1:], priors, rng)
        s2w = sample_sigma2_omega(k, lam, priors, rng)
        trace["lambda"][it], trace["sigma2_eps"][it], trace["sigma2_omega"][it] = lam, s2e, s2w
        if it >= keep_from:
            g = it - keep_from
            out["alpha"][g], out["beta"][g], out["k"][g] = alpha, beta, k
            out["lam"][g], out["sigma2_eps"][g], out["sigma2_omega"][g] = lam, s2e, s2w

    return SSMPosterior(
        ages=np.arange(n_ages) if ages is None else np.asarray(ages),
        years=np.arange(1, n + 1) if years is None else np.asarray(years),
        trace=trace,
        **out,
    )


def chain_seeds(master_seed, n_chains):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n_chains)]


def gibbs_chains(y, priors=Priors(), cfg=GibbsConfig(), n_chains=1, ages=None, years=None, workers=None):
    """Run independent chains with seeds spawned from ``cfg.seed`` and pool the draws."""
    from concurrent.futures import ProcessPoolExecutor
    from dataclasses import replace

    if n_chains == 1:
        return gibbs(y, priors, cfg, ages=ages, years=years)
    cfgs = [replace(cfg, seed=s) for s in chain_seeds(cfg.seed, n_chains)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chain, [(y, priors, c, ages, years) for c in cfgs]))
    return SSMPosterior.concatenate(parts)


def _run_chain(args):
    y, priors, cfg, ages, years = args
    return gibbs(y, priors, cfg, ages=ages, years=years)


def posterior_mean(post):
    """Coordinate-wise average of the kept draws."""
    if len(post) == 0:
        raise DataError("empty posterior")
    return SSMParams(
        post.alpha.mean(axis=0),
        post.beta.mean(axis=0),
        float(post.lam.mean()),
        float(post.sigma2_eps.mean()),
        float(post.sigma2_omega.mean()),
    )


def lee_carter_normalize(alpha, beta, k):
    """Rescale to ``sum(beta) = 1`` and ``sum(k) = 0`` for reporting.

    Fitted values ``alpha + beta * k`` are unchanged. Sampling never imposes
    these constraints.
    """
    alpha, beta, k = (np.asarray(v, dtype=float) for v in (alpha, beta, k))
    total = beta.sum()
    if total == 0:
        raise NumericError("sum(beta) is zero; cannot normalise")
    kbar = k.mean()
    return alpha + beta * kbar, beta / total, (k - kbar) * total


# --- forecasting ----------------------------------------------------------

def forecast_index(last_k, p, horizon, rng, size=None):
    """Random walk with drift continued ``horizon`` steps from ``last_k``."""
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    shape = (horizon,) if size is None else (int(size), horizon)
    steps = p.lam + math.sqrt(p.sigma2_omega) * rng.standard_normal(shape)
    return last_k + np.cumsum(steps, axis=-1)


@dataclass(frozen=True, eq=False)
class BayesForecast:
    """Forecast log-rates per kept draw plus per-cell summaries on the rate scale."""

    log_rates: np.ndarray
    summary: MortalitySurface
    lo95: np.ndarray
    hi95: np.ndarray

    def to_csv(self, path):
        s = self.summary
        with _open_for_write(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "age", "mean_rate", "lo95", "hi95"])
            for j, year in enumerate(s.years):
                for i, age in enumerate(s.ages):
                    w.writerow([int(year), int(age), f"{s.rates[i, j]:.17g}",
                                f"{self.lo95[i, j]:.17g}", f"{self.hi95[i, j]:.17g}"])


def forecast_rates(post, horizon, rng):
    """Simulate future log-rates for every kept draw.

    For draw ``g`` the index path continues from that draw's final state and
    ``y = alpha + beta k + eps``. The summary surface is ``exp`` of the
    per-cell mean log-rate; ``lo95``/``hi95`` are per-cell 2.5% and 97.5%
    quantiles on the rate scale.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if len(post) == 0:
        raise DataError("empty posterior")
    G = len(post)
    n_ages = post.alpha.shape[1]
    out = np.empty((G, n_ages, horizon))
    for g in range(G):
        p, k = post.draw(g)
        path = forecast_index(k[-1], p, horizon, rng)
        noise = math.sqrt(p.sigma2_eps) * rng.standard_normal((n_ages, horizon))
        out[g] = p.alpha[:, None] + np.outer(p.beta, path) + noise
    last_year = int(post.years[-1])
    years = np.arange(last_year + 1, last_year + 1 + horizon)
    lo, hi = np.exp(np.quantile(out, [0.025, 0.975], axis=0))
    summary = MortalitySurface(post.ages, years, np.exp(out.mean(axis=0)), label="bayes")
    return BayesForecast(out, summary, lo, hi)
