"""scikit-learn style wrappers around the fitting and forecasting functions."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .fitting import FitOptions, fit_chain, fit_trends
from .model import PEParams, PETrend, eval_surface, params_at
from .ssm import GibbsConfig, Priors, forecast_rates, gibbs_chains, posterior_mean
from .validation import check_is_fitted, check_positive_int, check_surface


class PowerExponentialForecaster(BaseEstimator):
    """Time-dependent power-exponential model.

    ``fit`` runs the warm-started per-year fits and extracts the trend
    constants; ``predict`` evaluates the trend on any year range, which is
    how forecasts are produced.

    Parameters
    ----------
    init : PEParams, optional
        Starting point for the first year. Defaults to the t0 parameters of
        :meth:`PETrend.demo`.
    tol, max_iter : float, int
        Convergence settings for each yearly fit.
    log_residuals : bool
        Fit log-rates instead of raw rates (diagnostic only).
    multistart : int
        Extra jittered starts per year (diagnostic only).
    t0 : int, optional
        Calendar year mapped to ``t = 0``; defaults to the first data year.

    Attributes
    ----------
    chain_ : FitChain
    trend_ : PETrend
    ages_, years_ : ndarray
    """

    def __init__(self, init=None, tol=1e-10, max_iter=200, log_residuals=False, multistart=1, t0=None):
        self.init = init
        self.tol = tol
        self.max_iter = max_iter
        self.log_residuals = log_residuals
        self.multistart = multistart
        self.t0 = t0

    def _options(self):
        return FitOptions(
            tol=self.tol,
            max_iter=check_positive_int(self.max_iter, "max_iter"),
            log_residuals=self.log_residuals,
            multistart=check_positive_int(self.multistart, "multistart"),
        )

    def fit(self, X, y=None, **check_args):
        surface = check_surface(X, **check_args)
        init = self.init if self.init is not None else params_at(PETrend.demo(), PETrend.demo().t0)
        if not isinstance(init, PEParams):
            init = PEParams(*init)
        self.chain_ = fit_chain(surface, init, self._options())
        t0 = int(surface.years[0]) if self.t0 is None else int(self.t0)
        self.trend_ = fit_trends(self.chain_, t0)
        self.ages_ = surface.ages
        self.years_ = surface.years
        return self

    def predict(self, years, ages=None):
        check_is_fitted(self, "trend_")
        return eval_surface(self.trend_, self.ages_ if ages is None else ages, np.atleast_1d(years))

    def forecast(self, horizon=12):
        check_is_fitted(self, "trend_")
        last = int(self.years_[-1])
        return self.predict(np.arange(last + 1, last + 1 + check_positive_int(horizon, "horizon")))

    def score(self, X, y=None):
        """Negative mean squared rate error on a held-out surface."""
        surface = check_surface(X)
        pred = self.predict(surface.years, surface.ages)
        return -float(np.mean((surface.rates - pred.rates) ** 2))


class BayesianLeeCarter(BaseEstimator):
    """Gibbs-sampled state-space benchmark on log-rates.

    Parameters
    ----------
    priors : Priors, optional
    n_samples, burn_in, keep_last : int
        Sampling schedule.
    seed : int
        Master seed; chains use seeds spawned from it.
    n_chains : int
        Independent chains run in separate processes and pooled.

    Attributes
    ----------
    posterior_ : SSMPosterior
    params_ : SSMParams
        Posterior mean of the static parameters.
    """

    def __init__(self, priors=None, n_samples=12000, burn_in=8000, keep_last=4000, seed=20120101, n_chains=1):
        self.priors = priors
        self.n_samples = n_samples
        self.burn_in = burn_in
        self.keep_last = keep_last
        self.seed = seed
        self.n_chains = n_chains

    def _config(self):
        return GibbsConfig(
            n_samples=check_positive_int(self.n_samples, "n_samples"),
            burn_in=check_positive_int(self.burn_in, "burn_in", minimum=0),
            keep_last=check_positive_int(self.keep_last, "keep_last"),
            seed=self.seed,
        )

    def fit(self, X, y=None, **check_args):
        surface = check_surface(X, positive=True, **check_args)
        self.posterior_ = gibbs_chains(
            surface.log_rates,
            self.priors if self.priors is not None else Priors(),
            self._config(),
            n_chains=check_positive_int(self.n_chains, "n_chains"),
            ages=surface.ages,
            years=surface.years,
        )
        self.params_ = posterior_mean(self.posterior_)
        return self

    def predict_distribution(self, horizon=12, seed=None):
        check_is_fitted(self, "posterior_")
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        return forecast_rates(self.posterior_, check_positive_int(horizon, "horizon"), rng)

    def predict(self, horizon=12, seed=None):
        return self.predict_distribution(horizon, seed).summary
