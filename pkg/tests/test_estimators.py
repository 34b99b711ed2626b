import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pemort.data import MortalitySurface
from pemort.exceptions import DataError
from pemort.estimators import BayesianLeeCarter, PowerExponentialForecaster
from pemort.fitting import fit_chain, fit_trends
from pemort.model import PETrend, eval_surface, params_at
from pemort.ssm import Priors, gibbs, GibbsConfig

AGES = np.arange(79)
YEARS = np.arange(2012, 2023)


@pytest.fixture(scope="module")
def surface():
    return eval_surface(PETrend.demo(), AGES, YEARS)


def test_params_round_trip():
    est = PowerExponentialForecaster(tol=1e-8, max_iter=50)
    assert est.get_params()["tol"] == 1e-8
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    b = BayesianLeeCarter(n_samples=10, burn_in=2, keep_last=5, priors=Priors(s2_beta=4.0))
    assert clone(b).get_params()["priors"] == Priors(s2_beta=4.0)


def test_unfitted():
    with pytest.raises(NotFittedError):
        PowerExponentialForecaster().predict([2030])
    with pytest.raises(NotFittedError):
        BayesianLeeCarter().predict()


def test_pe_matches_functional_pipeline(surface):
    est = PowerExponentialForecaster().fit(surface)
    chain = fit_chain(surface, params_at(PETrend.demo(), 2012))
    assert est.trend_ == fit_trends(chain, 2012)
    fc = est.forecast(12)
    assert list(fc.years) == list(range(2023, 2035))
    assert fc == eval_surface(est.trend_, AGES, range(2023, 2035))


def test_pe_accepts_arrays(surface):
    est = PowerExponentialForecaster().fit(np.asarray(surface.rates), first_year=2012)
    assert list(est.years_) == list(YEARS)
    assert est.score(surface) > -1e-14


def test_bad_hyperparameters(surface):
    with pytest.raises(DataError):
        PowerExponentialForecaster(max_iter=0).fit(surface)
    with pytest.raises(DataError):
        BayesianLeeCarter(n_chains=0).fit(surface)


def test_bayes_matches_sampler(surface):
    est = BayesianLeeCarter(n_samples=60, burn_in=20, keep_last=40, seed=3).fit(surface)
    post = gibbs(surface.log_rates, Priors(), GibbsConfig(60, 20, 40, seed=3), ages=AGES, years=YEARS)
    assert est.posterior_.lam.tobytes() == post.lam.tobytes()
    pred = est.predict(5)
    assert isinstance(pred, MortalitySurface) and pred.shape == (79, 5)
    assert pred == est.predict(5)


def test_bayes_needs_positive_rates():
    with pytest.raises(DataError):
        BayesianLeeCarter(n_samples=10, burn_in=2, keep_last=5).fit(np.zeros((3, 4)))
