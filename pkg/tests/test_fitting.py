import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pemort.data import MortalitySurface
from pemort.exceptions import DataError, UnderdeterminedError
from pemort.fitting import (
    FitChain,
    FitOptions,
    FitResult,
    TrendExtractionError,
    fit_chain,
    fit_trends,
    fit_year,
    model_jacobian,
    residual_ss,
)
from pemort.model import PEParams, PETrend, eval_static, eval_surface, params_at

from oracles import pe_scalar_mp, random_safe_params

AGES = np.arange(79)


def perturbed(truth, rng, spread=0.2):
    vals = truth.as_array() if isinstance(truth, PEParams) else truth
    return PEParams(*(v * rng.uniform(1 - spread, 1 + spread) for v in vals))


def rel_err(p, truth):
    return np.max(np.abs(p.as_array() / np.asarray(truth) - 1))


def test_fixed_point_stays_put():
    truth = params_at(PETrend.demo(), 2012)
    res = fit_year(eval_static(truth, AGES), truth)
    assert res.converged
    assert res.residual_ss < 1e-20
    assert rel_err(res.params, truth.as_array()) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_recovers_from_perturbed_starts(seed):
    rng = np.random.default_rng(seed)
    truth = random_safe_params(rng)
    observed = eval_static(truth, AGES)
    for _ in range(20):
        res = fit_year(observed, perturbed(truth, rng))
        assert res.converged
        assert rel_err(res.params, truth) < 1e-3


def test_noise_floor():
    rng = np.random.default_rng(11)
    truth = params_at(PETrend.demo(), 2012)
    n = AGES.size
    observed = eval_static(truth, AGES) + rng.normal(0, 1e-4, n)
    res = fit_year(observed, truth)
    assert res.converged
    assert 0.5 * n * 1e-8 < res.residual_ss < 2 * n * 1e-8


def test_history_descends():
    rng = np.random.default_rng(2)
    truth = random_safe_params(rng)
    res = fit_year(eval_static(truth, AGES), perturbed(truth, rng))
    costs = np.array(res.history)
    assert costs.size >= 2
    assert np.all(np.diff(costs) <= 1e-15 * costs[:-1])


def test_log_residual_mode():
    truth = params_at(PETrend.demo(), 2015)
    rng = np.random.default_rng(0)
    res = fit_year(eval_static(truth, AGES), perturbed(truth, rng, 0.1), FitOptions(log_residuals=True))
    assert res.converged and rel_err(res.params, truth.as_array()) < 1e-4
    with pytest.raises(DataError, match="strictly positive"):
        fit_year(np.zeros(10), truth, FitOptions(log_residuals=True))


def test_multistart_never_worse():
    rng = np.random.default_rng(8)
    truth = random_safe_params(rng)
    obs = eval_static(truth, AGES) * np.exp(rng.normal(0, 0.05, AGES.size))
    start = perturbed(truth, rng)
    single = fit_year(obs, start)
    multi = fit_year(obs, start, FitOptions(multistart=4, seed=1))
    assert multi.residual_ss <= single.residual_ss * (1 + 1e-12)


def test_fit_is_deterministic():
    rng = np.random.default_rng(5)
    truth = random_safe_params(rng)
    obs = eval_static(truth, AGES) * np.exp(rng.normal(0, 0.02, AGES.size))
    start = perturbed(truth, rng)
    a, b = fit_year(obs, start), fit_year(obs, start)
    assert a.params.as_array().tobytes() == b.params.as_array().tobytes()
    assert a.iterations == b.iterations


def test_iteration_cap_reports_nonconvergence():
    rng = np.random.default_rng(1)
    truth = random_safe_params(rng)
    res = fit_year(eval_static(truth, AGES), perturbed(truth, rng, 0.5), FitOptions(max_iter=1, separable=False))
    assert not res.converged
    assert res.iterations == 1


def test_underdetermined():
    with pytest.raises(UnderdeterminedError):
        fit_year(np.full(5, 0.01), params_at(PETrend.demo(), 2012))


def test_column_shape_checked():
    with pytest.raises(DataError):
        fit_year(np.full((3, 3), 0.01), params_at(PETrend.demo(), 2012))


def test_residual_ss_matches_direct_sum():
    truth = params_at(PETrend.demo(), 2012)
    obs = np.linspace(0.001, 0.05, AGES.size)
    assert residual_ss(truth, AGES, obs) == pytest.approx(np.sum((obs - eval_static(truth, AGES)) ** 2), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    p = np.array(random_safe_params(rng))
    x = rng.uniform(0, 90, 5)
    J = model_jacobian(p, x)
    fd = np.empty_like(J)
    for k in range(5):
        h = 1e-6 * abs(p[k])
        hi, lo = p.copy(), p.copy()
        hi[k] += h
        lo[k] -= h
        # high precision keeps the difference free of cancellation when b1 is tiny
        fd[:, k] = [float((pe_scalar_mp(*hi, xi) - pe_scalar_mp(*lo, xi)) / (2 * h)) for xi in x]
    np.testing.assert_allclose(J, fd, rtol=1e-4, atol=0)


class TestChain:
    years = np.arange(2012, 2023)

    def surface(self, trend=None):
        return eval_surface(trend or PETrend.demo(), AGES, self.years)

    def test_constant_surface_gives_flat_chain(self):
        p0 = params_at(PETrend.demo(), 2012)
        chain = fit_chain(self.surface(PETrend.frozen(p0)), p0)
        assert not chain.failed_years
        P = chain.param_matrix()
        np.testing.assert_allclose(P, np.tile(p0.as_array(), (len(self.years), 1)), rtol=1e-6)

    def test_trending_surface_recovers_constants(self):
        truth = PETrend.demo()
        chain = fit_chain(self.surface(truth), params_at(truth, 2012))
        est = fit_trends(chain, t0=2012)
        assert est.a1_0 == pytest.approx(truth.a1_0, rel=1e-5)
        assert est.a2_0 == pytest.approx(truth.a2_0, rel=1e-5)
        assert est.K1 == pytest.approx(truth.K1, rel=1e-3)
        assert est.K2 == pytest.approx(truth.K2, rel=1e-3)
        assert est.b3_0 == pytest.approx(truth.b3_0, rel=1e-4)

    def test_year_prefix_on_errors(self):
        rates = np.full((5, 3), 0.01)
        with pytest.raises(UnderdeterminedError, match="year 2000"):
            fit_chain(MortalitySurface(range(5), range(2000, 2003), rates), params_at(PETrend.demo(), 2012))

    def test_single_year_rejected(self):
        with pytest.raises(UnderdeterminedError):
            fit_chain(eval_surface(PETrend.demo(), AGES, [2012]), params_at(PETrend.demo(), 2012))

    def test_csv_export(self, tmp_path):
        p0 = params_at(PETrend.demo(), 2012)
        chain = fit_chain(self.surface(), p0)
        chain.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "year,a1,a2,b1,b2,b3,residual_ss,converged"
        assert len(lines) == 1 + len(self.years)
        first = lines[1].split(",")
        assert first[0] == "2012" and first[-1] == "true"
        assert float(first[1]) == chain.results[0].params.a1


def _chain_from(P, years, converged=True):
    results = [FitResult(PEParams(*row), 0.0, 1, converged) for row in P]
    return FitChain(tuple(years), tuple(results))


def test_fit_trends_exact_on_synthetic_series():
    truth = PETrend(0.008, 0.09, 1e-4, 0.05, 6.0, K1=0.03, K2=0.004, K3=1e-6, K4=2e-4, K5=0.05, t0=2000)
    years = range(2000, 2010)
    P = [params_at(truth, y).as_array() for y in years]
    est = fit_trends(_chain_from(P, years), t0=2000)
    for name in ("a1_0", "a2_0", "b1_0", "b2_0", "b3_0", "K1", "K2", "K3", "K4", "K5"):
        assert getattr(est, name) == pytest.approx(getattr(truth, name), rel=1e-9, abs=1e-15)


def test_fit_trends_zero_slope():
    row = params_at(PETrend.demo(), 2012).as_array()
    est = fit_trends(_chain_from([row] * 4, range(2012, 2016)))
    for name in ("K1", "K2", "K3", "K4", "K5"):
        assert abs(getattr(est, name)) < 1e-12
    assert est.t0 == 2012


def test_fit_trends_refuses_failed_years():
    row = params_at(PETrend.demo(), 2012).as_array()
    results = [FitResult(PEParams(*row), 0.0, 1, c) for c in (True, False, True)]
    with pytest.raises(TrendExtractionError) as info:
        fit_trends(FitChain((2012, 2013, 2014), tuple(results)))
    assert list(info.value.years) == [2013]


def test_fit_trends_needs_two_years():
    row = params_at(PETrend.demo(), 2012).as_array()
    with pytest.raises(UnderdeterminedError):
        fit_trends(_chain_from([row], [2012]))
