"""Per-year least-squares fits of the power-exponential curve and trend extraction.

Each year is fitted with a Levenberg-Marquardt iteration on the sum of
squared raw residuals. ``a1``, ``b2`` and ``b3`` are optimised on the log
scale so they stay positive; ``a2`` and ``b1`` are optimised directly, with
``b1`` projected back onto ``b1 >= 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .data import MortalitySurface, _open_for_write
from .exceptions import ConvergenceError, DataError, ModelOverflowError, MortalityError, UnderdeterminedError
from .model import MIN_AGE, PARAM_NAMES, PEParams, PETrend, eval_static

_LOG_COORDS = np.array([True, False, False, True, True])


class TrendExtractionError(ConvergenceError):
    """Trend constants requested from a chain with non-converged years."""


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-10
    max_iter: int = 200
    step_tol: float = 1e-12
    log_residuals: bool = False
    multistart: int = 1
    refresh_linear: bool = True
    separable: bool = True
    seed: int = 0


@dataclass(frozen=True)
class FitResult:
    """One year's optimum.

    ``iterations`` counts full five-parameter steps only; the separable
    warm-up stage is not included. ``history`` lists every accepted cost.
    """

    params: PEParams
    residual_ss: float
    iterations: int
    converged: bool
    history: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class FitChain:
    years: tuple
    results: tuple

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        if len(years) != len(self.results):
            raise DataError("one FitResult per year required")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise DataError("chain years must be strictly increasing")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "results", tuple(self.results))

    def __iter__(self):
        return iter(zip(self.years, self.results))

    def __len__(self):
        return len(self.years)

    def param_matrix(self):
        """Array of shape (n_years, 5) with columns a1, a2, b1, b2, b3."""
        return np.array([r.params.as_array() for r in self.results])

    @property
    def failed_years(self):
        return [y for y, r in self if not r.converged]

    def to_csv(self, path):
        with _open_for_write(path) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["year", *PARAM_NAMES, "residual_ss", "converged"])
            for year, res in self:
                writer.writerow(
                    [year, *(f"{v:.17g}" for v in res.params.as_array()),
                     f"{res.residual_ss:.17g}", str(res.converged).lower()]
                )


def model_jacobian(p, x):
    """Derivatives of the curve w.r.t. (a1, a2, b1, b2, b3), shape (len(x), 5)."""
    a1, a2, b1, b2, b3 = p.as_array() if isinstance(p, PEParams) else np.asarray(p, float)
    xt = np.maximum(np.asarray(x, dtype=float), MIN_AGE)
    log_base = np.log(xt) - b2 * xt
    with np.errstate(over="ignore", invalid="ignore"):
        hump = np.exp(b3 * log_base)
        growth = np.exp(a2 * xt)
        return np.column_stack([
            growth / xt,
            a1 * growth,
            hump,
            -b1 * b3 * xt * hump,
            b1 * log_base * hump,
        ])


def _linear_refresh(p, ages, observed, keep_zero_b1=False):
    """Re-solve the linear coefficients (a1, b1) for fixed (a2, b2, b3).

    Both enter the curve linearly, so this is a two-column non-negative
    least-squares problem. Returns ``p`` unchanged when the solution would
    set ``a1`` to zero.
    """
    jac = model_jacobian(p, ages)
    basis = jac[:, [0, 2]]
    if not np.all(np.isfinite(basis)):
        raise ModelOverflowError("model basis overflowed")
    scale = np.linalg.norm(basis, axis=0)
    scale[scale == 0] = 1.0
    coef, _ = nnls(basis / scale, observed)
    a1, b1 = coef / scale
    if not a1 > 0:
        if keep_zero_b1:
            raise DataError("no positive background coefficient fits these ages")
        return p
    return PEParams(a1, p.a2, b1, p.b2, p.b3)


def _to_theta(p):
    v = p.as_array()
    v[_LOG_COORDS] = np.log(v[_LOG_COORDS])
    return v


def _from_theta(theta):
    v = np.array(theta, dtype=float)
    with np.errstate(over="ignore"):
        v[_LOG_COORDS] = np.exp(v[_LOG_COORDS])
    v[2] = max(v[2], 0.0)
    return PEParams.from_array(v)


def _residuals(p, ages, observed, log_residuals):
    fitted = eval_static(p, ages)
    if log_residuals:
        return np.log(observed) - np.log(fitted), fitted
    return observed - fitted, fitted


def residual_ss(p, ages, observed, log_residuals=False):
    r, _ = _residuals(p, ages, observed, log_residuals)
    return float(r @ r)


def _refreshed(p, r, fitted, cost, ages, observed, opts, history):
    if opts.log_residuals:
        return p, r, fitted, cost
    try:
        q = _linear_refresh(p, ages, observed)
        rq, fq = _residuals(q, ages, observed, False)
    except MortalityError:
        return p, r, fitted, cost
    cq = float(rq @ rq)
    if q is p or not cq < cost:
        return p, r, fitted, cost
    history.append(cq)
    return q, rq, fq, cq


def _varpro(ages, observed, init, opts, history):
    """Levenberg-Marquardt over (a2, log b2, log b3) with (a1, b1) eliminated.

    The linear coefficients are re-solved at every trial point, which
    removes the strongly curved b1-b3 valley from the search. Uses the
    Kaufman approximation to the projected Jacobian.
    """
    def project(phi):
        a2, b2, b3 = phi[0], math.exp(phi[1]), math.exp(phi[2])
        base = PEParams(init.a1, a2, 0.0, b2, b3)
        q = _linear_refresh(base, ages, observed, keep_zero_b1=True)
        r, _ = _residuals(q, ages, observed, False)
        return q, r, float(r @ r)

    def jacobian(q):
        jac = model_jacobian(q, ages)
        jac[:, 3] *= q.b2
        jac[:, 4] *= q.b3
        active = [0] + ([2] if q.b1 > 0 else [])
        basis, _ = np.linalg.qr(jac[:, active])
        d = jac[:, [1, 3, 4]]
        return d - basis @ (basis.T @ d)

    phi = np.array([init.a2, math.log(init.b2), math.log(init.b3)])
    try:
        p, r, cost = project(phi)
    except MortalityError:
        return init
    if not cost < history[-1]:
        p, cost = init, history[-1]
    else:
        history.append(cost)
    damping = 1e-3
    for _ in range(opts.max_iter):
        jac = jacobian(p)
        scale = np.linalg.norm(jac, axis=0)
        scale[scale == 0] = 1.0
        js = jac / scale
        r = observed - eval_static(p, ages)
        accepted = False
        while damping <= 1e30:
            aug = np.vstack([js, math.sqrt(damping) * np.eye(3)])
            step = np.linalg.lstsq(aug, np.concatenate([r, np.zeros(3)]), rcond=None)[0] / scale
            # trust region: at most a 50% change of a2, b2, b3 per step
            bound = np.abs(step) / np.array([0.5 * abs(phi[0]) + 1e-3, 0.5, 0.5])
            if bound.max() > 1.0:
                step = step / bound.max()
            if np.linalg.norm(step) <= opts.step_tol * (np.linalg.norm(phi) + opts.step_tol):
                return p
            try:
                trial, _, trial_cost = project(phi + step)
            except (MortalityError, OverflowError):
                trial_cost = math.inf
            if trial_cost < cost:
                actual = (cost - trial_cost) / cost
                phi, p, cost = phi + step, trial, trial_cost
                history.append(cost)
                damping = max(damping / 10.0, 1e-15)
                accepted = True
                break
            damping *= 10.0
        if not accepted or cost == 0.0 or actual < opts.tol:
            return p
    return p


def _lm(ages, observed, init, opts):
    p = init
    r, fitted = _residuals(p, ages, observed, opts.log_residuals)
    cost = float(r @ r)
    history = [cost]
    if opts.separable and not opts.log_residuals:
        p = _varpro(ages, observed, p, opts, history)
        r, fitted = _residuals(p, ages, observed, False)
        cost = float(r @ r)
    p, r, fitted, cost = _refreshed(p, r, fitted, cost, ages, observed, opts, history)
    theta = _to_theta(p)
    damping = 1e-3
    converged = cost == 0.0
    it = 0
    while not converged and it < opts.max_iter:
        it += 1
        jac = model_jacobian(p, ages)
        jac[:, _LOG_COORDS] *= p.as_array()[_LOG_COORDS]
        if opts.log_residuals:
            jac /= fitted[:, None]
        scale = np.linalg.norm(jac, axis=0)
        scale[scale == 0] = 1.0
        js = jac / scale
        while True:
            # damped normal equations as an augmented least-squares system
            aug = np.vstack([js, math.sqrt(damping) * np.eye(5)])
            rhs = np.concatenate([r, np.zeros(5)])
            step = np.linalg.lstsq(aug, rhs, rcond=None)[0] / scale
            small_step = np.linalg.norm(step) <= opts.step_tol * (np.linalg.norm(theta) + opts.step_tol)
            trial_theta = theta + step
            try:
                trial = _from_theta(trial_theta)
                trial_r, trial_fit = _residuals(trial, ages, observed, opts.log_residuals)
                with np.errstate(over="ignore"):
                    trial_cost = float(trial_r @ trial_r)
                ok = math.isfinite(trial_cost)
            except (ModelOverflowError, MortalityError, FloatingPointError):
                ok = False
            if ok and trial_cost < cost:
                lin = r - jac @ step
                predicted = (cost - float(lin @ lin)) / cost
                actual = (cost - trial_cost) / cost
                p, r, fitted, cost = trial, trial_r, trial_fit, trial_cost
                history.append(cost)
                if opts.refresh_linear:
                    p, r, fitted, cost = _refreshed(p, r, fitted, cost, ages, observed, opts, history)
                theta = _to_theta(p)
                damping = max(damping / 10.0, 1e-15)
                if cost == 0.0 or (actual < opts.tol and abs(predicted) < opts.tol) or small_step:
                    converged = True
                break
            if small_step:
                converged = True
                break
            damping *= 10.0
            if damping > 1e30:
                converged = True
                break
    return p, it, converged, tuple(history)


def fit_year(observed, init, opts=FitOptions(), ages=None):
    """Least-squares fit of one year's rate column.

    ``observed`` is indexed by age; ``ages`` defaults to ``0..len-1``.
    Non-convergence within ``opts.max_iter`` iterations is reported through
    ``FitResult.converged`` rather than raised.
    """
    observed = np.asarray(observed, dtype=float)
    if ages is None:
        ages = np.arange(observed.size)
    ages = np.asarray(ages, dtype=float)
    if observed.ndim != 1 or observed.shape != ages.shape:
        raise DataError("observed must be a 1-d column matching ages")
    if observed.size < len(PARAM_NAMES) + 1:
        raise UnderdeterminedError(
            f"need at least {len(PARAM_NAMES) + 1} observed ages, got {observed.size}"
        )
    if not np.all(np.isfinite(observed)):
        raise DataError("observed rates must be finite")
    if opts.log_residuals and np.any(observed <= 0):
        raise DataError("log residuals require strictly positive rates")
    if not isinstance(init, PEParams):
        init = PEParams(*init)

    starts = [init]
    if opts.multistart > 1:
        rng = np.random.default_rng(opts.seed)
        base = _to_theta(init)
        for _ in range(opts.multistart - 1):
            jitter = rng.normal(0.0, 0.2, size=5)
            theta = base.copy()
            theta[_LOG_COORDS] += jitter[_LOG_COORDS]
            theta[~_LOG_COORDS] *= np.exp(jitter[~_LOG_COORDS])
            starts.append(_from_theta(theta))

    best = None
    for start in starts:
        try:
            residual_ss(start, ages, observed, opts.log_residuals)
        except ModelOverflowError:
            if start is init:
                raise
            continue
        p, it, converged, history = _lm(ages, observed, start, opts)
        res = FitResult(p, residual_ss(p, ages, observed, opts.log_residuals), it, converged, history)
        if best is None or res.residual_ss < best.residual_ss:
            best = res
    return best


def fit_chain(surface, init, opts=FitOptions()):
    """Fit every year in order, starting each year from the previous optimum.

    Sequential by construction: year ``t + 1`` cannot start before year ``t``
    has finished.
    """
    if surface.years.size < 2:
        raise UnderdeterminedError("fit_chain needs a surface with at least 2 years")
    results = []
    current = init
    for j, year in enumerate(surface.years):
        try:
            res = fit_year(surface.rates[:, j], current, opts, ages=surface.ages)
        except MortalityError as exc:
            raise type(exc)(f"year {int(year)}: {exc}") from exc
        results.append(res)
        current = res.params
    return FitChain(tuple(int(y) for y in surface.years), tuple(results))


def _line_fit(t, y):
    design = np.column_stack([np.ones_like(t), t])
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(intercept), float(slope)


def fit_trends(chain, t0=None):
    """Trend constants from a fitted chain by ordinary least-squares lines.

    ``log a1`` and ``log a2`` are regressed on ``t = year - t0`` (so the
    exponential laws become straight lines); ``b1``, ``b2``, ``b3`` are
    regressed directly. ``t0`` defaults to the first chain year.
    """
    if len(chain) < 2:
        raise UnderdeterminedError("trend extraction needs at least 2 fitted years")
    failed = chain.failed_years
    if failed:
        raise TrendExtractionError(
            f"cannot extract trends, fits did not converge for years {failed}", years=failed
        )
    if t0 is None:
        t0 = chain.years[0]
    t = np.array(chain.years, dtype=float) - t0
    P = chain.param_matrix()
    if np.any(P[:, 1] <= 0):
        raise DataError("a2 series must be positive for an exponential trend fit")
    ln_a1_0, s1 = _line_fit(t, np.log(P[:, 0]))
    ln_a2_0, s2 = _line_fit(t, np.log(P[:, 1]))
    b1_0, k3 = _line_fit(t, P[:, 2])
    b2_0, k4 = _line_fit(t, P[:, 3])
    b3_0, k5 = _line_fit(t, P[:, 4])
    return PETrend(
        a1_0=math.exp(ln_a1_0), a2_0=math.exp(ln_a2_0), b1_0=b1_0, b2_0=b2_0, b3_0=b3_0,
        K1=-s1, K2=s2, K3=k3, K4=k4, K5=k5, t0=int(t0),
    )
