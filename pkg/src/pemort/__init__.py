"""Time-dependent power-exponential mortality modelling and forecasting."""

__version__ = "0.1.0"

from .compare import DiffGrid, ForecastError, diff_surface, emit_heatmap, forecast_error, load_diff_csv
from .data import (
    MortalitySurface,
    PopulationGrid,
    load_population_csv,
    load_surface_csv,
    mortality_rates,
    save_population_csv,
    save_surface_csv,
    synth_surface,
)
from .estimators import BayesianLeeCarter, PowerExponentialForecaster
from .exceptions import (
    ConvergenceError,
    DataError,
    DomainError,
    InputError,
    ModelOverflowError,
    MortalityError,
    NumericError,
    ParseError,
    ShapeError,
    UnderdeterminedError,
)
from .fitting import FitChain, FitOptions, FitResult, fit_chain, fit_trends, fit_year
from .model import PEParams, PETrend, eval_static, eval_surface, params_at
from .ssm import (
    GibbsConfig,
    Priors,
    SSMParams,
    SSMPosterior,
    backward_sample,
    forecast_index,
    forecast_rates,
    gibbs,
    kalman_forward,
    posterior_mean,
)
