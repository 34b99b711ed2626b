"""Population grids, mortality-rate surfaces and their CSV formats."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, InputError, NumericError, ParseError


class CohortIncreaseWarning(UserWarning):
    """Survivor count rose from one year to the next; deaths clamped to 0."""


class RateDivisionError(DataError, ZeroDivisionError):
    """Zero survivors in a cell used as a rate denominator."""


def _as_axis(values, name):
    axis = np.asarray(values, dtype=np.int64)
    if axis.ndim != 1 or axis.size == 0:
        raise DataError(f"{name} must be a non-empty 1-d sequence")
    if axis.size > 1 and np.any(np.diff(axis) != 1):
        raise DataError(f"{name} must be contiguous and strictly increasing by 1")
    axis.setflags(write=False)
    return axis


def _frozen(matrix, shape, name):
    arr = np.array(matrix, dtype=float)
    if arr.shape != shape:
        raise DataError(f"{name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PopulationGrid:
    """Survivor counts ``l[x, t]`` on a unit-step age x year grid."""

    ages: np.ndarray
    years: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        ages = _as_axis(self.ages, "ages")
        years = _as_axis(self.years, "years")
        counts = _frozen(self.counts, (ages.size, years.size), "counts")
        if not np.all(np.isfinite(counts)):
            raise DataError("population counts must be finite")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise DataError(
                f"negative population {counts[i, j]} at age {ages[i]}, year {years[j]}"
            )
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "counts", counts)

    @property
    def shape(self):
        return self.counts.shape

    def __eq__(self, other):
        if not isinstance(other, PopulationGrid):
            return NotImplemented
        return (
            np.array_equal(self.ages, other.ages)
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.counts, other.counts)
        )

    def scaled(self, factor):
        return PopulationGrid(self.ages, self.years, self.counts * factor)


@dataclass(frozen=True, eq=False)
class MortalitySurface:
    """Mortality rates ``mu[x, t]`` on an age x year grid.

    Rows are ages, columns are calendar years. ``label`` is free-form
    provenance carried into comparison output.
    """

    ages: np.ndarray
    years: np.ndarray
    rates: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        ages = _as_axis(self.ages, "ages")
        years = _as_axis(self.years, "years")
        rates = _frozen(self.rates, (ages.size, years.size), "rates")
        if not np.all(np.isfinite(rates)):
            i, j = np.argwhere(~np.isfinite(rates))[0]
            raise NumericError(f"non-finite rate at age {ages[i]}, year {years[j]}")
        if np.any(rates < 0):
            i, j = np.argwhere(rates < 0)[0]
            raise DataError(f"negative rate {rates[i, j]} at age {ages[i]}, year {years[j]}")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "rates", rates)

    @property
    def shape(self):
        return self.rates.shape

    @property
    def log_rates(self):
        """Natural-log view of the rates (``-inf`` where a rate is 0)."""
        with np.errstate(divide="ignore"):
            return np.log(self.rates)

    def column(self, year):
        j = int(year) - int(self.years[0])
        if not 0 <= j < self.years.size:
            raise DataError(f"year {year} not in surface")
        return self.rates[:, j]

    def select_years(self, first, last):
        """Sub-surface for calendar years ``first..last`` inclusive."""
        j0 = int(first) - int(self.years[0])
        j1 = int(last) - int(self.years[0]) + 1
        if j0 < 0 or j1 > self.years.size or j0 >= j1:
            raise DataError(f"years {first}..{last} outside {self.years[0]}..{self.years[-1]}")
        return MortalitySurface(self.ages, self.years[j0:j1], self.rates[:, j0:j1], self.label)

    def __eq__(self, other):
        if not isinstance(other, MortalitySurface):
            return NotImplemented
        return (
            np.array_equal(self.ages, other.ages)
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.rates, other.rates)
        )


def mortality_rates(grid):
    """Turn survivor counts into one-year mortality rates.

    ``mu[x, t] = (l[x, t] - l[x, t+1]) / l[x, t]`` for every year except
    the last, so the result has one fewer year than ``grid``. A cohort
    that grows between years gets zero deaths and a
    :class:`CohortIncreaseWarning`.
    """
    if grid.years.size < 2:
        raise DataError("need at least 2 years of population data to derive rates")
    alive = grid.counts[:, :-1]
    nxt = grid.counts[:, 1:]
    if np.any(alive == 0):
        i, j = np.argwhere(alive == 0)[0]
        raise RateDivisionError(
            f"zero population at age {grid.ages[i]}, year {grid.years[j]}"
        )
    deaths = alive - nxt
    rising = deaths < 0
    if np.any(rising):
        i, j = np.argwhere(rising)[0]
        warnings.warn(
            f"{int(rising.sum())} cohort increase(s) clamped to zero deaths, "
            f"first at age {grid.ages[i]}, year {grid.years[j]}",
            CohortIncreaseWarning,
            stacklevel=2,
        )
        deaths = np.where(rising, 0.0, deaths)
    return MortalitySurface(grid.ages, grid.years[:-1], deaths / alive, label="data")


def synth_surface(trend, ages, years, noise_sd=0.0, seed=0):
    """Sample a surface from a parameter trend with multiplicative log-normal noise.

    ``rate = model(x, t) * exp(eps)`` with ``eps ~ N(0, noise_sd**2)``
    drawn i.i.d. per cell from ``numpy.random.default_rng(seed)``.
    """
    from .model import eval_surface

    if not noise_sd >= 0:
        raise DataError(f"noise_sd must be >= 0, got {noise_sd}")
    clean = eval_surface(trend, ages, years)
    if not np.all(np.isfinite(clean.rates)):
        raise NumericError("trend produced non-finite model rates")
    if noise_sd == 0:
        return MortalitySurface(clean.ages, clean.years, clean.rates, label="synthetic")
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_sd, size=clean.shape)
    return MortalitySurface(clean.ages, clean.years, clean.rates * np.exp(eps), label="synthetic")


# --- CSV -----------------------------------------------------------------

def _open_for_read(path):
    path = Path(path)
    try:
        return path.open(newline="", encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"no such input: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _open_for_write(path):
    path = Path(path)
    try:
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


def read_long_csv(path, value_column):
    """Read a ``year,age,<value_column>`` file into (ages, years, matrix).

    Every (year, age) pair of the rectangular grid must appear exactly once.
    """
    expected = ["year", "age", value_column]
    cells = {}
    with _open_for_read(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ParseError(f"header must be {','.join(expected)}, got {header}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=line)
            try:
                year, age = int(row[0]), int(row[1])
                value = float(row[2])
            except ValueError:
                raise ParseError(f"cannot parse {row!r}", line=line) from None
            if (year, age) in cells:
                raise DataError(f"duplicate entry for year {year}, age {age} (line {line})")
            cells[(year, age)] = value
    if not cells:
        raise DataError(f"{path}: no data rows")

    years = sorted({y for y, _ in cells})
    ages = sorted({a for _, a in cells})
    for name, axis in (("years", years), ("ages", ages)):
        gaps = sorted(set(range(axis[0], axis[-1] + 1)) - set(axis))
        if gaps:
            raise DataError(f"non-contiguous {name}: missing {gaps}")
    matrix = np.empty((len(ages), len(years)))
    for j, year in enumerate(years):
        for i, age in enumerate(ages):
            try:
                matrix[i, j] = cells[(year, age)]
            except KeyError:
                raise DataError(f"missing entry for year {year}, age {age}") from None
    return np.array(ages), np.array(years), matrix


def write_long_csv(path, ages, years, matrix, value_column):
    with _open_for_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["year", "age", value_column])
        for j, year in enumerate(years):
            for i, age in enumerate(ages):
                writer.writerow([int(year), int(age), f"{matrix[i, j]:.17g}"])


def load_population_csv(path):
    ages, years, counts = read_long_csv(path, "population")
    neg = np.argwhere(counts < 0)
    if neg.size:
        i, j = neg[0]
        raise DataError(
            f"negative population {counts[i, j]:g} for year {years[j]}, age {ages[i]}"
        )
    return PopulationGrid(ages, years, counts)


def save_population_csv(grid, path):
    write_long_csv(path, grid.ages, grid.years, grid.counts, "population")


def load_surface_csv(path, label=""):
    ages, years, rates = read_long_csv(path, "rate")
    return MortalitySurface(ages, years, rates, label=label or Path(path).stem)


def save_surface_csv(surface, path):
    write_long_csv(path, surface.ages, surface.years, surface.rates, "rate")
