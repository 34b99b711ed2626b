"""Difference surfaces and forecast errors between two mortality surfaces."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import read_long_csv, write_long_csv
from .exceptions import DataError, InputError, NumericError, ShapeError


@dataclass(frozen=True, eq=False)
class DiffGrid:
    """Signed ``a - b`` differences on a shared age x year grid.

    Negative cells mean ``b`` (usually the forecast) is above ``a`` (usually
    the reference).
    """

    ages: np.ndarray
    years: np.ndarray
    diffs: np.ndarray
    label_a: str = "a"
    label_b: str = "b"

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=np.int64)
        years = np.asarray(self.years, dtype=np.int64)
        diffs = np.array(self.diffs, dtype=float)
        if diffs.shape != (ages.size, years.size):
            raise ShapeError(f"diffs shape {diffs.shape} does not match {ages.size} ages x {years.size} years")
        if not np.all(np.isfinite(diffs)):
            raise NumericError("differences must be finite")
        for arr in (ages, years, diffs):
            arr.setflags(write=False)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "diffs", diffs)

    def __eq__(self, other):
        if not isinstance(other, DiffGrid):
            return NotImplemented
        return (
            np.array_equal(self.ages, other.ages)
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.diffs, other.diffs)
        )

    def __neg__(self):
        return DiffGrid(self.ages, self.years, -self.diffs, self.label_b, self.label_a)


@dataclass(frozen=True, eq=False)
class ForecastError:
    abs_errors: DiffGrid
    per_age_mae: np.ndarray

    def mean_over_ages(self, lo, hi):
        """Mean absolute error over ages ``lo..hi`` inclusive, all years."""
        ages = self.abs_errors.ages
        mask = (ages >= lo) & (ages <= hi)
        if not mask.any():
            raise DataError(f"no ages in {lo}..{hi}")
        return float(self.abs_errors.diffs[mask].mean())


def _check_same_grid(a, b):
    bad = []
    if not np.array_equal(a.ages, b.ages):
        bad.append(f"ages ({a.ages[0]}..{a.ages[-1]} vs {b.ages[0]}..{b.ages[-1]})")
    if not np.array_equal(a.years, b.years):
        bad.append(f"years ({a.years[0]}..{a.years[-1]} vs {b.years[0]}..{b.years[-1]})")
    if bad:
        raise ShapeError("surfaces differ in " + " and ".join(bad))


def diff_surface(a, b, log=False):
    """Cell-wise ``a - b``; ``log=True`` differences the log-rates instead."""
    _check_same_grid(a, b)
    if log:
        if np.any(a.rates <= 0) or np.any(b.rates <= 0):
            raise DataError("log differences need strictly positive rates")
        diffs = np.log(a.rates) - np.log(b.rates)
    else:
        diffs = a.rates - b.rates
    return DiffGrid(a.ages, a.years, diffs, a.label or "a", b.label or "b")


def forecast_error(a, b, log=False):
    d = diff_surface(a, b, log=log)
    abs_grid = DiffGrid(d.ages, d.years, np.abs(d.diffs), d.label_a, d.label_b)
    return ForecastError(abs_grid, abs_grid.diffs.mean(axis=1))


def _diverging_rgb(diffs):
    """Blue (negative) - white (zero) - red (positive), symmetric at max |diff|."""
    vmax = float(np.max(np.abs(diffs))) if diffs.size else 0.0
    u = np.zeros_like(diffs) if vmax == 0 else np.clip(diffs / vmax, -1.0, 1.0)
    fade = 1.0 - np.abs(u)
    r = np.where(u < 0, fade, 1.0)
    g = fade
    bl = np.where(u > 0, fade, 1.0)
    return np.round(np.stack([r, g, bl], axis=-1) * 255).astype(np.uint8)


def emit_heatmap(grid, path, fmt=None, cell_px=6):
    """Write ``grid`` as CSV (``year,age,diff``) or as a PNG raster.

    The PNG has one ``cell_px`` square block per cell, years left to right
    and age 0 at the bottom.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    if fmt == "csv":
        write_long_csv(path, grid.ages, grid.years, grid.diffs, "diff")
        return path
    if fmt != "png":
        raise DataError(f"unknown heatmap format {fmt!r}")
    from PIL import Image

    rgb = _diverging_rgb(grid.diffs)[::-1]
    rgb = np.repeat(np.repeat(rgb, cell_px, axis=0), cell_px, axis=1)
    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None
    return path


def load_diff_csv(path, label_a="a", label_b="b"):
    ages, years, diffs = read_long_csv(path, "diff")
    return DiffGrid(ages, years, diffs, label_a, label_b)


