"""Power-exponential mortality curve and its time-dependent extension.

The static curve is

    mu(x) = a1 * exp(a2 * x) / x + b1 * (x * exp(-b2 * x)) ** b3

The first term covers childhood decline and old-age growth, the second the
young-adult accident hump. Ages below 0.5 are evaluated at 0.5 so that age 0
stays usable. The hump is always evaluated as ``exp(b3 * (log x - b2 * x))``.

In the time-dependent extension the five parameters follow

    a1(t) = a1_0 * exp(-K1 t)     a2(t) = a2_0 * exp(K2 t)
    b1(t) = b1_0 + K3 t           b2(t) = b2_0 + K4 t       b3(t) = b3_0 + K5 t

with ``t = year - t0``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import MortalitySurface
from .exceptions import DataError, DomainError, InputError, ModelOverflowError, ParseError

MIN_AGE = 0.5
MAX_HUMP_EXPONENT = 700.0

PARAM_NAMES = ("a1", "a2", "b1", "b2", "b3")


def _check_finite(obj):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, float) and not math.isfinite(value):
            raise DataError(f"{type(obj).__name__}.{f.name} must be finite, got {value}")


@dataclass(frozen=True)
class PEParams:
    a1: float
    a2: float
    b1: float
    b2: float
    b3: float

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        _check_finite(self)
        if self.a1 <= 0:
            raise DataError(f"a1 must be > 0, got {self.a1}")
        if self.b1 < 0:
            raise DataError(f"b1 must be >= 0, got {self.b1}")
        if self.b2 <= 0:
            raise DomainError(f"b2 must be > 0, got {self.b2}")
        if self.b3 <= 0:
            raise DomainError(f"b3 must be > 0, got {self.b3}")

    def as_array(self):
        return np.array([self.a1, self.a2, self.b1, self.b2, self.b3])

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class PETrend:
    a1_0: float
    a2_0: float
    b1_0: float
    b2_0: float
    b3_0: float
    K1: float = 0.0
    K2: float = 0.0
    K3: float = 0.0
    K4: float = 0.0
    K5: float = 0.0
    t0: int = 2012

    def __post_init__(self):
        for f in fields(self):
            if f.name != "t0":
                object.__setattr__(self, f.name, float(getattr(self, f.name)))
        if int(self.t0) != self.t0:
            raise DataError(f"t0 must be an integer year, got {self.t0}")
        object.__setattr__(self, "t0", int(self.t0))
        _check_finite(self)
        for name in ("a1_0", "b2_0", "b3_0"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def reference(cls):
        """Published initial values (t0 = 2012)."""
        return cls(
            a1_0=0.006223, a2_0=0.08707, b1_0=8.446, b2_0=0.0434, b3_0=132.5,
            K1=3.4631e-2, K2=3.1204e-3, K3=3.0111e-2, K4=3.5e-5, K5=5.22e-1,
            t0=2012,
        )

    @classmethod
    def demo(cls):
        """A well-behaved trend for synthetic data (t0 = 2012).

        Background constants are the published ones. The hump peaks near
        age 22 at roughly 1.5e-3, fades by 1.5% of its t0 level a year and
        sharpens slowly.
        """
        return cls(
            a1_0=0.006223, a2_0=0.08707, b1_0=7.5e-11, b2_0=0.045, b3_0=8.0,
            K1=3.4631e-2, K2=3.1204e-3, K3=-1.1e-12, K4=3.5e-5, K5=0.02,
            t0=2012,
        )

    @classmethod
    def frozen(cls, params, t0=2012):
        """Trend with all rates zero, i.e. ``params`` in every year."""
        return cls(params.a1, params.a2, params.b1, params.b2, params.b3, t0=t0)

    def to_text(self):
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text):
        values = {}
        names = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ParseError(f"unrecognised entry {raw!r}", line=lineno)
            if key in values:
                raise ParseError(f"duplicate key {key}", line=lineno)
            try:
                values[key] = int(value) if key == "t0" else float(value)
            except ValueError:
                raise ParseError(f"bad value for {key}: {value.strip()!r}", line=lineno) from None
        missing = sorted(names - values.keys())
        if missing:
            raise ParseError(f"missing keys: {', '.join(missing)}")
        return cls(**values)

    def save(self, path):
        try:
            Path(path).write_text(self.to_text(), encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot write {path}: {exc.strerror}") from None

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise InputError(f"no such input: {path}") from None
        return cls.from_text(text)


def _unpack(p):
    if isinstance(p, PEParams):
        return p.a1, p.a2, p.b1, p.b2, p.b3
    a1, a2, b1, b2, b3 = (float(v) for v in p)
    return a1, a2, b1, b2, b3


def hump_exponent(b2, b3, x):
    xt = np.maximum(np.asarray(x, dtype=float), MIN_AGE)
    return b3 * (np.log(xt) - b2 * xt)


def eval_static(p, x):
    """Evaluate the static curve at age(s) ``x``.

    ``p`` is a :class:`PEParams` or any 5-sequence ``(a1, a2, b1, b2, b3)``;
    plain sequences skip the sign checks. Returns a float for scalar ``x``
    and an array otherwise.
    """
    a1, a2, b1, b2, b3 = _unpack(p)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DataError("ages must be >= 0")
    xt = np.maximum(x, MIN_AGE)
    with np.errstate(over="ignore", invalid="ignore"):
        expo = b3 * (np.log(xt) - b2 * xt)
    if b1 != 0 and np.any(expo > MAX_HUMP_EXPONENT):
        worst = float(np.max(expo))
        raise ModelOverflowError(
            f"hump exponent {worst:.6g} exceeds {MAX_HUMP_EXPONENT:g}", term=worst
        )
    with np.errstate(over="raise", invalid="raise"):
        try:
            value = a1 * np.exp(a2 * xt) / xt + b1 * np.exp(expo)
        except FloatingPointError:
            raise ModelOverflowError("background term overflowed") from None
    if not np.all(np.isfinite(value)):
        raise ModelOverflowError("model value is not finite")
    return float(value) if value.ndim == 0 else value


def params_at(trend, year):
    """Static parameters implied by ``trend`` in calendar ``year``."""
    t = float(year) - trend.t0
    b2 = trend.b2_0 + trend.K4 * t
    b3 = trend.b3_0 + trend.K5 * t
    if b2 <= 0 or b3 <= 0:
        raise DomainError(f"trend leaves the admissible region in {year}: b2={b2:.6g}, b3={b3:.6g}")
    b1 = trend.b1_0 + trend.K3 * t
    if b1 < 0:
        raise DomainError(f"trend leaves the admissible region in {year}: b1={b1:.6g}")
    return PEParams(
        a1=trend.a1_0 * math.exp(-trend.K1 * t),
        a2=trend.a2_0 * math.exp(trend.K2 * t),
        b1=b1,
        b2=b2,
        b3=b3,
    )


def eval_surface(trend, ages, years, label="model"):
    """Rates from the time-dependent model on an age x year grid.

    Used both to reproduce fitted years and to forecast future ones.
    """
    ages = np.asarray(ages)
    years = np.asarray(years)
    if ages.size == 0 or years.size == 0:
        raise DataError("ages and years must be non-empty")
    rates = np.empty((ages.size, years.size))
    for j, year in enumerate(years):
        try:
            rates[:, j] = eval_static(params_at(trend, year), ages)
        except (DomainError, ModelOverflowError) as exc:
            raise type(exc)(f"year {int(year)}: {exc}") from exc
    return MortalitySurface(ages, years, rates, label=label)
