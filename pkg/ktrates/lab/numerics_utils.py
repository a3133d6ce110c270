import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from ..errors import RangeError, UsageError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
EXACT_BINOMIAL_MAX = 60


def wrap_phase(phase: float) -> float:
    """Map an angle to (-pi, pi]."""
    p = math.remainder(phase, TWO_PI)
    if p <= -math.pi:
        p += TWO_PI
    return p


@dataclass(frozen=True)
class LogComplex:
    """Complex scalar stored as natural log of the magnitude plus a phase.

    log_mag = -inf encodes zero, in which case the phase is pinned to 0.
    """
    log_mag: float
    phase: float = 0.0

    def __post_init__(self):
        if math.isnan(self.log_mag) or math.isnan(self.phase):
            raise UsageError("LogComplex does not accept NaN components")
        if self.log_mag == math.inf:
            raise UsageError("LogComplex magnitude must be finite or zero")
        if self.log_mag == -math.inf:
            object.__setattr__(self, "phase", 0.0)
        else:
            object.__setattr__(self, "phase", wrap_phase(float(self.phase)))
        object.__setattr__(self, "log_mag", float(self.log_mag))

    @classmethod
    def zero(cls) -> "LogComplex":
        return cls(-math.inf, 0.0)

    @classmethod
    def one(cls) -> "LogComplex":
        return cls(0.0, 0.0)

    @classmethod
    def from_complex(cls, z: complex) -> "LogComplex":
        z = complex(z)
        if z == 0:
            return cls.zero()
        return cls(math.log(abs(z)), math.atan2(z.imag, z.real))

    @classmethod
    def from_polar(cls, log_mag: float, phase: float) -> "LogComplex":
        return cls(log_mag, phase)

    @property
    def is_zero(self) -> bool:
        return self.log_mag == -math.inf

    def to_complex(self) -> complex:
        if self.is_zero:
            return 0j
        mag = math.exp(self.log_mag)
        return complex(mag * math.cos(self.phase), mag * math.sin(self.phase))

    def abs_log(self) -> float:
        return self.log_mag

    def conj(self) -> "LogComplex":
        return LogComplex(self.log_mag, -self.phase)

    def __neg__(self) -> "LogComplex":
        if self.is_zero:
            return self
        return LogComplex(self.log_mag, self.phase + math.pi)

    def __mul__(self, other: "LogComplex") -> "LogComplex":
        return logc_combine([self, other], "product")

    def __truediv__(self, other: "LogComplex") -> "LogComplex":
        if other.is_zero:
            raise ZeroDivisionError("division by a zero LogComplex")
        return logc_combine([self, LogComplex(-other.log_mag, -other.phase)], "product")

    def __add__(self, other: "LogComplex") -> "LogComplex":
        return logc_combine([self, other], "sum")

    def __sub__(self, other: "LogComplex") -> "LogComplex":
        return logc_combine([self, -other], "sum")


def logc_combine(values: Sequence[LogComplex], kind: str, n: Optional[int] = None) -> LogComplex:
    values = list(values)
    if not values:
        raise UsageError("logc_combine needs at least one value")

    if kind == "product":
        if any(v.is_zero for v in values):
            return LogComplex.zero()
        log_mag = math.fsum(v.log_mag for v in values)
        phase = math.fsum(v.phase for v in values)
        return LogComplex(log_mag, phase)

    if kind == "power":
        if n is None or n < 0:
            raise UsageError("integer-power needs a nonnegative exponent n")
        if len(values) != 1:
            raise UsageError("integer-power takes exactly one value")
        z = values[0]
        if n == 0:
            return LogComplex.one()
        if z.is_zero:
            return z
        return LogComplex(z.log_mag * n, z.phase * n)

    if kind == "sum":
        if any(math.isinf(v.phase) for v in values):
            raise UsageError("sum needs finite phases")
        top = max(v.log_mag for v in values)
        if top == -math.inf:
            return LogComplex.zero()
        residual = math.fsum(math.exp(v.log_mag - top) * math.cos(v.phase) for v in values)
        residual_im = math.fsum(math.exp(v.log_mag - top) * math.sin(v.phase) for v in values)
        size = math.hypot(residual, residual_im)
        # below this the residual is rounding noise of an exact cancellation
        if size <= 4.0 * len(values) * np.finfo(float).eps:
            return LogComplex.zero()
        return LogComplex(top + math.log(size), math.atan2(residual_im, residual))

    raise UsageError(f"Unknown combine kind: {kind}")


def logc_sum(values: Iterable[LogComplex]) -> LogComplex:
    return logc_combine(list(values), "sum")


def logc_product(values: Iterable[LogComplex]) -> LogComplex:
    return logc_combine(list(values), "product")


def logc_power(value: LogComplex, n: int) -> LogComplex:
    return logc_combine([value], "power", n=n)


def log_sum_polar(log_mags: np.ndarray, phases: np.ndarray, axis: int = -1) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised max-factored sum of polar terms along an axis."""
    log_mags = np.asarray(log_mags, dtype=float)
    phases = np.asarray(phases, dtype=float)
    top = np.max(log_mags, axis=axis, keepdims=True)
    safe_top = np.where(np.isfinite(top), top, 0.0)
    terms = np.exp(log_mags - safe_top) * np.exp(1j * phases)
    total = np.sum(terms, axis=axis)
    top = np.squeeze(safe_top, axis=axis)
    with np.errstate(divide="ignore"):
        out_mag = np.where(np.abs(total) > 0, top + np.log(np.abs(total)), -np.inf)
    return out_mag, np.where(np.abs(total) > 0, np.angle(total), 0.0)


def log_binomial(n: int, k: int) -> float:
    if n < 0 or k < 0:
        raise UsageError(f"log_binomial needs nonnegative arguments, got ({n}, {k})")
    if k > n:
        raise UsageError(f"log_binomial needs k <= n, got ({n}, {k})")
    if n <= EXACT_BINOMIAL_MAX:
        return math.log(math.comb(n, k))
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def log_binomial_array(n, k) -> np.ndarray:
    """Elementwise log C(n, k); entries with k outside [0, n] give -inf."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    nn = np.where(valid, n, 0.0)
    kk = np.where(valid, k, 0.0)
    out = gammaln(nn + 1) - gammaln(kk + 1) - gammaln(nn - kk + 1)
    return np.where(valid, out, -np.inf)


@dataclass(frozen=True)
class MonotoneTable:
    arguments: np.ndarray
    values: np.ndarray
    direction: str = "decreasing"

    def __post_init__(self):
        args = np.asarray(self.arguments, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if args.ndim != 1 or args.shape != vals.shape or args.size == 0:
            raise UsageError("MonotoneTable needs two equal-length non-empty 1-d arrays")
        if not np.all(np.isfinite(args)) or not np.all(np.isfinite(vals)):
            raise UsageError("MonotoneTable entries must be finite")
        if np.any(np.diff(args) <= 0):
            raise UsageError("MonotoneTable arguments must be strictly increasing")
        if self.direction not in ("increasing", "decreasing"):
            raise UsageError(f"Unknown direction: {self.direction}")
        steps = np.diff(vals)
        if self.direction == "increasing" and np.any(steps < 0):
            raise UsageError("values are not weakly increasing")
        if self.direction == "decreasing" and np.any(steps > 0):
            raise UsageError("values are not weakly decreasing")
        object.__setattr__(self, "arguments", args)
        object.__setattr__(self, "values", vals)

    def __call__(self, x):
        return np.interp(x, self.arguments, self.values)

    @property
    def value_range(self) -> Tuple[float, float]:
        return float(np.min(self.values)), float(np.max(self.values))

    def inverse(self, target: float) -> float:
        lo, hi = self.value_range
        if not lo <= target <= hi:
            raise RangeError(f"target {target} outside table range [{lo}, {hi}]")
        if self.direction == "increasing":
            vals, args = self.values, self.arguments
        else:
            vals, args = self.values[::-1], self.arguments[::-1]
        # rightmost preimage on flats, matching a right-inverse
        idx = int(np.searchsorted(vals, target, side="left"))
        if idx < vals.size and vals[idx] == target:
            hits = np.nonzero(vals == target)[0]
            pick = args[hits]
            return float(pick.max() if self.direction == "decreasing" else pick.min())
        if idx == 0:
            return float(args[0])
        v0, v1 = vals[idx - 1], vals[idx]
        a0, a1 = args[idx - 1], args[idx]
        w = (target - v0) / (v1 - v0)
        return float(a0 + w * (a1 - a0))


def invert_monotone(
    f: Union[MonotoneTable, Callable[[float], float]],
    target: float,
    bracket: Optional[Tuple[float, float]] = None,
    rtol: float = 1e-10,
    xtol: float = 1e-14,
) -> float:
    if isinstance(f, MonotoneTable):
        return f.inverse(target)

    if bracket is None:
        raise UsageError("a callable needs a certified bracket (lo, hi)")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise UsageError(f"bad bracket ({lo}, {hi})")
    f_lo, f_hi = float(f(lo)), float(f(hi))
    low_val, high_val = min(f_lo, f_hi), max(f_lo, f_hi)
    if not low_val <= target <= high_val:
        raise RangeError(f"target {target} outside [{low_val}, {high_val}] over bracket ({lo}, {hi})")
    if abs(f_lo - target) <= rtol * abs(target):
        return lo
    if abs(f_hi - target) <= rtol * abs(target):
        return hi

    root, info = brentq(lambda x: f(x) - target, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps,
                        maxiter=500, full_output=True)
    if not info.converged:
        logger.warning(f"Inversion did not converge for target {target}: {info.flag}")
    return float(root)
