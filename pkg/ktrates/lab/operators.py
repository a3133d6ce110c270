import cmath
import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import fractional_matrix_power
from scipy.optimize import minimize_scalar

from ..config import (
    DIAGONAL_SCAN,
    DIAGONAL_SCAN_CAP,
    MAX_WORKERS,
    SERIES_MAX_TERMS,
    SYMBOL_GRID,
    TRUNCATION_MAX,
)
from ..errors import DomainError, ResourceError, UsageError

logger = logging.getLogger(__name__)

SPACES = ("l1", "l2", "linf")
REGISTERED = (
    "identity",
    "toeplitz_quarter",
    "factorial_diagonal",
    "ritt_diagonal",
    "stolz_diagonal",
    "single_point",
    "custom_diagonal",
    "custom_shift_poly",
)
CERT_RTOL = 1e-9
SPECTRUM_MARGIN = 1e-12
SERIES_RTOL = 1e-12
TOEPLITZ_BASE_MARGIN = 1e-8
MAX_COEFFICIENTS = 5 * 10 ** 7
_FACTORIALS = np.array([float(math.factorial(k)) for k in range(0, 23)])


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenSchedule:
    """Eigenvalue generator of a diagonal operator, stored in log-polar form.

    gap_bound(K) must dominate sup_{k >= K} |1 - lambda_k|. The optional hooks
    sharpen tail certificates for schedules with known geometry.
    """
    log_modulus: Callable[[np.ndarray], np.ndarray]
    angle: Callable[[np.ndarray], np.ndarray]
    gap_bound: Callable[[int], float]
    formula: str = ""
    peak_candidates: Optional[Callable[[int, float], np.ndarray]] = None
    tail_peak: Optional[Callable[[int, int, float], float]] = None
    nearest_candidates: Optional[Callable[[complex], np.ndarray]] = None
    tail_distance: Optional[Callable[[int, complex], float]] = None


@dataclass(frozen=True)
class Diagonal:
    name: str
    schedule: EigenSchedule
    count: Optional[int] = None
    start: int = 1
    accumulation: Tuple[complex, ...] = ()
    space: str = "l2"
    params: Dict = field(default_factory=dict)

    def indices(self, lo: int, hi: int) -> np.ndarray:
        return np.arange(max(lo, self.start), hi, dtype=np.int64)

    def eigenvalues(self, k) -> np.ndarray:
        k = np.asarray(k)
        with np.errstate(divide="ignore"):
            return np.exp(self.schedule.log_modulus(k) + 1j * self.schedule.angle(k))


@dataclass(frozen=True)
class ShiftPolynomial:
    name: str
    coefficients: np.ndarray
    space: str = "l1"
    params: Dict = field(default_factory=dict)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def symbol(self, z):
        return np.polyval(self.coefficients[::-1], z)


@dataclass(frozen=True)
class DenseMatrix:
    name: str
    matrix: np.ndarray
    space: str = "l2"
    seed: int = 0


@dataclass(frozen=True)
class BlockQ:
    base: "OperatorModel"
    alpha: float
    name: str = "block_q"

    def __post_init__(self):
        if self.alpha < 1:
            raise UsageError(f"BlockQ needs alpha >= 1, got {self.alpha}")


OperatorModel = Union[Diagonal, ShiftPolynomial, DenseMatrix, BlockQ]


@dataclass(frozen=True)
class SpectrumDescription:
    kind: str
    points: Tuple[complex, ...]
    contains_one: bool
    peripheral: Tuple[complex, ...] = ()
    boundary: Optional[Callable[[np.ndarray], np.ndarray]] = None
    formula: str = ""
    numerical: bool = False

    @property
    def peripheral_subset_of_one(self) -> bool:
        return all(abs(p - 1) <= 1e-9 for p in self.peripheral)


@dataclass(frozen=True)
class DecayCurve:
    alpha: float
    ns: np.ndarray
    values: np.ndarray
    exact: np.ndarray
    operator: str = ""

    def __post_init__(self):
        ns = np.asarray(self.ns, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        exact = np.asarray(self.exact, dtype=bool)
        if ns.size != values.size or ns.size != exact.size:
            raise UsageError("DecayCurve arrays must have equal length")
        if np.any(np.diff(ns) <= 0):
            raise UsageError("DecayCurve n must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise UsageError("DecayCurve values must be finite")
        object.__setattr__(self, "ns", ns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "exact", exact)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"n": self.ns, "value": self.values, "exact": self.exact})


@dataclass(frozen=True)
class ResolventCurve:
    thetas: np.ndarray
    values: np.ndarray
    side: str = "both"
    exact: Optional[np.ndarray] = None
    operator: str = ""

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if thetas.size != values.size or thetas.size == 0:
            raise UsageError("ResolventCurve arrays must be non-empty and of equal length")
        if np.any(np.diff(thetas) <= 0) or thetas[0] <= 0 or thetas[-1] > math.pi + 1e-15:
            raise UsageError("ResolventCurve thetas must increase inside (0, pi]")
        if self.side not in ("both", "plus", "minus"):
            raise UsageError(f"Unknown side: {self.side}")
        exact = np.ones(thetas.size, dtype=bool) if self.exact is None else np.asarray(self.exact, dtype=bool)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "exact", exact)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"theta": self.thetas, "value": self.values})


@dataclass(frozen=True)
class AnnulusGrid:
    radii: int = 64
    angles: int = 256
    depth_min: float = 1e-6

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        radii = 1.0 + np.geomspace(self.depth_min, 1.0, self.radii)
        angles = np.linspace(-math.pi, math.pi, self.angles, endpoint=False)
        return radii, angles

    def refined(self) -> "AnnulusGrid":
        return AnnulusGrid(self.radii * 2, self.angles * 2, self.depth_min)


# ---------------------------------------------------------------------------
# Registered families
# ---------------------------------------------------------------------------

def _abs_one_minus_exp(a, b):
    """|1 - exp(a + ib)| without cancellation when a is close to 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        re = 2.0 * np.sin(b / 2.0) ** 2 - np.cos(b) * np.expm1(a)
        im = np.exp(a) * np.sin(b)
    return np.hypot(re, im)


def factorial_kappa(j) -> np.ndarray:
    """max{k >= 0 : k! < j}, with the value 0 at j = 1."""
    j = np.asarray(j, dtype=float)
    count = np.searchsorted(_FACTORIALS, j, side="left")
    return np.maximum(count - 1, 0)


def factorial_epsilon(j) -> np.ndarray:
    j = np.asarray(j, dtype=float)
    top = _FACTORIALS[factorial_kappa(j) + 1]
    return (1.0 + 1.0 / j) / (2.0 * top * top)


def _factorial_schedule() -> EigenSchedule:
    return EigenSchedule(
        log_modulus=lambda k: -factorial_epsilon(k),
        angle=lambda k: 1.0 / np.asarray(k, dtype=float),
        gap_bound=lambda K: 1.0 / K + 1.0 / (K * K),
        formula="exp(-eps_k + i/k), eps_k = (1 + 1/k) / (2 ((kappa(k)+1)!)^2)",
    )


def _ritt_peak_candidates(n: int, alpha: float) -> np.ndarray:
    center = (n + alpha) / alpha
    base = int(math.floor(center))
    return np.arange(max(base - 1, 1), base + 3, dtype=np.int64)


def _ritt_tail_peak(K: int, n: int, alpha: float) -> float:
    # sup over 0 < x <= 1/K of (1 - x)^n x^alpha
    x_star = alpha / (n + alpha)
    x = min(x_star, 1.0 / K)
    return math.exp(n * math.log1p(-x) + alpha * math.log(x))


def _ritt_nearest(mu: complex) -> np.ndarray:
    re = mu.real
    if re <= 0 or re >= 1:
        return np.array([1], dtype=np.int64)
    center = 1.0 / (1.0 - re)
    if center > 1e15:
        return np.array([1], dtype=np.int64)
    base = int(math.floor(center))
    return np.arange(max(base - 1, 1), base + 3, dtype=np.int64)


def _ritt_tail_distance(K: int, mu: complex) -> float:
    lo = 1.0 - 1.0 / K
    x = min(max(mu.real, lo), 1.0)
    return abs(mu - x)


def _ritt_schedule() -> EigenSchedule:
    def log_modulus(k):
        with np.errstate(divide="ignore"):
            return np.log1p(-1.0 / np.asarray(k, dtype=float))

    return EigenSchedule(
        log_modulus=log_modulus,
        angle=lambda k: np.zeros(np.shape(k)),
        gap_bound=lambda K: 1.0 / K,
        formula="1 - 1/k",
        peak_candidates=_ritt_peak_candidates,
        tail_peak=_ritt_tail_peak,
        nearest_candidates=_ritt_nearest,
        tail_distance=_ritt_tail_distance,
    )


def stolz_angles(k) -> np.ndarray:
    return np.ldexp(math.pi, -np.asarray(k, dtype=np.int64))


def _stolz_schedule(alpha: float) -> EigenSchedule:
    return EigenSchedule(
        log_modulus=lambda k: np.log1p(-stolz_angles(k) ** alpha),
        angle=stolz_angles,
        gap_bound=lambda K: 2.0 * math.ldexp(math.pi, -int(min(K, 1100))),
        formula=f"(1 - t_k^{alpha}) exp(i t_k), t_k = pi 2^-k",
    )


def _finite_schedule(values: Sequence[complex], formula: str) -> Tuple[EigenSchedule, int]:
    arr = np.asarray(values, dtype=complex)
    with np.errstate(divide="ignore"):
        log_mod = np.log(np.abs(arr))
    angles = np.angle(arr)

    def pick(table):
        return lambda k: table[np.asarray(k, dtype=np.int64) - 1]

    return EigenSchedule(pick(log_mod), pick(angles), gap_bound=lambda K: 0.0, formula=formula), arr.size


def parse_complex(value) -> complex:
    if isinstance(value, (int, float, complex, np.number)):
        return complex(value)
    text = str(value).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(text)
    except ValueError:
        raise UsageError(f"Not a complex number: {value!r}")


def _parse_list(value) -> list:
    if isinstance(value, (list, tuple, np.ndarray)):
        return [parse_complex(v) for v in value]
    return [parse_complex(v) for v in str(value).split(",") if v.strip()]


_ALLOWED_PARAMS = {
    "identity": {"space"},
    "toeplitz_quarter": {"space"},
    "factorial_diagonal": {"space"},
    "ritt_diagonal": {"space"},
    "stolz_diagonal": {"space", "alpha"},
    "single_point": {"space", "lambda0"},
    "custom_diagonal": {"space", "eigenvalues"},
    "custom_shift_poly": {"space", "coefficients"},
}


def build_registered_operator(name: str, params: Optional[Dict] = None) -> OperatorModel:
    params = dict(params or {})
    if name not in REGISTERED:
        raise UsageError(f"Unknown operator '{name}'. Valid names: {', '.join(REGISTERED)}")
    unknown = set(params) - _ALLOWED_PARAMS[name]
    if unknown:
        raise UsageError(
            f"Unknown parameter(s) {sorted(unknown)} for {name}; valid: {sorted(_ALLOWED_PARAMS[name])}"
        )
    default_space = "l1" if name in ("toeplitz_quarter", "custom_shift_poly") else "l2"
    space = str(params.get("space", default_space)).lower()
    if space not in SPACES:
        raise UsageError(f"Unknown space '{space}', expected one of {SPACES}")

    if name == "identity":
        sched, count = _finite_schedule([1.0], "1")
        op = Diagonal(name, sched, count=count, space=space)
    elif name == "single_point":
        lam0 = parse_complex(params.get("lambda0", 0.5))
        sched, count = _finite_schedule([lam0], f"{lam0}")
        op = Diagonal(name, sched, count=count, space=space, params={"lambda0": lam0})
    elif name == "custom_diagonal":
        if "eigenvalues" not in params:
            raise UsageError("custom_diagonal needs 'eigenvalues'")
        values = _parse_list(params["eigenvalues"])
        if not values:
            raise UsageError("custom_diagonal needs at least one eigenvalue")
        if max(abs(v) for v in values) > 1 + 1e-12:
            logger.warning(f"custom_diagonal has eigenvalues outside the unit disc; not power-bounded")
        sched, count = _finite_schedule(values, "custom")
        op = Diagonal(name, sched, count=count, space=space, params={"eigenvalues": values})
    elif name == "factorial_diagonal":
        op = Diagonal(name, _factorial_schedule(), accumulation=(1 + 0j,), space=space)
    elif name == "ritt_diagonal":
        op = Diagonal(name, _ritt_schedule(), accumulation=(1 + 0j,), space=space)
    elif name == "stolz_diagonal":
        try:
            alpha = float(params.get("alpha", 2.0))
        except (TypeError, ValueError):
            raise UsageError(f"stolz_diagonal alpha must be a number, got {params.get('alpha')!r}")
        if alpha < 1:
            raise UsageError(f"stolz_diagonal needs alpha >= 1, got {alpha}")
        op = Diagonal(name, _stolz_schedule(alpha), start=2, accumulation=(1 + 0j,), space=space,
                      params={"alpha": alpha})
    elif name == "toeplitz_quarter":
        op = ShiftPolynomial(name, np.array([0.25, 0.5, 0.25], dtype=complex), space=space)
    else:
        if "coefficients" not in params:
            raise UsageError("custom_shift_poly needs 'coefficients'")
        coeffs = np.asarray(_parse_list(params["coefficients"]), dtype=complex)
        nz = np.nonzero(coeffs)[0]
        if nz.size == 0:
            raise UsageError("custom_shift_poly needs a nonzero coefficient")
        coeffs = coeffs[: nz[-1] + 1]
        op = ShiftPolynomial(name, coeffs, space=space, params={"coefficients": list(coeffs)})

    logger.info(f"Built operator {name} on {space}")
    return op


def block_q(base: OperatorModel, alpha: float) -> BlockQ:
    return BlockQ(base, float(alpha))


# ---------------------------------------------------------------------------
# Diagonal sups
# ---------------------------------------------------------------------------

def _powers(log_mod: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return np.ones_like(log_mod)
    return np.exp(n * log_mod)


def _diag_deficiency_values(op: Diagonal, k: np.ndarray, n: int, alpha: float) -> np.ndarray:
    lm = op.schedule.log_modulus(k)
    gap = _abs_one_minus_exp(lm, op.schedule.angle(k))
    return _powers(lm, n) * gap ** alpha


def _diag_distance(op: Diagonal, k: np.ndarray, mu: complex) -> np.ndarray:
    lm = op.schedule.log_modulus(k)
    if mu == 0:
        return np.exp(lm)
    r = abs(mu)
    return r * _abs_one_minus_exp(lm - math.log(r), op.schedule.angle(k) - cmath.phase(mu))


def _scan_sup(op: Diagonal, value_fn, tail_fn, candidates=None, extra=()) -> Tuple[float, bool]:
    """Sup of value_fn over all indices; tail_fn(K) must bound the sup over k >= K."""
    best = max(extra, default=0.0)
    if op.count is not None:
        vals = value_fn(np.arange(op.start, op.start + op.count, dtype=np.int64))
        return float(max(best, np.max(vals))), True

    if candidates is not None:
        cand = np.asarray(candidates, dtype=np.int64)
        cand = cand[cand >= op.start]
        if cand.size:
            best = max(best, float(np.max(value_fn(cand))))

    hi = op.start + DIAGONAL_SCAN
    best = max(best, float(np.max(value_fn(op.indices(op.start, hi)))))
    while True:
        bound = tail_fn(hi)
        if bound <= best * (1.0 + CERT_RTOL):
            return best, True
        if hi >= DIAGONAL_SCAN_CAP:
            logger.warning(f"{op.name}: tail not certified at K={hi} (bound {bound:.3e} vs {best:.3e})")
            return best, False
        new_hi = min(2 * hi, DIAGONAL_SCAN_CAP)
        best = max(best, float(np.max(value_fn(op.indices(hi, new_hi)))))
        hi = new_hi


def _diag_deficiency(op: Diagonal, n: int, alpha: float) -> Tuple[float, bool]:
    sched = op.schedule
    extra = [abs(a) ** n * abs(1 - a) ** alpha for a in op.accumulation]
    if sched.tail_peak is not None:
        def tail(K):
            return sched.tail_peak(K, n, alpha)
    else:
        def tail(K):
            return sched.gap_bound(K) ** alpha
    cands = sched.peak_candidates(n, alpha) if sched.peak_candidates is not None else None
    return _scan_sup(op, lambda k: _diag_deficiency_values(op, k, n, alpha), tail, cands, extra)


def _diag_power(op: Diagonal, n: int) -> Tuple[float, bool]:
    extra = [abs(a) ** n for a in op.accumulation]
    return _scan_sup(op, lambda k: _powers(op.schedule.log_modulus(k), n), lambda K: 1.0, None, extra)


def _diag_inverse_distance(op: Diagonal, mu: complex) -> Tuple[float, bool]:
    sched = op.schedule
    extra = []
    for a in op.accumulation:
        d = abs(mu - a)
        extra.append(math.inf if d == 0 else 1.0 / d)

    def tail(K):
        bound = abs(mu) - 1.0
        if sched.tail_distance is not None:
            bound = max(bound, sched.tail_distance(K, mu))
        elif op.accumulation:
            bound = max(bound, min(abs(mu - a) for a in op.accumulation) - sched.gap_bound(K))
        return math.inf if bound <= 0 else 1.0 / bound

    def values(k):
        d = _diag_distance(op, k, mu)
        with np.errstate(divide="ignore"):
            return np.where(d > 0, 1.0 / d, np.inf)

    cands = sched.nearest_candidates(mu) if sched.nearest_candidates is not None else None
    return _scan_sup(op, values, tail, cands, extra)


# ---------------------------------------------------------------------------
# Shift polynomials
# ---------------------------------------------------------------------------

def _check_integer_alpha(alpha: float) -> int:
    if alpha < 0 or abs(alpha - round(alpha)) > 1e-12:
        raise UsageError(f"fractional alpha={alpha} is not available for shift polynomials")
    return int(round(alpha))


def _poly_power(coeffs: np.ndarray, n: int) -> np.ndarray:
    if n * max(len(coeffs) - 1, 1) > MAX_COEFFICIENTS:
        raise ResourceError(f"power {n} of a degree-{len(coeffs) - 1} polynomial exceeds the coefficient limit")
    result = np.array([1.0 + 0j])
    base = coeffs
    while n > 0:
        if n & 1:
            result = np.convolve(result, base)
        n >>= 1
        if n:
            base = np.convolve(base, base)
    return result


def _one_minus(coeffs: np.ndarray) -> np.ndarray:
    out = -np.asarray(coeffs, dtype=complex)
    out[0] += 1.0
    return out


def _symbol_sup(func, lipschitz: float, grid: int = SYMBOL_GRID) -> Tuple[float, float]:
    """Grid sup of func over t in [-pi, pi) refined by bounded golden-section search."""
    t = np.linspace(-math.pi, math.pi, grid, endpoint=False)
    vals = func(t)
    best = float(np.max(vals))
    h = 2.0 * math.pi / grid
    for i in np.argsort(vals)[-8:]:
        res = minimize_scalar(lambda s: -float(func(np.array([s]))[0]), bounds=(t[i] - h, t[i] + h),
                              method="bounded", options={"xatol": 1e-13})
        best = max(best, -float(res.fun))
    return best, lipschitz * h / 2.0


def _shift_deficiency_l2(op: ShiftPolynomial, n: int, alpha: int) -> Tuple[float, bool]:
    c = op.coefficients
    P = float(np.sum(np.abs(c)))
    D1 = float(np.sum(np.arange(len(c)) * np.abs(c)))
    lip = D1 * (n * P ** max(n - 1, 0) * (1 + P) ** alpha + alpha * P ** n * (1 + P) ** max(alpha - 1, 0))

    def f(t):
        p = op.symbol(np.exp(1j * t))
        return np.abs(p) ** n * np.abs(1 - p) ** alpha

    value, err = _symbol_sup(f, lip)
    logger.debug(f"{op.name}: symbol sup n={n} value={value:.6e} grid error bound {err:.3e}")
    return value, err <= 1e-10 * max(value, 1e-300)


def _shift_deficiency(op: ShiftPolynomial, n: int, alpha: float) -> Tuple[float, bool]:
    a = _check_integer_alpha(alpha)
    if op.space == "l2":
        return _shift_deficiency_l2(op, n, a)
    coeffs = np.convolve(_poly_power(op.coefficients, n), _poly_power(_one_minus(op.coefficients), a))
    return float(np.sum(np.abs(coeffs))), True


def _shift_roots(op: ShiftPolynomial, lam: complex) -> Tuple[np.ndarray, np.ndarray]:
    """Roots z_i of lam - p(z) with weights w_i so that [z^n] 1/(lam - p) = sum w_i z_i^-(n+1)."""
    c = op.coefficients
    if op.name == "toeplitz_quarter":
        s = np.sqrt(complex(lam))
        return np.array([2 * s - 1, -(2 * s + 1)]), np.array([1 / s, -1 / s])
    q = -c.copy()
    q[0] += lam
    roots = np.roots(q[::-1])
    deriv = np.polyval((np.arange(1, len(c)) * c[1:])[::-1], roots)
    if np.any(np.abs(deriv) < 1e-14):
        raise DomainError(f"{op.name}: repeated root of lambda - p(z) at lambda={lam}")
    return roots, 1.0 / deriv


def _check_resolvent_domain(op: ShiftPolynomial, lam: complex, roots: np.ndarray):
    margin = TOEPLITZ_BASE_MARGIN if op.name == "toeplitz_quarter" else SPECTRUM_MARGIN
    if roots.size and np.min(np.abs(roots)) <= 1.0 + margin:
        raise DomainError(f"lambda={lam} lies in or too close to the spectrum of {op.name}")


def _shift_resolvent_l1(op: ShiftPolynomial, lam: complex) -> Tuple[float, bool]:
    if op.degree == 0:
        d = abs(lam - op.coefficients[0])
        if d <= SPECTRUM_MARGIN:
            raise DomainError(f"lambda={lam} is the spectrum of {op.name}")
        return 1.0 / d, True
    roots, weights = _shift_roots(op, lam)
    _check_resolvent_domain(op, lam, roots)
    order = np.argsort(np.abs(roots))
    roots, weights = roots[order], weights[order]
    log_roots = np.log(roots)
    rho = 1.0 / abs(roots[0])

    dominant = roots.size == 1 or abs(roots[1]) > abs(roots[0]) * (1 + 1e-9)
    if dominant:
        # beyond N the dominant root fixes |a_n| up to relative SERIES_RTOL
        N = 1
        for z, w in zip(roots[1:], weights[1:]):
            ratio = abs(roots[0]) / abs(z)
            share = abs(w / weights[0]) * (len(roots) - 1)
            if share > 0:
                N = max(N, int(math.ceil(math.log(SERIES_RTOL / share) / math.log(ratio))) + 1)
        if N > SERIES_MAX_TERMS:
            raise ResourceError(f"resolvent series of {op.name} at {lam} needs {N} terms")
        n = np.arange(N)
        terms = np.exp(-np.outer(n + 1, log_roots)) @ weights
        tail = abs(weights[0]) * rho ** (N + 1) / (1.0 - rho)
        return float(np.sum(np.abs(terms)) + tail), True

    # comparable roots: sum until the crude geometric bound is negligible
    rhos = 1.0 / np.abs(roots)
    total, start, chunk = 0.0, 0, 4096
    while True:
        n = np.arange(start, start + chunk)
        terms = np.exp(-np.outer(n + 1, log_roots)) @ weights
        total += float(np.sum(np.abs(terms)))
        start += chunk
        bound = float(np.sum(np.abs(weights) * rhos ** (start + 1) / (1.0 - rhos)))
        if bound <= 1e-10 * total:
            return total + bound, True
        if start >= SERIES_MAX_TERMS:
            raise ResourceError(f"resolvent series of {op.name} at {lam} did not settle")
        chunk *= 2


def _shift_resolvent_l2(op: ShiftPolynomial, lam: complex) -> Tuple[float, bool]:
    if op.degree > 0:
        roots, _ = _shift_roots(op, lam)
        _check_resolvent_domain(op, lam, roots)
    dist = _symbol_distance(op, lam)
    if dist <= SPECTRUM_MARGIN:
        raise DomainError(f"lambda={lam} lies on the spectrum of {op.name}")
    return 1.0 / dist, False


def _symbol_distance(op: ShiftPolynomial, lam: complex) -> float:
    c = op.coefficients
    D1 = float(np.sum(np.arange(len(c)) * np.abs(c)))

    def neg_dist(t):
        return -np.abs(lam - op.symbol(np.exp(1j * t)))

    value, _ = _symbol_sup(neg_dist, D1)
    return -value


# ---------------------------------------------------------------------------
# Dense matrices
# ---------------------------------------------------------------------------

def spectral_norm(A: np.ndarray, seed: int = 0, tol: float = 1e-10, max_iter: int = 5000) -> float:
    """Largest singular value by power iteration on the Gram matrix."""
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    off = A - np.diag(np.diagonal(A))
    if not np.any(off):
        return float(np.max(np.abs(np.diagonal(A))))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1]) + 0j
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for it in range(max_iter):
        w = A.conj().T @ (A @ v)
        estimate = float(np.vdot(v, w).real)
        norm_w = np.linalg.norm(w)
        if norm_w == 0:
            return 0.0
        residual = np.linalg.norm(w - estimate * v)
        v = w / norm_w
        if residual <= tol * max(estimate, 1e-300) or abs(estimate - sigma2) <= 1e-15 * estimate:
            sigma2 = estimate
            break
        sigma2 = estimate
    else:
        logger.debug(f"power iteration stopped at {max_iter} iterations (residual {residual:.2e})")
    return math.sqrt(max(sigma2, 0.0))


def matrix_norm(A: np.ndarray, space: str, seed: int = 0) -> float:
    if space == "l1":
        return float(np.max(np.sum(np.abs(A), axis=0)))
    if space == "linf":
        return float(np.max(np.sum(np.abs(A), axis=1)))
    return spectral_norm(A, seed=seed)


def _dense_frac(A: np.ndarray, alpha: float) -> np.ndarray:
    I = np.eye(A.shape[0], dtype=complex)
    if abs(alpha - round(alpha)) <= 1e-12:
        return np.linalg.matrix_power(I - A, int(round(alpha)))
    return np.asarray(fractional_matrix_power(I - A, alpha), dtype=complex)


def _dense_deficiency(op: DenseMatrix, n: int, alpha: float) -> float:
    A = np.asarray(op.matrix, dtype=complex)
    product = np.linalg.matrix_power(A, n) @ _dense_frac(A, alpha)
    return matrix_norm(product, op.space, op.seed)


def _dense_resolvent(op: DenseMatrix, lam: complex) -> float:
    A = np.asarray(op.matrix, dtype=complex)
    eig = np.linalg.eigvals(A)
    if np.min(np.abs(eig - lam)) <= SPECTRUM_MARGIN:
        raise DomainError(f"lambda={lam} is an eigenvalue of {op.name}")
    inverse = np.linalg.solve(lam * np.eye(A.shape[0]) - A, np.eye(A.shape[0]))
    return matrix_norm(inverse, op.space, op.seed)


# ---------------------------------------------------------------------------
# Public norm operations
# ---------------------------------------------------------------------------

def _deficiency(op: OperatorModel, n: int, alpha: float) -> Tuple[float, bool]:
    if n < 0:
        raise UsageError(f"n must be nonnegative, got {n}")
    if alpha < 0:
        raise UsageError(f"alpha must be nonnegative, got {alpha}")
    if isinstance(op, Diagonal):
        return _diag_deficiency(op, n, alpha)
    if isinstance(op, ShiftPolynomial):
        return _shift_deficiency(op, n, alpha)
    if isinstance(op, DenseMatrix):
        return _dense_deficiency(op, n, alpha), True
    raise UsageError(f"deficiency_norm is not defined for {type(op).__name__}")


def deficiency_norm(op: OperatorModel, n: int, alpha: float = 1.0) -> float:
    return _deficiency(op, int(n), float(alpha))[0]


def _power(op: OperatorModel, n: int) -> Tuple[float, bool]:
    if isinstance(op, BlockQ):
        return _q_power(op.base, op.alpha, n)
    if isinstance(op, Diagonal):
        return _diag_power(op, n)
    return _deficiency(op, n, 0.0)


def power_norm(op: OperatorModel, n: int) -> float:
    return _power(op, int(n))[0]


def power_bound(op: OperatorModel, N: int, ns: Optional[Sequence[int]] = None) -> float:
    """Running max of ||T^n|| over sampled n <= N."""
    ns = sample_ns(N) if ns is None else [n for n in ns if n <= N]
    if len(ns) == 0:
        raise UsageError(f"no sample n <= {N}")
    return max(power_norm(op, n) for n in ns)


def _resolvent(op: OperatorModel, lam: complex) -> Tuple[float, bool]:
    lam = complex(lam)
    if isinstance(op, Diagonal):
        value, certified = _diag_inverse_distance(op, lam)
        if not math.isfinite(value) or value >= 1.0 / SPECTRUM_MARGIN:
            raise DomainError(f"lambda={lam} lies in or too close to the spectrum of {op.name}")
        return value, certified
    if isinstance(op, ShiftPolynomial):
        if op.space == "l2":
            return _shift_resolvent_l2(op, lam)
        return _shift_resolvent_l1(op, lam)
    if isinstance(op, DenseMatrix):
        return _dense_resolvent(op, lam), True
    raise UsageError(f"resolvent_norm is not defined for {type(op).__name__}")


def resolvent_norm(op: OperatorModel, lam: complex) -> float:
    return _resolvent(op, lam)[0]


def frac_resolvent_sup(op: OperatorModel, alpha: float, grid: AnnulusGrid = AnnulusGrid()) -> float:
    """max over the annulus grid of ||(I-T)^alpha R(lambda, T)||."""
    if alpha < 1:
        raise UsageError(f"alpha must be >= 1, got {alpha}")
    radii, angles = grid.points()
    r_min = float(radii[0])

    if isinstance(op, Diagonal):
        # for |lambda_k| <= 1 the nearest grid point sits on the innermost ring
        sorted_angles = np.sort(angles)
        wrapped = np.concatenate([sorted_angles, [sorted_angles[0] + 2 * math.pi]])

        def values(k):
            lam = op.eigenvalues(k)
            phase = np.mod(np.angle(lam) - sorted_angles[0], 2 * math.pi) + sorted_angles[0]
            idx = np.clip(np.searchsorted(wrapped, phase), 1, wrapped.size - 1)
            d_lo = np.abs(r_min * np.exp(1j * wrapped[idx - 1]) - lam)
            d_hi = np.abs(r_min * np.exp(1j * wrapped[idx]) - lam)
            gap = _abs_one_minus_exp(op.schedule.log_modulus(k), op.schedule.angle(k))
            return gap ** alpha / np.minimum(d_lo, d_hi)

        def tail(K):
            return op.schedule.gap_bound(K) ** alpha / (r_min - 1.0)

        extra = [abs(1 - a) ** alpha / max(abs(r_min * np.exp(1j * angles) - a).min(), 1e-300)
                 for a in op.accumulation]
        value, certified = _scan_sup(op, values, tail, None, extra)
        if not certified:
            logger.warning(f"{op.name}: fractional resolvent sup not certified")
        return value

    if isinstance(op, DenseMatrix):
        A = np.asarray(op.matrix, dtype=complex)
        frac = _dense_frac(A, alpha)
        I = np.eye(A.shape[0])
        lams = (radii[:, None] * np.exp(1j * angles[None, :])).ravel()

        def at(lam):
            return matrix_norm(np.linalg.solve(lam * I - A, frac), op.space, op.seed)

        with concurrent.futures.ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
            return float(max(executor.map(at, lams)))

    raise UsageError(f"frac_resolvent_sup supports Diagonal and DenseMatrix, not {type(op).__name__}")


def q_power_norm(op: OperatorModel, alpha: float, n: int) -> float:
    """Norm of the n-th power of the block operator [[T, T(I-T)^alpha], [0, T]]."""
    return _q_power(op, alpha, n)[0]


def _q_power(op: OperatorModel, alpha: float, n: int) -> Tuple[float, bool]:
    if alpha < 1:
        raise UsageError(f"alpha must be >= 1, got {alpha}")
    n = int(n)
    if isinstance(op, Diagonal):
        sched = op.schedule

        def values(k):
            lm = sched.log_modulus(k)
            gap = _abs_one_minus_exp(lm, sched.angle(k))
            return _powers(lm, n) * (1.0 + n * gap ** alpha)

        if sched.tail_peak is not None:
            def tail(K):
                return 1.0 + n * sched.tail_peak(K, n, alpha)
        else:
            def tail(K):
                return 1.0 + n * sched.gap_bound(K) ** alpha

        extra = [abs(a) ** n * (1.0 + n * abs(1 - a) ** alpha) for a in op.accumulation]
        return _scan_sup(op, values, tail, None, extra)
    power, power_ok = _power(op, n)
    deficiency, deficiency_ok = _deficiency(op, n, alpha)
    return power + n * deficiency, power_ok and deficiency_ok


def q_power_bound(op: OperatorModel, alpha: float, ns: Sequence[int], threshold: Optional[float] = None) -> Dict:
    """Running sup of ||Q^n|| over ns, flagged against a power-boundedness threshold."""
    ns = list(ns)
    if not ns:
        raise UsageError("q_power_bound needs at least one n")
    results = [_q_power(op, alpha, n) for n in ns]
    values = np.array([value for value, _ in results])
    certified = all(ok for _, ok in results)
    if not certified:
        logger.warning(f"{op.name}: block power sup not certified for every n, values are lower bounds")
    if threshold is None:
        threshold = 10.0 * (1.0 + power_bound(op, max(ns), ns))
    running = float(np.max(values))
    return {"sup": running, "argmax": int(ns[int(np.argmax(values))]),
            "power_bounded": running <= threshold, "threshold": float(threshold),
            "certified": certified}


def truncation_oracle(op: OperatorModel, N: int) -> DenseMatrix:
    if not 1 <= N <= TRUNCATION_MAX:
        raise ResourceError(f"truncation size N={N} outside [1, {TRUNCATION_MAX}]")
    if isinstance(op, Diagonal):
        size = N if op.count is None else min(N, op.count)
        k = np.arange(op.start, op.start + size, dtype=np.int64)
        matrix = np.diag(op.eigenvalues(k))
    elif isinstance(op, ShiftPolynomial):
        matrix = np.zeros((N, N), dtype=complex)
        for j, c in enumerate(op.coefficients):
            if j < N:
                matrix += c * np.eye(N, k=j)
    elif isinstance(op, DenseMatrix):
        matrix = np.asarray(op.matrix)[:N, :N]
    else:
        raise UsageError(f"truncation_oracle is not defined for {type(op).__name__}")
    return DenseMatrix(f"{op.name}[{N}]", matrix, space=op.space)


def spectrum_description(op: OperatorModel) -> SpectrumDescription:
    if isinstance(op, Diagonal):
        if op.count is not None:
            points = tuple(complex(z) for z in op.eigenvalues(np.arange(op.start, op.start + op.count)))
        else:
            points = tuple(op.accumulation)
        contains_one = any(abs(z - 1) <= 1e-12 for z in points)
        peripheral = tuple(z for z in points if abs(z) >= 1 - 1e-12)
        return SpectrumDescription("point-set", points, contains_one, peripheral,
                                   formula=op.schedule.formula)

    if isinstance(op, ShiftPolynomial):
        t = np.linspace(-math.pi, math.pi, SYMBOL_GRID, endpoint=False)
        symbol = op.symbol(np.exp(1j * t))
        peripheral = tuple(complex(z) for z in np.unique(np.round(symbol[np.abs(symbol) >= 1 - 1e-12], 12)))
        contains_one = bool(np.any(np.abs(np.roots(_one_minus(op.coefficients)[::-1])) <= 1 + 1e-12)) \
            if op.degree > 0 else abs(op.coefficients[0] - 1) <= 1e-12
        boundary = None
        if op.name == "toeplitz_quarter":
            def boundary(theta):
                return (1.0 + np.cos(theta)) / 2.0
        return SpectrumDescription("symbol-region", (), contains_one, peripheral, boundary=boundary,
                                   formula="p(closed unit disc)")

    if isinstance(op, DenseMatrix):
        eig = np.linalg.eigvals(np.asarray(op.matrix, dtype=complex))
        points = tuple(complex(z) for z in eig)
        return SpectrumDescription("point-set", points, any(abs(z - 1) <= 1e-9 for z in points),
                                   tuple(z for z in points if abs(z) >= 1 - 1e-9), numerical=True)

    raise UsageError(f"spectrum_description is not available for {type(op).__name__}")


def spectrum_distance(op: OperatorModel, lam: complex) -> float:
    """dist(lambda, sigma(T)); 0 when lambda lies in the spectrum."""
    lam = complex(lam)
    if isinstance(op, Diagonal):
        inv, _ = _diag_inverse_distance(op, lam)
        return 0.0 if not math.isfinite(inv) else 1.0 / inv
    if isinstance(op, ShiftPolynomial):
        if op.degree > 0:
            roots, _ = _shift_roots(op, lam)
            if np.min(np.abs(roots)) <= 1.0:
                return 0.0
        return _symbol_distance(op, lam)
    desc = spectrum_description(op)
    return float(min(abs(lam - z) for z in desc.points))


# ---------------------------------------------------------------------------
# Curves and grids
# ---------------------------------------------------------------------------

def sample_ns(n_max: int, dense_upto: int = 64, ratio: float = 1.02, n_min: int = 0) -> np.ndarray:
    if n_max < n_min:
        raise UsageError(f"n_max={n_max} below n_min={n_min}")
    dense = np.arange(n_min, min(dense_upto, n_max) + 1)
    if n_max <= dense_upto:
        return dense
    count = int(math.ceil(math.log(n_max / dense_upto) / math.log(ratio))) + 1
    sparse = np.round(np.geomspace(dense_upto, n_max, count)).astype(np.int64)
    return np.unique(np.concatenate([dense, sparse]))


def theta_grid(op: OperatorModel, theta_min: float, points: int = 400, max_extra: int = 20000) -> np.ndarray:
    if not 0 < theta_min < math.pi:
        raise UsageError(f"theta_min must lie in (0, pi), got {theta_min}")
    grid = np.geomspace(theta_min, math.pi, points)
    if isinstance(op, Diagonal):
        hi = op.start + (op.count if op.count is not None else max_extra)
        k = op.indices(op.start, hi)
        lm = op.schedule.log_modulus(k)
        args = np.abs(op.schedule.angle(k))
        keep = (args >= theta_min) & (args <= math.pi) & (lm < -1e-15)
        grid = np.concatenate([grid, args[keep]])
    return np.unique(grid)


def _walk_shift_powers(op: ShiftPolynomial, ns: np.ndarray, alpha: float) -> np.ndarray:
    a = _check_integer_alpha(alpha)
    q = _poly_power(_one_minus(op.coefficients), a)
    out = np.empty(ns.size)
    current = np.array([1.0 + 0j])
    step = 0
    for i, n in enumerate(ns):
        while step < n:
            current = np.convolve(current, op.coefficients)
            step += 1
        out[i] = np.sum(np.abs(np.convolve(current, q)))
    return out


def decay_curve(op: OperatorModel, ns: Sequence[int], alpha: float = 1.0, max_workers: int = MAX_WORKERS) -> DecayCurve:
    ns = np.asarray(ns, dtype=np.int64)
    if isinstance(op, ShiftPolynomial) and op.space != "l2":
        values = _walk_shift_powers(op, ns, alpha)
        exact = np.ones(ns.size, dtype=bool)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(executor.map(lambda n: _deficiency(op, int(n), alpha), ns))
        values = np.array([r[0] for r in results])
        exact = np.array([r[1] for r in results])
    logger.info(f"Sampled decay curve of {op.name}: {ns.size} points up to n={ns[-1] if ns.size else 0}")
    return DecayCurve(alpha, ns, values, exact, operator=op.name)


def resolvent_curve(op: OperatorModel, thetas: Sequence[float], side: str = "both",
                    max_workers: int = MAX_WORKERS) -> ResolventCurve:
    thetas = np.asarray(thetas, dtype=float)

    def at(theta):
        if side == "plus":
            return _resolvent(op, cmath.exp(1j * theta))
        if side == "minus":
            return _resolvent(op, cmath.exp(-1j * theta))
        plus = _resolvent(op, cmath.exp(1j * theta))
        minus = _resolvent(op, cmath.exp(-1j * theta))
        return max(plus[0], minus[0]), plus[1] and minus[1]

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(at, thetas))
    logger.info(f"Sampled resolvent curve of {op.name}: {thetas.size} angles from {thetas[0]:.3e}")
    return ResolventCurve(thetas, np.array([r[0] for r in results]), side,
                          np.array([r[1] for r in results]), operator=op.name)


def moment_constant(op: OperatorModel, alpha: float, ns: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Smallest C with ||T^n(I-T)|| <= C ||T^n||^((alpha-1)/alpha) ||T^n(I-T)^alpha||^(1/alpha) on ns."""
    ratios = []
    for n in ns:
        lhs = deficiency_norm(op, n, 1.0)
        rhs = power_norm(op, n) ** ((alpha - 1) / alpha) * deficiency_norm(op, n, alpha) ** (1 / alpha)
        ratios.append(lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf))
    ratios = np.array(ratios)
    return float(np.max(ratios)), ratios


def toeplitz_blowup_constant(op: ShiftPolynomial, distances: Sequence[float]) -> Dict[str, float]:
    """Fitted K in ||R(lambda,T)|| <= K / (|1 - 2 sqrt(lambda)| - 1) as lambda -> 1."""
    if not isinstance(op, ShiftPolynomial) or op.name != "toeplitz_quarter":
        raise UsageError("toeplitz_blowup_constant needs the toeplitz_quarter operator")
    out = {}
    for label, make in (("real_axis", lambda d: 1.0 + d), ("unit_circle", lambda d: cmath.exp(1j * d))):
        ratios = []
        for d in distances:
            lam = complex(make(d))
            base = abs(1 - 2 * cmath.sqrt(lam)) - 1.0
            ratios.append(resolvent_norm(op, lam) * base)
        out[label] = float(max(ratios))
    return out
