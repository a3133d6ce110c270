import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import C_SWEEP, DEFAULT_C, LB_MARGIN, MAX_WORKERS
from ..errors import RangeError, UsageError
from .numerics_utils import MonotoneTable, invert_monotone
from .operators import (
    AnnulusGrid,
    DecayCurve,
    Diagonal,
    OperatorModel,
    ResolventCurve,
    _abs_one_minus_exp,
    deficiency_norm,
    factorial_epsilon,
    resolvent_norm,
)

logger = logging.getLogger(__name__)

CHECK_RTOL = 1e-9
LIMSUP_WINDOWS = 4
EXPONENTIAL_R2 = 0.999
TAIL_GROWTH = 2.0
RITT_GROWTH = 0.1
POLY_EXPONENT_TOL = 0.05
CRITERION_STEP_RISE = 0.05


@dataclass(frozen=True)
class DominatingFunction:
    table: MonotoneTable
    kind: str
    minimal: bool = False

    def __post_init__(self):
        if self.kind not in ("m", "omega", "m_log"):
            raise UsageError(f"Unknown dominating-function kind: {self.kind}")
        if self.table.direction != "decreasing":
            raise UsageError("dominating functions are decreasing")

    def __call__(self, x):
        return self.table(x)

    @property
    def arguments(self) -> np.ndarray:
        return self.table.arguments

    @property
    def values(self) -> np.ndarray:
        return self.table.values

    def inverse(self, target: float) -> float:
        return invert_monotone(self.table, target)


@dataclass
class BoundReport:
    name: str
    holds: bool
    applicable: bool = True
    witness_constants: Dict[str, float] = field(default_factory=dict)
    worst_point: Tuple[float, float, float] = (math.nan, math.nan, math.nan)
    margin: float = math.nan
    notes: str = ""

    @classmethod
    def not_applicable(cls, name: str, reason: str, **constants) -> "BoundReport":
        logger.info(f"{name}: not applicable ({reason})")
        return cls(name, holds=True, applicable=False, witness_constants=dict(constants), notes=reason)

    def to_row(self) -> Dict:
        constants = ";".join(f"{k}={float(v):.16e}" for k, v in self.witness_constants.items())
        return {
            "name": self.name,
            "applicable": int(self.applicable),
            "holds": int(self.holds),
            "worst_argument": float(self.worst_point[0]),
            "worst_lhs": float(self.worst_point[1]),
            "worst_rhs": float(self.worst_point[2]),
            "margin": float(self.margin),
            "constants": constants,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class PowerTail:
    """omega(n) ~ amplitude * n^-exponent beyond the sampled range."""
    amplitude: float
    exponent: float
    last_sampled: int

    def __call__(self, n):
        return self.amplitude * np.asarray(n, dtype=float) ** (-self.exponent)

    def omega_star(self, s: float) -> int:
        n = math.ceil((self.amplitude / s) ** (1.0 / self.exponent))
        return max(n, self.last_sampled + 1)


@dataclass(frozen=True)
class FitResult:
    exponent: float
    log_correction: float
    residual: float
    intercept: float
    window: Tuple[int, int]


@dataclass(frozen=True)
class DichotomyResult:
    verdict: str
    window_maxima: Tuple[Tuple[int, float], ...]
    rate: float = math.nan
    r_squared: float = math.nan

    def to_report(self) -> BoundReport:
        constants = {f"window_{j}": v for j, v in self.window_maxima}
        constants["rate"] = self.rate
        constants["r_squared"] = self.r_squared
        return BoundReport("dichotomy", holds=True, applicable=True, witness_constants=constants,
                           notes=f"verdict={self.verdict}; heuristic window statistic")


def _compare(args, lhs, rhs, tol: float = CHECK_RTOL) -> Tuple[bool, float, Tuple[float, float, float]]:
    """Relative margin of lhs <= rhs over samples; worst point is the smallest margin."""
    args = np.asarray(args, dtype=float)
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if args.size == 0:
        return True, math.nan, (math.nan, math.nan, math.nan)
    scale = np.maximum(np.abs(rhs), 1e-300)
    margins = (rhs - lhs) / scale + tol
    i = int(np.argmin(margins))
    return bool(margins[i] >= 0), float(margins[i]), (float(args[i]), float(lhs[i]), float(rhs[i]))


def _reverse_cummax(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values[::-1])[::-1]


def minimal_dominating_from_curve(curve: Union[DecayCurve, ResolventCurve]) -> DominatingFunction:
    if isinstance(curve, DecayCurve):
        if curve.ns.size == 0:
            raise UsageError("empty decay curve")
        return DominatingFunction(MonotoneTable(curve.ns.astype(float), _reverse_cummax(curve.values)), "omega",
                                  minimal=True)
    if isinstance(curve, ResolventCurve):
        return DominatingFunction(MonotoneTable(curve.thetas, _reverse_cummax(curve.values)), "m", minimal=True)
    raise UsageError(f"expected a DecayCurve or ResolventCurve, got {type(curve).__name__}")


def dominating_from_function(func: Callable, arguments: Sequence[float], kind: str = "m") -> DominatingFunction:
    """Tabulate an analytic dominating function on the given grid."""
    args = np.asarray(arguments, dtype=float)
    return DominatingFunction(MonotoneTable(args, np.asarray(func(args), dtype=float)), kind)


def fit_rate(curve: DecayCurve, window: Optional[Tuple[int, int]] = None, with_log: bool = True) -> FitResult:
    """Least-squares fit of log omega(n) = a - p log n + q log log n over the window."""
    lo, hi = window if window is not None else (int(curve.ns[0]), int(curve.ns[-1]))
    mask = (curve.ns >= max(lo, 2 if with_log else 1)) & (curve.ns <= hi)
    ns = curve.ns[mask].astype(float)
    values = curve.values[mask]
    if ns.size < 8:
        raise UsageError(f"fit_rate needs at least 8 samples in [{lo}, {hi}], got {ns.size}")
    if np.any(values <= 0):
        raise UsageError("fit_rate needs positive values in the window")
    columns = [np.ones_like(ns), -np.log(ns)]
    if with_log:
        columns.append(np.log(np.log(ns)))
    design = np.column_stack(columns)
    target = np.log(values)
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    residual = float(np.sqrt(np.mean((design @ coef - target) ** 2)))
    q = float(coef[2]) if with_log else 0.0
    return FitResult(float(coef[1]), q, residual, float(coef[0]), (int(lo), int(hi)))


def power_tail(omega: DominatingFunction, fraction: float = 0.25) -> Optional[PowerTail]:
    ns, values = omega.arguments, omega.values
    keep = (values > 0) & (ns >= 1)
    ns, values = ns[keep], values[keep]
    if ns.size < 8:
        return None
    start = int(ns.size * (1 - fraction))
    ns, values = ns[start:], values[start:]
    if ns.size < 2:
        return None
    slope, intercept = np.polyfit(np.log(ns), np.log(values), 1)
    if slope >= 0:
        return None
    return PowerTail(float(math.exp(intercept)), float(-slope), int(omega.arguments[-1]))


def omega_star(omega: DominatingFunction, s: float, tail: Optional[PowerTail] = None) -> int:
    if s <= 0:
        raise UsageError(f"omega_star needs s > 0, got {s}")
    values = omega.values
    hits = np.nonzero(values <= s)[0]
    if hits.size:
        return int(omega.arguments[hits[0]])
    if tail is None:
        raise RangeError(f"s={s} below the sampled range of omega (min {values[-1]:.3e})")
    return tail.omega_star(s)


def _omega_star_or_tail(omega, s, tail) -> Tuple[float, bool]:
    try:
        return float(omega_star(omega, s)), True
    except RangeError:
        if tail is None:
            return math.nan, False
        return float(tail.omega_star(s)), False


def build_m_log(m: DominatingFunction) -> DominatingFunction:
    """m_log(theta) = m(theta) log(1 + m(theta)/theta), tabulated on m's grid."""
    if np.any(m.values <= 0):
        raise UsageError("m must be positive")
    thetas = m.arguments
    values = m.values * np.log1p(m.values / thetas)
    return DominatingFunction(MonotoneTable(thetas, values), "m_log", minimal=m.minimal)


def _degenerate_omega(omega: DominatingFunction) -> Optional[str]:
    values = omega.values
    if np.all(values == 0):
        return "I - T vanishes on the samples"
    if values[-1] >= 0.5 * values[0]:
        return "omega does not tend to 0 on the sampled range"
    return None


def check_resolvent_upper(m_curve: ResolventCurve, omega: DominatingFunction, c: float = DEFAULT_C,
                          M_hat: float = 1.0, tail: Optional[PowerTail] = None) -> BoundReport:
    """||R(e^{i theta})|| <= K (1/theta + omega*(c theta)), with the proved constant checked where sampled."""
    name = f"resolvent_upper[c={c:g}]"
    if not 0 < c < 1:
        raise UsageError(f"c must lie in (0, 1), got {c}")
    reason = _degenerate_omega(omega)
    if reason:
        return BoundReport.not_applicable(name, reason)
    if tail is None:
        tail = power_tail(omega)

    b = 0.5 * (1.0 + c)
    ratios = []
    args, lhs, rhs = [], [], []
    extrapolated = 0
    for theta, value in zip(m_curve.thetas, m_curve.values):
        w, _ = _omega_star_or_tail(omega, c * theta, tail)
        if math.isfinite(w):
            ratios.append(value / (1.0 / theta + w))
        gap = 2.0 * math.sin(theta / 2.0)
        wb, exact = _omega_star_or_tail(omega, b * gap, None)
        if not exact:
            extrapolated += 1
            continue
        args.append(theta)
        lhs.append(value)
        rhs.append(M_hat / (1.0 - b) * (1.0 / gap + wb))

    holds, margin, worst = _compare(args, lhs, rhs)
    constants = {
        "K_fit": max(ratios) if ratios else math.nan,
        "K_proof": M_hat / (1.0 - b),
        "b": b,
        "theta_min": float(m_curve.thetas[0]),
        "theta_max": float(m_curve.thetas[-1]),
        "extrapolated": float(extrapolated),
    }
    if not holds:
        logger.warning(f"{name}: violated at theta={worst[0]:.3e} ({worst[1]:.6e} > {worst[2]:.6e})")
    return BoundReport(name, holds, True, constants, worst, margin,
                       notes=f"{len(args)} checked, {extrapolated} beyond sampled omega")


def check_lower_envelope(omega_curve: DecayCurve, m: DominatingFunction, C: Optional[float] = None,
                         c: Optional[float] = None, M_hat: float = 1.0, lb_margin: float = LB_MARGIN) -> BoundReport:
    """||T^n(I-T)|| >= c m^{-1}(C n) for n in the regime theta_n m(theta_n) > C, theta_n = 2 omega(n)."""
    name = "lower_envelope"
    thetas, mvals = m.arguments, m.values
    decade = thetas <= 10.0 * thetas[0]
    L_hat = float(np.min(thetas[decade] * mvals[decade]))
    if L_hat <= lb_margin * M_hat:
        return BoundReport.not_applicable(name, f"theta m(theta) stays near {L_hat:.3g}", L_hat=L_hat)

    omega = minimal_dominating_from_curve(omega_curve)
    if np.all(omega.values == 0):
        return BoundReport.not_applicable(name, "I - T vanishes on the samples", L_hat=L_hat)

    fits = []
    for theta, mv in zip(thetas, mvals):
        w, exact = _omega_star_or_tail(omega, theta / 2.0, None)
        if exact:
            fits.append(mv / (1.0 / theta + w))
    if not fits:
        return BoundReport.not_applicable(name, "omega never reaches theta/2 on the samples", L_hat=L_hat)
    B = max(fits)
    C = 2.0 * B if C is None else C
    c = 1.0 / (2.0 * M_hat) if c is None else c

    def envelope(C_value):
        rows, dropped = [], 0
        for n, value, w in zip(omega_curve.ns, omega_curve.values, omega.values):
            if n < 1:
                continue
            theta_n = 2.0 * w
            if not thetas[0] <= theta_n <= thetas[-1] or theta_n * float(m(theta_n)) <= C_value:
                dropped += 1
                continue
            try:
                rows.append((int(n), float(value), m.inverse(C_value * n)))
            except RangeError:
                dropped += 1
        return rows, dropped

    rows, dropped = envelope(C)
    if not rows:
        return BoundReport.not_applicable(name, "no sampled n inside the asymptotic regime", L_hat=L_hat, B=B,
                                          dropped=float(dropped))
    ns = [r[0] for r in rows]
    # the bound reads lhs >= rhs, compared as rhs <= lhs
    holds, margin, worst = _compare(ns, [c * r[2] for r in rows], [r[1] for r in rows])
    worst = (worst[0], worst[2], worst[1])

    best_c, best_C = 0.0, C
    for scale in 2.0 ** np.arange(-4, 5):
        swept, _ = envelope(C * scale)
        if swept:
            c_fit = min(v / t for _, v, t in swept)
            if c_fit > best_c:
                best_c, best_C = c_fit, C * scale
    constants = {"L_hat": L_hat, "B": B, "C": C, "c": c, "c_fit": best_c, "C_fit": best_C, "n0": float(ns[0]),
                 "dropped": float(dropped)}
    if not holds:
        logger.warning(f"{name}: violated at n={worst[0]:.0f}")
    return BoundReport(name, holds, True, constants, worst, margin,
                       notes=f"n in [{ns[0]}, {ns[-1]}], {dropped} n outside the regime or the tabulated range")


def _check_inverse_upper(name: str, curve: DecayCurve, fn: DominatingFunction, c: float) -> BoundReport:
    if not 0 < c < 1:
        raise UsageError(f"c must lie in (0, 1), got {c}")
    rows = []
    for n, value in zip(curve.ns, curve.values):
        if n < 1:
            continue
        try:
            rows.append((int(n), float(value), fn.inverse(c * n)))
        except RangeError:
            continue
    if not rows:
        return BoundReport.not_applicable(name, "c n never falls inside the tabulated range")
    ratios = np.array([v / t for _, v, t in rows])
    C = float(np.max(ratios))
    split = max(1, (2 * len(rows)) // 3)
    head = float(np.max(ratios[:split]))
    tail = float(np.max(ratios[split:])) if len(rows) > split else head
    holds = tail <= TAIL_GROWTH * head or tail == 0.0
    i = int(np.argmax(ratios))
    constants = {"C": C, "c": c, "head_ratio": head, "tail_ratio": tail,
                 "n_min": float(rows[0][0]), "n_max": float(rows[-1][0])}
    margin = 1.0 - tail / (TAIL_GROWTH * head) if head > 0 else 1.0
    if not holds:
        logger.warning(f"{name}: ratio grows from {head:.3e} to {tail:.3e}")
    return BoundReport(name, holds, True, constants, (rows[i][0], rows[i][1], C * rows[i][2]), margin,
                       notes=f"n in [{rows[0][0]}, {rows[-1][0]}]; "
                             f"holds when tail ratio <= {TAIL_GROWTH:g} x head ratio (growth heuristic)")


def check_mlog_upper(omega_curve: DecayCurve, m: DominatingFunction, c: float = DEFAULT_C,
                     peripheral_ok: bool = True) -> BoundReport:
    """||T^n(I-T)|| <= C m_log^{-1}(c n) with a single fitted C."""
    name = f"mlog_upper[c={c:g}]"
    if not peripheral_ok:
        return BoundReport.not_applicable(name, "spectrum meets the unit circle outside 1")
    return _check_inverse_upper(name, omega_curve, build_m_log(m), c)


def check_minv_upper(omega_curve: DecayCurve, m: DominatingFunction, c: float = DEFAULT_C) -> BoundReport:
    """||T^n(I-T)|| <= C m^{-1}(c n), the Ritt-class upper bound."""
    return _check_inverse_upper(f"minv_upper[c={c:g}]", omega_curve, m, c)


def ray_resolvent_sup(op: OperatorModel, grid: AnnulusGrid, max_workers: int = MAX_WORKERS) -> float:
    """max over the annulus grid of |1 - lambda| ||R(lambda, T)||."""
    radii, angles = grid.points()
    lams = (radii[:, None] * np.exp(1j * angles[None, :])).ravel()

    def at(lam):
        return abs(1 - lam) * resolvent_norm(op, lam)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        return float(max(executor.map(at, lams)))


def _dyadic_window_maxima(ns: np.ndarray, values: np.ndarray) -> List[Tuple[int, float]]:
    out = []
    positive = ns >= 1
    ns, values = ns[positive], values[positive]
    if ns.size == 0:
        return out
    j_max = int(math.floor(math.log2(ns[-1])))
    for j in range(j_max + 1):
        inside = (ns >= 2 ** j) & (ns < 2 ** (j + 1))
        if np.any(inside):
            out.append((j, float(np.max(values[inside]))))
    return out


def ritt_constants(decay: DecayCurve, ray_sup: float, ray_sup_refined: Optional[float] = None) -> BoundReport:
    """sup (n+1) omega(n) and sup |1-lambda| ||R||, with the Ritt implication checked."""
    omega = minimal_dominating_from_curve(decay)
    ns = omega.arguments
    scaled = (ns + 1.0) * omega.values
    sup_decay = float(np.max(scaled))

    growth = 0.0
    keep = (ns >= 1) & (scaled > 0)
    if np.count_nonzero(keep) >= 8:
        x, y = np.log(ns[keep]), np.log(scaled[keep])
        half = x.size // 2
        growth = float(np.polyfit(x[half:], y[half:], 1)[0])
    decay_bounded = growth <= RITT_GROWTH

    stable = ray_sup_refined is None or abs(ray_sup_refined - ray_sup) <= 0.1 * ray_sup
    resolvent_ritt = math.isfinite(ray_sup) and stable
    ritt = decay_bounded and resolvent_ritt
    holds = decay_bounded or not resolvent_ritt
    windows = _dyadic_window_maxima(ns, scaled)
    constants = {
        "sup_decay": sup_decay,
        "sup_resolvent": ray_sup,
        "sup_resolvent_refined": math.nan if ray_sup_refined is None else ray_sup_refined,
        "growth_exponent": growth,
        "last_window": windows[-1][1] if windows else 0.0,
        "ritt": float(ritt),
    }
    i = int(np.argmax(scaled))
    if not holds:
        logger.warning(f"ritt_constants: resolvent is Ritt but (n+1) omega(n) grows like n^{growth:.3f}")
    return BoundReport("ritt_constants", holds, True, constants, (float(ns[i]), sup_decay, math.nan),
                       1.0 if holds else -1.0, notes="ritt" if ritt else "not ritt")


def dichotomy_diagnostic(curve: DecayCurve) -> DichotomyResult:
    if curve.ns.size < 32:
        raise UsageError(f"dichotomy_diagnostic needs at least 32 samples, got {curve.ns.size}")
    omega = minimal_dominating_from_curve(curve)
    ns, values = omega.arguments, omega.values
    windows = tuple(_dyadic_window_maxima(ns, ns * values))

    if np.all(values[ns >= 1] == 0):
        return DichotomyResult("exponential-with-split", windows, rate=math.inf, r_squared=1.0)

    if len(windows) >= LIMSUP_WINDOWS:
        top = max(v for _, v in windows)
        if top > 0 and all(v >= 0.5 * top for _, v in windows[-LIMSUP_WINDOWS:]):
            return DichotomyResult("limsup-positive", windows)

    keep = values > 0
    if np.count_nonzero(keep) >= 8:
        x, y = ns[keep], np.log(values[keep])
        slope, intercept = np.polyfit(x, y, 1)
        fitted = slope * x + intercept
        total = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum((y - fitted) ** 2)) / total if total > 0 else 1.0
        if slope < 0 and r2 >= EXPONENTIAL_R2:
            return DichotomyResult("exponential-with-split", windows, rate=float(-slope), r_squared=r2)
        return DichotomyResult("inconclusive", windows, rate=float(-slope), r_squared=r2)
    return DichotomyResult("inconclusive", windows)


def _log_criterion_B(m: DominatingFunction, theta: float, b: float) -> float:
    # max over theta' >= theta; theta' = theta gives -1
    keep = m.arguments >= theta
    level = float(m(theta))
    return float(np.max(b * np.log(m.arguments[keep] / theta) - level / m.values[keep], initial=-1.0))


def _criterion_running_max(m: DominatingFunction, thetas: Sequence[float], b: float) -> List[float]:
    running, out = -math.inf, []
    hi = thetas[0]
    for theta in thetas:
        window = m.arguments[(m.arguments >= theta) & (m.arguments < hi)]
        running = max([running, _log_criterion_B(m, theta, b)] + [_log_criterion_B(m, float(t), b) for t in window])
        hi = min(hi, theta)
        out.append(running)
    return out


def normal_log_criterion(m: DominatingFunction, S: Sequence[int], b: float, c: float,
                         omega_curve: Optional[DecayCurve] = None) -> BoundReport:
    """Log criterion along theta_n = m^{-1}(c n), n in S.

    B_n is the sup over grid angles theta in [theta_n, theta_{n_1}] of
    max over theta' >= theta of b log(theta'/theta) - m(theta)/m(theta').
    The criterion is reported divergent when B_n still rises by b * CRITERION_STEP_RISE
    at every step over the second half of S.
    """
    name = f"normal_log[b={b:g},c={c:g}]"
    if not 0 < b < c:
        raise UsageError(f"need 0 < b < c, got b={b}, c={c}")
    S = sorted(set(int(n) for n in S))
    thetas, used = [], []
    for n in S:
        try:
            thetas.append(m.inverse(c * n))
        except RangeError:
            logger.debug(f"{name}: c*n={c * n:.3e} outside m's range")
            continue
        used.append(n)
    if not used:
        return BoundReport.not_applicable(name, "no n in S with m^{-1}(c n) on the grid")

    B_hat = _criterion_running_max(m, thetas, b)
    constants = {f"B_{n}": v for n, v in zip(used, B_hat)}
    constants["theta_threshold"] = float(min(thetas))
    steps = np.diff(B_hat)[max(len(B_hat) // 2 - 1, 0):]
    diverges = len(B_hat) >= 3 and bool(np.all(steps >= b * CRITERION_STEP_RISE))
    constants["criterion_bounded"] = float(not diverges)
    if diverges:
        logger.info(f"{name}: B_n still rising at n={used[-1]} ({B_hat[-1]:.4g})")
        return BoundReport(name, True, False, constants,
                           notes="criterion diverges along S; the decay conclusion is not implied")

    B_dir2 = []
    for n in used:
        try:
            B_dir2.append(_log_criterion_B(m, m.inverse(b * n), b))
        except RangeError:
            continue
    B = max(max(B_hat + B_dir2), 0.0)
    C = 2.0 * max(math.exp(B / b), b)
    constants.update({"B": B, "C": C})
    if omega_curve is None:
        return BoundReport(name, True, True, constants, notes="criterion bounded; no decay curve supplied")

    omega = minimal_dominating_from_curve(omega_curve)
    args, lhs, rhs = [], [], []
    for n in used:
        idx = np.searchsorted(omega.arguments, n, side="right") - 1
        if idx < 0:
            continue
        try:
            bound = C * m.inverse(b * n)
        except RangeError:
            continue
        args.append(n)
        lhs.append(float(omega.values[idx]))
        rhs.append(bound)
    holds, margin, worst = _compare(args, lhs, rhs)
    return BoundReport(name, holds, True, constants, worst, margin, notes="criterion bounded")


def check_poly_bounds(curve: DecayCurve, alpha: float, window: Optional[Tuple[int, int]] = None) -> BoundReport:
    """c n^{-1/alpha} <= ||T^n(I-T)|| <= C (log n / n)^{1/alpha} with fitted c, C and exponent."""
    name = f"poly_bounds[alpha={alpha:g}]"
    fit = fit_rate(curve, window, with_log=False)
    lo, hi = fit.window
    mask = (curve.ns >= max(lo, 3)) & (curve.ns <= hi)
    ns = curve.ns[mask].astype(float)
    values = curve.values[mask]
    c_fit = float(np.min(values * ns ** (1.0 / alpha)))
    C_fit = float(np.max(values / (np.log(ns) / ns) ** (1.0 / alpha)))
    deviation = abs(fit.exponent - 1.0 / alpha)
    holds = deviation <= POLY_EXPONENT_TOL and c_fit > 0 and math.isfinite(C_fit)
    constants = {"exponent": fit.exponent, "c": c_fit, "C": C_fit, "residual": fit.residual,
                 "n_min": float(lo), "n_max": float(hi)}
    return BoundReport(name, holds, True, constants, (float(hi), fit.exponent, 1.0 / alpha),
                       POLY_EXPONENT_TOL - deviation)


def check_hilbert_decay(op: Diagonal, alpha: float, ns: Sequence[int], M_hat: float, B_hat: float,
                        vectors: int = 20, seed: int = 0, support: int = 64) -> BoundReport:
    """(n+2)||T^n(I-T)^alpha|| <= 2 M^2 B and the weighted square-sum bound on random unit vectors."""
    name = f"hilbert_decay[alpha={alpha:g}]"
    if not isinstance(op, Diagonal):
        raise UsageError("check_hilbert_decay needs a diagonal model")
    if op.space != "l2":
        return BoundReport.not_applicable(name, f"{op.space} is not a Hilbert space")
    # |lambda| >= 2 is covered by |lambda - lambda_k| >= 1
    B = max(B_hat, deficiency_norm(op, 0, alpha))
    ns = [int(n) for n in ns]
    lhs = [(n + 2) * deficiency_norm(op, n, alpha) for n in ns]
    bound = 2.0 * M_hat ** 2 * B
    holds, margin, worst = _compare(ns, lhs, [bound] * len(ns))

    size = support if op.count is None else min(support, op.count)
    k = np.arange(op.start, op.start + size, dtype=np.int64)
    log_mod = op.schedule.log_modulus(k)
    gap = _abs_one_minus_exp(log_mod, op.schedule.angle(k)) ** (2 * alpha)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((vectors, size)) + 1j * rng.standard_normal((vectors, size))
    weights = np.abs(x / np.linalg.norm(x, axis=1, keepdims=True)) ** 2
    sums_ok = True
    worst_sum = -math.inf
    for n in [n for n in ns if n <= 10 ** 5][-8:]:
        steps = np.arange(n + 1, dtype=float)
        with np.errstate(invalid="ignore"):
            decay = np.exp(2.0 * np.outer(steps, log_mod))
        decay[0, :] = 1.0
        per_coordinate = ((steps + 1) ** 2 @ decay) * gap
        totals = weights @ per_coordinate
        limit = M_hat ** 2 * B ** 2 * (n + 1)
        worst_sum = max(worst_sum, float(np.max(totals)) / limit)
        sums_ok = sums_ok and bool(np.all(totals <= limit * (1 + CHECK_RTOL)))
    constants = {"M_hat": M_hat, "B_hat": B_hat, "B": B, "bound": bound,
                 "sup_scaled": max(lhs) if lhs else math.nan, "square_sum_ratio": worst_sum}
    return BoundReport(name, holds and sums_ok, True, constants, worst, margin,
                       notes=f"{vectors} random vectors on the first {size} coordinates")


def factorial_witness(op: Diagonal, b: float, ks: Sequence[int]) -> BoundReport:
    """|lambda_{k!+1}^{n_k} (1 - lambda_{k!+1})| (k+1)! >= k / (3 e^{2/b}), n_k = ceil(-1/(b log r_{(k+1)!}))."""
    name = f"factorial_witness[b={b:g}]"
    if op.name != "factorial_diagonal":
        raise UsageError("factorial_witness needs the factorial_diagonal operator")
    constants, args, lhs, rhs = {}, [], [], []
    for k in ks:
        j = math.factorial(k) + 1
        top = math.factorial(k + 1)
        n_k = math.ceil(1.0 / (b * float(factorial_epsilon(top))))
        log_mod = float(op.schedule.log_modulus(np.array([j]))[0])
        gap = float(_abs_one_minus_exp(log_mod, 1.0 / j))
        value = math.exp(n_k * log_mod) * gap
        ratio = value * top
        constants[f"n_{k}"] = float(n_k)
        constants[f"ratio_{k}"] = ratio
        args.append(k)
        lhs.append(k / (3.0 * math.exp(2.0 / b)))
        rhs.append(ratio)
    holds, margin, worst = _compare(args, lhs, rhs)
    return BoundReport(name, holds, True, constants, worst, margin,
                       notes="ratio = |lambda^n (1 - lambda)| (k+1)! against k / (3 e^{2/b})")


def c_sweep_reports(check: Callable[..., BoundReport], *args, sweep: Sequence[float] = C_SWEEP, **kwargs) -> List[BoundReport]:
    return [check(*args, c=c, **kwargs) for c in sweep]
