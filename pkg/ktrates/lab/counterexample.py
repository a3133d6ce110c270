import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
import pandas as pd

from ..config import BETA_FACTOR
from ..errors import DomainError, RangeError, SearchFailure, UsageError
from .numerics_utils import LogComplex, invert_monotone, log_binomial, log_binomial_array, log_sum_polar

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
ROUNDING_LIMIT = 1e-3
CLOSED_FORM_RTOL = 1e-9


@dataclass(frozen=True)
class AlphaGeometry:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 2:
            raise UsageError(f"the construction needs alpha > 2, got {self.alpha}")

    @property
    def beta_range(self) -> Tuple[float, float]:
        return self.alpha / 32.0, self.alpha / 16.0


@dataclass(frozen=True)
class MeasureParams:
    alpha: float
    theta: float
    beta: float
    ell: int
    B_ell: float
    lambda0: complex
    n0: int
    n1: int
    ell_exact: float
    rounding_error: float
    admissible: bool = True

    @property
    def log_B(self) -> float:
        return math.log(self.B_ell)


def k_alpha(geom: AlphaGeometry, lam: complex) -> float:
    """|arg lambda|^alpha / (2 pi^alpha)."""
    if lam == 0:
        raise DomainError("K_alpha is undefined at 0")
    phase = math.atan2(complex(lam).imag, complex(lam).real)
    return abs(phase) ** geom.alpha / (2.0 * math.pi ** geom.alpha)


def k_alpha_array(geom: AlphaGeometry, lams: np.ndarray) -> np.ndarray:
    return np.abs(np.angle(lams)) ** geom.alpha / (2.0 * math.pi ** geom.alpha)


def region_membership(geom: AlphaGeometry, lam: complex) -> str:
    lam = complex(lam)
    if lam == 0 or abs(lam) <= 1.0 - k_alpha(geom, lam):
        return "Omega"
    if abs(lam) < 2.0:
        return "Theta"
    return "outside"


def _in_theta(geom: AlphaGeometry, lams: np.ndarray) -> np.ndarray:
    mod = np.abs(lams)
    return (mod > 1.0 - k_alpha_array(geom, lams)) & (mod < 2.0) & (lams != 0)


def _build_params(geom: AlphaGeometry, theta: float, beta: float, ell: int, ell_exact: float, n0: int,
                  admissible: bool) -> MeasureParams:
    B = 2.0 * ell * math.log2(ell)
    return MeasureParams(
        alpha=geom.alpha,
        theta=theta,
        beta=beta,
        ell=ell,
        B_ell=B,
        lambda0=0.5 * complex(math.cos(theta), math.sin(theta)),
        n0=n0,
        n1=2 * ell - 4,
        ell_exact=ell_exact,
        rounding_error=abs(ell - ell_exact) / ell_exact,
        admissible=admissible,
    )


def _ell_of_theta(alpha: float, beta: float, theta: float) -> float:
    return -beta * theta ** (-alpha) * math.log(theta)


def _invariants(geom: AlphaGeometry, theta: float, beta: float, ell: int, ell_exact: float, n0: int) -> Dict[str, bool]:
    lo, hi = geom.beta_range
    return {
        "theta": 0 < theta < 0.5,
        "beta": lo < beta < hi,
        "ell_vs_n0": ell > n0 / 2.0 + 2,
        "theta_power": theta ** (-(geom.alpha - 2)) > 2 * geom.alpha / beta + 1,
        "rounding": abs(ell - ell_exact) / ell_exact <= ROUNDING_LIMIT,
        "ell_min": ell >= 3,
    }


def choose_params(geom: AlphaGeometry, n0: int, beta: Optional[float] = None, points: int = 4000,
                  theta_floor: float = 1e-6) -> MeasureParams:
    """First admissible parameter set on a log grid of theta descending from 1/2."""
    if n0 < 1:
        raise UsageError(f"n0 must be positive, got {n0}")
    beta = BETA_FACTOR * geom.alpha if beta is None else beta
    failures: Dict[str, int] = {}
    for theta in np.geomspace(0.5, theta_floor, points)[1:]:
        theta = float(theta)
        ell_exact = _ell_of_theta(geom.alpha, beta, theta)
        if not math.isfinite(ell_exact) or ell_exact > 1e12:
            break
        ell = int(round(ell_exact))
        if ell < 1:
            continue
        checks = _invariants(geom, theta, beta, ell, ell_exact, n0)
        if all(checks.values()):
            params = _build_params(geom, theta, beta, ell, ell_exact, n0, admissible=True)
            logger.info(f"Chose theta={theta:.6g}, ell={ell}, n1={params.n1} for alpha={geom.alpha}, n0={n0}")
            return params
        for key, ok in checks.items():
            if not ok:
                failures[key] = failures.get(key, 0) + 1
    raise SearchFailure(f"no admissible parameters for alpha={geom.alpha}, n0={n0}",
                        diagnostics={"beta": beta, "theta_floor": theta_floor, "failures": failures})


def params_for_ell(geom: AlphaGeometry, ell: int, beta: Optional[float] = None, n0: Optional[int] = None) -> MeasureParams:
    """Parameters with a prescribed ell; theta solves ell = -beta theta^-alpha log theta."""
    if ell < 3:
        raise UsageError(f"ell must be at least 3, got {ell}")
    beta = BETA_FACTOR * geom.alpha if beta is None else beta
    n0 = max(1, 2 * ell - 5) if n0 is None else n0
    try:
        theta = invert_monotone(lambda t: _ell_of_theta(geom.alpha, beta, t), float(ell), bracket=(1e-12, 0.5))
    except RangeError:
        raise UsageError(f"ell={ell} is below -beta 2^alpha log(1/2) for beta={beta}")
    checks = _invariants(geom, theta, beta, ell, float(ell), n0)
    params = _build_params(geom, theta, beta, ell, _ell_of_theta(geom.alpha, beta, theta), n0,
                           admissible=all(checks.values()))
    if not params.admissible:
        logger.debug(f"ell={ell}: desk parameters, failing {[k for k, ok in checks.items() if not ok]}")
    return params


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def _c_transform_log(params: MeasureParams, lams: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lams = np.asarray(lams, dtype=complex)
    ell = params.ell
    num_mag = LOG2 + 0.5 * math.log(ell) + np.log(np.abs(lams)) + LOG2
    num_phase = np.angle(lams) - params.theta
    diff = lams - params.lambda0
    a_mag = ell * (LOG2 + np.log(np.abs(diff)))
    a_phase = ell * np.angle(diff)
    b_mag = np.full_like(a_mag, -ell * params.log_B)
    den_mag, den_phase = log_sum_polar(np.stack([a_mag, b_mag], axis=-1),
                                       np.stack([a_phase, np.full_like(a_phase, math.pi)], axis=-1))
    if np.any(np.isneginf(den_mag)):
        raise DomainError("lambda is an atom of the measure")
    return num_mag - den_mag, num_phase - den_phase


def c_transform(params: MeasureParams, lam: complex) -> LogComplex:
    """(lambda/lambda0) 2 ell^{1/2} / (2^ell (lambda - lambda0)^ell - B^-ell), in log domain."""
    geom = AlphaGeometry(params.alpha)
    if region_membership(geom, lam) != "Theta":
        raise DomainError(f"lambda={lam} is not in Theta_alpha")
    mag, phase = _c_transform_log(params, np.array([lam]))
    return LogComplex(float(mag[0]), float(phase[0]))


def _moment_log(params: MeasureParams, k: int, shift: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Terms C(k, s ell - 1) (2 B lambda0)^-(s ell - 1), s = 1..floor((k+1)/ell), as log-polar arrays."""
    s_max = (k + 1) // params.ell
    if s_max < 1:
        return np.array([-np.inf]), np.array([0.0])
    j = np.arange(1, s_max + 1) * params.ell - 1
    log_base = math.log(2.0 * params.B_ell * abs(params.lambda0))
    return log_binomial_array(k, j) - j * log_base, -j * params.theta


def l_transform(params: MeasureParams, k: int) -> LogComplex:
    """ell^{1/2} B^{ell-1} lambda0^{k-1} sum_r C(k, r ell - 1) / (2 B lambda0)^{r ell - 1}."""
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    mags, phases = _moment_log(params, k)
    s_mag, s_phase = log_sum_polar(mags, phases)
    if np.isneginf(s_mag):
        return LogComplex.zero()
    prefix = 0.5 * math.log(params.ell) + (params.ell - 1) * params.log_B + (k - 1) * math.log(abs(params.lambda0))
    return LogComplex(float(prefix + s_mag), float(s_phase + (k - 1) * params.theta))


def l_transform_abs(params: MeasureParams, ks: Sequence[int]) -> np.ndarray:
    return np.array([math.exp(l_transform(params, int(k)).log_mag) for k in ks])


def d_transform(params: MeasureParams, n: int) -> LogComplex:
    """int z^n (1 - z) dmu(z) as one reduced binomial sum."""
    if n < 0:
        raise UsageError(f"n must be nonnegative, got {n}")
    ell = params.ell
    s_max = (n + 3) // ell
    if s_max < 1:
        return LogComplex.zero()
    j = np.arange(1, s_max + 1) * ell - 1
    log_base = math.log(2.0 * params.B_ell * abs(params.lambda0))
    log_l0 = math.log(abs(params.lambda0))
    first = log_binomial_array(n + 1, j) - j * log_base
    second = log_l0 + log_binomial_array(n + 2, j) - j * log_base
    mags = np.concatenate([first, second])
    phases = np.concatenate([-j * params.theta, params.theta + math.pi - j * params.theta])
    s_mag, s_phase = log_sum_polar(mags, phases)
    if np.isneginf(s_mag):
        return LogComplex.zero()
    prefix = 0.5 * math.log(ell) + (ell - 1) * params.log_B + n * log_l0
    value = LogComplex(float(prefix + s_mag), float(s_phase + n * params.theta))
    if n == params.n1:
        closed = d_closed_form(params)
        if abs(closed - value.log_mag) > CLOSED_FORM_RTOL * max(1.0, abs(closed)):
            logger.warning(f"D(n1) closed form {closed:.12e} disagrees with the reduced sum {value.log_mag:.12e}")
    return value


def d_closed_form(params: MeasureParams) -> float:
    """log |D(n1)| = log(ell^{1/2} 4^{-(ell-2)} C(2 ell - 2, ell - 1) |1/2 - lambda0|)."""
    ell = params.ell
    return (0.5 * math.log(ell) - 2 * (ell - 2) * LOG2 + log_binomial(2 * ell - 2, ell - 1)
            + math.log(abs(0.5 - params.lambda0)))


def _atoms_mp(params: MeasureParams):
    ell = params.ell
    B = mpmath.mpf(params.B_ell)
    lam0 = mpmath.mpf(0.5) * mpmath.expj(mpmath.mpf(params.theta))
    roots = [mpmath.expjpi(mpmath.mpf(2 * r) / ell) for r in range(ell)]
    atoms = [lam0 + z / (2 * B) for z in roots]
    scale = mpmath.sqrt(ell) ** -1 * B ** (ell - 1)
    weights = [scale * z * a / lam0 for z, a in zip(roots, atoms)]
    return atoms, weights


def direct_transform(params: MeasureParams, kind: str, arg) -> LogComplex:
    """Dirac-sum oracle over the ell atoms at raised precision."""
    if kind not in ("C", "L", "D"):
        raise UsageError(f"Unknown transform kind: {kind}")
    digits = 30 + int(math.ceil((params.ell - 1) * math.log10(2.0 * params.B_ell)))
    with mpmath.workdps(digits):
        atoms, weights = _atoms_mp(params)
        if kind == "C":
            lam = mpmath.mpc(complex(arg))
            total = mpmath.fsum(w / (lam - z) for w, z in zip(weights, atoms))
        elif kind == "L":
            total = mpmath.fsum(w * z ** (int(arg) - 1) for w, z in zip(weights, atoms))
        else:
            total = mpmath.fsum(w * z ** int(arg) * (1 - z) for w, z in zip(weights, atoms))
        if total == 0:
            return LogComplex.zero()
        return LogComplex(float(mpmath.log(abs(total))), float(mpmath.arg(total)))


def roots_of_unity_sum(ell: int, j: int, lam: complex) -> complex:
    zeta = np.exp(2j * np.pi * np.arange(ell) / ell)
    return complex(np.sum(zeta ** j / (lam - zeta)))


def roots_of_unity_closed(ell: int, j: int, lam: complex) -> complex:
    return ell * lam ** (j - 1) / (lam ** ell - 1)


def negative_binomial_profile(ell: int, k_max: int) -> np.ndarray:
    """log(2^-k C(k-1, ell-1)) for k = 1..k_max; -inf below ell."""
    k = np.arange(1, k_max + 1)
    return log_binomial_array(k - 1, ell - 1) - k * LOG2


def simple_sequence(params: MeasureParams, k: int) -> Tuple[LogComplex, Callable[[complex], LogComplex]]:
    """x_k = ell^{1/2} lambda0^{k-ell} 2^{1-ell} C(k, ell-1) with its closed generating function."""
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    ell = params.ell
    if k < ell - 1:
        entry = LogComplex.zero()
    else:
        entry = LogComplex(0.5 * math.log(ell) + (k - ell) * math.log(abs(params.lambda0)) - (ell - 1) * LOG2
                           + log_binomial(k, ell - 1), (k - ell) * params.theta)

    def closed(lam: complex) -> LogComplex:
        lam = complex(lam)
        diff = lam - params.lambda0
        mag = (2 * LOG2 + 0.5 * math.log(ell) + math.log(abs(lam)) - ell * (LOG2 + math.log(abs(diff))))
        return LogComplex(mag, math.atan2(lam.imag, lam.real) - params.theta - ell * math.atan2(diff.imag, diff.real))

    return entry, closed


# ---------------------------------------------------------------------------
# Theta_alpha grids and the X_alpha norm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaGrid:
    angles: int = 96
    uniform: int = 32
    radii: int = 48
    min_depth: float = 1e-6
    min_angle: float = 1e-6

    def refined(self) -> "ThetaGrid":
        return ThetaGrid(self.angles * 2, self.uniform * 2, self.radii * 2, self.min_depth, self.min_angle)

    def points(self, geom: AlphaGeometry) -> np.ndarray:
        phis = np.unique(np.concatenate([np.geomspace(self.min_angle, math.pi, self.angles),
                                         np.linspace(0.0, math.pi, self.uniform)]))
        phis = np.unique(np.concatenate([phis, -phis[phis > 0]]))
        boundary = 1.0 - np.abs(phis) ** geom.alpha / (2.0 * math.pi ** geom.alpha)
        out = []
        for phi, rho in zip(phis, boundary):
            depths = np.geomspace(self.min_depth, (2.0 - rho) * (1.0 - 1e-9), self.radii)
            out.append((rho + depths) * np.exp(1j * phi))
        lams = np.concatenate(out)
        return lams[_in_theta(geom, lams)]


def theta_grid_spec(params: MeasureParams, angles: int = 96, uniform: int = 32, radii: int = 48,
                    min_depth: Optional[float] = None) -> ThetaGrid:
    collar = params.theta ** params.alpha
    min_depth = collar / 10.0 if min_depth is None else min_depth
    if min_depth > collar:
        raise UsageError(f"grid depth {min_depth:.3e} does not reach the collar theta^alpha={collar:.3e}")
    return ThetaGrid(angles, uniform, radii, min_depth, collar / 10.0)


@dataclass(frozen=True)
class XAlphaElement:
    name: str
    entry_log: Callable[[np.ndarray], np.ndarray]
    generating_log: Callable[[np.ndarray], np.ndarray]
    k_max: int
    ks: Optional[np.ndarray] = None

    def sample_ks(self, points: int = 4000) -> np.ndarray:
        if self.ks is not None:
            return self.ks
        dense = np.arange(1, min(self.k_max, 2048) + 1)
        if self.k_max <= 2048:
            return dense
        return np.unique(np.concatenate([dense, np.round(np.geomspace(2048, self.k_max, points)).astype(np.int64)]))


def constant_element() -> XAlphaElement:
    return XAlphaElement("constant", lambda k: np.zeros(np.shape(k)),
                         lambda lam: -np.log(np.abs(lam - 1.0)), k_max=1)


def unit_element() -> XAlphaElement:
    return XAlphaElement("e1", lambda k: np.where(np.asarray(k) == 1, 0.0, -np.inf),
                         lambda lam: -np.log(np.abs(lam)), k_max=1)


def measure_element(params: MeasureParams) -> XAlphaElement:
    k_max = int(math.ceil(10 * params.B_ell))
    return XAlphaElement("measure",
                         lambda ks: np.array([l_transform(params, int(k)).log_mag for k in ks]),
                         lambda lam: _c_transform_log(params, lam)[0], k_max=k_max,
                         ks=_k_grid(params, k_max))


def simple_element(params: MeasureParams) -> XAlphaElement:
    def entries(ks):
        return np.array([simple_sequence(params, int(k))[0].log_mag for k in ks])

    def generating(lams):
        _, closed = simple_sequence(params, 1)
        return np.array([closed(lam).log_mag for lam in np.ravel(lams)])

    return XAlphaElement("simple", entries, generating, k_max=max(8 * params.ell, 64))


def x_alpha_norm(elem: XAlphaElement, geom: AlphaGeometry, grid: ThetaGrid) -> Tuple[float, float, float]:
    """(sup norm, grid max of K_alpha |F_x|, total); the grid term is a lower estimate."""
    ks = elem.sample_ks()
    sup_norm = float(np.exp(np.max(elem.entry_log(ks))))
    lams = grid.points(geom)
    with np.errstate(divide="ignore"):
        log_k = np.log(k_alpha_array(geom, lams))
    alpha_norm = float(np.exp(np.max(log_k + elem.generating_log(lams))))
    logger.debug(f"X_alpha norm of {elem.name}: sup {sup_norm:.6e}, alpha part {alpha_norm:.6e} on {lams.size} points")
    return sup_norm, alpha_norm, sup_norm + alpha_norm


@dataclass(frozen=True)
class LemmaReport:
    alpha: float
    theta: float
    beta: float
    ell: int
    n1: int
    C1_hat: float
    C1_high: float
    C1_low: float
    C2_hat: float
    C3_hat: float
    log_D_n1: float
    closed_form_gap: float
    grid_points: int
    k_max: int
    admissible: bool

    def to_row(self) -> Dict:
        row = asdict(self)
        row["admissible"] = int(self.admissible)
        return row


def _k_grid(params: MeasureParams, k_max: int, points: int = 4000) -> np.ndarray:
    ell = params.ell
    step = max(1, ell // 256)
    window = np.arange(max(1, ell - 2), min(k_max, 4 * ell) + 1, step)
    spread = np.round(np.geomspace(1, k_max, points)).astype(np.int64)
    return np.unique(np.concatenate([window, spread, [min(k_max, 2 * ell - 1)]]))


def verify_construction(params: MeasureParams, grid: Optional[ThetaGrid] = None,
                        k_max: Optional[int] = None) -> LemmaReport:
    geom = AlphaGeometry(params.alpha)
    collar = params.theta ** params.alpha
    grid = theta_grid_spec(params) if grid is None else grid
    if grid.min_depth > collar:
        raise UsageError(f"grid depth {grid.min_depth:.3e} does not cover the collar {collar:.3e}")
    k_max = int(math.ceil(10 * params.B_ell)) if k_max is None else int(k_max)

    lams = grid.points(geom)
    kvals = k_alpha_array(geom, lams)
    mag, _ = _c_transform_log(params, lams)
    with np.errstate(divide="ignore"):
        scaled = np.exp(np.log(kvals) + mag)
    high = kvals > collar
    c1_high = float(np.max(scaled[high])) if np.any(high) else 0.0
    c1_low = float(np.max(scaled[~high])) if np.any(~high) else 0.0

    ks = _k_grid(params, k_max)
    c2 = float(np.max(l_transform_abs(params, ks)))

    d = d_transform(params, params.n1)
    closed = d_closed_form(params)
    c3 = params.n1 * math.exp(params.alpha * d.log_mag) / math.log(params.n1)
    report = LemmaReport(
        alpha=params.alpha, theta=params.theta, beta=params.beta, ell=params.ell, n1=params.n1,
        C1_hat=max(c1_high, c1_low), C1_high=c1_high, C1_low=c1_low, C2_hat=c2, C3_hat=c3,
        log_D_n1=d.log_mag, closed_form_gap=abs(closed - d.log_mag), grid_points=int(lams.size), k_max=k_max,
        admissible=params.admissible,
    )
    logger.info(f"Lemma constants at ell={params.ell}: C1={report.C1_hat:.4e}, C2={c2:.4e}, C3={c3:.4e}")
    return report


def limsup_witness(geom: AlphaGeometry, n0_list: Sequence[int], grid: Optional[ThetaGrid] = None,
                   beta: Optional[float] = None, admissible: bool = False) -> pd.DataFrame:
    """Rows of |D(n1)| / ||x^mu||_{X_alpha} scaled by (n1 / log n1)^{1/alpha}, with a doubled-norm safety row."""
    n0_list = [int(n) for n in n0_list]
    if any(b <= a for a, b in zip(n0_list, n0_list[1:])):
        raise UsageError("n0_list must be increasing")
    rows: List[Dict] = []
    for n0 in n0_list:
        if admissible:
            params = choose_params(geom, n0, beta=beta)
        else:
            params = params_for_ell(geom, n0 // 2 + 3, beta=beta, n0=n0)
        spec = theta_grid_spec(params) if grid is None else ThetaGrid(
            grid.angles, grid.uniform, grid.radii, min(grid.min_depth, params.theta ** params.alpha / 10.0),
            min(grid.min_angle, params.theta ** params.alpha / 10.0))
        _, _, x_norm = x_alpha_norm(measure_element(params), geom, spec)
        d = math.exp(d_transform(params, params.n1).log_mag)
        scale = (params.n1 / math.log(params.n1)) ** (1.0 / geom.alpha)
        for safety, norm in ((0, x_norm), (1, 2.0 * x_norm)):
            rows.append({
                "alpha": geom.alpha, "theta": params.theta, "beta": params.beta, "ell": params.ell,
                "n0": n0, "n1": params.n1, "x_norm": norm, "lower_bound": d / norm,
                "scaled": d / norm * scale, "safety": safety, "admissible": int(params.admissible),
            })
        logger.info(f"Witness n0={n0}: n1={params.n1}, scaled={rows[-2]['scaled']:.6e}")
    return pd.DataFrame(rows)
