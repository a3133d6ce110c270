import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import C_SWEEP, CSV_FLOAT_FORMAT
from ..errors import KtRatesError
from .config_utils import ExperimentConfig, dump_config_yaml
from .counterexample import (
    AlphaGeometry,
    ThetaGrid,
    c_transform,
    choose_params,
    d_transform,
    direct_transform,
    l_transform,
    limsup_witness,
    params_for_ell,
    theta_grid_spec,
    verify_construction,
)
from .operators import (
    AnnulusGrid,
    Diagonal,
    OperatorModel,
    build_registered_operator,
    decay_curve,
    deficiency_norm,
    frac_resolvent_sup,
    parse_complex,
    power_bound,
    q_power_bound,
    power_norm,
    resolvent_curve,
    resolvent_norm,
    sample_ns,
    spectrum_description,
    theta_grid,
    truncation_oracle,
)
from .rates import (
    BoundReport,
    c_sweep_reports,
    check_hilbert_decay,
    check_lower_envelope,
    check_minv_upper,
    check_mlog_upper,
    check_poly_bounds,
    check_resolvent_upper,
    dichotomy_diagnostic,
    factorial_witness,
    fit_rate,
    minimal_dominating_from_curve,
    normal_log_criterion,
    ray_resolvent_sup,
    ritt_constants,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2

TRANSFORM_RTOL = 1e-8
WITNESS_STABILITY = 0.1
Q_POWER_SAMPLES = 16


def write_csv(frame: pd.DataFrame, path: Path):
    """CSV with a header row and a trailing OK row, written in one go."""
    frame = frame.copy()
    for column in frame.columns:
        if frame[column].dtype == bool:
            frame[column] = frame[column].astype(int)
    body = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    sentinel = ",".join(["OK"] + [""] * (len(frame.columns) - 1))
    path.write_text(body + sentinel + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(frame)} rows to {path}")


def write_gp(path: Path, blocks: Sequence[Tuple[np.ndarray, np.ndarray]]):
    chunks = ["\n".join(f"{x:.16e} {y:.16e}" for x, y in zip(xs, ys)) for xs, ys in blocks]
    path.write_text("\n\n".join(chunks) + "\n", encoding="utf-8")


def _operator(config: ExperimentConfig) -> OperatorModel:
    return build_registered_operator(config.operator.name, config.operator.build_params())


def _ns(config: ExperimentConfig) -> np.ndarray:
    r = config.ranges
    return sample_ns(r.n_max, dense_upto=r.dense_upto, ratio=r.ratio, n_min=r.n_min)


def _window(config: ExperimentConfig):
    r = config.ranges
    if r.fit_lo is None and r.fit_hi is None:
        return None
    return (r.fit_lo if r.fit_lo is not None else r.n_min, r.fit_hi if r.fit_hi is not None else r.n_max)


def run_curves(config: ExperimentConfig, out: Path) -> List[BoundReport]:
    op = _operator(config)
    decay = decay_curve(op, _ns(config), config.alpha, config.max_workers)
    thetas = theta_grid(op, config.ranges.theta_min, config.ranges.theta_points)
    res = resolvent_curve(op, thetas, max_workers=config.max_workers)
    write_csv(decay.to_frame(), out / "decay.csv")
    write_csv(res.to_frame(), out / "resolvent.csv")
    write_gp(out / "decay.gp", [(decay.ns, decay.values)])
    write_gp(out / "resolvent.gp", [(res.thetas, res.values)])
    return []


def run_fit(config: ExperimentConfig, out: Path) -> List[BoundReport]:
    op = _operator(config)
    decay = decay_curve(op, _ns(config), config.alpha, config.max_workers)
    window = _window(config)
    rows = []
    for model, with_log in (("power", False), ("power_log", True)):
        fit = fit_rate(decay, window, with_log=with_log)
        rows.append({"model": model, "exponent": fit.exponent, "log_correction": fit.log_correction,
                     "residual": fit.residual, "intercept": fit.intercept,
                     "n_lo": fit.window[0], "n_hi": fit.window[1]})
        logger.info(f"{op.name} {model} fit: exponent {fit.exponent:.6f}, log correction {fit.log_correction:.6f}")
    write_csv(pd.DataFrame(rows), out / "fit.csv")
    return []


def _bounds_reports(config: ExperimentConfig, op: OperatorModel) -> List[BoundReport]:
    r, ch = config.ranges, config.checks
    workers = config.max_workers
    ns = _ns(config)
    decay = decay_curve(op, ns, 1.0, workers)
    if np.all(decay.values == 0):
        return [BoundReport.not_applicable(name, "I - T vanishes on the samples") for name in ch.include]

    res = resolvent_curve(op, theta_grid(op, r.theta_min, r.theta_points), max_workers=workers)
    M_hat = power_bound(op, r.n_max, ns)
    m = minimal_dominating_from_curve(res)
    omega = minimal_dominating_from_curve(decay)
    sweep = sorted(set(C_SWEEP) | {ch.c}) if ch.sweep else [ch.c]
    grid = AnnulusGrid(r.ray_radii, r.ray_angles)
    logger.info(f"Bounds for {op.name}: M_hat={M_hat:.6e}, {ns.size} n samples, {res.thetas.size} angles")

    checks: Dict[str, Callable[[], List[BoundReport]]] = {
        "resolvent_upper": lambda: c_sweep_reports(check_resolvent_upper, res, omega, sweep=sweep, M_hat=M_hat),
        "lower_envelope": lambda: [check_lower_envelope(decay, m, M_hat=M_hat, lb_margin=ch.lb_margin)],
        "mlog_upper": lambda: c_sweep_reports(
            check_mlog_upper, decay, m, sweep=sweep,
            peripheral_ok=spectrum_description(op).peripheral_subset_of_one),
        "minv_upper": lambda: [check_minv_upper(decay, m, c=ch.c)],
        "ritt": lambda: [ritt_constants(decay, ray_resolvent_sup(op, grid, workers),
                                        ray_resolvent_sup(op, grid.refined(), workers))],
        "dichotomy": lambda: [dichotomy_diagnostic(decay).to_report()],
        "normal_log": lambda: [normal_log_criterion(
            m, ch.normal_s or [int(n) for n in ns[ns >= 1][::8]], ch.b, ch.normal_c, decay)],
        "poly_bounds": lambda: [check_poly_bounds(decay, float(getattr(op, "params", {}).get("alpha", config.alpha)),
                                                  _window(config))],
        "hilbert": lambda: _hilbert(config, op, ns, M_hat, grid),
        "factorial_witness": lambda: [
            factorial_witness(op, ch.b, ch.factorial_ks) if op.name == "factorial_diagonal"
            else BoundReport.not_applicable("factorial_witness", f"{op.name} is not factorial_diagonal")],
        "q_power": lambda: [_q_power(config, op, ns)],
    }
    reports: List[BoundReport] = []
    for name in ch.include:
        reports.extend(checks[name]())
    return reports


def _hilbert(config: ExperimentConfig, op: OperatorModel, ns: np.ndarray, M_hat: float,
             grid: AnnulusGrid) -> List[BoundReport]:
    name = f"hilbert_decay[alpha={config.alpha:g}]"
    if not isinstance(op, Diagonal):
        return [BoundReport.not_applicable(name, "needs a diagonal model")]
    if config.alpha < 1:
        return [BoundReport.not_applicable(name, "needs alpha >= 1")]
    B_hat = frac_resolvent_sup(op, config.alpha, grid)
    return [check_hilbert_decay(op, config.alpha, [int(n) for n in ns], M_hat, B_hat,
                                vectors=config.checks.hilbert_vectors, seed=config.seed)]


def _q_power(config: ExperimentConfig, op: OperatorModel, ns: np.ndarray) -> BoundReport:
    name = f"q_power[alpha={config.alpha:g}]"
    if config.alpha < 1:
        return BoundReport.not_applicable(name, "needs alpha >= 1")
    # uncertified diagonal scans run to the cap, so keep the n grid coarse
    picks = np.unique(np.geomspace(1, ns[-1], Q_POWER_SAMPLES).astype(np.int64)) if ns[-1] >= 1 else ns
    out = q_power_bound(op, config.alpha, [int(n) for n in picks])
    notes = "tail certified" if out["certified"] else "tail not certified, sup is a lower bound"
    return BoundReport(name, out["power_bounded"], True,
                       {"sup": out["sup"], "argmax": float(out["argmax"]), "threshold": out["threshold"],
                        "certified": float(out["certified"])},
                       worst_point=(float(out["argmax"]), out["sup"], out["threshold"]),
                       margin=out["threshold"] - out["sup"], notes=notes)


def run_bounds(config: ExperimentConfig, out: Path) -> List[BoundReport]:
    reports = _bounds_reports(config, _operator(config))
    write_csv(pd.DataFrame([r.to_row() for r in reports]), out / "bounds.csv")
    return reports


def _relative_delta(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def run_oracle(config: ExperimentConfig, out: Path) -> List[BoundReport]:
    op = _operator(config)
    r = config.ranges
    trunc = truncation_oracle(op, r.oracle_n)
    rows = []
    quantities = [("deficiency", n, lambda o, n=n: deficiency_norm(o, n, config.alpha)) for n in r.oracle_ns]
    quantities += [("power", n, lambda o, n=n: power_norm(o, n)) for n in r.oracle_ns]
    for text in r.oracle_lambdas:
        lam = parse_complex(text)
        quantities.append(("resolvent", text, lambda o, lam=lam: resolvent_norm(o, lam)))
    for quantity, argument, fn in quantities:
        try:
            analytic, truncated = fn(op), fn(trunc)
        except KtRatesError as e:
            logger.warning(f"oracle {quantity}({argument}) skipped: {e}")
            continue
        rows.append({"quantity": quantity, "argument": str(argument), "analytic": analytic,
                     "truncated": truncated, "delta": _relative_delta(analytic, truncated)})
    frame = pd.DataFrame(rows, columns=["quantity", "argument", "analytic", "truncated", "delta"])
    write_csv(frame, out / "oracle.csv")
    if frame.empty:
        return [BoundReport.not_applicable("oracle", "no comparable quantity")]
    worst = int(frame["delta"].idxmax())
    max_delta = float(frame["delta"].max())
    holds = max_delta <= config.checks.oracle_tol
    if not holds:
        logger.warning(f"oracle: max delta {max_delta:.3e} exceeds {config.checks.oracle_tol:.1e}")
    return [BoundReport("oracle", holds, True, {"max_delta": max_delta, "N": float(r.oracle_n)},
                        (math.nan, float(frame.at[worst, "analytic"]), float(frame.at[worst, "truncated"])),
                        config.checks.oracle_tol - max_delta, notes=f"N={r.oracle_n}")]


def _transform_rows(geom: AlphaGeometry, ells: Sequence[int], beta) -> List[Dict]:
    rows = []
    for ell in ells:
        params = params_for_ell(geom, ell, beta=beta)
        samples = [("D", params.n1, d_transform(params, params.n1)), ("C", "1.5", c_transform(params, 1.5))]
        samples += [("L", k, l_transform(params, k)) for k in (ell - 1, 2 * ell - 1, 3 * ell)]
        for kind, argument, closed in samples:
            direct = direct_transform(params, kind, complex(argument) if kind == "C" else argument)
            delta = 0.0 if closed.is_zero and direct.is_zero else abs((closed / direct).to_complex() - 1.0)
            rows.append({"ell": ell, "kind": kind, "argument": str(argument), "log_closed": closed.log_mag,
                         "log_direct": direct.log_mag, "delta": delta})
    return rows


def run_counterexample(config: ExperimentConfig, out: Path) -> List[BoundReport]:
    ce = config.counterexample
    geom = AlphaGeometry(ce.alpha)
    reports = []

    lemma_params = [params_for_ell(geom, ell, beta=ce.beta) for ell in ce.ells]
    if ce.admissible:
        lemma_params.append(choose_params(geom, ce.n0[0], beta=ce.beta))
    lemma = [verify_construction(p, theta_grid_spec(p, ce.angles, ce.uniform, ce.radii)) for p in lemma_params]
    write_csv(pd.DataFrame([row.to_row() for row in lemma]), out / "lemma.csv")
    finite = all(math.isfinite(x.C1_hat) and math.isfinite(x.C2_hat) for x in lemma)
    floor = min(x.C3_hat for x in lemma)
    gap = max(x.closed_form_gap for x in lemma)
    reports.append(BoundReport("lemma_constants", finite and floor > 0 and gap <= 1e-9, True,
                               {"C1_max": max(x.C1_hat for x in lemma), "C2_max": max(x.C2_hat for x in lemma),
                                "C3_floor": floor, "closed_form_gap": gap}))

    transforms = pd.DataFrame(_transform_rows(geom, ce.oracle_ells, ce.beta))
    write_csv(transforms, out / "transforms.csv")
    worst = float(transforms["delta"].max()) if not transforms.empty else 0.0
    reports.append(BoundReport("transform_oracle", worst <= TRANSFORM_RTOL, True, {"max_delta": worst},
                               margin=TRANSFORM_RTOL - worst))

    grid = ThetaGrid(ce.angles, ce.uniform, ce.radii, min_depth=1.0, min_angle=1.0)
    witness = limsup_witness(geom, ce.n0, grid, beta=ce.beta, admissible=ce.admissible)
    refined = limsup_witness(geom, ce.n0, grid.refined(), beta=ce.beta, admissible=ce.admissible)
    witness["scaled_refined"] = refined["scaled"].to_numpy()
    write_csv(witness, out / "witness.csv")
    base = witness[witness["safety"] == 0]
    lower = float(base["scaled"].min())
    drift = float(np.max(np.abs(base["scaled_refined"] / base["scaled"] - 1.0)))
    holds = lower > 0 and drift <= WITNESS_STABILITY
    if not holds:
        logger.warning(f"witness: floor {lower:.3e}, refinement drift {drift:.3e}")
    reports.append(BoundReport("limsup_witness", holds, True, {"floor": lower, "refinement_drift": drift},
                               margin=WITNESS_STABILITY - drift))
    write_csv(pd.DataFrame([r.to_row() for r in reports]), out / "checks.csv")
    return reports


COMMANDS = {
    "curves": run_curves,
    "bounds": run_bounds,
    "counterexample": run_counterexample,
    "fit": run_fit,
    "oracle": run_oracle,
}


def run(config: ExperimentConfig) -> int:
    out = Path(config.output_dir)
    logger.info(f"Running {config.command} into {out}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        reports = COMMANDS[config.command](config, out)
        dump_config_yaml(config, out / "config.yaml")
    except (KtRatesError, OSError) as e:
        logger.error(f"{config.command} aborted: {e}")
        return EXIT_USAGE

    failed = [r.name for r in reports if r.applicable and not r.holds]
    if failed:
        logger.warning(f"{len(failed)} check(s) violated: {', '.join(failed)}")
        return EXIT_VIOLATION
    logger.info(f"{config.command} finished: {len(reports)} check(s), none violated")
    return EXIT_OK
