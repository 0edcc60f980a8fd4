"""Experiment runners behind the command line: trajectory CSV output, run
summaries, the verification suite and initial-gain computation."""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from . import averaging, lqr
from .closed_loop import PlantSchedule, TrajectoryRecord, fit_exponential_rate, run_relearn
from .config import ExperimentConfig
from .dither import (RANK_RTOL, exo_trajectory, numerical_rank, pe_gramian,
                     richness_hankel_rank)
from .errors import RelearnError
from .linalg import spectral_radius

log = logging.getLogger(__name__)

TAIL_FRACTION = 0.1
FIT_FLOOR = 1e-12
HSS_RTOL = 1e-12


def csv_header(n: int, m: int, drifting: bool) -> list[str]:
    cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    cols += [f"d{i + 1}" for i in range(m)]
    cols += ["J_err", "theta_err", "rho_true", "rho_est", "grad_norm"]
    if drifting:
        cols.append("J_star")
    return cols


def write_csv(path, rec: TrajectoryRecord, drifting: bool, decimate: int = 1) -> Path:
    """Write every ``decimate``-th row of the record. Floats use ``%.17g`` so
    values round-trip exactly and output is byte-stable."""
    if decimate < 1:
        raise ValueError("decimate must be at least 1")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = [rec.t[:, None].astype(float), rec.x, rec.u, rec.d,
              np.column_stack([rec.j_err, rec.theta_err, rec.rho_true, rec.rho_est,
                               rec.grad_norm])]
    if drifting:
        blocks.append(rec.j_star[:, None])
    data = np.hstack(blocks)[::decimate] if len(rec) else np.empty((0, 0))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(csv_header(rec.n, rec.m, drifting)) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _fmt(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return "%.17g" % v


def read_csv(path) -> dict[str, np.ndarray]:
    """Read a trajectory CSV back into named columns."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        has_rows = bool(fh.readline())
    if not has_rows:
        return {name: np.empty(0) for name in header}
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def _fit_segment(series) -> dict | None:
    """Exponential fit from the start until the series first reaches the
    numerical floor."""
    y = np.asarray(series, dtype=float)
    if y.size < 2 or not np.all(np.isfinite(y)):
        return None
    below = np.flatnonzero(y <= FIT_FLOOR)
    end = int(below[0]) if below.size else y.size
    if end < 2:
        return None
    a1, a2, r2 = fit_exponential_rate(y, 0, end)
    return {"a1": a1, "a2": a2, "r2": r2, "t_start": 0, "t_end": end}


def _base_summary(cfg: ExperimentConfig, rec: TrajectoryRecord, p_star, k_star) -> dict:
    return {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds(),
        "q": cfg.cost.q.tolist(),
        "r": cfg.cost.r.tolist(),
        "k_star": k_star.tolist(),
        "j_star": 0.5 * float(np.trace(p_star)),
        "horizon": cfg.sim.horizon,
        "steps_recorded": len(rec),
        "abort_reason": rec.abort_reason,
        "skipped_steps": len(rec.skipped_steps),
    }


def summarize_static(cfg: ExperimentConfig, rec: TrajectoryRecord) -> dict:
    """Summary on full-resolution data: final and tail errors, fitted
    exponential rates and pass/fail against the configured thresholds."""
    p_star, k_star = lqr.dare_solve(cfg.theta_star, cfg.cost)
    out = _base_summary(cfg, rec, p_star, k_star)
    if len(rec) == 0:
        out.update(status="no data", passed=None)
        return out
    tail = slice(int(len(rec) * (1 - TAIL_FRACTION)), len(rec))
    x_norm = np.linalg.norm(rec.x, axis=1)
    out["final"] = {"j_err": float(rec.j_err[-1]), "theta_err": float(rec.theta_err[-1]),
                    "rho_true": float(rec.rho_true[-1]), "k_err": float(rec.k_err[-1])}
    out["tail"] = {"j_err_max": float(np.max(rec.j_err[tail])),
                   "theta_err_max": float(np.max(rec.theta_err[tail])),
                   "x_norm_max": float(np.max(x_norm[tail]))}
    out["rho_true_max"] = float(np.max(rec.rho_true))
    out["fit"] = {"j_err": _fit_segment(rec.j_err), "theta_err": _fit_segment(rec.theta_err)}
    checks = {
        "j_err_tail": out["tail"]["j_err_max"] < cfg.thresholds["j_err"],
        "theta_err_tail": out["tail"]["theta_err_max"] < cfg.thresholds["theta_err"],
        "rho_true_below_one": out["rho_true_max"] < 1.0,
        "completed": rec.abort_reason is None and len(rec) == cfg.sim.horizon,
    }
    out["checks"] = checks
    out["status"] = "ok"
    out["passed"] = all(checks.values())
    return out


def drift_bump(series, t_mid: float, alpha: float) -> dict:
    """Locate the error bump around the drift midpoint and the recovery.

    The pre-drift floor is the median error on ``[t_mid - 20 alpha,
    t_mid - 10 alpha)``. The bump must peak strictly inside
    ``t_mid +/- 5 alpha`` above both window ends. Recovery requires the error
    after the peak to fall below ten times the floor; ``recovery_time`` is
    the first ``t > t_mid`` with error below twice the floor.
    """
    y = np.asarray(series, dtype=float)
    horizon = y.size
    lo_f, hi_f = int(max(0, t_mid - 20 * alpha)), int(t_mid - 10 * alpha)
    lo_w, hi_w = int(math.ceil(t_mid - 5 * alpha)), int(math.floor(t_mid + 5 * alpha))
    if hi_f <= lo_f or hi_w >= horizon or lo_w < 0:
        return {"status": "window outside run", "local_max": False, "recovered": False}
    floor = float(np.median(y[lo_f:hi_f]))
    window = y[lo_w:hi_w + 1]
    peak_idx = int(np.argmax(window))
    peak_t = lo_w + peak_idx
    peak = float(window[peak_idx])
    local_max = 0 < peak_idx < window.size - 1 and peak > window[0] and peak > window[-1]
    after = y[peak_t:]
    recovered = bool(np.any(after < 10 * floor))
    below2 = np.flatnonzero(y[int(t_mid) + 1:] < 2 * floor)
    recovery_t = int(t_mid) + 1 + int(below2[0]) if below2.size else None
    return {"status": "ok", "floor": floor, "peak": peak, "peak_t": peak_t,
            "local_max": bool(local_max), "recovered": recovered,
            "min_after_peak": float(np.min(after)),
            "recovery_t": recovery_t,
            "recovery_delay": None if recovery_t is None else recovery_t - t_mid}


def summarize_drifting(cfg: ExperimentConfig, rec: TrajectoryRecord) -> dict:
    out = summarize_static(cfg, rec)
    if len(rec) == 0:
        return out
    drift = cfg.plant.drift
    out["drift"] = {"t_mid": drift.t_mid, "alpha": drift.alpha,
                    "j_err": drift_bump(rec.j_err, drift.t_mid, drift.alpha),
                    "theta_err": drift_bump(rec.theta_err, drift.t_mid, drift.alpha)}
    checks = {"completed": out["checks"]["completed"],
              "rho_true_below_one": out["checks"]["rho_true_below_one"]}
    for key in ("j_err", "theta_err"):
        checks[f"{key}_local_max"] = out["drift"][key]["local_max"]
        checks[f"{key}_recovered"] = out["drift"][key]["recovered"]
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


def simulate(cfg: ExperimentConfig, drifting: bool, log_every: int = 0) -> TrajectoryRecord:
    """Run the closed loop; the static variant ignores any drift block."""
    plant = cfg.plant if drifting else PlantSchedule(cfg.theta_star)
    return run_relearn(cfg.sim, plant, cfg.cost, log_every=log_every)


def _check(name: str, value, threshold, passed, note: str | None = None) -> dict:
    out = {"name": name, "value": value, "threshold": threshold,
           "passed": None if passed is None else bool(passed)}
    if note:
        out["note"] = note
    return out


def run_verification(cfg: ExperimentConfig) -> dict:
    """Verification suite: DARE ground truth, dither validity, steady-state
    maps, invariance of the steady-state locus, invertibility and periodicity
    of the steady-state moment matrix, averaged-system convergence and the
    Lyapunov decrease."""
    v = cfg.verify
    tol = float(v["residual_tol"])
    theta, cost, exo = cfg.theta_star, cfg.cost, cfg.exo
    n, m = cfg.n, cfg.m
    checks = []

    p_star, k_star = lqr.dare_solve(theta, cost)
    rho_star = spectral_radius(lqr.closed_loop(theta, k_star))
    checks.append(_check("dare_residual", lqr.dare_residual(p_star, theta, cost), 1e-9,
                         lqr.dare_residual(p_star, theta, cost) <= 1e-9))
    checks.append(_check("k_star_stabilizing", rho_star, 1.0, rho_star < 1.0))

    window = 4 * exo.n_w
    shifts = int(v["pe_windows"])
    ws = exo_trajectory(exo, shifts + window + 1)
    ds = ws @ exo.e.T
    for label, sig in (("pe_w", ws), ("pe_d", ds)):
        worst = math.inf
        for t0 in range(shifts):
            lam_min, lam_max = pe_gramian(sig, t0, window)
            worst = min(worst, lam_min / lam_max if lam_max > 0 else 0.0)
        checks.append(_check(label, worst, RANK_RTOL, worst > RANK_RTOL,
                             note="min over shifts of lambda_min / lambda_max"))
    t_d = 4 * m * (n + 1)
    ranks = [richness_hankel_rank(exo_trajectory(exo, t_d + s) @ exo.e.T, n, t_d, s)
             for s in range(0, 10)]
    checks.append(_check("hankel_richness", min(ranks), m * (n + 1),
                         min(ranks) == m * (n + 1)))
    stack_rank = numerical_rank(np.vstack([exo.e @ np.linalg.matrix_power(exo.f, k)
                                           for k in range(n + 1)]))
    checks.append(_check("stacked_e_rank", stack_rank, m * (n + 1), stack_rank == m * (n + 1)))

    maps = averaging.compute_pi_h_pi_s(theta, k_star, exo, cfg.sim.lam)
    for key, val in averaging.map_residuals(maps, theta, k_star, exo).items():
        checks.append(_check(f"sylvester_{key}", val, tol, val <= tol))
    locus = averaging.verify_lemma_ss(maps, theta, k_star, exo, cfg.sim.lam,
                                      int(v["samples"]))
    checks.append(_check("locus_invariance", locus["max_abs"], float(v["locus_tol"]),
                         locus["max_abs"] <= float(v["locus_tol"]),
                         note=f"relative max {locus['max_rel']:.3g}"))
    sweep = averaging.hss_sweep(maps, exo)
    h_scale = float(np.linalg.norm(averaging.hss_at(maps, exo.w0), 2))
    ratio = sweep["sigma_min"] / h_scale if h_scale > 0 else 0.0
    note = (f"exact period {sweep['period']}" if sweep["period"]
            else f"no exact period; {sweep['steps']}-step surrogate sweep")
    checks.append(_check("hss_invertible", ratio, HSS_RTOL, ratio > HSS_RTOL,
                         note=f"sigma_min / ||H^ss_0||, {note}"))
    if sweep["period"]:
        checks.append(_check("hss_periodic", sweep["periodicity_defect"], 1e-9,
                             sweep["periodicity_defect"] <= 1e-9))
    else:
        checks.append(_check("hss_periodic", None, 1e-9, None, note=note))

    checks.extend(_averaged_checks(cfg, k_star))
    failed = [c["name"] for c in checks if c["passed"] is False]
    return {"name": cfg.name, "config_hash": cfg.config_hash(), "seeds": cfg.seeds(),
            "lambda": cfg.sim.lam, "checks": checks, "failed": failed,
            "locus": locus, "passed": not failed}


def _averaged_checks(cfg: ExperimentConfig, k_star) -> list[dict]:
    v = cfg.verify
    gamma, steps, kappa = cfg.sim.gamma, int(v["avg_steps"]), float(v["kappa"])
    theta = cfg.theta_star
    state = averaging.AveragedState(cfg.sim.k0 - k_star, cfg.sim.theta0 - theta)
    z0 = state.norm()
    if z0 == 0:
        return [_check("averaged_convergence", 0.0, None, True, note="starts at the origin")]
    try:
        traj = averaging.averaged_trajectory(state, theta, cfg.cost, gamma, steps, k_star)
        vs = np.array([averaging.lyapunov_v(s, theta, cfg.cost, kappa, k_star) for s in traj])
    except RelearnError as exc:
        return [_check("averaged_convergence", None, None, False, note=str(exc))]
    norms = np.array([s.norm() for s in traj])
    th0 = np.linalg.norm(state.theta_tilde)
    geo = max(abs(np.linalg.norm(s.theta_tilde) - (1 - gamma) ** t * th0)
              for t, s in enumerate(traj)) / max(th0, np.finfo(float).tiny)
    fit = _fit_segment(norms)
    increase = float(np.max(np.diff(vs))) / max(vs[0], np.finfo(float).tiny)
    out = [
        _check("theta_tilde_geometric", geo, 1e-10, geo <= 1e-10),
        _check("averaged_contracts", norms[-1] / z0, 1.0, norms[-1] < z0),
        _check("averaged_rate_a2", None if fit is None else fit["a2"], 0.0,
               fit is not None and fit["a2"] > 0),
        _check("averaged_fit_r2", None if fit is None else fit["r2"], 0.95,
               fit is not None and fit["r2"] >= 0.95),
        _check("lyapunov_nonincreasing", increase, 1e-12, increase <= 1e-12,
               note=f"max relative step increase of V, kappa={kappa}"),
    ]
    return out


def init_gain(cfg: ExperimentConfig) -> dict:
    """``K0`` from the DARE of the initial estimate, with spectral radii of
    the resulting closed loop on the estimate and on the true plant."""
    _, k0 = lqr.dare_solve(cfg.sim.theta0, cfg.cost)
    rho_est = spectral_radius(lqr.closed_loop(cfg.sim.theta0, k0))
    rho_true = spectral_radius(lqr.closed_loop(cfg.theta_star, k0))
    return {"k0": k0.tolist(), "rho_theta0": rho_est, "rho_true": rho_true,
            "passed": bool(rho_est < 1.0 and rho_true < 1.0)}
