"""On-policy closed loop: dithered feedback on the true plant, online
identification of ``[A B]^T``, and a policy-gradient step on the gain that
uses the current estimate, all within each iteration.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import lqr
from .dither import Exosystem
from .errors import DivergenceError, StabilityError
from .learner import LearnerState, rls_update
from .linalg import SCHUR_TOL, spectral_radius

log = logging.getLogger(__name__)

BLOWUP_BOUND = 1e9


def sigmoid(t, t_mid: float, alpha: float):
    """Rising logistic transition: 0 long before ``t_mid``, 1 long after."""
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    z = -(np.asarray(t, dtype=float) - t_mid) / alpha
    # split by sign so exp never overflows
    out = np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))),
                   1.0 / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Drift:
    theta_plus: np.ndarray
    t_mid: float
    alpha: float


def drift_target(theta_star, sigma: float, seed: int) -> np.ndarray:
    """Perturb every nonzero entry of ``[A B]^T`` by ``sigma`` times a standard normal draw."""
    theta_star = np.asarray(theta_star, dtype=float)
    a, b = lqr.unpack_theta(theta_star)
    rng = np.random.default_rng(seed)
    va = rng.standard_normal(a.shape)
    vb = rng.standard_normal(b.shape)
    a_plus = np.where(a == 0, a, a + sigma * va)
    b_plus = np.where(b == 0, b, b + sigma * vb)
    return lqr.pack_theta(a_plus, b_plus)


@dataclass(frozen=True)
class PlantSchedule:
    theta_star: np.ndarray
    drift: Drift | None = None

    def theta_at(self, t: int) -> np.ndarray:
        if self.drift is None:
            return self.theta_star
        s = sigmoid(t, self.drift.t_mid, self.drift.alpha)
        return self.theta_star + s * (self.drift.theta_plus - self.theta_star)


@dataclass
class SimConfig:
    gamma: float
    lam: float
    horizon: int
    x0: np.ndarray
    k0: np.ndarray
    theta0: np.ndarray
    exo: Exosystem
    seed: int = 0
    stability_guard: str = "abort"
    jstar_cadence: int = 100
    blowup_bound: float = BLOWUP_BOUND

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.stability_guard not in ("abort", "skip"):
            raise ValueError("stability_guard must be 'abort' or 'skip'")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.k0 = np.atleast_2d(np.asarray(self.k0, dtype=float))
        self.theta0 = np.asarray(self.theta0, dtype=float)


def sample_x0(n: int, mean: float = 10.0, std: float = 1.0, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(mean, std, size=n)


COLUMNS = ("j_err", "theta_err", "rho_true", "rho_est", "grad_norm", "k_err", "j_star")


@dataclass
class TrajectoryRecord:
    """Per-iteration diagnostics; row ``t`` holds the state before update ``t``."""

    n: int
    m: int
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    w: np.ndarray
    j_err: np.ndarray
    theta_err: np.ndarray
    rho_true: np.ndarray
    rho_est: np.ndarray
    grad_norm: np.ndarray
    k_err: np.ndarray
    j_star: np.ndarray
    abort_reason: str | None = None
    skipped_steps: list[int] = field(default_factory=list)
    final_k: np.ndarray | None = None
    final_learner: LearnerState | None = None

    def __len__(self) -> int:
        return int(self.t.size)

    @classmethod
    def allocate(cls, horizon: int, n: int, m: int, n_w: int) -> "TrajectoryRecord":
        def col():
            return np.full(horizon, np.nan)
        return cls(n=n, m=m, t=np.arange(horizon), x=np.full((horizon, n), np.nan),
                   u=np.full((horizon, m), np.nan), d=np.full((horizon, m), np.nan),
                   w=np.full((horizon, n_w), np.nan), j_err=col(), theta_err=col(),
                   rho_true=col(), rho_est=col(), grad_norm=col(), k_err=col(), j_star=col())

    def truncate(self, rows: int) -> None:
        for name in ("t", "x", "u", "d", "w") + COLUMNS:
            setattr(self, name, getattr(self, name)[:rows])


class Step(NamedTuple):
    x: np.ndarray
    w: np.ndarray
    learner: LearnerState
    k: np.ndarray
    u: np.ndarray
    d: np.ndarray
    grad: np.ndarray | None
    rho_est: float
    skipped: bool


def relearn_step(x, w, learner: LearnerState, k, theta_t, cost: lqr.CostSpec,
                 cfg: SimConfig) -> Step:
    """One iteration: actuate, learn, then take a gradient step on the gain.

    The gradient is evaluated at the estimate held *before* this iteration's
    learning update. With ``cfg.stability_guard == "skip"`` a gain that does
    not stabilize the estimate is held fixed for the step instead of raising.
    """
    exo = cfg.exo
    a_t, b_t = lqr.unpack_theta(theta_t)
    d = exo.e @ w
    u = k @ x + d
    x_next = a_t @ x + b_t @ u
    w_next = exo.f @ w
    theta_hat = learner.theta_hat
    learner_next = rls_update(learner, x, u, x_next, cfg.lam, cfg.gamma)

    a_est, b_est = lqr.unpack_theta(theta_hat)
    a_cl = a_est + b_est @ k
    rho_est = spectral_radius(a_cl)
    if rho_est >= 1.0 - SCHUR_TOL:
        if cfg.stability_guard == "abort":
            raise StabilityError("gain does not stabilize the current estimate", rho=rho_est)
        return Step(x_next, w_next, learner_next, k, u, d, None, rho_est, True)
    _, grad = lqr._cost_grad(a_cl, b_est, k, cost)
    return Step(x_next, w_next, learner_next, k - cfg.gamma * grad, u, d, grad, rho_est, False)


def _cost_or_inf(k, theta, cost) -> tuple[float, float]:
    """``(J(K, theta), rho)`` with ``J = inf`` when K does not stabilize theta."""
    _, b = lqr.unpack_theta(theta)
    a_cl = lqr.closed_loop(theta, k)
    rho = spectral_radius(a_cl)
    if rho >= 1.0 - SCHUR_TOL:
        return math.inf, rho
    return lqr._cost_grad(a_cl, b, k, cost, want_grad=False)[0], rho


def run_relearn(cfg: SimConfig, plant: PlantSchedule, cost: lqr.CostSpec,
                learner0: LearnerState | None = None, log_every: int = 0) -> TrajectoryRecord:
    """Simulate ``cfg.horizon`` iterations and record diagnostics.

    The optimal reference ``J*_t`` is recomputed every ``cfg.jstar_cadence``
    iterations when the plant drifts (warm-started DARE). A stability-guard
    abort ends the run early with ``abort_reason`` set; a state blow-up
    raises DivergenceError carrying the partial record. ``log_every > 0``
    logs progress at INFO level with that cadence.
    """
    theta_star0 = plant.theta_at(0)
    n = theta_star0.shape[1]
    m = theta_star0.shape[0] - n
    rho0 = spectral_radius(lqr.closed_loop(cfg.theta0, cfg.k0))
    if rho0 >= 1.0:
        raise StabilityError("initial gain must stabilize the initial estimate", rho=rho0)
    rho_true0 = spectral_radius(lqr.closed_loop(theta_star0, cfg.k0))
    if rho_true0 >= 1.0:
        warnings.warn(f"initial gain does not stabilize the true plant (rho={rho_true0:.4g})",
                      stacklevel=2)

    rec = TrajectoryRecord.allocate(cfg.horizon, n, m, cfg.exo.n_w)
    learner = learner0 if learner0 is not None else LearnerState.initial(cfg.theta0)
    x, w, k = cfg.x0.copy(), cfg.exo.w0.copy(), cfg.k0.copy()
    p_star, k_star = lqr.dare_solve(theta_star0, cost)
    j_star = 0.5 * float(np.trace(p_star))
    last_refresh = 0

    for t in range(cfg.horizon):
        theta_t = plant.theta_at(t)
        if plant.drift is not None and t - last_refresh >= cfg.jstar_cadence:
            p_star, k_star = lqr.dare_solve(theta_t, cost, p0=p_star)
            j_star = 0.5 * float(np.trace(p_star))
            last_refresh = t
        norm_x = float(np.linalg.norm(x))
        if not norm_x <= cfg.blowup_bound:
            rec.truncate(t)
            rec.abort_reason = f"state norm {norm_x:.3g} exceeded {cfg.blowup_bound:.3g} at t={t}"
            rec.final_k, rec.final_learner = k, learner
            raise DivergenceError(rec.abort_reason, record=rec)

        theta_hat = learner.theta_hat
        try:
            step = relearn_step(x, w, learner, k, theta_t, cost, cfg)
        except StabilityError as exc:
            rec.truncate(t)
            rec.abort_reason = f"gain left the estimate's stabilizing set at t={t}: {exc}"
            rec.final_k, rec.final_learner = k, learner
            log.warning(rec.abort_reason)
            return rec

        rec.x[t], rec.w[t], rec.u[t], rec.d[t] = x, w, step.u, step.d
        j_true, rho_true = _cost_or_inf(k, theta_t, cost)
        rec.j_err[t] = abs(j_true - j_star) / j_star
        rec.theta_err[t] = np.linalg.norm(theta_hat - theta_t) / np.linalg.norm(theta_t)
        rec.rho_true[t] = rho_true
        rec.rho_est[t] = step.rho_est
        rec.grad_norm[t] = np.nan if step.grad is None else np.linalg.norm(step.grad)
        rec.k_err[t] = np.linalg.norm(k - k_star)
        rec.j_star[t] = j_star
        if step.skipped:
            rec.skipped_steps.append(t)
        if log_every and t % log_every == 0:
            log.info("t=%d J_err=%.3e theta_err=%.3e rho=%.4f", t, rec.j_err[t],
                     rec.theta_err[t], rho_true)

        x, w, learner, k = step.x, step.w, step.learner, step.k

    rec.final_k, rec.final_learner = k, learner
    return rec


def fit_exponential_rate(series, t_start: int = 0, t_end: int | None = None,
                         ) -> tuple[float, float, float]:
    """Least-squares fit of ``log(series[t]) = log(a1) - a2 t`` on ``[t_start, t_end)``.

    Returns ``(a1, a2, r2)``.
    """
    y = np.asarray(series, dtype=float)[t_start:t_end]
    if y.size < 2:
        raise ValueError("need at least two points to fit a rate")
    if np.any(~(y > 0)):
        raise ValueError("series must be positive on the fitted range")
    t = np.arange(t_start, t_start + y.size, dtype=float)
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (intercept + slope * t)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(np.exp(intercept)), float(-slope), r2
