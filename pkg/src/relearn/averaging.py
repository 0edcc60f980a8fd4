"""Numerical checks of the steady-state and averaging analysis.

Covers the steady-state maps ``Pi_x``, ``Pi_H``, ``Pi_S`` (Sylvester
solutions describing where x, H and S settle under the optimal gain), the
invertibility and periodicity of the steady-state moment matrix, the
averaged slow dynamics of (K, theta) and a Lyapunov decrease check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lqr
from .dither import Exosystem, exo_trajectory
from .linalg import pinv, solve_sylvester, unvec, vec


@dataclass(frozen=True)
class SteadyStateMaps:
    pi_x: np.ndarray
    pi_h: np.ndarray
    pi_s: np.ndarray
    m_mat: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return self.pi_x.shape[0]

    @property
    def d(self) -> int:
        """Regressor dimension n + m."""
        return self.m_mat.shape[0]


@dataclass(frozen=True)
class AveragedState:
    k_tilde: np.ndarray
    theta_tilde: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.k_tilde**2) + np.sum(self.theta_tilde**2)))


def compute_pi_x(theta_star, k_star, exo: Exosystem) -> np.ndarray:
    """Solve ``Pi_x F = (A + B K*) Pi_x + B E``."""
    a, b = lqr.unpack_theta(theta_star)
    return solve_sylvester(exo.f, a + b @ k_star, b @ exo.e)


def compute_pi_h_pi_s(theta_star, k_star, exo: Exosystem, lam: float) -> SteadyStateMaps:
    """All three steady-state maps.

    ``Pi_H`` and ``Pi_S`` solve ``Pi (F kron F) = lam Pi + C`` with
    ``C = M kron M`` and ``C = (theta*^T M) kron M`` respectively, where
    ``M = [Pi_x; K* Pi_x + E]``.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    theta_star = np.asarray(theta_star, dtype=float)
    pi_x = compute_pi_x(theta_star, k_star, exo)
    m_mat = np.vstack([pi_x, k_star @ pi_x + exo.e])
    ff = np.kron(exo.f, exo.f)
    lam_i_h = lam * np.eye(m_mat.shape[0] ** 2)
    lam_i_s = lam * np.eye(m_mat.shape[0] * theta_star.shape[1])
    pi_h = solve_sylvester(ff, lam_i_h, np.kron(m_mat, m_mat))
    pi_s = solve_sylvester(ff, lam_i_s, np.kron(theta_star.T @ m_mat, m_mat))
    return SteadyStateMaps(pi_x, pi_h, pi_s, m_mat, lam)


def map_residuals(maps: SteadyStateMaps, theta_star, k_star, exo: Exosystem) -> dict[str, float]:
    """Frobenius residuals of the three Sylvester equations and of ``(theta*^T kron I) Pi_H = Pi_S``."""
    a, b = lqr.unpack_theta(theta_star)
    ff = np.kron(exo.f, exo.f)
    m_mat = maps.m_mat
    theta_star = np.asarray(theta_star, dtype=float)
    return {
        "pi_x": float(np.linalg.norm(maps.pi_x @ exo.f - (a + b @ k_star) @ maps.pi_x - b @ exo.e)),
        "pi_h": float(np.linalg.norm(maps.pi_h @ ff - maps.lam * maps.pi_h - np.kron(m_mat, m_mat))),
        "pi_s": float(np.linalg.norm(maps.pi_s @ ff - maps.lam * maps.pi_s
                                     - np.kron(theta_star.T @ m_mat, m_mat))),
        "identity": float(np.linalg.norm(np.kron(theta_star.T, np.eye(maps.d)) @ maps.pi_h
                                         - maps.pi_s)),
    }


def hss_at(maps: SteadyStateMaps, w) -> np.ndarray:
    """Steady-state value of H for dither state ``w``."""
    w = np.asarray(w, dtype=float)
    return unvec(maps.pi_h @ vec(np.outer(w, w)), maps.d, maps.d)


def sss_at(maps: SteadyStateMaps, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return unvec(maps.pi_s @ vec(np.outer(w, w)), maps.d, maps.n)


def _locus_residual(maps, theta_star, k_star, exo, w):
    a, b = lqr.unpack_theta(theta_star)
    ww = vec(np.outer(w, w))
    fw = exo.f @ w
    fwfw = vec(np.outer(fw, fw))
    phi = maps.m_mat @ w
    parts = {
        "x": (maps.pi_x @ fw, (a + b @ k_star) @ maps.pi_x @ w + b @ exo.e @ w),
        "h": (maps.pi_h @ fwfw, maps.lam * maps.pi_h @ ww + vec(np.outer(phi, phi))),
        "s": (maps.pi_s @ fwfw, maps.lam * maps.pi_s @ ww + vec(np.outer(phi, phi) @ theta_star)),
    }
    out = {}
    for key, (lhs, rhs) in parts.items():
        diff = float(np.linalg.norm(lhs - rhs))
        out[key] = (diff, diff / max(float(np.linalg.norm(rhs)), np.finfo(float).tiny))
    return out


def verify_lemma_ss(maps: SteadyStateMaps, theta_star, k_star, exo: Exosystem,
                    lam: float | None = None, num_samples: int = 100, seed: int = 0) -> dict:
    """Check that the steady-state map is invariant under one closed-loop step.

    Draws ``num_samples`` dither states on the sphere of radius ``||w0||``
    and compares both sides of the one-step invariance for the x, H and S
    blocks. Reports absolute and relative maxima per block and the
    ``Pi_H``/``Pi_S`` identity residual.
    """
    if lam is not None and lam != maps.lam:
        raise ValueError(f"maps were built for lambda={maps.lam}, got {lam}")
    theta_star = np.asarray(theta_star, dtype=float)
    rng = np.random.default_rng(seed)
    radius = np.linalg.norm(exo.w0)
    worst = {key: [0.0, 0.0] for key in ("x", "h", "s")}
    for _ in range(num_samples):
        w = rng.standard_normal(exo.n_w)
        w *= radius / np.linalg.norm(w)
        for key, (abs_r, rel_r) in _locus_residual(maps, theta_star, k_star, exo, w).items():
            worst[key][0] = max(worst[key][0], abs_r)
            worst[key][1] = max(worst[key][1], rel_r)
    report = {f"{key}_abs": v[0] for key, v in worst.items()}
    report.update({f"{key}_rel": v[1] for key, v in worst.items()})
    report["max_abs"] = max(v[0] for v in worst.values())
    report["max_rel"] = max(v[1] for v in worst.values())
    report["identity"] = map_residuals(maps, theta_star, k_star, exo)["identity"]
    return report


def hss_sweep(maps: SteadyStateMaps, exo: Exosystem, samples: int | None = None) -> dict:
    """Smallest singular value of ``H^ss_t`` over one dither period.

    When the dither has an exact period the sweep covers it and also
    reports the periodicity defect ``max ||H^ss_{t+N} - H^ss_t|| / ||H^ss_t||``.
    Otherwise ``samples`` (default 10_000) consecutive steps stand in.
    """
    period = exo.period()
    steps = period if period is not None else (samples or 10_000)
    ws = exo_trajectory(exo, steps + (period or 0))
    sig_min = np.inf
    defect = None
    for t in range(steps):
        h = hss_at(maps, ws[t])
        sig_min = min(sig_min, float(np.linalg.svd(h, compute_uv=False)[-1]))
        if period is not None:
            h_next = hss_at(maps, ws[t + period])
            rel = float(np.linalg.norm(h_next - h) / np.linalg.norm(h))
            defect = rel if defect is None else max(defect, rel)
    return {"sigma_min": sig_min, "period": period, "steps": steps, "periodicity_defect": defect}


def _optimal_gain(theta_star, cost, k_star):
    return lqr.dare_solve(theta_star, cost)[1] if k_star is None else np.asarray(k_star, dtype=float)


def averaged_step(state: AveragedState, theta_star, cost: lqr.CostSpec, gamma: float,
                  k_star=None) -> AveragedState:
    """Averaged slow dynamics: the estimate error shrinks by ``1 - gamma`` and
    the gain follows the gradient evaluated at the current estimate.

    ``k_star`` is computed from the DARE when not given.
    """
    k_star = _optimal_gain(theta_star, cost, k_star)
    grad = lqr.lqr_gradient(state.k_tilde + k_star, state.theta_tilde + theta_star, cost)
    return AveragedState(state.k_tilde - gamma * grad, (1.0 - gamma) * state.theta_tilde)


def averaged_trajectory(state0: AveragedState, theta_star, cost: lqr.CostSpec,
                        gamma: float, steps: int, k_star=None) -> list[AveragedState]:
    k_star = _optimal_gain(theta_star, cost, k_star)
    out = [state0]
    for _ in range(steps):
        out.append(averaged_step(out[-1], theta_star, cost, gamma, k_star))
    return out


def averaged_field(state: AveragedState, theta_star, cost: lqr.CostSpec, k_star=None):
    """The averaged vector field ``(-G(K, theta), -theta_tilde)``."""
    k_star = _optimal_gain(theta_star, cost, k_star)
    grad = lqr.lqr_gradient(state.k_tilde + k_star, state.theta_tilde + theta_star, cost)
    return -grad, -state.theta_tilde


def window_average_defect(maps: SteadyStateMaps, exo: Exosystem, state: AveragedState,
                          theta_star, cost: lqr.CostSpec, window: int, t0: int = 0,
                          k_star=None) -> float:
    """Distance between the window-averaged slow field (fast error frozen at
    zero) and the averaged field, over ``t0 + 1 .. t0 + window``."""
    k_star = _optimal_gain(theta_star, cost, k_star)
    ws = exo_trajectory(exo, t0 + window + 1)
    grad = lqr.lqr_gradient(state.k_tilde + k_star, state.theta_tilde + theta_star, cost)
    acc_theta = np.zeros_like(state.theta_tilde)
    for tau in range(t0 + 1, t0 + window + 1):
        h = hss_at(maps, ws[tau])
        acc_theta -= pinv(h) @ h @ state.theta_tilde
    avg_k, avg_theta = -grad, acc_theta / window
    ref_k, ref_theta = averaged_field(state, theta_star, cost, k_star)
    return float(np.sqrt(np.sum((avg_k - ref_k) ** 2) + np.sum((avg_theta - ref_theta) ** 2)))


def lyapunov_v(state: AveragedState, theta_star, cost: lqr.CostSpec, kappa: float = 0.1,
               k_star=None) -> float:
    """``kappa (J(K, theta*) - J(K*, theta*)) + ||theta_tilde||^2 / 2``."""
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    k_star = _optimal_gain(theta_star, cost, k_star)
    gap = (lqr.lqr_cost(state.k_tilde + k_star, theta_star, cost)
           - lqr.lqr_cost(k_star, theta_star, cost))
    return kappa * gap + 0.5 * float(np.sum(state.theta_tilde**2))


def gradient_dominance_ratio(k, theta_star, k_star, cost: lqr.CostSpec) -> float:
    """``(J(K) - J(K*)) / ||G(K)||^2`` for one sampled gain."""
    j, g = lqr.cost_and_gradient(k, theta_star, cost)
    gap = j - lqr.lqr_cost(k_star, theta_star, cost)
    return gap / float(np.sum(g**2))
