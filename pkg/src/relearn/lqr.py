"""Model-based LQR: cost and exact policy gradient over stabilizing gains,
DARE ground truth, and the plain gradient-descent step.

A plant is carried around as ``theta = [A B]^T`` with shape ``(n+m, n)``;
a gain ``K`` has shape ``(m, n)`` and acts as ``u = K x``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs

from . import linalg
from .errors import DimensionError, NonStabilizableError, StabilityError

_getrf, _getrs = get_lapack_funcs(("getrf", "getrs"), dtype=np.float64)


def pack_theta(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.ndim < 2:
        b = b.reshape(a.shape[0], -1)
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise DimensionError(f"incompatible A {a.shape} and B {b.shape}")
    return np.vstack([a.T, b.T])


def unpack_theta(theta) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[1]
    if theta.shape[0] <= n:
        raise DimensionError(f"theta must have more rows than columns, got {theta.shape}")
    return theta[:n].T, theta[n:].T


@dataclass(frozen=True)
class CostSpec:
    """LQR weights. ``q`` must be positive definite unless ``allow_psd`` is set."""

    q: np.ndarray
    r: np.ndarray
    allow_psd: bool = False

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        for name, mat in (("q", q), ("r", r)):
            if mat.shape[0] != mat.shape[1]:
                raise DimensionError(f"{name} must be square")
            if not np.allclose(mat, mat.T, atol=1e-12 * max(1.0, np.abs(mat).max())):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise ValueError("r must be positive definite")
        q_min = np.linalg.eigvalsh(q).min()
        if q_min <= 0:
            if not self.allow_psd or q_min < -1e-12 * max(1.0, np.abs(q).max()):
                raise ValueError("q must be positive definite (set allow_psd for PSD q)")
            warnings.warn("q is only semidefinite; (A, q^1/2) must be detectable", stacklevel=2)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.r.shape[0]


def closed_loop(theta, k) -> np.ndarray:
    a, b = unpack_theta(theta)
    k = np.atleast_2d(np.asarray(k, dtype=float))
    if k.shape != (b.shape[1], a.shape[0]):
        raise DimensionError(f"gain is {k.shape}, expected {(b.shape[1], a.shape[0])}")
    return a + b @ k


def _stein_operator(a_cl):
    """LU factors of ``I - a_cl kron a_cl``.

    The controllability-form Stein system uses this operator and the
    cost-form system uses its transpose, so one factorization serves both.
    """
    n = a_cl.shape[0]
    op = np.eye(n * n) - np.multiply.outer(a_cl, a_cl).transpose(0, 2, 1, 3).reshape(n * n, n * n)
    lu, piv, info = _getrf(op)
    if info != 0:
        raise StabilityError("Stein operator is singular")
    return lu, piv


def _stein_solve(factors, rhs, transpose: bool) -> np.ndarray:
    n = rhs.shape[0]
    x, info = _getrs(factors[0], factors[1], rhs.reshape(-1, order="F"), trans=int(transpose))
    x = x.reshape((n, n), order="F")
    return 0.5 * (x + x.T)


def _checked_closed_loop(theta, k) -> np.ndarray:
    a_cl = closed_loop(theta, k)
    rho = linalg.spectral_radius(a_cl)
    if rho >= 1.0 - linalg.SCHUR_TOL:
        raise StabilityError("gain is not stabilizing", rho=rho)
    return a_cl


def _cost_grad(a_cl, b, k, cost: CostSpec, want_grad: bool = True):
    """Cost and gradient for a closed loop already known to be Schur."""
    factors = _stein_operator(a_cl)
    p = _stein_solve(factors, cost.q + k.T @ cost.r @ k, transpose=True)
    j = 0.5 * float(np.trace(p))
    if not want_grad:
        return j, None
    w = _stein_solve(factors, np.eye(a_cl.shape[0]), transpose=False)
    return j, (cost.r @ k + b.T @ p @ a_cl) @ w


def lqr_cost(k, theta, cost: CostSpec) -> float:
    """Return ``J(K, theta) = tr(P) / 2`` with P the closed-loop cost-to-go matrix."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    _, b = unpack_theta(theta)
    return _cost_grad(_checked_closed_loop(theta, k), b, k, cost, want_grad=False)[0]


def cost_and_gradient(k, theta, cost: CostSpec) -> tuple[float, np.ndarray]:
    """Cost and its gradient with respect to K.

    ``G = (R K + B^T P (A + B K)) W`` where P and W solve the cost-form and
    controllability-form Stein equations of the closed loop.
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    _, b = unpack_theta(theta)
    return _cost_grad(_checked_closed_loop(theta, k), b, k, cost)


def lqr_gradient(k, theta, cost: CostSpec) -> np.ndarray:
    return cost_and_gradient(k, theta, cost)[1]


def gradient_step(k, theta, cost: CostSpec, gamma: float) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    k = np.atleast_2d(np.asarray(k, dtype=float))
    return k - gamma * lqr_gradient(k, theta, cost)


def finite_diff_gradient(k, theta, cost: CostSpec, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``lqr_cost``; used as a test oracle."""
    if not h > 0:
        raise ValueError("step h must be positive")
    k = np.atleast_2d(np.asarray(k, dtype=float))
    grad = np.zeros_like(k)
    for idx in np.ndindex(*k.shape):
        e = np.zeros_like(k)
        e[idx] = h
        grad[idx] = (lqr_cost(k + e, theta, cost) - lqr_cost(k - e, theta, cost)) / (2 * h)
    return grad


def riccati_map(p, a, b, cost: CostSpec) -> np.ndarray:
    bp = b.T @ p
    gain_term = np.linalg.solve(cost.r + bp @ b, bp @ a)
    out = cost.q + a.T @ p @ a - (a.T @ p @ b) @ gain_term
    return 0.5 * (out + out.T)


def dare_gain(p, theta, cost: CostSpec) -> np.ndarray:
    a, b = unpack_theta(theta)
    return -np.linalg.solve(cost.r + b.T @ p @ b, b.T @ p @ a)


def dare_solve(theta, cost: CostSpec, tol: float = 1e-10, max_iter: int = 10**6,
               p0=None, polish: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing DARE solution by fixed-point Riccati iteration.

    Starts from ``p0`` (default ``q``) and stops once
    ``||Ric(P) - P||_F <= tol * max(1, ||P||_F)``. The fixed-point residual
    understates the error in P when the optimal loop is slow, so by default
    a few policy-iteration (Hewer) steps follow. Returns ``(P, K*)``.
    """
    a, b = unpack_theta(theta)
    if a.shape[0] != cost.n or b.shape[1] != cost.m:
        raise DimensionError("cost weights do not match theta")
    p = cost.q.copy() if p0 is None else np.array(p0, dtype=float)
    for _ in range(max_iter):
        p_next = riccati_map(p, a, b, cost)
        if not np.all(np.isfinite(p_next)):
            break
        resid = np.linalg.norm(p_next - p)
        p = p_next
        if resid <= tol * max(1.0, np.linalg.norm(p)):
            k_star = dare_gain(p, theta, cost)
            rho = linalg.spectral_radius(a + b @ k_star)
            if rho >= 1.0:
                raise NonStabilizableError(f"DARE fixed point is not stabilizing (rho={rho:.6g})")
            if polish:
                p, k_star = _hewer_polish(p, k_star, a, b, cost)
            return p, k_star
    raise NonStabilizableError("Riccati iteration did not converge; (A, B) may not be stabilizable")


def _hewer_polish(p, k, a, b, cost: CostSpec, max_steps: int = 20):
    for _ in range(max_steps):
        p_new = linalg.solve_stein_obs(a + b @ k, cost.q + k.T @ cost.r @ k)
        k = -np.linalg.solve(cost.r + b.T @ p_new @ b, b.T @ p_new @ a)
        done = np.linalg.norm(p_new - p) <= 1e-14 * max(1.0, np.linalg.norm(p_new))
        p = p_new
        if done:
            break
    return p, k


def dare_residual(p, theta, cost: CostSpec) -> float:
    """Relative fixed-point residual ``||Ric(P) - P||_F / max(1, ||P||_F)``."""
    a, b = unpack_theta(theta)
    return float(np.linalg.norm(riccati_map(p, a, b, cost) - p) / max(1.0, np.linalg.norm(p)))
