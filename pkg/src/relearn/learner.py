"""Exponentially forgotten least-squares learner for ``theta = [A B]^T``.

The learner keeps the weighted moments ``H = sum lambda^k phi phi^T`` and
``S = sum lambda^k phi x_next^T`` and moves the estimate along the
Newton-scaled gradient ``-gamma H^+ (H theta - S)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import pinv


@dataclass(frozen=True)
class LearnerState:
    h: np.ndarray
    s: np.ndarray
    theta_hat: np.ndarray

    @classmethod
    def initial(cls, theta0, h0=None, s0=None) -> "LearnerState":
        theta0 = np.array(theta0, dtype=float)
        d = theta0.shape[0]
        h = np.zeros((d, d)) if h0 is None else np.array(h0, dtype=float)
        s = np.zeros_like(theta0) if s0 is None else np.array(s0, dtype=float)
        return cls(h, s, theta0)


def regressor(x, u) -> np.ndarray:
    return np.concatenate([np.ravel(x), np.ravel(u)]).astype(float)


def rls_update(state: LearnerState, x, u, x_next, lam: float, gamma: float) -> LearnerState:
    """One learning step.

    The estimate moves with the moments *before* this sample is folded in;
    the moments are then discounted by ``lam`` and the new sample added.
    """
    if not 0 < lam < 1:
        raise ValueError("forgetting factor must lie in (0, 1)")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    h, s, theta = state.h, state.s, state.theta_hat
    theta_next = theta - gamma * (pinv(h) @ (h @ theta - s))
    phi = regressor(x, u)
    h_next = lam * h + np.outer(phi, phi)
    s_next = lam * s + np.outer(phi, np.ravel(x_next))
    return LearnerState(h_next, s_next, theta_next)
