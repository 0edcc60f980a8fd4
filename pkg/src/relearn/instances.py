"""Ready-made problem instances."""
from __future__ import annotations

import numpy as np

from .linalg import zoh_discretize
from .lqr import CostSpec, pack_theta

# longitudinal aircraft model, continuous time
AIRCRAFT_AC = np.array([
    [-0.0151, -60.5651, 0.0, -32.174],
    [-0.0001, -1.3411, 0.9929, 0.0],
    [0.00018, 43.2541, -0.86939, 0.0],
    [0.0, 0.0, 1.0, 0.0],
])
AIRCRAFT_BC = np.array([
    [-2.516, -13.136],
    [-0.1689, -0.2514],
    [-17.251, -1.5766],
    [0.0, 0.0],
])
AIRCRAFT_TS = 0.05


def aircraft_theta(ts: float = AIRCRAFT_TS) -> np.ndarray:
    """Zero-order-hold discretization of the aircraft model, packed as ``[A B]^T``."""
    return pack_theta(*zoh_discretize(AIRCRAFT_AC, AIRCRAFT_BC, ts))


def random_cost(n: int, m: int, seed: int = 0) -> CostSpec:
    """Seeded positive definite weights ``Q = L L^T / 4`` and ``R = M M^T / 2 + 0.1 I``."""
    rng = np.random.default_rng(seed)
    lq = rng.standard_normal((n, n))
    mr = rng.standard_normal((m, m))
    q = lq @ lq.T / 4
    r = mr @ mr.T / 2 + 0.1 * np.eye(m)
    # a draw with a near-singular L would give an almost PSD q; add a floor
    q = q + 1e-6 * np.eye(n)
    return CostSpec(0.5 * (q + q.T), 0.5 * (r + r.T))


def perturb_theta(theta, scale: float, seed: int) -> np.ndarray:
    """``theta + scale * N(0, 1)`` entrywise."""
    theta = np.asarray(theta, dtype=float)
    return theta + scale * np.random.default_rng(seed).standard_normal(theta.shape)
