import numpy as np
import pytest

from relearn import averaging, dither, instances, lqr


@pytest.fixture(scope="session")
def aircraft():
    theta = instances.aircraft_theta()
    cost = instances.random_cost(4, 2, seed=0)
    p_star, k_star = lqr.dare_solve(theta, cost)
    exo = dither.build_exosystem(4, 2, omega1=0.2, amplitude=0.01, seed=0)
    return {"theta": theta, "cost": cost, "p": p_star, "k": k_star, "exo": exo}


@pytest.fixture(scope="session")
def aircraft_maps(aircraft):
    return averaging.compute_pi_h_pi_s(aircraft["theta"], aircraft["k"], aircraft["exo"], 0.995)


@pytest.fixture
def scalar_plant():
    theta = lqr.pack_theta([[0.5]], [[1.0]])
    return theta, lqr.CostSpec(np.eye(1), np.eye(1))


def random_stabilizable(rng, n, m):
    """Random plant with a known stabilizing gain (the DARE gain)."""
    while True:
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, m))
        theta = lqr.pack_theta(a, b)
        cost = instances.random_cost(n, m, int(rng.integers(1 << 30)))
        try:
            _, k = lqr.dare_solve(theta, cost, max_iter=20000)
        except Exception:
            continue
        return theta, cost, k
