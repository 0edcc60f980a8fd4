import math

import numpy as np
import pytest

from relearn import averaging, closed_loop as cl, dither, instances, lqr
from relearn.errors import StabilityError
from relearn.learner import LearnerState, rls_update

LAM = 0.995


def test_pi_x_zero_input_gives_zero(aircraft):
    exo = aircraft["exo"].with_e(np.zeros((2, 10)))
    np.testing.assert_array_equal(averaging.compute_pi_x(aircraft["theta"], aircraft["k"], exo), 0)


def test_pi_x_scalar_residual():
    theta = lqr.pack_theta([[0.5]], [[1.0]])
    exo = dither.Exosystem(dither.rotation(0.3), [[1.0, -0.4]], [1.0, 0.0])
    pi_x = averaging.compute_pi_x(theta, np.zeros((1, 1)), exo)
    resid = pi_x @ exo.f - 0.5 * pi_x - exo.e
    assert np.abs(resid).max() <= 1e-10


def test_state_converges_to_pi_x_w(aircraft, aircraft_maps):
    a, b = lqr.unpack_theta(aircraft["theta"])
    a_cl = a + b @ aircraft["k"]
    exo = aircraft["exo"]
    x, w = np.full(4, 10.0), exo.w0
    for _ in range(3000):
        x, w = a_cl @ x + b @ exo.e @ w, exo.f @ w
    assert np.linalg.norm(x - aircraft_maps.pi_x @ w) <= 1e-10


def test_map_residuals_and_identity(aircraft, aircraft_maps):
    res = averaging.map_residuals(aircraft_maps, aircraft["theta"], aircraft["k"], aircraft["exo"])
    for key in ("pi_x", "pi_h", "pi_s", "identity"):
        assert res[key] <= 1e-8, key
    assert aircraft_maps.pi_h.shape == (36, 100)
    assert aircraft_maps.pi_s.shape == (24, 100)


def test_maps_match_closed_form(aircraft, aircraft_maps):
    # Pi (F kron F - lam I) = C, solved by right division
    ff = np.kron(aircraft["exo"].f, aircraft["exo"].f) - LAM * np.eye(100)
    m_mat = aircraft_maps.m_mat
    pi_h = np.linalg.solve(ff.T, np.kron(m_mat, m_mat).T).T
    pi_s = np.linalg.solve(ff.T, np.kron(aircraft["theta"].T @ m_mat, m_mat).T).T
    np.testing.assert_allclose(aircraft_maps.pi_h, pi_h, rtol=1e-9, atol=1e-9 * np.abs(pi_h).max())
    np.testing.assert_allclose(aircraft_maps.pi_s, pi_s, rtol=1e-9, atol=1e-9 * np.abs(pi_s).max())


def test_zero_dither_gives_zero_maps(aircraft):
    exo = aircraft["exo"].with_e(np.zeros((2, 10)))
    maps = averaging.compute_pi_h_pi_s(aircraft["theta"], aircraft["k"], exo, LAM)
    assert not np.any(maps.m_mat) and not np.any(maps.pi_h) and not np.any(maps.pi_s)
    report = averaging.verify_lemma_ss(maps, aircraft["theta"], aircraft["k"], exo, num_samples=10)
    assert report["max_abs"] == 0.0 and report["identity"] == 0.0


def test_lambda_validation(aircraft):
    with pytest.raises(ValueError):
        averaging.compute_pi_h_pi_s(aircraft["theta"], aircraft["k"], aircraft["exo"], 1.0)


def test_simulated_moments_reach_steady_state(aircraft, aircraft_maps):
    theta, k_star, exo = aircraft["theta"], aircraft["k"], aircraft["exo"]
    a, b = lqr.unpack_theta(theta)
    w = exo.w0
    x = aircraft_maps.pi_x @ w
    state = LearnerState.initial(theta)
    for _ in range(6000):
        u = k_star @ x + exo.e @ w
        x_next = a @ x + b @ u
        state = rls_update(state, x, u, x_next, LAM, 0.0)
        x, w = x_next, exo.f @ w
    h_ss = averaging.hss_at(aircraft_maps, w)
    s_ss = averaging.sss_at(aircraft_maps, w)
    assert np.abs(state.h - h_ss).max() <= 1e-6 * np.abs(h_ss).max()
    assert np.abs(state.s - s_ss).max() <= 1e-6 * np.abs(s_ss).max()


def test_hss_examples(aircraft, aircraft_maps):
    np.testing.assert_array_equal(averaging.hss_at(aircraft_maps, np.zeros(10)), 0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = averaging.hss_at(aircraft_maps, rng.standard_normal(10))
        assert np.abs(h - h.T).max() <= 1e-10 * np.abs(h).max()


def test_hss_invertible_surrogate_sweep(aircraft_maps, aircraft):
    sweep = averaging.hss_sweep(aircraft_maps, aircraft["exo"], samples=2000)
    assert sweep["period"] is None and sweep["steps"] == 2000
    assert sweep["sigma_min"] > 0


def test_hss_periodic_rational_dither(aircraft):
    freqs = [2 * math.pi * k / 40 for k in (1, 2, 4, 8, 16)]
    exo = dither.build_exosystem(4, 2, frequencies=freqs)
    maps = averaging.compute_pi_h_pi_s(aircraft["theta"], aircraft["k"], exo, LAM)
    sweep = averaging.hss_sweep(maps, exo)
    assert sweep["period"] == 40
    assert sweep["sigma_min"] > 0
    assert sweep["periodicity_defect"] <= 1e-9


def test_locus_report(aircraft, aircraft_maps):
    report = averaging.verify_lemma_ss(aircraft_maps, aircraft["theta"], aircraft["k"],
                                       aircraft["exo"], LAM, num_samples=100)
    for key in ("x_abs", "h_abs", "s_abs", "x_rel", "h_rel", "s_rel", "identity"):
        assert key in report
    assert report["max_abs"] <= 1e-7
    assert report["max_rel"] <= 1e-9
    with pytest.raises(ValueError):
        averaging.verify_lemma_ss(aircraft_maps, aircraft["theta"], aircraft["k"],
                                  aircraft["exo"], 0.9)


def _start(aircraft, scale=0.01, seed=1):
    theta0 = instances.perturb_theta(aircraft["theta"], scale, seed)
    _, k0 = lqr.dare_solve(theta0, aircraft["cost"])
    return averaging.AveragedState(k0 - aircraft["k"], theta0 - aircraft["theta"])


def test_origin_is_fixed_point(aircraft):
    zero = averaging.AveragedState(np.zeros((2, 4)), np.zeros((6, 4)))
    out = averaging.averaged_step(zero, aircraft["theta"], aircraft["cost"], 0.1, aircraft["k"])
    assert out.norm() <= 1e-10
    assert averaging.lyapunov_v(zero, aircraft["theta"], aircraft["cost"], 0.1,
                                aircraft["k"]) == pytest.approx(0, abs=1e-12)


def test_averaged_step_computes_optimal_gain_when_missing(aircraft):
    state = _start(aircraft)
    a = averaging.averaged_step(state, aircraft["theta"], aircraft["cost"], 1e-3)
    b = averaging.averaged_step(state, aircraft["theta"], aircraft["cost"], 1e-3, aircraft["k"])
    np.testing.assert_allclose(a.k_tilde, b.k_tilde, atol=1e-10)


def test_non_stabilizing_composite_gain(aircraft):
    bad = averaging.AveragedState(-aircraft["k"], np.zeros((6, 4)))
    with pytest.raises(StabilityError):
        averaging.averaged_step(bad, aircraft["theta"], aircraft["cost"], 1e-3, aircraft["k"])
    with pytest.raises(StabilityError):
        averaging.lyapunov_v(bad, aircraft["theta"], aircraft["cost"], 0.1, aircraft["k"])
    with pytest.raises(ValueError):
        averaging.lyapunov_v(bad, aircraft["theta"], aircraft["cost"], 1.5, aircraft["k"])


def test_averaged_system_converges(aircraft):
    gamma, steps = 5e-4, 12_000
    state0 = _start(aircraft)
    traj = averaging.averaged_trajectory(state0, aircraft["theta"], aircraft["cost"], gamma,
                                         steps, aircraft["k"])
    th0 = state0.theta_tilde
    for t in (1, 100, steps):
        np.testing.assert_allclose(traj[t].theta_tilde, (1 - gamma) ** t * th0,
                                   rtol=1e-12, atol=1e-16)
    norms = np.array([s.norm() for s in traj])
    assert norms[-1] < 0.05 * norms[0]
    _, a2, r2 = cl.fit_exponential_rate(norms)
    assert a2 > 0 and r2 >= 0.95
    vs = np.array([averaging.lyapunov_v(s, aircraft["theta"], aircraft["cost"], 0.1,
                                        aircraft["k"]) for s in traj[::10]])
    assert np.all(np.diff(vs) <= 1e-12 * vs[0])


def test_lyapunov_positive(aircraft):
    rng = np.random.default_rng(5)
    count = 0
    while count < 100:
        state = averaging.AveragedState(0.05 * rng.standard_normal((2, 4)),
                                        0.01 * rng.standard_normal((6, 4)))
        a, b = lqr.unpack_theta(aircraft["theta"])
        if not lqr.linalg.is_schur(a + b @ (aircraft["k"] + state.k_tilde)):
            continue
        assert averaging.lyapunov_v(state, aircraft["theta"], aircraft["cost"], 0.1,
                                    aircraft["k"]) > 0
        count += 1


def test_window_average_matches_averaged_field(aircraft, aircraft_maps):
    rng = np.random.default_rng(11)
    done = 0
    while done < 10:
        state = averaging.AveragedState(0.01 * rng.standard_normal((2, 4)),
                                        0.01 * rng.standard_normal((6, 4)))
        a_cl = lqr.closed_loop(aircraft["theta"] + state.theta_tilde, aircraft["k"] + state.k_tilde)
        if not lqr.linalg.is_schur(a_cl):
            continue
        done += 1
        defects = [averaging.window_average_defect(aircraft_maps, aircraft["exo"], state,
                                                   aircraft["theta"], aircraft["cost"], window,
                                                   k_star=aircraft["k"])
                   for window in (5, 50)]
        assert max(defects) <= 1e-10 * state.norm()


def test_full_loop_tracks_averaged_system(aircraft):
    gamma = 5e-4
    steps = int(1 / gamma)
    theta, cost, k_star, exo = aircraft["theta"], aircraft["cost"], aircraft["k"], aircraft["exo"]
    state0 = _start(aircraft)
    cfg = cl.SimConfig(gamma, LAM, steps, cl.sample_x0(4), state0.k_tilde + k_star,
                       state0.theta_tilde + theta, exo)
    x, w, k = cfg.x0, exo.w0, cfg.k0
    learner = LearnerState.initial(cfg.theta0)
    avg = state0
    worst = 0.0
    for _ in range(steps):
        x, w, learner, k, *_ = cl.relearn_step(x, w, learner, k, theta, cost, cfg)
        avg = averaging.averaged_step(avg, theta, cost, gamma, k_star)
        gap = np.sqrt(np.sum((k - k_star - avg.k_tilde) ** 2)
                      + np.sum((learner.theta_hat - theta - avg.theta_tilde) ** 2))
        worst = max(worst, gap)
    # the gap stays within a small multiple of gamma times the initial distance
    assert worst <= 20 * gamma * state0.norm()
    assert avg.norm() < state0.norm()


def test_gradient_dominance_ratio_bounded(aircraft):
    rng = np.random.default_rng(2)
    ratios = []
    for _ in range(30):
        k = aircraft["k"] + 0.02 * rng.standard_normal((2, 4))
        a, b = lqr.unpack_theta(aircraft["theta"])
        if lqr.linalg.is_schur(a + b @ k):
            ratios.append(averaging.gradient_dominance_ratio(k, aircraft["theta"], aircraft["k"],
                                                             aircraft["cost"]))
    assert ratios and all(0 < r < np.inf for r in ratios)
