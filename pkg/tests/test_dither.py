import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relearn import dither
from relearn.errors import ConstructionError, DimensionError


def test_frequency_schedules():
    paired = dither.frequency_schedule(0.2, 5, "paired")
    np.testing.assert_allclose(paired, [0.2, 0.4, 0.8, 1.6, 3.2])
    np.testing.assert_allclose(dither.frequency_schedule(0.2, 5, "geometric"), paired)
    with pytest.raises(ValueError):
        dither.frequency_schedule(0.2, 3, "other")


def test_small_exosystem():
    exo = dither.build_exosystem(1, 1, omega1=0.3, amplitude=0.5, seed=1)
    assert exo.n_w == 4
    np.testing.assert_allclose(np.abs(np.linalg.eigvals(exo.f)), 1.0, atol=1e-12)
    np.testing.assert_allclose(exo.f[:2, 2:], 0.0)
    np.testing.assert_allclose(exo.w0, [0.5, 0.0, 0.5, 0.0])


def test_aircraft_exosystem(aircraft):
    exo = aircraft["exo"]
    assert exo.n_w == 10 and exo.m == 2
    stack = dither.observability_stack(exo.e, exo.f, 4)
    assert stack.shape == (10, 10)
    assert dither.numerical_rank(stack) == 10
    np.testing.assert_allclose(exo.w0, np.tile([0.01, 0.0], 5))
    moduli = np.abs(np.linalg.eigvals(exo.f))
    assert np.all(np.abs(moduli - 1) <= 1e-10)


def test_construction_errors():
    with pytest.raises(ValueError):
        dither.build_exosystem(2, 1, omega1=2.0)
    with pytest.raises(ValueError):
        dither.build_exosystem(2, 1, amplitude=0.0)
    # three channels cannot be rich of order n+1 with n+1 planar blocks
    with pytest.raises(ConstructionError):
        dither.build_exosystem(2, 3)


def test_exosystem_invariants():
    with pytest.raises(ValueError):
        dither.Exosystem(2 * np.eye(2), np.ones((1, 2)), [1.0, 0.0])
    with pytest.raises(ValueError):
        dither.Exosystem(np.eye(2), np.ones((1, 2)), [0.0, 0.0])
    f = np.eye(4)
    with pytest.raises(ValueError):
        dither.Exosystem(f, np.ones((1, 4)), [1.0, 0.0, 0.0, 0.0], (0.0, 0.0))


def test_step_examples(aircraft):
    exo = aircraft["exo"]
    w_next, d = dither.step_exosystem(exo, np.zeros(10))
    np.testing.assert_array_equal(w_next, 0.0)
    np.testing.assert_array_equal(d, 0.0)
    w_next, d = dither.step_exosystem(exo, exo.w0)
    assert np.linalg.norm(w_next) == pytest.approx(np.linalg.norm(exo.w0), abs=1e-12)
    np.testing.assert_allclose(d, exo.e @ exo.w0)
    with pytest.raises(DimensionError):
        dither.step_exosystem(exo, np.zeros(3))


def test_rational_period_returns_to_start():
    exo = dither.build_exosystem(1, 1, frequencies=[2 * math.pi / 8, 2 * math.pi / 4])
    assert exo.period() == 8
    w = exo.w0
    for _ in range(8):
        w, _ = dither.step_exosystem(exo, w)
    np.testing.assert_allclose(w, exo.w0, atol=1e-9)


def test_irrational_schedule_has_no_period(aircraft):
    assert aircraft["exo"].period() is None


def test_norm_constant_long_run(aircraft):
    ws = dither.exo_trajectory(aircraft["exo"], 10_000)
    norms = np.linalg.norm(ws, axis=1)
    assert np.abs(norms - norms[0]).max() <= 1e-8


@settings(max_examples=30)
@given(st.floats(0.01, 1.5), st.floats(1e-3, 10.0))
def test_amplitude_sets_block_norm(omega1, amp):
    exo = dither.build_exosystem(1, 1, omega1=omega1, amplitude=1.0).with_amplitude(amp)
    ws = dither.exo_trajectory(exo, 50)
    block_norms = np.linalg.norm(ws.reshape(50, -1, 2), axis=2)
    np.testing.assert_allclose(block_norms, amp, rtol=1e-12)


def test_pe_gramian_examples(aircraft):
    zeros = np.zeros((20, 3))
    assert dither.pe_gramian(zeros, 0, 5) == (0.0, 0.0)
    repeated = np.tile([1.0, 2.0, 3.0], (20, 1))
    lam_min, lam_max = dither.pe_gramian(repeated, 0, 10)
    assert lam_min == pytest.approx(0.0, abs=1e-12) and lam_max > 0
    assert not dither.is_persistently_exciting(repeated, 0, 10)
    exo = aircraft["exo"]
    ws = dither.exo_trajectory(exo, 20 + 4 * exo.n_w + 1)
    for t0 in range(20):
        assert dither.is_persistently_exciting(ws, t0, 4 * exo.n_w)
    with pytest.raises(ValueError):
        dither.pe_gramian(ws, 0, ws.shape[0])


def test_pe_gramian_against_definition():
    rng = np.random.default_rng(0)
    ws = rng.standard_normal((30, 3))
    gram = sum(np.outer(ws[t], ws[t]) for t in range(6, 16))
    eig = np.linalg.eigvalsh(gram)
    lam_min, lam_max = dither.pe_gramian(ws, 5, 10)
    assert lam_min == pytest.approx(eig[0]) and lam_max == pytest.approx(eig[-1])


def test_hankel_richness_examples(aircraft):
    assert dither.richness_hankel_rank(np.ones(10), 1, 8) == 1
    assert dither.richness_hankel_rank(np.zeros((10, 2)), 1, 8) == 0
    exo = aircraft["exo"]
    t_d = 4 * 2 * 5
    ds = dither.exo_trajectory(exo, t_d + 50) @ exo.e.T
    for t0 in range(0, 50, 7):
        assert dither.richness_hankel_rank(ds, 4, t_d, t0) == 10
    with pytest.raises(ValueError):
        dither.richness_hankel_rank(ds[:5], 4, t_d)


def test_hankel_layout():
    ds = np.arange(6.0)
    h = dither.hankel_blocks(ds, 1, 4)
    np.testing.assert_array_equal(h, [[0, 1, 2], [1, 2, 3]])
