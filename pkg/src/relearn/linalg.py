"""Dense matrix kernels: Kronecker/vec algebra, Stein and Sylvester solvers,
spectral tests, and zero-order-hold discretization.

Everything here works on plain ``numpy`` arrays. ``vec`` follows the usual
column-stacking convention so that ``vec(X1 @ X2) == kron(X2.T, I) @ vec(X1)``.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, NotSchurError, SingularMatrixError, SpectraOverlapError

SCHUR_TOL = 1e-9
PINV_RCOND = 1e-12


def _matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _square(a, name="matrix") -> np.ndarray:
    a = _matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def kron(a, b) -> np.ndarray:
    return np.kron(_matrix(a, "a"), _matrix(b, "b"))


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into a 1-D array."""
    return _matrix(m).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != rows * cols:
        raise DimensionError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def pinv(m, rcond: float = PINV_RCOND) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``rcond * s_max`` are dropped."""
    return np.linalg.pinv(_matrix(m), rcond=rcond)


def spectral_radius(m) -> float:
    m = _square(m)
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def is_schur(m, tol: float = SCHUR_TOL) -> bool:
    return spectral_radius(m) < 1.0 - tol


def solve_dense(a, b) -> np.ndarray:
    """Solve ``a @ x = b``; raises SingularMatrixError when ``a`` is numerically singular."""
    a = _square(a, "a")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, expected {a.shape[0]}")
    # scipy takes a division shortcut for diagonal input, hence the errstate
    with warnings.catch_warnings(), np.errstate(divide="raise", invalid="raise"):
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            x = sla.solve(a, b)
        except (np.linalg.LinAlgError, sla.LinAlgWarning, FloatingPointError) as exc:
            raise SingularMatrixError(f"singular system: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("singular system: non-finite solution")
    return x


def _stein(a, q, transpose: bool, tol: float) -> np.ndarray:
    a = _square(a, "a")
    q = _square(q, "q")
    n = a.shape[0]
    if q.shape[0] != n:
        raise DimensionError(f"q is {q.shape}, expected {n}x{n}")
    rho = spectral_radius(a)
    if rho >= 1.0 - tol:
        raise NotSchurError("Stein equation needs a Schur matrix", rho=rho)
    at = a.T if transpose else a
    lhs = np.eye(n * n) - np.kron(at, at)
    x = unvec(solve_dense(lhs, vec(q)), n, n)
    if np.allclose(q, q.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(q).max())):
        x = 0.5 * (x + x.T)
    return x


def solve_stein_ctrl(a, q, tol: float = SCHUR_TOL) -> np.ndarray:
    """Return W solving ``a W a^T - W = -q`` for Schur ``a``."""
    return _stein(a, q, transpose=False, tol=tol)


def solve_stein_obs(a, q, tol: float = SCHUR_TOL) -> np.ndarray:
    """Return P solving ``a^T P a - P = -q`` for Schur ``a``."""
    return _stein(a, q, transpose=True, tol=tol)


def solve_sylvester(p, q, c) -> np.ndarray:
    """Solve ``X p = q X + c`` for X.

    Uses the vectorized form ``(p^T kron I - I kron q) vec(X) = vec(c)``; a
    singular operator means the spectra of ``p`` and ``q`` intersect.
    """
    p = _square(p, "p")
    q = _square(q, "q")
    c = _matrix(c, "c")
    if c.shape != (q.shape[0], p.shape[0]):
        raise DimensionError(f"c is {c.shape}, expected {(q.shape[0], p.shape[0])}")
    rows, cols = c.shape
    op = np.kron(p.T, np.eye(rows)) - np.kron(np.eye(cols), q)
    try:
        x = solve_dense(op, vec(c))
    except SingularMatrixError:
        raise SpectraOverlapError("Sylvester operator is singular: spectra overlap") from None
    return unvec(x, rows, cols)


def expm(m) -> np.ndarray:
    return sla.expm(_square(m))


def zoh_discretize(a_c, b_c, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization of ``dx/dt = a_c x + b_c u`` with step ``ts``."""
    if not ts > 0:
        raise ValueError("sampling time must be positive")
    a_c = _square(a_c, "a_c")
    b_c = _matrix(b_c, "b_c")
    n, m = b_c.shape
    if n != a_c.shape[0]:
        raise DimensionError(f"b_c has {n} rows, expected {a_c.shape[0]}")
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = a_c
    blk[:n, n:] = b_c
    phi = expm(blk * ts)
    return phi[:n, :n], phi[:n, n:]
