"""Marginally stable oscillator used as a probing dither, plus numerical
checks for persistency of excitation and sufficient richness.

The oscillator is ``w+ = F w``, ``d = E w`` with ``F`` block-diagonal in
planar rotations, so every eigenvalue of ``F`` sits on the unit circle and
``||w_t||`` is constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.linalg import block_diag

from .errors import ConstructionError, DimensionError

RANK_RTOL = 1e-9
UNIT_CIRCLE_TOL = 1e-10
MAX_E_DRAWS = 100


def rotation(omega: float) -> np.ndarray:
    c, s = math.cos(omega), math.sin(omega)
    return np.array([[c, s], [-s, c]])


def frequency_schedule(omega1: float, num_blocks: int, schedule: str = "paired") -> list[float]:
    """Return one rotation frequency per planar block.

    ``"paired"`` assigns a frequency to each of the ``2 * num_blocks`` state
    components: even components repeat their predecessor and odd ones double
    the component two places back; each block takes its first component.
    ``"geometric"`` doubles block by block. Both give ``omega1 * 2**i``.
    """
    if schedule == "geometric":
        return [omega1 * 2.0**i for i in range(num_blocks)]
    if schedule != "paired":
        raise ValueError(f"unknown frequency schedule {schedule!r}")
    comp = [omega1]
    for j in range(2, 2 * num_blocks + 1):
        comp.append(comp[-1] if j % 2 == 0 else 2.0 * comp[-2])
    return comp[::2]


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.atleast_2d(mat), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def observability_stack(e: np.ndarray, f: np.ndarray, depth: int) -> np.ndarray:
    """Stack ``[E; E F; ...; E F^depth]``."""
    rows = [e]
    for _ in range(depth):
        rows.append(rows[-1] @ f)
    return np.vstack(rows)


@dataclass(frozen=True)
class Exosystem:
    f: np.ndarray
    e: np.ndarray
    w0: np.ndarray
    frequencies: tuple[float, ...] = field(default=())

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        e = np.atleast_2d(np.asarray(self.e, dtype=float))
        w0 = np.asarray(self.w0, dtype=float).reshape(-1)
        if f.shape[0] != f.shape[1] or e.shape[1] != f.shape[0] or w0.size != f.shape[0]:
            raise DimensionError(f"inconsistent shapes F {f.shape}, E {e.shape}, w0 {w0.shape}")
        moduli = np.abs(np.linalg.eigvals(f))
        if np.any(np.abs(moduli - 1.0) > UNIT_CIRCLE_TOL):
            raise ValueError("exosystem matrix must have all eigenvalues on the unit circle")
        if not np.any(w0):
            raise ValueError("w0 must be nonzero")
        if self.frequencies and f.shape[0] == 2 * len(self.frequencies):
            if not np.all(np.any(w0.reshape(-1, 2) != 0, axis=1)):
                raise ValueError("every planar block of w0 must be nonzero")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "frequencies", tuple(float(x) for x in self.frequencies))

    @property
    def n_w(self) -> int:
        return self.f.shape[0]

    @property
    def m(self) -> int:
        return self.e.shape[0]

    def with_amplitude(self, amplitude: float) -> "Exosystem":
        """Same F and E with ``w0`` rescaled so each planar block has norm ``amplitude``."""
        blocks = self.w0.reshape(-1, 2) if self.n_w % 2 == 0 else self.w0.reshape(-1, 1)
        scale = amplitude / np.linalg.norm(blocks, axis=1).max()
        return Exosystem(self.f, self.e, self.w0 * scale, self.frequencies)

    def with_e(self, e) -> "Exosystem":
        return Exosystem(self.f, e, self.w0, self.frequencies)

    def period(self, max_period: int = 100_000) -> int | None:
        """Exact common period of ``w_t`` when every frequency is a rational multiple of 2*pi."""
        if not self.frequencies:
            return None
        denoms = []
        for omega in self.frequencies:
            frac = Fraction(omega / (2 * math.pi)).limit_denominator(max_period)
            if abs(float(frac) * 2 * math.pi - omega) > 1e-12:
                return None
            denoms.append(frac.denominator)
        period = math.lcm(*denoms)
        return period if period <= max_period else None


def build_exosystem(n: int, m: int, omega1: float = 0.2, amplitude: float = 0.01,
                    seed: int = 0, schedule: str = "paired",
                    frequencies=None) -> Exosystem:
    """Build ``n + 1`` rotation blocks and draw E until sufficient richness holds.

    E is redrawn from a seeded normal generator until ``[E; EF; ...; EF^n]``
    has full row rank ``m (n+1)``. Each planar block of ``w0`` is
    ``(amplitude, 0)``. Passing ``frequencies`` overrides the schedule.
    """
    num_blocks = n + 1
    n_w = 2 * num_blocks
    if n_w < n + m:
        raise ConstructionError(f"n_w={n_w} < n+m={n + m}")
    if m * (n + 1) > n_w:
        raise ConstructionError(
            f"{num_blocks} rotation blocks cannot make an {m}-channel dither rich of order {n + 1}")
    if frequencies is None:
        if not 0 < omega1 < math.pi / 2:
            raise ValueError("omega1 must lie in (0, pi/2)")
        frequencies = frequency_schedule(omega1, num_blocks, schedule)
    elif len(frequencies) != num_blocks:
        raise ValueError(f"expected {num_blocks} frequencies, got {len(frequencies)}")
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    f = block_diag(*[rotation(om) for om in frequencies])
    rng = np.random.default_rng(seed)
    for _ in range(MAX_E_DRAWS):
        e = rng.standard_normal((m, n_w))
        if numerical_rank(observability_stack(e, f, n)) == m * (n + 1):
            break
    else:
        raise ConstructionError(f"no admissible E found in {MAX_E_DRAWS} draws")
    w0 = np.tile([amplitude, 0.0], num_blocks)
    return Exosystem(f, e, w0, tuple(frequencies))


def step_exosystem(sys: Exosystem, w) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=float)
    if w.shape != (sys.n_w,):
        raise DimensionError(f"w has shape {w.shape}, expected ({sys.n_w},)")
    return sys.f @ w, sys.e @ w


def exo_trajectory(sys: Exosystem, steps: int, w0=None) -> np.ndarray:
    """States ``w_0 .. w_{steps-1}`` stacked as rows."""
    out = np.empty((steps, sys.n_w))
    w = sys.w0 if w0 is None else np.asarray(w0, dtype=float)
    for t in range(steps):
        out[t] = w
        w = sys.f @ w
    return out


def pe_gramian(ws, t0: int, window: int) -> tuple[float, float]:
    """Extreme eigenvalues of ``sum_{tau=t0+1}^{t0+window} w_tau w_tau^T``."""
    ws = np.asarray(ws, dtype=float)
    if ws.ndim == 1:
        ws = ws.reshape(-1, 1)
    if window < 1:
        raise ValueError("window must be at least 1")
    if t0 < -1 or t0 + window >= ws.shape[0]:
        raise ValueError(f"window [{t0 + 1}, {t0 + window}] exceeds {ws.shape[0]} samples")
    block = ws[t0 + 1:t0 + window + 1]
    eig = np.linalg.eigvalsh(block.T @ block)
    return float(max(eig[0], 0.0)), float(eig[-1])


def is_persistently_exciting(ws, t0: int, window: int, rtol: float = RANK_RTOL) -> bool:
    lam_min, lam_max = pe_gramian(ws, t0, window)
    return lam_max > 0 and lam_min > rtol * lam_max


def hankel_blocks(ds, depth: int, t_d: int, t0: int = 0) -> np.ndarray:
    """Block-Hankel matrix with ``depth + 1`` block rows built from ``d_{t0} .. d_{t0+t_d-1}``."""
    ds = np.asarray(ds, dtype=float)
    if ds.ndim == 1:
        ds = ds.reshape(-1, 1)
    cols = t_d - depth
    if cols < 1 or t0 < 0 or t0 + t_d > ds.shape[0]:
        raise ValueError(f"need {t0 + t_d} samples for t_d={t_d}, have {ds.shape[0]}")
    return np.vstack([ds[t0 + i:t0 + i + cols].T for i in range(depth + 1)])


def richness_hankel_rank(ds, n: int, t_d: int, t0: int = 0) -> int:
    """Numerical rank of the order-(n+1) Hankel matrix; rich iff it equals ``m (n+1)``."""
    return numerical_rank(hankel_blocks(ds, n, t_d, t0))
