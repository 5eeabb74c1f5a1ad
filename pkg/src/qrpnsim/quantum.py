"""Gaussian single-mode quadrature covariances, vacuum normalized to identity.

Basis is (amplitude, phase).  Matrices are plain 2x2 numpy arrays.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .model import LossChain, chain_efficiency  # noqa: F401  re-exported

R_CEILING = 5.0


def rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def squeezed_covariance(r: float, theta: float = 0.0) -> np.ndarray:
    """Pure squeezed vacuum; ``theta = 0`` squeezes the amplitude quadrature."""
    if r < 0:
        raise ValueError("squeeze factor r must be >= 0")
    if r == 0:
        return np.eye(2)
    rot = rotation(theta)
    v = rot @ np.diag([math.exp(-2 * r), math.exp(2 * r)]) @ rot.T
    return 0.5 * (v + v.T)


def rotate(v: np.ndarray, phi: float) -> np.ndarray:
    rot = rotation(phi)
    out = rot @ np.asarray(v, dtype=float) @ rot.T
    return 0.5 * (out + out.T)


def apply_loss(v: np.ndarray, eta: float) -> np.ndarray:
    """Beam-splitter loss: mix with vacuum, ``eta V + (1 - eta) I``."""
    if not 0 <= eta <= 1:
        raise ValueError(f"efficiency must be in [0, 1], got {eta}")
    return eta * np.asarray(v, dtype=float) + (1 - eta) * np.eye(2)


def quadrature_variance(v: np.ndarray, angle: float) -> float:
    u = np.array([math.cos(angle), math.sin(angle)])
    return float(u @ np.asarray(v, dtype=float) @ u)


def is_physical(v: np.ndarray, tol: float = 1e-9) -> bool:
    v = np.asarray(v, dtype=float)
    if v.shape != (2, 2) or not np.allclose(v, v.T, atol=1e-12, rtol=0):
        return False
    return bool(v[0, 0] > 0 and np.linalg.det(v) >= 1 - tol)


def injected_state(sys) -> np.ndarray:
    """Squeezed state as it reaches the cavity (escape + injection-side losses)."""
    sq = sys.squeezer
    return apply_loss(squeezed_covariance(sq.squeeze_factor_r, sq.squeeze_angle), sys.eta_injection)


def readout_state(sys) -> np.ndarray:
    return apply_loss(injected_state(sys), sys.eta_readout)


def squeeze_db(r: float) -> tuple[float, float]:
    """Generated (squeezing, antisqueezing) levels in dB for factor ``r``."""
    db = 20 * r / math.log(10)
    return -db, db


def fit_r_to_antisqueezing(
    sys,
    target_total_increase_db: float,
    at_frequency: float,
    total_psd: Callable | None = None,
    r_max: float = R_CEILING,
    tol_db: float = 1e-4,
) -> float:
    """Generated squeeze factor that reproduces an observed noise increase.

    The squeeze ellipse is turned to the phase quadrature (``pi/2``) and ``r``
    is bisected on ``[0, r_max]`` until the total displacement noise at
    ``at_frequency`` (Hz) sits ``target_total_increase_db`` above the
    ``r = 0`` reference.  ``total_psd(sys, f_hz)`` defaults to the budget
    total.
    """
    if total_psd is None:
        from .budget import total_psd_at as total_psd

    if target_total_increase_db < 0:
        raise ValueError("target increase must be >= 0 dB")
    if target_total_increase_db == 0:
        return 0.0
    ref = total_psd(sys.with_squeezing(r=0.0), at_frequency)

    def excess_db(r):
        val = total_psd(sys.with_squeezing(r=r, angle=math.pi / 2), at_frequency)
        return 10 * math.log10(val / ref) - target_total_increase_db

    top = excess_db(r_max)
    if top < 0:
        raise ValueError(
            f"target {target_total_increase_db} dB unattainable: r={r_max} only reaches "
            f"{top + target_total_increase_db:.3f} dB"
        )
    lo, hi = 0.0, r_max
    f_lo = excess_db(lo)
    # Bisection in r; stop on the dB residual, not on the bracket width.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = excess_db(mid)
        if abs(f_mid) < tol_db:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
