"""Detuned single-ended cavity: linewidth, optical spring, susceptibility.

Sign conventions: detuning ``delta`` is in HWHM units with positive meaning
blue (laser above cavity resonance).  Susceptibilities use the
``exp(+i Omega t)`` convention, so a positive imaginary part of the
inverse susceptibility is damping and a negative one is anti-damping.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import constants
from scipy.optimize import bisect

_C = constants.c


class NoSpringResonance(ValueError):
    pass


def cavity_hwhm(finesse: float, length: float) -> float:
    """HWHM linewidth in rad/s, ``2 pi c / (4 F L)``."""
    if not finesse > 1 or not length > 0:
        raise ValueError("need finesse > 1 and length > 0")
    return 2 * math.pi * _C / (4 * finesse * length)


def buildup_factor(detuning):
    """Circulating power relative to resonance, ``1 / (1 + delta^2)``."""
    d = np.asarray(detuning, dtype=float)
    out = 1.0 / (1.0 + d * d)
    return float(out) if out.ndim == 0 else out


def static_spring_constant(sys) -> float:
    """K0 in N/m for the actual circulating power."""
    cav = sys.cavity
    d = cav.detuning
    return 16 * cav.finesse * cav.circulating_power * d / (cav.wavelength * _C * (1 + d * d))


def optical_spring_stiffness(sys, omega):
    """Complex optical-spring stiffness K(Omega) in N/m.

    Two-pole response of the detuned cavity,
    ``K0 (1 + d^2) / ((1 + i Omega / gamma)^2 + d^2)``; negative frequencies
    follow from ``K(-Omega) = conj(K(Omega))``.
    """
    w = np.asarray(omega, dtype=float)
    d = sys.cavity.detuning
    x = 1j * w / sys.hwhm
    k = static_spring_constant(sys) * (1 + d * d) / ((1 + x) ** 2 + d * d)
    return complex(k) if k.ndim == 0 else k


def bare_inverse_susceptibility(sys, omega):
    """``m (Omega_m^2 (1 + i sgn(Omega)/Q) - Omega^2)``, structural loss."""
    w = np.asarray(omega, dtype=float)
    m, wm, q = sys.mech.mass, sys.mech.omega_m, sys.mech.quality_factor
    sgn = np.where(w < 0, -1.0, 1.0)
    out = m * (wm * wm * (1 + 1j * sgn / q) - w * w)
    return complex(out) if out.ndim == 0 else out


def inverse_susceptibility(sys, omega):
    return bare_inverse_susceptibility(sys, omega) + optical_spring_stiffness(sys, omega)


def effective_susceptibility(sys, omega):
    """Mechanical response including the optical spring, m/N."""
    return 1.0 / inverse_susceptibility(sys, omega)


def bare_susceptibility(sys, omega):
    return 1.0 / bare_inverse_susceptibility(sys, omega)


def optical_spring_resonance(sys) -> float:
    """Root of ``Re chi_eff^-1(Omega) = 0`` above Omega_m, rad/s.

    Bracketed on ``[Omega_m, 100 Omega_m sqrt(1 + K0/(m Omega_m^2))]`` and
    refined by bisection to 1e-6 relative.
    """
    k0 = static_spring_constant(sys)
    if not k0 > 0:
        raise NoSpringResonance("optical spring is not positive; no resonance above the mechanical frequency")
    m, wm = sys.mech.mass, sys.mech.omega_m
    lo = wm
    hi = 100 * wm * math.sqrt(1 + k0 / (m * wm * wm))

    def re_inv(w):
        return inverse_susceptibility(sys, w).real

    f_lo = re_inv(lo)
    if f_lo <= 0:
        raise NoSpringResonance("spring does not lift the resonance above the mechanical frequency")
    # Re K may turn negative above the cavity pole, giving extra roots; take the first sign change.
    ws = np.geomspace(lo, hi, 2000)
    vals = re_inv(ws)
    idx = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))
    if idx.size == 0:
        raise NoSpringResonance("no sign change of Re chi_eff^-1 in the search bracket")
    a, b = ws[idx[0]], ws[idx[0] + 1]
    return bisect(re_inv, a, b, xtol=1e-12 * b, rtol=1e-10, maxiter=500)


def antidamping_rate(sys, omega):
    """Net damping rate ``Im chi_eff^-1 / (2 m Omega)`` in 1/s.

    Negative means the mode is anti-damped (unstable without feedback).
    """
    w = np.asarray(omega, dtype=float)
    out = inverse_susceptibility(sys, w).imag / (2 * sys.mech.mass * w)
    return float(out) if out.ndim == 0 else out
