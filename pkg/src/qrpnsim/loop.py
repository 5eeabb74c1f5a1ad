"""Feedback loop around the optical spring, calibration, and Nyquist stability.

The loop is ``G(Omega) = C(Omega) * plant_scale * chi_eff(Omega)`` where
``C`` is the controller and ``chi_eff`` the spring-modified mechanical
response, so closing it gives ``chi_eff / (1 + G)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cavity
from .budget import NoiseBudget
from .model import ControllerParams, FrequencyGrid, ValidatedSystem

MIN_DECADES_EACH_SIDE = 2
TAIL_DECADES = 6
ROLLOFF = 0.5


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class LoopModel:
    controller: ControllerParams
    plant: ValidatedSystem

    def __post_init__(self):
        if not self.controller.plant_scale > 0:
            raise ValueError("plant scale factor must be > 0")

    @classmethod
    def from_system(cls, sys: ValidatedSystem) -> "LoopModel":
        if sys.controller is None:
            raise ValueError("configuration has no controller section")
        return cls(sys.controller, sys)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    margin: float  # min |1 + G| over the grid
    open_loop_unstable_poles: int
    encirclements: int  # clockwise encirclements of -1 by G
    closed_loop_unstable_poles: int


def controller_response(ctrl: ControllerParams, omega):
    """``gain * prod(1 + i W/z) / prod(1 + i W/p) * exp(-i W delay)``; z, p in Hz."""
    w = np.asarray(omega, dtype=float)
    h = np.full(w.shape, complex(ctrl.gain))
    for z in ctrl.zeros:
        h = h * (1 + 1j * w / (2 * math.pi * z))
    for p in ctrl.poles:
        h = h / (1 + 1j * w / (2 * math.pi * p))
    if ctrl.delay:
        h = h * np.exp(-1j * w * ctrl.delay)
    return complex(h) if h.ndim == 0 else h


def open_loop_gain(loop: LoopModel, omega):
    return controller_response(loop.controller, omega) * loop.controller.plant_scale * cavity.effective_susceptibility(loop.plant, omega)


def _check_grid(open_: NoiseBudget, grid: FrequencyGrid) -> None:
    if open_.grid.points.shape != grid.points.shape or not np.array_equal(open_.grid.points, grid.points):
        raise GridError("budget grid does not match the loop evaluation grid")


def _scale_all(budget: NoiseBudget, factor: np.ndarray, tag: str) -> NoiseBudget:
    series = {k: v * factor for k, v in budget.series.items()}
    meta = dict(budget.metadata)
    meta.setdefault("loop_history", [])
    meta["loop_history"] = list(meta["loop_history"]) + [tag]
    return NoiseBudget(budget.grid, series, meta)


def closed_loop_spectrum(open_: NoiseBudget, loop: LoopModel, grid: FrequencyGrid | None = None) -> NoiseBudget:
    """Suppress every series by ``|1/(1+G)|^2``."""
    if grid is not None:
        _check_grid(open_, grid)
    g = open_loop_gain(loop, open_.grid.omega)
    return _scale_all(open_, 1.0 / np.abs(1 + g) ** 2, "closed")


def undo_loop(closed: NoiseBudget, loop: LoopModel, remove_spring: bool = False, grid: FrequencyGrid | None = None) -> NoiseBudget:
    """Multiply by ``|1+G|^2``; optionally also refer to the bare mechanics.

    ``remove_spring`` rescales by ``|chi_bare/chi_eff|^2`` so the result is
    what the oscillator would show without the optical spring.
    """
    if grid is not None:
        _check_grid(closed, grid)
    w = closed.grid.omega
    factor = np.abs(1 + open_loop_gain(loop, w)) ** 2
    tag = "undo"
    if remove_spring:
        factor = factor * spring_removal_factor(loop.plant, w)
        tag = "undo+spring"
    return _scale_all(closed, factor, tag)


def spring_removal_factor(sys: ValidatedSystem, omega):
    return np.abs(cavity.bare_susceptibility(sys, omega) / cavity.effective_susceptibility(sys, omega)) ** 2


def characteristic_frequency(sys: ValidatedSystem) -> float:
    """Spring resonance if there is one, else ``sqrt(|Re chi^-1(0)|/m)``; rad/s."""
    try:
        return cavity.optical_spring_resonance(sys)
    except cavity.NoSpringResonance:
        k = abs(cavity.inverse_susceptibility(sys, 0.0).real)
        return math.sqrt(k / sys.mech.mass) if k > 0 else sys.mech.omega_m


def _winding(values: np.ndarray) -> float:
    """Net counter-clockwise turns of a closed sampled contour about 0."""
    closed = np.concatenate([values, values[:1]])
    dphi = np.diff(np.unwrap(np.angle(closed)))
    return float(dphi.sum() / (2 * math.pi))


def _contour(f_pos: np.ndarray) -> np.ndarray:
    # real-coefficient response: negative frequencies are conjugates
    return np.concatenate([np.conj(f_pos[::-1]), f_pos])


def open_loop_unstable_poles(sys: ValidatedSystem, omega: np.ndarray) -> int:
    """Right-half-plane poles of ``chi_eff`` by the argument principle.

    ``chi_eff^-1(s)`` has only left-half-plane poles (the cavity), so its
    zeros in the right half plane follow from the winding of
    ``chi_eff^-1 / (m (s + W0)^2)`` along the imaginary axis, which tends to
    1 at both ends of the axis.
    """
    w0 = characteristic_frequency(sys)
    s = 1j * omega
    f = cavity.inverse_susceptibility(sys, omega) / (sys.mech.mass * (s + w0) ** 2)
    turns = _winding(_contour(f))
    # traversing the axis upward circles the right half plane clockwise
    return int(round(-turns))


def _with_tail(w: np.ndarray) -> np.ndarray:
    step = np.log10(w[-1] / w[0]) / max(w.size - 1, 1)
    n = int(math.ceil(TAIL_DECADES / step)) if step > 0 else 0
    return np.concatenate([w, w[-1] * 10.0 ** (step * np.arange(1, n + 1))])


def is_stable(loop: LoopModel, grid: FrequencyGrid) -> StabilityReport:
    """Sampled Nyquist test of the closed loop.

    The grid must span two decades either side of the spring resonance.
    Closed-loop right-half-plane poles are ``Z = N + P`` with ``N`` the
    clockwise encirclements of -1 by ``G`` and ``P`` the open-loop count.
    The contour is extended above the grid at the same density so that it
    closes where ``|G|`` has rolled off; the reported margin covers the
    grid only.
    """
    sys = loop.plant
    w_c = characteristic_frequency(sys)
    w = grid.omega
    span = 10.0 ** MIN_DECADES_EACH_SIDE
    if w[0] > w_c / span * (1 + 1e-9) or w[-1] < w_c * span * (1 - 1e-9):
        raise GridError(
            f"grid [{grid.points[0]:.4g}, {grid.points[-1]:.4g}] Hz must cover "
            f"[{w_c / span / (2 * math.pi):.4g}, {w_c * span / (2 * math.pi):.4g}] Hz"
        )
    p = open_loop_unstable_poles(sys, w)
    margin = float(np.min(np.abs(1 + open_loop_gain(loop, w))))
    w = _with_tail(w)
    g = open_loop_gain(loop, w)
    if np.max(np.abs(g[w >= w[-1] / 10])) >= ROLLOFF:
        raise GridError("loop gain does not roll off; the Nyquist contour cannot be closed")
    one_plus_g = 1 + g
    n_cw = int(round(-_winding(_contour(one_plus_g))))
    z = n_cw + p
    return StabilityReport(
        stable=(z == 0),
        margin=margin,
        open_loop_unstable_poles=p,
        encirclements=n_cw,
        closed_loop_unstable_poles=z,
    )


def stability_grid(sys: ValidatedSystem, points_per_decade: int = 100, decades_each_side: int = 3) -> FrequencyGrid:
    """Log grid centred on the characteristic frequency, wide enough for :func:`is_stable`."""
    f_c = characteristic_frequency(sys) / (2 * math.pi)
    span = 10.0 ** decades_each_side
    return FrequencyGrid.log_spaced(f_c / span, f_c * span * 1.0000001, points_per_decade)


def reference_lead_controller(sys: ValidatedSystem, loop_gain_db: float = 20.0, ratio: float = 3.0,
                              delay: float = 0.0, plant_scale: float = 1.0) -> ControllerParams:
    """Lead filter centred on the spring resonance.

    Zero at ``f*/ratio``, pole at ``f* ratio``, gain chosen so that
    ``|G(Omega*)|`` equals ``loop_gain_db``.
    """
    w_star = cavity.optical_spring_resonance(sys)
    f_star = w_star / (2 * math.pi)
    shape = ControllerParams(gain=1.0, zeros=(f_star / ratio,), poles=(f_star * ratio,), delay=delay, plant_scale=plant_scale)
    unit = abs(open_loop_gain(LoopModel(shape, sys), w_star))
    gain = 10 ** (loop_gain_db / 20) / unit
    return ControllerParams(gain=gain, zeros=shape.zeros, poles=shape.poles, delay=delay, plant_scale=plant_scale)
