"""Displacement noise budget and squeeze-phase sweeps.

All series are single-sided displacement PSDs in m^2/Hz on a
:class:`~qrpnsim.model.FrequencyGrid`.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import cavity
from .model import C, HBAR, K_B, FrequencyGrid, SpectralLine, ValidatedSystem
from .quantum import apply_loss, injected_state, quadrature_variance

#: series that add up to ``total``
SOURCES = ("thermal", "qrpn", "shot", "dark", "classical", "excess", "lines")
SERIES = SOURCES + ("total", "sql")

THREADS_ENV = "QRPNSIM_THREADS"


@dataclass(frozen=True)
class NoiseBudget:
    grid: FrequencyGrid
    series: Mapping[str, np.ndarray]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def asd(self, name: str) -> np.ndarray:
        return np.sqrt(self.series[name])

    def with_series(self, metadata: Mapping[str, Any] | None = None, **updates: np.ndarray) -> "NoiseBudget":
        """Copy with some series replaced; ``total`` is re-summed unless given."""
        series = dict(self.series)
        series.update({k: np.asarray(v, dtype=float) for k, v in updates.items()})
        if "total" not in updates:
            series["total"] = _sum_sources(series)
        meta = dict(self.metadata)
        if metadata:
            meta.update(metadata)
        return NoiseBudget(self.grid, series, meta)


@dataclass(frozen=True)
class PhaseSweepMap:
    phases: np.ndarray
    grid: FrequencyGrid
    ratio_db: np.ndarray  # shape (len(phases), len(grid))
    squeeze_factor_r: float = 0.0


def _sum_sources(series: Mapping[str, np.ndarray]) -> np.ndarray:
    total = np.zeros_like(series["thermal"])
    for name in SOURCES:
        total = total + series[name]
    return total


# --- force and displacement spectra ----------------------------------------

def thermal_force_psd(mech, omega):
    """Structural-damping thermal force, ``4 kT m Omega_m^2 / (Q Omega)``."""
    w = np.asarray(omega, dtype=float)
    return 4 * K_B * mech.temperature * mech.mass * mech.omega_m ** 2 / (mech.quality_factor * w)


def coherent_qrpn_force_psd(sys: ValidatedSystem, omega):
    """Radiation-pressure force noise for a coherent input, N^2/Hz.

    Intracavity power fluctuations are the input shot noise amplified by
    the single-ended buildup ``2F/pi`` and low-passed by the cavity pole;
    force is ``2P/c``.
    """
    w = np.asarray(omega, dtype=float)
    cav = sys.cavity
    pref = 16 * HBAR * sys.omega_laser * cav.circulating_power * cav.finesse / (math.pi * C * C)
    return pref / (1 + (w / sys.hwhm) ** 2)


def qrpn_force_psd(sys: ValidatedSystem, v_injected: np.ndarray, omega):
    """Back-action force driven by the amplitude quadrature of the injected field."""
    return coherent_qrpn_force_psd(sys, omega) * quadrature_variance(v_injected, 0.0)


def shot_displacement_psd(sys: ValidatedSystem, v_readout: np.ndarray, omega):
    """Imprecision noise, m^2/Hz.

    Pinned so that a lossless coherent state has force-imprecision product
    hbar^2; the measured quadrature variance and readout efficiency scale it.
    """
    v_read = quadrature_variance(v_readout, sys.readout.angle)
    return HBAR ** 2 / coherent_qrpn_force_psd(sys, omega) * v_read / sys.eta_readout


def sql_psd(sys: ValidatedSystem, omega):
    """``2 hbar |chi_eff|`` with the spring-modified susceptibility."""
    return 2 * HBAR * np.abs(cavity.effective_susceptibility(sys, omega))


def classical_force_psd(sys: ValidatedSystem, omega):
    rin = sys.laser.classical_rin or 0.0
    w = np.asarray(omega, dtype=float)
    return np.full(w.shape, (2 * sys.cavity.circulating_power / C) ** 2 * rin)


def excess_displacement_psd(sys: ValidatedSystem, f_hz):
    """User-supplied excess ASD knots, interpolated log-log, squared."""
    f = np.asarray(f_hz, dtype=float)
    ex = sys.excess
    if ex is None or not ex.asd_points:
        return np.zeros(f.shape)
    kf = np.log([p[0] for p in ex.asd_points])
    ka = np.log([p[1] for p in ex.asd_points])
    asd = np.exp(np.interp(np.log(f), kf, ka))
    asd = np.where((np.log(f) < kf[0] - 1e-12) | (np.log(f) > kf[-1] + 1e-12), 0.0, asd)
    return asd ** 2


def displacement_budget(sys: ValidatedSystem, grid: FrequencyGrid) -> NoiseBudget:
    w = grid.omega
    chi2 = np.abs(cavity.effective_susceptibility(sys, w)) ** 2
    v_inj = injected_state(sys)
    v_ro = apply_loss(v_inj, sys.eta_readout)
    zeros = np.zeros(w.shape)
    series = {
        "thermal": chi2 * thermal_force_psd(sys.mech, w),
        "qrpn": chi2 * qrpn_force_psd(sys, v_inj, w),
        "shot": shot_displacement_psd(sys, v_ro, w),
        "dark": zeros + sys.readout.dark_noise_asd ** 2,
        "classical": chi2 * classical_force_psd(sys, w),
        "excess": excess_displacement_psd(sys, grid.points),
        "lines": zeros.copy(),
        "sql": sql_psd(sys, w),
    }
    series["total"] = _sum_sources(series)
    meta = {
        "config_sha256": sys.config_hash(),
        "squeeze_factor_r": sys.squeezer.squeeze_factor_r,
        "squeeze_angle_rad": sys.squeezer.squeeze_angle,
        "injected_covariance": v_inj.tolist(),
    }
    return NoiseBudget(grid, series, meta)


def total_psd_at(sys: ValidatedSystem, f_hz: float) -> float:
    """Undecorated total displacement PSD at a single frequency."""
    return float(displacement_budget(sys, FrequencyGrid([f_hz]))["total"][0])


# --- lines -------------------------------------------------------------------

def _bin_width(grid: FrequencyGrid, i: int) -> float:
    f = grid.points
    if f.size == 1:
        raise ValueError("cannot fold a line into a single-point grid")
    lo = f[max(i - 1, 0)]
    hi = f[min(i + 1, f.size - 1)]
    span = hi - lo
    return span / 2 if 0 < i < f.size - 1 else span


def _nearest_bin(grid: FrequencyGrid, frequency: float) -> int:
    f = grid.points
    if not f[0] <= frequency <= f[-1]:
        raise ValueError(f"line at {frequency} Hz is outside the grid [{f[0]}, {f[-1]}] Hz")
    return int(np.argmin(np.abs(np.log(f) - math.log(frequency))))


def inject_calibration_line(budget: NoiseBudget, frequency: float, displacement: float) -> NoiseBudget:
    """Fold a sinusoidal dither of the given amplitude (m) into one bin."""
    i = _nearest_bin(budget.grid, frequency)
    lines = budget["lines"].copy()
    lines[i] += displacement ** 2 / _bin_width(budget.grid, i)
    return budget.with_series(lines=lines)


def add_spectral_lines(budget: NoiseBudget, lines: Iterable[SpectralLine | tuple[float, float]]) -> NoiseBudget:
    """Add squeeze-independent lines given as (Hz, m/rtHz) at their nearest bins."""
    out = budget["lines"].copy()
    touched = False
    for ln in lines:
        f, asd = (ln.frequency, ln.asd) if isinstance(ln, SpectralLine) else ln
        out[_nearest_bin(budget.grid, f)] += asd ** 2
        touched = True
    return budget.with_series(lines=out) if touched else budget


def decorate(budget: NoiseBudget, sys: ValidatedSystem) -> NoiseBudget:
    """Apply the configured calibration line and excess lines that fall in the grid."""
    cal = sys.readout.calibration_line
    f = budget.grid.points
    if cal is not None and f[0] <= cal.frequency <= f[-1]:
        budget = inject_calibration_line(budget, cal.frequency, cal.displacement_amplitude)
    if sys.excess is not None:
        budget = add_spectral_lines(budget, [ln for ln in sys.excess.lines if f[0] <= ln.frequency <= f[-1]])
    return budget


def measured_budget(sys: ValidatedSystem, grid: FrequencyGrid) -> NoiseBudget:
    return decorate(displacement_budget(sys, grid), sys)


# --- phase sweep ---------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def phase_sweep_map(sys: ValidatedSystem, grid: FrequencyGrid, phases: Sequence[float]) -> PhaseSweepMap:
    """Total noise vs squeeze angle, in dB relative to the r = 0 reference."""
    phases = np.asarray(phases, dtype=float)
    if phases.size == 0:
        raise ValueError("phases must be non-empty")
    ref = measured_budget(sys.with_squeezing(r=0.0), grid)["total"]

    def row(theta):
        return 10 * np.log10(measured_budget(sys.with_squeezing(angle=float(theta)), grid)["total"] / ref)

    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(row, phases))
    else:
        rows = [row(t) for t in phases]
    return PhaseSweepMap(phases, grid, np.vstack(rows), sys.squeezer.squeeze_factor_r)
