"""Configuration types, validation, and unit helpers.

Internally every spectral quantity uses angular frequency (rad/s); every
file and CLI boundary uses Hz.  PSDs are single-sided.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import constants

from .cavity import cavity_hwhm

HBAR = constants.hbar
C = constants.c
K_B = constants.k

INJECTION = "injection"
READOUT = "readout"
_SIDES = (INJECTION, READOUT)


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``problems`` holds ``(field, message)`` pairs, one per violation.
    """

    def __init__(self, problems: Sequence[tuple[str, str]]):
        self.problems = list(problems)
        msg = "; ".join(f"{name}: {why}" for name, why in self.problems)
        super().__init__(f"invalid configuration ({len(self.problems)} problem(s)): {msg}")

    @property
    def fields(self) -> list[str]:
        return [name for name, _ in self.problems]


@dataclass(frozen=True)
class OpticalCavityParams:
    length: float
    finesse: float
    wavelength: float = 1064e-9
    end_mirror_transmission: float = 250e-6
    detuning: float = 0.0
    circulating_power: float = 0.0
    linewidth_override: float | None = None  # HWHM, rad/s


@dataclass(frozen=True)
class MechanicalOscillatorParams:
    mass: float
    omega_m: float
    quality_factor: float
    temperature: float = 295.0


@dataclass(frozen=True)
class LaserParams:
    wavelength: float = 1064e-9
    classical_rin: float | None = None


@dataclass(frozen=True)
class SqueezerParams:
    squeeze_factor_r: float = 0.0
    squeeze_angle: float = 0.0
    escape_efficiency: float = 1.0


@dataclass(frozen=True)
class LossEntry:
    name: str
    efficiency: float
    side: str = INJECTION


@dataclass(frozen=True)
class LossChain:
    entries: tuple[LossEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class CalibrationLine:
    frequency: float  # Hz
    displacement_amplitude: float  # m


@dataclass(frozen=True)
class ReadoutParams:
    dark_noise_asd: float = 0.0
    calibration_line: CalibrationLine | None = None
    # quadrature seen by the detector; 0 = amplitude (direct detection)
    angle: float = 0.0


@dataclass(frozen=True)
class ControllerParams:
    gain: float = 0.0
    zeros: tuple[float, ...] = ()  # Hz
    poles: tuple[float, ...] = ()  # Hz
    delay: float = 0.0
    plant_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "zeros", tuple(float(z) for z in self.zeros))
        object.__setattr__(self, "poles", tuple(float(p) for p in self.poles))


@dataclass(frozen=True)
class SpectralLine:
    frequency: float  # Hz
    asd: float  # m/rtHz


@dataclass(frozen=True)
class ExcessNoiseParams:
    """Optional user-supplied extras that have no physical model here.

    ``asd_points`` is a list of ``(Hz, m/rtHz)`` knots interpolated
    log-log (zero outside the knot range).  ``lines`` are narrow features
    such as higher-order mechanical modes.
    """

    asd_points: tuple[tuple[float, float], ...] = ()
    lines: tuple[SpectralLine, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "asd_points", tuple((float(f), float(a)) for f, a in self.asd_points))
        object.__setattr__(self, "lines", tuple(self.lines))


@dataclass(frozen=True)
class SystemConfig:
    cavity: OpticalCavityParams
    mech: MechanicalOscillatorParams
    laser: LaserParams = field(default_factory=LaserParams)
    squeezer: SqueezerParams = field(default_factory=SqueezerParams)
    losses: LossChain = field(default_factory=LossChain)
    readout: ReadoutParams = field(default_factory=ReadoutParams)
    controller: ControllerParams | None = None
    excess: ExcessNoiseParams | None = None


@dataclass(frozen=True)
class ValidatedSystem:
    """Immutable, validated system with derived quantities precomputed."""

    config: SystemConfig
    hwhm: float  # rad/s
    eta_injection: float  # escape efficiency times injection-side chain
    eta_readout: float
    eta_total: float

    @property
    def cavity(self) -> OpticalCavityParams:
        return self.config.cavity

    @property
    def mech(self) -> MechanicalOscillatorParams:
        return self.config.mech

    @property
    def laser(self) -> LaserParams:
        return self.config.laser

    @property
    def squeezer(self) -> SqueezerParams:
        return self.config.squeezer

    @property
    def losses(self) -> LossChain:
        return self.config.losses

    @property
    def readout(self) -> ReadoutParams:
        return self.config.readout

    @property
    def controller(self) -> ControllerParams | None:
        return self.config.controller

    @property
    def excess(self) -> ExcessNoiseParams | None:
        return self.config.excess

    @property
    def omega_laser(self) -> float:
        return 2 * math.pi * C / self.cavity.wavelength

    def replace(self, **sections: Any) -> "ValidatedSystem":
        """Return a re-validated copy with whole config sections swapped."""
        return validate_config(dataclasses.replace(self.config, **sections))

    def with_squeezing(self, r: float | None = None, angle: float | None = None) -> "ValidatedSystem":
        sq = self.squeezer
        return self.replace(squeezer=dataclasses.replace(
            sq,
            squeeze_factor_r=sq.squeeze_factor_r if r is None else r,
            squeeze_angle=sq.squeeze_angle if angle is None else angle,
        ))

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.config).encode()).hexdigest()


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray  # Hz

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(pts)) or np.any(pts <= 0):
            raise ValueError("frequency grid points must be finite and > 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.points

    def __len__(self) -> int:
        return self.points.size

    @classmethod
    def log_spaced(cls, fmin: float, fmax: float, points_per_decade: int) -> "FrequencyGrid":
        """Log grid with exactly ``points_per_decade`` points per decade.

        Starts at ``fmin``; the last point is the largest grid point not
        exceeding ``fmax``.
        """
        if not 0 < fmin < fmax:
            raise ValueError("need 0 < fmin < fmax")
        if int(points_per_decade) < 1:
            raise ValueError("points_per_decade must be >= 1")
        ppd = int(points_per_decade)
        start = math.log10(fmin)
        n = int(math.floor((math.log10(fmax) - start) * ppd + 1e-9)) + 1
        return cls(10.0 ** (start + np.arange(n) / ppd))


def db_to_power_ratio(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0) if np.ndim(db) else 10.0 ** (float(db) / 10.0)


def power_ratio_to_db(ratio):
    arr = np.asarray(ratio, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("power ratio must be positive")
    return 10.0 * np.log10(arr) if arr.ndim else 10.0 * math.log10(float(arr))


def _check_chain(chain: LossChain, problems: list[tuple[str, str]]) -> None:
    seen = set()
    for i, entry in enumerate(chain.entries):
        if not (0 < entry.efficiency <= 1):
            problems.append(("losses", f"entry {i} ({entry.name!r}) efficiency {entry.efficiency} not in (0, 1]"))
        if entry.side not in _SIDES:
            problems.append(("losses", f"entry {i} ({entry.name!r}) side must be one of {_SIDES}"))
        if entry.name in seen:
            problems.append(("losses", f"duplicate entry name {entry.name!r}"))
        seen.add(entry.name)


def _finite(x) -> bool:
    return x is not None and isinstance(x, (int, float)) and math.isfinite(x)


def validate_config(raw: SystemConfig | ValidatedSystem) -> ValidatedSystem:
    """Check every invariant and build a :class:`ValidatedSystem`.

    All violations are collected and raised together as a
    :class:`ConfigError`.  Passing an already validated system re-validates
    its config, so the operation is idempotent.
    """
    if isinstance(raw, ValidatedSystem):
        raw = raw.config
    p: list[tuple[str, str]] = []
    cav, mech, laser, sq, ro = raw.cavity, raw.mech, raw.laser, raw.squeezer, raw.readout

    checks = [
        ("cavity.length", cav.length, lambda v: v > 0, "must be > 0"),
        ("cavity.finesse", cav.finesse, lambda v: v > 1, "must be > 1"),
        ("cavity.wavelength", cav.wavelength, lambda v: v > 0, "must be > 0"),
        ("cavity.circulating_power", cav.circulating_power, lambda v: v >= 0, "must be >= 0"),
        ("cavity.end_mirror_transmission", cav.end_mirror_transmission, lambda v: 0 < v < 1, "must be in (0, 1)"),
        ("cavity.detuning", cav.detuning, lambda v: abs(v) < 10, "|detuning| must be < 10 linewidths"),
        ("mech.mass", mech.mass, lambda v: v > 0, "must be > 0"),
        ("mech.omega_m", mech.omega_m, lambda v: v > 0, "must be > 0"),
        ("mech.quality_factor", mech.quality_factor, lambda v: v > 1, "must be > 1"),
        ("mech.temperature", mech.temperature, lambda v: v > 0, "must be > 0"),
        ("laser.wavelength", laser.wavelength, lambda v: v > 0, "must be > 0"),
        ("squeezer.squeeze_factor_r", sq.squeeze_factor_r, lambda v: v >= 0, "must be >= 0"),
        ("squeezer.squeeze_angle", sq.squeeze_angle, lambda v: True, ""),
        ("squeezer.escape_efficiency", sq.escape_efficiency, lambda v: 0 < v <= 1, "must be in (0, 1]"),
        ("readout.dark_noise_asd", ro.dark_noise_asd, lambda v: v >= 0, "must be >= 0"),
        ("readout.angle", ro.angle, lambda v: True, ""),
    ]
    for name, value, ok, why in checks:
        if not _finite(value):
            p.append((name, "must be a finite number"))
        elif not ok(value):
            p.append((name, why))

    if cav.linewidth_override is not None and not (_finite(cav.linewidth_override) and cav.linewidth_override > 0):
        p.append(("cavity.linewidth_override", "must be > 0 when set"))
    if laser.classical_rin is not None and not (_finite(laser.classical_rin) and laser.classical_rin >= 0):
        p.append(("laser.classical_rin", "must be >= 0 when set"))
    if _finite(laser.wavelength) and _finite(cav.wavelength) and cav.wavelength > 0:
        if abs(laser.wavelength - cav.wavelength) > 1e-9 * cav.wavelength:
            p.append(("laser.wavelength", "must equal cavity.wavelength"))
    if ro.calibration_line is not None:
        cl = ro.calibration_line
        if not (_finite(cl.frequency) and cl.frequency > 0):
            p.append(("readout.calibration_line", "frequency must be > 0"))
        if not (_finite(cl.displacement_amplitude) and cl.displacement_amplitude >= 0):
            p.append(("readout.calibration_line", "displacement amplitude must be >= 0"))

    _check_chain(raw.losses, p)

    ctrl = raw.controller
    if ctrl is not None:
        if not _finite(ctrl.gain):
            p.append(("controller.gain", "must be a finite number"))
        if any(not (_finite(z) and z > 0) for z in ctrl.zeros):
            p.append(("controller.zeros", "all zeros must be > 0 Hz"))
        if any(not (_finite(q) and q > 0) for q in ctrl.poles):
            p.append(("controller.poles", "all poles must be > 0 Hz"))
        if not (_finite(ctrl.delay) and ctrl.delay >= 0):
            p.append(("controller.delay", "must be >= 0"))
        if not (_finite(ctrl.plant_scale) and ctrl.plant_scale > 0):
            p.append(("controller.plant_scale", "must be > 0"))

    ex = raw.excess
    if ex is not None:
        fs = [f for f, _ in ex.asd_points]
        if any(not (_finite(f) and f > 0) for f in fs) or any(b <= a for a, b in zip(fs, fs[1:])):
            p.append(("excess.asd_points", "frequencies must be > 0 and strictly increasing"))
        if any(not (_finite(a) and a > 0) for _, a in ex.asd_points):
            p.append(("excess.asd_points", "ASD values must be > 0"))
        if any(not (_finite(ln.frequency) and ln.frequency > 0 and _finite(ln.asd) and ln.asd >= 0) for ln in ex.lines):
            p.append(("excess.lines", "lines need frequency > 0 and asd >= 0"))

    if p:
        raise ConfigError(p)

    if cav.linewidth_override is not None:
        hwhm = float(cav.linewidth_override)
    else:
        hwhm = cavity_hwhm(cav.finesse, cav.length)
    inj = sq.escape_efficiency * chain_efficiency(raw.losses, INJECTION)
    ro_eta = chain_efficiency(raw.losses, READOUT)
    total = sq.escape_efficiency * chain_efficiency(raw.losses)
    return ValidatedSystem(config=raw, hwhm=hwhm, eta_injection=inj, eta_readout=ro_eta, eta_total=total)


def chain_efficiency(chain: LossChain | Iterable[LossEntry], side_filter: str = "all") -> float:
    """Product of the selected efficiencies; 1.0 for an empty selection."""
    entries = chain.entries if isinstance(chain, LossChain) else tuple(chain)
    if side_filter not in ("all",) + _SIDES:
        raise ValueError(f"side_filter must be 'all', 'injection' or 'readout', got {side_filter!r}")
    eta = 1.0
    for e in entries:
        if side_filter == "all" or e.side == side_filter:
            eta *= e.efficiency
    return eta


# --- flat key/value config files -------------------------------------------

def _opt(d: Mapping[str, Any], key: str, default=None):
    v = d.get(key, default)
    return default if v is None else v


def config_from_mapping(d: Mapping[str, Any]) -> SystemConfig:
    """Build a :class:`SystemConfig` from the flat dotted-key mapping."""
    missing = [k for k in ("cavity.length_m", "cavity.finesse", "mech.mass_kg", "mech.f_m_hz", "mech.q") if k not in d]
    if missing:
        raise ConfigError([(k, "required key missing") for k in missing])
    try:
        lw = d.get("cavity.linewidth_override_hz")
        wavelength = float(_opt(d, "cavity.wavelength_m", 1064e-9))
        cavity = OpticalCavityParams(
            length=float(d["cavity.length_m"]),
            finesse=float(d["cavity.finesse"]),
            wavelength=wavelength,
            end_mirror_transmission=float(_opt(d, "cavity.end_mirror_transmission", 250e-6)),
            detuning=float(_opt(d, "cavity.detuning_hwhm", 0.0)),
            circulating_power=float(_opt(d, "cavity.circulating_power_w", 0.0)),
            linewidth_override=None if lw is None else 2 * math.pi * float(lw),
        )
        mech = MechanicalOscillatorParams(
            mass=float(d["mech.mass_kg"]),
            omega_m=2 * math.pi * float(d["mech.f_m_hz"]),
            quality_factor=float(d["mech.q"]),
            temperature=float(_opt(d, "mech.temperature_k", 295.0)),
        )
        rin = d.get("laser.classical_rin")
        laser = LaserParams(
            wavelength=float(_opt(d, "laser.wavelength_m", wavelength)),
            classical_rin=None if rin is None else float(rin),
        )
        squeezer = SqueezerParams(
            squeeze_factor_r=float(_opt(d, "squeezer.r", 0.0)),
            squeeze_angle=float(_opt(d, "squeezer.angle_rad", 0.0)),
            escape_efficiency=float(_opt(d, "squeezer.escape_efficiency", 1.0)),
        )
        losses = LossChain(tuple(
            LossEntry(str(e["name"]), float(e["efficiency"]), str(e.get("side", INJECTION)))
            for e in _opt(d, "losses", [])
        ))
        cal = None
        if d.get("readout.cal_line_hz") is not None:
            cal = CalibrationLine(float(d["readout.cal_line_hz"]), float(_opt(d, "readout.cal_line_m", 0.0)))
        readout = ReadoutParams(
            dark_noise_asd=float(_opt(d, "readout.dark_noise_asd", 0.0)),
            calibration_line=cal,
            angle=float(_opt(d, "readout.angle_rad", 0.0)),
        )
        controller = None
        if any(k.startswith("controller.") for k in d):
            controller = ControllerParams(
                gain=float(_opt(d, "controller.gain", 0.0)),
                zeros=tuple(_opt(d, "controller.zeros_hz", ())),
                poles=tuple(_opt(d, "controller.poles_hz", ())),
                delay=float(_opt(d, "controller.delay_s", 0.0)),
                plant_scale=float(_opt(d, "controller.plant_scale", 1.0)),
            )
        excess = None
        if any(k.startswith("excess.") for k in d):
            excess = ExcessNoiseParams(
                asd_points=tuple(tuple(pt) for pt in _opt(d, "excess.asd_points", ())),
                lines=tuple(SpectralLine(float(ln["f_hz"]), float(ln["asd"])) for ln in _opt(d, "excess.lines", ())),
            )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([("config", f"malformed value: {exc}")]) from exc
    return SystemConfig(cavity, mech, laser, squeezer, losses, readout, controller, excess)


def config_to_mapping(cfg: SystemConfig) -> dict[str, Any]:
    """Inverse of :func:`config_from_mapping`."""
    cav, mech = cfg.cavity, cfg.mech
    d: dict[str, Any] = {
        "cavity.length_m": cav.length,
        "cavity.finesse": cav.finesse,
        "cavity.wavelength_m": cav.wavelength,
        "cavity.end_mirror_transmission": cav.end_mirror_transmission,
        "cavity.detuning_hwhm": cav.detuning,
        "cavity.circulating_power_w": cav.circulating_power,
        "cavity.linewidth_override_hz": None if cav.linewidth_override is None else cav.linewidth_override / (2 * math.pi),
        "mech.mass_kg": mech.mass,
        "mech.f_m_hz": mech.omega_m / (2 * math.pi),
        "mech.q": mech.quality_factor,
        "mech.temperature_k": mech.temperature,
        "laser.wavelength_m": cfg.laser.wavelength,
        "laser.classical_rin": cfg.laser.classical_rin,
        "squeezer.r": cfg.squeezer.squeeze_factor_r,
        "squeezer.angle_rad": cfg.squeezer.squeeze_angle,
        "squeezer.escape_efficiency": cfg.squeezer.escape_efficiency,
        "losses": [{"name": e.name, "efficiency": e.efficiency, "side": e.side} for e in cfg.losses.entries],
        "readout.dark_noise_asd": cfg.readout.dark_noise_asd,
        "readout.angle_rad": cfg.readout.angle,
    }
    if cfg.readout.calibration_line is not None:
        d["readout.cal_line_hz"] = cfg.readout.calibration_line.frequency
        d["readout.cal_line_m"] = cfg.readout.calibration_line.displacement_amplitude
    if cfg.controller is not None:
        c = cfg.controller
        d.update({
            "controller.gain": c.gain,
            "controller.zeros_hz": list(c.zeros),
            "controller.poles_hz": list(c.poles),
            "controller.delay_s": c.delay,
            "controller.plant_scale": c.plant_scale,
        })
    if cfg.excess is not None:
        d["excess.asd_points"] = [list(pt) for pt in cfg.excess.asd_points]
        d["excess.lines"] = [{"f_hz": ln.frequency, "asd": ln.asd} for ln in cfg.excess.lines]
    return d


def canonical_json(cfg: SystemConfig) -> str:
    return json.dumps(config_to_mapping(cfg), sort_keys=True, separators=(",", ":"))


def load_config(path: str | Path) -> ValidatedSystem:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc.strerror}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("config", f"{path} is not valid JSON: {exc}")]) from exc
    if not isinstance(data, dict):
        raise ConfigError([("config", "top level must be an object")])
    return validate_config(config_from_mapping(data))


def paper_config_path() -> Path:
    return Path(str(resources.files("qrpnsim") / "data" / "paper.json"))


def paper_system() -> ValidatedSystem:
    """The bundled configuration reproducing the experiment's parameters."""
    return load_config(paper_config_path())
