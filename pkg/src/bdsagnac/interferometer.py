"""Figures of merit of a beam-displacer Sagnac interferometer.

Two identical beam displacers form a Mach-Zehnder around the Sagnac loop.
In one arm the pump crosses the first displacer as an extraordinary ray and
the photon pair crosses the second as ordinary rays; the other arm swaps the
roles.  Every per-wavelength quantity below is an ordinary-minus-extraordinary
difference ``D(lam)`` and the interferometer quantity combines them as

    walk-off   = D(pump) - D(daughter)
    phase      = 2 D(pump) - D(signal) - D(idler)

so that in calcite the signal arrives early and the idler late.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from scipy.constants import c as _C_M_PER_S

from . import birefringence as bf
from .errors import DomainError, RangeError
from .materials import STENCIL_NM, Material, Ray, group_index, refractive_index, thermo_optic
from .numdiff import richardson_derivative

C_MM_PER_PS = _C_M_PER_S * 1e3 / 1e12
OVERLAP_CONVENTION = "gaussian; width = 1/e full width of |F|^2 (amplitude overlap exp(-(shift/width)^2))"
PUMP_STEP_NM = 0.01
DAUGHTER_MODES = ("signal-fixed", "idler-fixed", "daughters-fixed", "equal-shift")


@dataclass(frozen=True)
class BeamDisplacer:
    material: Material
    length_mm: float
    cut_deg: float = 45.0
    reference_temperature_k: float = 295.0

    def __post_init__(self):
        if not self.length_mm > 0:
            raise DomainError(f"beam displacer length must be positive, got {self.length_mm}")
        if not 0.0 < self.cut_deg < 90.0:
            raise DomainError(f"cut angle must lie in (0, 90) deg, got {self.cut_deg}")

    @property
    def expansion(self) -> float:
        """Linear expansion along the propagation direction, per K."""
        return self.material.thermal_expansion(self.cut_deg)

    def length_at(self, temperature_k: float) -> float:
        return self.length_mm * (1.0 + self.expansion * (temperature_k - self.reference_temperature_k))


@dataclass(frozen=True)
class WavelengthSet:
    pump_nm: float
    signal_nm: float
    idler_nm: float
    rtol: float = 1e-3

    def __post_init__(self):
        if min(self.pump_nm, self.signal_nm, self.idler_nm) <= 0:
            raise DomainError("wavelengths must be positive")
        mismatch = abs(2 / self.pump_nm - 1 / self.signal_nm - 1 / self.idler_nm)
        if mismatch > self.rtol * (2 / self.pump_nm):
            raise DomainError(
                f"energy conservation violated: |2/lp - 1/ls - 1/li| = {mismatch:.3e} /nm "
                f"exceeds {self.rtol:g} relative"
            )

    @classmethod
    def from_pump_signal(cls, pump_nm, signal_nm):
        return cls(pump_nm, signal_nm, 1.0 / (2.0 / pump_nm - 1.0 / signal_nm))

    def daughters(self):
        return {"signal": self.signal_nm, "idler": self.idler_nm}


@dataclass(frozen=True)
class Compensator:
    """Birefringent slab(s) placed after the interferometer in the daughter arms.

    ``orientation`` is +1 or -1 to fix which polarization the slab delays, or
    ``"auto"`` to orient each slab against the temporal walk-off of its arm.
    """

    material: Material | None = None
    signal_length_mm: float = 0.0
    idler_length_mm: float = 0.0
    cut_deg: float = 90.0
    orientation: int | str = "auto"

    def __post_init__(self):
        if self.signal_length_mm < 0 or self.idler_length_mm < 0:
            raise DomainError("compensator length must be non-negative")
        if (self.signal_length_mm or self.idler_length_mm) and self.material is None:
            raise DomainError("compensator with non-zero length needs a material")
        if self.orientation not in ("auto", 1, -1):
            raise DomainError(f"orientation must be 'auto', 1 or -1, got {self.orientation!r}")

    @property
    def compensated_arm(self) -> str:
        s, i = self.signal_length_mm > 0, self.idler_length_mm > 0
        return {(True, True): "both", (True, False): "signal", (False, True): "idler"}.get((s, i), "none")

    def length_for(self, arm: str) -> float:
        return self.signal_length_mm if arm == "signal" else self.idler_length_mm


NO_COMPENSATOR = Compensator()


# -- per-wavelength ray optics ------------------------------------------------


def _indices(material, wavelength_nm):
    return (
        refractive_index(material, Ray.ORDINARY, wavelength_nm),
        refractive_index(material, Ray.EXTRAORDINARY, wavelength_nm),
    )


def walkoff_angle_at(material: Material, cut_deg: float, wavelength_nm: float) -> float:
    n_o, n_e = _indices(material, wavelength_nm)
    return bf.walkoff_angle(n_o, n_e, cut_deg)


def extraordinary_index_at(material: Material, cut_deg: float, wavelength_nm: float) -> float:
    """n_eff seen by the extraordinary wave, with theta_e = theta + psi(lambda)."""
    n_o, n_e = _indices(material, wavelength_nm)
    return bf.effective_index(n_o, n_e, bf.extraordinary_angle(n_o, n_e, cut_deg))


def extraordinary_group_index_at(material: Material, cut_deg: float, wavelength_nm: float) -> float:
    material.check_range(wavelength_nm, STENCIL_NM)
    slope = richardson_derivative(
        lambda lam: extraordinary_index_at(material, cut_deg, lam), wavelength_nm, 0.5, levels=4
    )
    return extraordinary_index_at(material, cut_deg, wavelength_nm) - wavelength_nm * slope


def _transit_difference_ps(material, length_mm, cut_deg, wavelength_nm):
    """Ordinary minus extraordinary transit time through one slab.

    The extraordinary energy follows the walk-off direction over
    l_e = L / cos(psi) at the ray group velocity c / (n_g,eff cos(psi)),
    the wave-normal group velocity projected onto the ray.
    """
    psi = math.radians(walkoff_angle_at(material, cut_deg, wavelength_nm))
    t_o = length_mm * group_index(material, Ray.ORDINARY, wavelength_nm) / C_MM_PER_PS
    path_e = length_mm / math.cos(psi)
    v_e = C_MM_PER_PS / (extraordinary_group_index_at(material, cut_deg, wavelength_nm) * math.cos(psi))
    return t_o - path_e / v_e


def _retardance_rad(material, length_mm, cut_deg, wavelength_nm):
    """Ordinary minus extraordinary phase of one slab."""
    n_o = refractive_index(material, Ray.ORDINARY, wavelength_nm)
    n_eff = extraordinary_index_at(material, cut_deg, wavelength_nm)
    return 2.0 * math.pi / (wavelength_nm * 1e-6) * length_mm * (n_o - n_eff)


def _retardance_rate(material, cut_deg, wavelength_nm, temperature_k, length_mm, alpha):
    """d(phi_o - phi_e)/dT of one slab in rad/K."""
    n_o, n_e = _indices(material, wavelength_nm)
    theta_e = bf.extraordinary_angle(n_o, n_e, cut_deg)
    n_eff = bf.effective_index(n_o, n_e, theta_e)
    dno = thermo_optic(material, Ray.ORDINARY, wavelength_nm)
    dne = thermo_optic(material, Ray.EXTRAORDINARY, wavelength_nm)
    dneff = bf.effective_thermo_optic(n_o, n_e, dno, dne, theta_e)
    return 2.0 * math.pi / (wavelength_nm * 1e-6) * length_mm * ((dno - dneff) + (n_o - n_eff) * alpha)


def _check_wavelengths(material, wl):
    for lam in (wl.pump_nm, wl.signal_nm, wl.idler_nm):
        material.check_range(lam, STENCIL_NM)


# -- interferometer figures of merit -------------------------------------------


def spatial_walkoff(bd: BeamDisplacer, wl: WavelengthSet) -> tuple[float, float]:
    """Lateral mismatch (signal, idler) in mm between the two arms at the output."""
    _check_wavelengths(bd.material, wl)
    tan_p = math.tan(math.radians(walkoff_angle_at(bd.material, bd.cut_deg, wl.pump_nm)))
    out = []
    for lam in (wl.signal_nm, wl.idler_nm):
        tan_d = math.tan(math.radians(walkoff_angle_at(bd.material, bd.cut_deg, lam)))
        out.append(bd.length_mm * tan_d - bd.length_mm * tan_p)
    return tuple(out)


def temporal_walkoff(bd: BeamDisplacer, wl: WavelengthSet) -> tuple[float, float]:
    """Arrival-time mismatch (signal, idler) in ps between the two arms."""
    _check_wavelengths(bd.material, wl)
    dt_p = _transit_difference_ps(bd.material, bd.length_mm, bd.cut_deg, wl.pump_nm)
    return tuple(
        dt_p - _transit_difference_ps(bd.material, bd.length_mm, bd.cut_deg, lam)
        for lam in (wl.signal_nm, wl.idler_nm)
    )


def thermal_phase_sensitivity(bd: BeamDisplacer, wl: WavelengthSet, temperature_k: float = 295.0) -> float:
    """d(phi)/dT of the entangled-state phase in degrees per kelvin."""
    _check_wavelengths(bd.material, wl)
    length = bd.length_at(temperature_k)
    rates = [
        _retardance_rate(bd.material, bd.cut_deg, lam, temperature_k, length, bd.expansion)
        for lam in (wl.pump_nm, wl.signal_nm, wl.idler_nm)
    ]
    return math.degrees(2.0 * rates[0] - rates[1] - rates[2])


def gaussian_overlap_spatial(shift_mm: float, beam_diameter_1e_mm: float) -> float:
    """Amplitude overlap of two unit-normalised Gaussian modes displaced by ``shift_mm``.

    ``beam_diameter_1e_mm`` is the full width at which |F|^2 falls to 1/e.
    The shift is along one axis, so the transverse integral factorises and the
    second axis contributes exactly 1.
    """
    if not beam_diameter_1e_mm > 0:
        raise DomainError(f"beam diameter must be positive, got {beam_diameter_1e_mm}")
    return math.exp(-((shift_mm / beam_diameter_1e_mm) ** 2))


def gaussian_overlap_temporal(delay_ps: float, width_1e_ps: float) -> float:
    """One-dimensional analogue of :func:`gaussian_overlap_spatial`."""
    if not width_1e_ps > 0:
        raise DomainError(f"pulse width must be positive, got {width_1e_ps}")
    return math.exp(-((delay_ps / width_1e_ps) ** 2))


def compensator_delay_ps(comp: Compensator, arm: str, wavelength_nm: float) -> float:
    """Signed o-minus-e group delay added to ``arm`` by the compensator (before orientation)."""
    length = comp.length_for(arm)
    if length == 0:
        return 0.0
    return _transit_difference_ps(comp.material, length, comp.cut_deg, wavelength_nm)


def _orientations(bd, wl, comp):
    if comp.orientation != "auto":
        return {"signal": comp.orientation, "idler": comp.orientation}
    walk = dict(zip(("signal", "idler"), temporal_walkoff(bd, wl)))
    signs = {}
    for arm, lam in wl.daughters().items():
        delay = compensator_delay_ps(comp, arm, lam)
        # walk-off after the slab is dT - s * delay; pick s to shrink it
        signs[arm] = 1 if walk[arm] * delay >= 0 else -1
    return signs


def compensated_temporal_walkoff(bd: BeamDisplacer, wl: WavelengthSet, comp: Compensator) -> tuple[float, float]:
    signs = _orientations(bd, wl, comp)
    base = temporal_walkoff(bd, wl)
    return tuple(
        dt - signs[arm] * compensator_delay_ps(comp, arm, lam)
        for dt, (arm, lam) in zip(base, wl.daughters().items())
    )


def null_compensator_length(bd: BeamDisplacer, wl: WavelengthSet, material: Material, arm: str, cut_deg: float = 90.0) -> float:
    """Slab length (mm) whose group delay cancels the temporal walk-off of ``arm``."""
    lam = wl.daughters()[arm]
    walk = dict(zip(("signal", "idler"), temporal_walkoff(bd, wl)))[arm]
    per_mm = _transit_difference_ps(material, 1.0, cut_deg, lam)
    if per_mm == 0:
        raise DomainError(f"{material.name} at {cut_deg} deg has no birefringent group delay")
    return abs(walk / per_mm)


def _daughter_rates(wl, mode):
    """d(lambda_daughter)/d(lambda_pump) for each daughter under a co-variation mode."""
    lp, ls, li = wl.pump_nm, wl.signal_nm, wl.idler_nm
    if mode == "signal-fixed":
        return 0.0, 2.0 * (li / lp) ** 2
    if mode == "idler-fixed":
        return 2.0 * (ls / lp) ** 2, 0.0
    if mode == "equal-shift":
        return (ls / lp) ** 2, (li / lp) ** 2
    if mode == "daughters-fixed":
        return 0.0, 0.0
    raise ValueError(f"unknown daughter mode {mode!r}; expected one of {DAUGHTER_MODES}")


def pump_phase_sensitivity(
    bd: BeamDisplacer,
    wl: WavelengthSet,
    comp: Compensator = NO_COMPENSATOR,
    mode: str = "signal-fixed",
) -> float:
    """d(phi)/d(lambda_pump) in rad/nm, compensator slabs included.

    ``mode`` says how the daughters follow the pump: by default the signal
    is pinned by phase matching and the idler follows energy conservation.
    """
    rates = _daughter_rates(wl, mode)
    _check_wavelengths(bd.material, wl)
    signs = _orientations(bd, wl, comp)

    def arm_phase(arm, lam):
        phase = _retardance_rad(bd.material, bd.length_mm, bd.cut_deg, lam)
        length = comp.length_for(arm) if arm != "pump" else 0.0
        if length:
            comp.material.check_range(lam, STENCIL_NM)
            phase += signs[arm] * _retardance_rad(comp.material, length, comp.cut_deg, lam)
        return phase

    def slope(arm, lam):
        return richardson_derivative(lambda x: arm_phase(arm, x), lam, PUMP_STEP_NM, levels=3)

    d_pump = slope("pump", wl.pump_nm)
    total = 2.0 * d_pump
    for (arm, lam), rate in zip(wl.daughters().items(), rates):
        if rate:
            total -= slope(arm, lam) * rate
    return total


@dataclass
class WalkoffReport:
    material: str
    length_mm: float
    cut_deg: float
    pump_nm: float
    signal_nm: float
    idler_nm: float
    spatial_walkoff_signal_mm: float
    spatial_walkoff_idler_mm: float
    temporal_walkoff_signal_ps: float
    temporal_walkoff_idler_ps: float
    thermal_phase_deg_per_k: float
    overlap_spatial_signal: float
    overlap_spatial_idler: float
    overlap_temporal_signal: float
    overlap_temporal_idler: float
    pump_phase_rad_per_nm: float
    beam_diameter_1e_mm: float
    pulse_width_1e_ps: float
    temperature_k: float
    compensated_arm: str
    daughter_mode: str
    overlap_convention: str = field(default=OVERLAP_CONVENTION)

    def to_dict(self):
        return asdict(self)

    def format_table(self) -> str:
        header = f"{'Material':<12}{'dT_S, dT_I (ps)':<20}{'dd_S, dd_I (mm)':<20}{'dphi/dT (deg/K)':>16}"
        row = (
            f"{self.material:<12}"
            f"{self.temporal_walkoff_signal_ps:+.2f}, {self.temporal_walkoff_idler_ps:+.2f}".ljust(32)
            + f"{self.spatial_walkoff_signal_mm:+.2f}, {self.spatial_walkoff_idler_mm:+.2f}".ljust(20)
            + f"{self.thermal_phase_deg_per_k:>16.2f}"
        )
        return header + "\n" + row + "\n"


def design_report(
    bd: BeamDisplacer,
    wl: WavelengthSet,
    beam_diameter_1e_mm: float = 1.1,
    pulse_width_1e_ps: float = 1.3,
    comp: Compensator = NO_COMPENSATOR,
    temperature_k: float = 295.0,
    mode: str = "signal-fixed",
) -> WalkoffReport:
    try:
        dd = spatial_walkoff(bd, wl)
        dt = temporal_walkoff(bd, wl)
        dphi_dt = thermal_phase_sensitivity(bd, wl, temperature_k)
        dphi_dl = pump_phase_sensitivity(bd, wl, comp, mode)
        overlaps_x = [gaussian_overlap_spatial(x, beam_diameter_1e_mm) for x in dd]
        overlaps_t = [gaussian_overlap_temporal(x, pulse_width_1e_ps) for x in dt]
    except (RangeError, DomainError) as exc:
        raise type(exc)(f"design report for {bd.material.name}: {exc}") from exc
    return WalkoffReport(
        material=bd.material.name,
        length_mm=bd.length_mm,
        cut_deg=bd.cut_deg,
        pump_nm=wl.pump_nm,
        signal_nm=wl.signal_nm,
        idler_nm=wl.idler_nm,
        spatial_walkoff_signal_mm=dd[0],
        spatial_walkoff_idler_mm=dd[1],
        temporal_walkoff_signal_ps=dt[0],
        temporal_walkoff_idler_ps=dt[1],
        thermal_phase_deg_per_k=dphi_dt,
        overlap_spatial_signal=overlaps_x[0],
        overlap_spatial_idler=overlaps_x[1],
        overlap_temporal_signal=overlaps_t[0],
        overlap_temporal_idler=overlaps_t[1],
        pump_phase_rad_per_nm=dphi_dl,
        beam_diameter_1e_mm=beam_diameter_1e_mm,
        pulse_width_1e_ps=pulse_width_1e_ps,
        temperature_k=temperature_k,
        compensated_arm=comp.compensated_arm,
        daughter_mode=mode,
    )
