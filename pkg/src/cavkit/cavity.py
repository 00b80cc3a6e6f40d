"""One-dimensional electrodynamics of the mirror-crystal-air resonator assembly.

The assembly is traversed from the curved-mirror substrate through the air
gap and the crystal to the flat-mirror substrate. Mirror stacks are stored in
substrate-to-cavity order; the flat mirror carries the crystal, so the z axis
used for intracavity fields starts at the flat-mirror/crystal boundary.

UNIT CONVENTION: every rate that is conventionally quoted as an angular
frequency 2*pi*X is stored as the ordinary-frequency value X in Hz. In
particular Resonance.kappa_total is the half linewidth, FWHM/2, in Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import C_LIGHT
from .fitting import fit_lorentzian
from .tmm import Layer, LayerStack, chain_response, stack_intensities

__all__ = [
    "PhaseCorrection",
    "CavityAssembly",
    "SpectrumPoint",
    "SpectrumScan",
    "Resonance",
    "cavity_spectrum",
    "find_resonances",
    "budget_resonance",
    "intracavity_field",
    "mode_volume",
]

# Lumped scatter/absorption is applied in a thin sheet at the air-facing
# crystal surface; its thickness is deducted from the crystal so the optical
# path length is unchanged.
_LOSS_SHEET_THICKNESS = 1e-9
_PEAK_FLOOR_RATIO = 10.0
_PEAK_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class PhaseCorrection:
    """Linear-in-wavelength round-trip phase offset a + b*(wl - wl_ref)."""

    a: float = 0.0
    b: float = 0.0  # rad per meter of wavelength offset
    reference_wavelength: float = 1536.4e-9

    def __call__(self, wavelength):
        return self.a + self.b * (np.asarray(wavelength) - self.reference_wavelength)


@dataclass(frozen=True)
class CavityAssembly:
    """Curved mirror | air gap | crystal | flat mirror, plus transverse geometry.

    scatter_absorb_loss is the lumped round-trip intensity loss; the phase
    correction is added to the round-trip phase of the assembly (half per
    traversal of the air gap).
    """

    curved_mirror: LayerStack
    air_gap: float
    crystal: Layer
    flat_mirror: LayerStack
    radius_of_curvature: float
    scatter_absorb_loss: float = 0.0
    phase_correction: PhaseCorrection = field(default_factory=PhaseCorrection)

    def __post_init__(self):
        if self.air_gap <= 0.0:
            raise ValueError("air gap must be positive")
        if self.radius_of_curvature <= self.air_gap + self.crystal.thickness:
            raise ValueError("unstable geometry: R must exceed t_a + t_c")
        if self.scatter_absorb_loss < 0.0:
            raise ValueError("scatter_absorb_loss must be >= 0")

    @property
    def optical_length(self) -> float:
        return self.crystal.refractive_index * self.crystal.thickness + self.air_gap

    @property
    def free_spectral_range(self) -> float:
        return C_LIGHT / (2.0 * self.optical_length)

    def intracavity_layers(self):
        """Layers between the coatings: air gap, loss sheet, crystal body."""
        layers = [Layer(1.0, self.air_gap)]
        t_c = self.crystal.thickness
        if self.scatter_absorb_loss > 0.0:
            layers.append(Layer(self.crystal.refractive_index, _LOSS_SHEET_THICKNESS,
                                absorption_loss=0.5 * self.scatter_absorb_loss))
            t_c -= _LOSS_SHEET_THICKNESS
        layers.append(Layer(self.crystal.refractive_index, t_c,
                            absorption_loss=self.crystal.absorption_loss))
        return layers


def _full_chain(assembly: CavityAssembly):
    """(n_entry, layers, n_exit, air_gap_position) for the whole assembly."""
    layers = list(assembly.curved_mirror.layers)
    air_pos = len(layers)
    layers.extend(assembly.intracavity_layers())
    layers.extend(reversed(assembly.flat_mirror.layers))
    return assembly.curved_mirror.entry_index, layers, assembly.flat_mirror.entry_index, air_pos


def assembly_response(assembly: CavityAssembly, wavelength):
    """Complex (r, t) of the full assembly including the phase correction."""
    n_in, layers, n_out, air_pos = _full_chain(assembly)
    extra = [None] * len(layers)
    extra[air_pos] = 0.5 * assembly.phase_correction(wavelength)
    return chain_response(n_in, layers, n_out, wavelength, extra_phase=extra)


def mirror_transmissions(assembly: CavityAssembly, wavelength):
    """(T_crystal_mirror, T_air_mirror) intensity transmissions at wavelength."""
    _, t_flat = stack_intensities(assembly.flat_mirror, wavelength)
    _, t_curved = stack_intensities(assembly.curved_mirror, wavelength)
    return t_flat, t_curved


def round_trip_loss(assembly: CavityAssembly, wavelength):
    """Total fractional intensity loss per round trip from the design budget."""
    t_flat, t_curved = mirror_transmissions(assembly, wavelength)
    return (t_flat + t_curved + assembly.scatter_absorb_loss
            + 2.0 * assembly.crystal.absorption_loss)


def round_trip_phase(assembly: CavityAssembly, wavelength):
    """Unwrapped round-trip phase seen from the air gap on an ascending-
    frequency wavelength grid (or a scalar, principal values)."""
    scalar = np.isscalar(wavelength)
    wl = np.atleast_1d(np.asarray(wavelength, dtype=float))

    curved_inside = assembly.curved_mirror.reversed()
    r_curved, _ = chain_response(curved_inside.entry_index, curved_inside.layers,
                                 curved_inside.exit_index, wl)
    compound = assembly.intracavity_layers()[1:]  # loss sheet + crystal
    compound.extend(reversed(assembly.flat_mirror.layers))
    r_comp, _ = chain_response(1.0, compound, assembly.flat_mirror.entry_index, wl)

    psi_curved = np.angle(r_curved)
    psi_comp = np.angle(r_comp)
    if wl.size > 1:
        psi_curved = np.unwrap(psi_curved)
        psi_comp = np.unwrap(psi_comp)
    phi = (4.0 * np.pi * assembly.air_gap / wl + psi_curved + psi_comp
           + assembly.phase_correction(wl))
    return float(phi[0]) if scalar else phi


@dataclass(frozen=True)
class SpectrumPoint:
    wavelength: float
    reflectance: float
    transmittance: float
    round_trip_phase: float


@dataclass
class SpectrumScan:
    """Plane-wave response of the assembly on a wavelength grid.

    Behaves as a sequence of SpectrumPoint rows; numeric columns are exposed
    as arrays for bulk processing.
    """

    wavelength: np.ndarray
    reflectance: np.ndarray
    transmittance: np.ndarray
    round_trip_phase: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return self.wavelength.size

    def __getitem__(self, i) -> SpectrumPoint:
        return SpectrumPoint(float(self.wavelength[i]), float(self.reflectance[i]),
                             float(self.transmittance[i]), float(self.round_trip_phase[i]))


def cavity_spectrum(assembly: CavityAssembly, wavelength_range, resolution) -> SpectrumScan:
    """Scan the composite assembly over [wl_min, wl_max] with the given step."""
    wl_min, wl_max = sorted(wavelength_range)
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    count = int(round((wl_max - wl_min) / resolution)) + 1
    wl = wl_min + resolution * np.arange(count)

    r, t = assembly_response(assembly, wl)
    n_in, _, n_out, _ = _full_chain(assembly)
    reflectance = np.abs(r) ** 2
    transmittance = np.abs(t) ** 2 * n_out / n_in
    phase = round_trip_phase(assembly, wl)

    warnings = []
    mid = 0.5 * (wl_min + wl_max)
    expected_fwhm_wl = (assembly.free_spectral_range * round_trip_loss(assembly, mid)
                        / (2.0 * np.pi)) * mid**2 / C_LIGHT
    if expected_fwhm_wl > 0 and resolution > expected_fwhm_wl:
        warnings.append("resolution_coarser_than_linewidth")
    for edge in (wl_min, wl_max):
        r_flat, _ = stack_intensities(assembly.flat_mirror, edge)
        r_curv, _ = stack_intensities(assembly.curved_mirror, edge)
        if min(r_flat, r_curv) < 0.99:
            warnings.append("outside_stopband")
            break
    return SpectrumScan(wl, reflectance, transmittance, phase, warnings)


@dataclass(frozen=True)
class Resonance:
    """A cavity resonance. kappa values are half widths in ordinary Hz."""

    center_frequency: float
    fwhm_linewidth: float
    finesse: float
    kappa_total: float
    kappa_crystal_port: float
    kappa_air_port: float
    outcoupling_efficiency: float
    wavelength: float = 0.0
    peak_transmittance: float = 0.0


def _split_ports(fwhm, t_crystal, t_air, scatter_loss, fsr):
    kappa_total = 0.5 * fwhm
    total_loss = t_crystal + t_air + scatter_loss
    kappa_crystal = kappa_total * t_crystal / total_loss
    kappa_air = kappa_total * t_air / total_loss
    return dict(
        fwhm_linewidth=fwhm,
        finesse=fsr / fwhm,
        kappa_total=kappa_total,
        kappa_crystal_port=kappa_crystal,
        kappa_air_port=kappa_air,
        outcoupling_efficiency=(t_crystal + t_air) / total_loss,
    )


def budget_resonance(center_frequency, fsr, t_crystal_mirror, t_air_mirror,
                     scatter_loss) -> Resonance:
    """Resonance parameters from the loss budget alone: FWHM = FSR*loss/(2 pi)."""
    total = t_crystal_mirror + t_air_mirror + scatter_loss
    fwhm = fsr * total / (2.0 * np.pi)
    return Resonance(
        center_frequency=center_frequency,
        wavelength=C_LIGHT / center_frequency if center_frequency else 0.0,
        **_split_ports(fwhm, t_crystal_mirror, t_air_mirror, scatter_loss, fsr),
    )


def _transmittance_at(assembly, nu):
    _, t = assembly_response(assembly, C_LIGHT / nu)
    n_in, _, n_out, _ = _full_chain(assembly)
    return abs(t) ** 2 * n_out / n_in


def find_resonances(assembly: CavityAssembly, wavelength_range,
                    fine_points: int = 801) -> list[Resonance]:
    """Locate transmission maxima in the range and fit each with a Lorentzian.

    Candidate positions come from the round-trip phase condition
    phi(nu) = 2*pi*q; each candidate is polished on the transmittance peak,
    then a fine scan of +/- a few linewidths is fit for center and FWHM.
    Peaks below 10x the off-resonant floor are discarded.
    """
    wl_min, wl_max = sorted(wavelength_range)
    nu_lo, nu_hi = C_LIGHT / wl_max, C_LIGHT / wl_min
    fsr = assembly.free_spectral_range

    n_coarse = max(512, int(np.ceil((nu_hi - nu_lo) / fsr * 128)))
    nu_grid = np.linspace(nu_lo, nu_hi, n_coarse)
    phi = round_trip_phase(assembly, C_LIGHT / nu_grid[::-1])[::-1]  # ascending nu

    q_lo = int(np.ceil(phi[0] / (2.0 * np.pi)))
    q_hi = int(np.floor(phi[-1] / (2.0 * np.pi)))
    resonances = []
    for q in range(q_lo, q_hi + 1):
        nu_seed = float(np.interp(2.0 * np.pi * q, phi, nu_grid))
        step = nu_grid[1] - nu_grid[0]
        bracket = (max(nu_seed - 2 * step, nu_lo), min(nu_seed + 2 * step, nu_hi))
        opt = minimize_scalar(lambda nu: -_transmittance_at(assembly, nu),
                              bounds=bracket, method="bounded",
                              options={"xatol": 1e-8 * fsr})
        nu_pk = float(opt.x)
        t_pk = -float(opt.fun)

        fwhm_guess = fsr * round_trip_loss(assembly, C_LIGHT / nu_pk) / (2.0 * np.pi)
        window = 8.0 * fwhm_guess
        for _ in range(3):
            nus = np.linspace(nu_pk - window, nu_pk + window, fine_points)
            wl_desc = C_LIGHT / nus[::-1]
            _, t = assembly_response(assembly, wl_desc)
            n_in, _, n_out, _ = _full_chain(assembly)
            trans = (np.abs(t) ** 2 * n_out / n_in)[::-1]
            floor = max(trans[0], trans[-1])
            if trans.max() < max(_PEAK_FLOOR_RATIO * floor, _PEAK_ABS_FLOOR):
                window *= 4.0
                continue
            fit = fit_lorentzian(nus, trans)
            if fit.parameters["fwhm"] < 0.5 * window:
                break
            window *= 4.0
        else:
            continue
        if trans.max() < max(_PEAK_FLOOR_RATIO * floor, _PEAK_ABS_FLOOR):
            continue

        center = fit.parameters["center"]
        fwhm = fit.parameters["fwhm"]
        t_flat, t_curved = mirror_transmissions(assembly, C_LIGHT / center)
        scatter = assembly.scatter_absorb_loss + 2.0 * assembly.crystal.absorption_loss
        resonances.append(Resonance(
            center_frequency=float(center),
            wavelength=C_LIGHT / center,
            peak_transmittance=float(trans.max()),
            **_split_ports(float(fwhm), t_flat, t_curved, scatter, fsr),
        ))
    resonances.sort(key=lambda res: res.center_frequency)
    return resonances


@dataclass
class FieldProfile:
    """Sampled standing-wave envelope inside the crystal, node at z = 0."""

    z: np.ndarray
    envelope: np.ndarray
    wavelength: float


def intracavity_field(assembly: CavityAssembly, resonance: Resonance) -> FieldProfile:
    """Normalized field envelope sin(2 pi n z / wl) through the crystal.

    z runs from the flat-mirror/crystal boundary (a field node) to the
    crystal/air interface; the grid step is at most wl/(20 n).
    """
    wl = C_LIGHT / resonance.center_frequency
    n = assembly.crystal.refractive_index
    t_c = assembly.crystal.thickness
    step = wl / (20.0 * n)
    count = int(np.ceil(t_c / step)) + 1
    z = np.linspace(0.0, t_c, count)
    return FieldProfile(z, np.sin(2.0 * np.pi * n * z / wl), wl)


def _max_sin2(phi0: float, phi1: float) -> float:
    """max of sin^2 over the phase interval [phi0, phi1]."""
    if phi1 - phi0 >= np.pi:
        return 1.0
    # contains an odd multiple of pi/2?
    k0 = math.ceil((phi0 - np.pi / 2) / np.pi)
    if phi0 <= k0 * np.pi + np.pi / 2 <= phi1:
        return 1.0
    return max(np.sin(phi0) ** 2, np.sin(phi1) ** 2)


def mode_volume(assembly: CavityAssembly, waist: float, wavelength: Optional[float] = None) -> float:
    """Energy-density mode volume normalized to the field maximum.

    V = (pi w0^2 / 2) * integral(eps |E|^2 dz) / max(eps |E|^2) with the
    idealized piecewise standing wave: sin(k_c z) in the crystal (node at the
    flat mirror) continued into the air gap with matched field and slope. The
    transverse factor pi w0^2 / 2 is the exact Gaussian area integral.
    """
    if wavelength is None:
        wavelength = assembly.phase_correction.reference_wavelength
    n = assembly.crystal.refractive_index
    t_c = assembly.crystal.thickness
    t_a = assembly.air_gap
    k_c = 2.0 * np.pi * n / wavelength
    k_0 = 2.0 * np.pi / wavelength

    # crystal: sin(k_c z) on [0, t_c]
    i_crystal = 0.5 * t_c - np.sin(2.0 * k_c * t_c) / (4.0 * k_c)
    s_c = np.sin(k_c * t_c)
    c_n = n * np.cos(k_c * t_c)  # slope matching carries a factor n = k_c/k_0
    amp2 = s_c**2 + c_n**2
    phi = math.atan2(s_c, c_n)
    # air: A sin(k_0 u + phi) on [0, t_a]
    i_air = 0.5 * amp2 * t_a - amp2 * (np.sin(2.0 * (k_0 * t_a + phi)) - np.sin(2.0 * phi)) / (4.0 * k_0)

    peak = max(n**2 * _max_sin2(0.0, k_c * t_c), amp2 * _max_sin2(phi, phi + k_0 * t_a))
    return (np.pi * waist**2 / 2.0) * (n**2 * i_crystal + i_air) / peak
