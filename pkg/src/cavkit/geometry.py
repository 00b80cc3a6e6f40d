"""Transverse-mode physics and inference of assembled-cavity geometry.

Mode frequencies follow from the same round-trip phase condition as the
layered one-dimensional model, with the Hermite-Gaussian transverse ladder
added on top. The fit recovers (t_c, t_a, R) and the two phase-correction
parameters from observed mode frequencies by a grid search plus simplex
refinement.

The effective length governing transverse diffraction is taken as
L_eff = t_a + t_c / n (reduced-length convention); this reproduces the
measured fundamental waist within tolerance and is documented as an
assumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np


from .constants import C_LIGHT
from .cavity import CavityAssembly
from .fitting import grid_then_local
from .tmm import LayerStack, chain_response, quarter_wave_stack

__all__ = [
    "ModeObservation",
    "GeometryEstimate",
    "ModeFrequencyModel",
    "waist",
    "waist_from_geometry",
    "transverse_mode_splitting",
    "predict_mode_frequencies",
    "fit_geometry",
]

_PARAM_NAMES = ("t_c", "t_a", "R", "a", "b")


@dataclass(frozen=True)
class ModeObservation:
    """One observed cavity mode."""

    frequency: float
    transverse_order: int = 0
    polarization_tag: str = "D1"
    longitudinal_index_hint: Optional[int] = None

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.transverse_order < 0:
            raise ValueError("transverse_order must be >= 0")


@dataclass
class GeometryEstimate:
    t_c: float
    t_a: float
    radius_of_curvature: float
    phase_params: tuple[float, float]
    residual_rms: float
    covariance: np.ndarray
    uncertainties: dict[str, float]
    boundary_flags: dict[str, bool]
    n_observations: int

    @property
    def on_boundary(self) -> bool:
        return any(self.boundary_flags.values())


def waist_from_geometry(t_c, t_a, n_crystal, radius_of_curvature, wavelength):
    """Fundamental-mode waist: w0^2 = (wl/pi) sqrt(L_eff (R - L_eff))."""
    l_eff = t_a + t_c / n_crystal
    if not np.isfinite(radius_of_curvature) or radius_of_curvature <= l_eff:
        raise ValueError("unstable geometry: need L_eff < R < infinity")
    w0_sq = (wavelength / np.pi) * np.sqrt(l_eff * (radius_of_curvature - l_eff))
    return float(np.sqrt(w0_sq))


def waist(assembly: CavityAssembly, wavelength) -> float:
    """Fundamental Gaussian waist of the assembled cavity."""
    return waist_from_geometry(assembly.crystal.thickness, assembly.air_gap,
                               assembly.crystal.refractive_index,
                               assembly.radius_of_curvature, wavelength)


def transverse_mode_splitting(t_c, t_a, n_crystal, radius_of_curvature):
    """Spacing of the Hermite-Gaussian ladder: (FSR/pi) arccos(sqrt(1 - L_eff/R))."""
    l_eff = t_a + t_c / n_crystal
    if radius_of_curvature <= l_eff:
        raise ValueError("unstable geometry")
    fsr = C_LIGHT / (2.0 * (n_crystal * t_c + t_a))
    return fsr * np.arccos(np.sqrt(1.0 - l_eff / radius_of_curvature)) / np.pi


def _wrap_pi(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


class ModeFrequencyModel:
    """Fast forward model for the mode frequencies of one mirror pair.

    Coating reflection phases depend only on wavelength and are precomputed
    on a dense frequency grid; the crystal-air interface etalon is then
    composed analytically, so objective evaluations during fitting stay cheap
    while remaining exact for any (t_c, t_a).
    """

    def __init__(self, curved_mirror: LayerStack, flat_mirror: LayerStack,
                 n_crystal: float, wavelength_range, grid_points: int = 2001,
                 reference_wavelength: float = 1536.4e-9):
        wl_min, wl_max = sorted(wavelength_range)
        self.n_crystal = float(n_crystal)
        self.wavelength_range = (wl_min, wl_max)
        self.reference_wavelength = reference_wavelength
        self.nu_grid = np.linspace(C_LIGHT / wl_max, C_LIGHT / wl_min, grid_points)
        wl = C_LIGHT / self.nu_grid

        curved_inside = curved_mirror.reversed()
        r_curved, _ = chain_response(curved_inside.entry_index, curved_inside.layers,
                                     curved_inside.exit_index, wl)
        r_flat, _ = chain_response(n_crystal, tuple(reversed(flat_mirror.layers)),
                                   flat_mirror.entry_index, wl)
        self._psi_curved_grid = np.unwrap(np.angle(r_curved))
        self._flat_mag_grid = np.abs(r_flat)
        self._flat_phase_grid = np.unwrap(np.angle(r_flat))
        self._r_flat_grid = r_flat
        self._r_interface = (1.0 - n_crystal) / (1.0 + n_crystal)  # air -> crystal

    @classmethod
    def from_assembly(cls, assembly: CavityAssembly, wavelength_range,
                      grid_points: int = 2001) -> "ModeFrequencyModel":
        return cls(assembly.curved_mirror, assembly.flat_mirror,
                   assembly.crystal.refractive_index, wavelength_range, grid_points,
                   reference_wavelength=assembly.phase_correction.reference_wavelength)

    def _compound_phase(self, nu, t_c, r_flat=None):
        """Principal-value phase of the crystal + flat-mirror compound reflector.

        The interface/etalon composition reduces to the Moebius form
        (r_i + x) / (1 + r_i x) with x the crystal-delayed flat-mirror
        reflection.
        """
        r_i = self._r_interface
        if r_flat is None:
            r_flat = (np.interp(nu, self.nu_grid, self._flat_mag_grid)
                      * np.exp(1j * np.interp(nu, self.nu_grid, self._flat_phase_grid)))
        x = r_flat * np.exp(2j * (2.0 * np.pi * self.n_crystal * t_c / C_LIGHT) * nu)
        return np.angle(r_i + x) - np.angle(1.0 + r_i * x)

    def _phase_principal(self, nu, t_c, t_a, a, b, psi_curved=None, r_flat=None):
        if psi_curved is None:
            psi_curved = np.interp(nu, self.nu_grid, self._psi_curved_grid)
        wl = C_LIGHT / nu
        return (4.0 * np.pi * nu * t_a / C_LIGHT + psi_curved
                + self._compound_phase(nu, t_c, r_flat=r_flat)
                + a + b * (wl - self.reference_wavelength))

    def round_trip_phase(self, t_c, t_a, a=0.0, b=0.0):
        """Unwrapped round-trip phase on the model's frequency grid."""
        phi = self._phase_principal(self.nu_grid, t_c, t_a, a, b,
                                    psi_curved=self._psi_curved_grid,
                                    r_flat=self._r_flat_grid)
        return np.unwrap(phi)

    def longitudinal_frequencies(self, t_c, t_a, a=0.0, b=0.0):
        """(q, frequency) arrays solving phi(nu) = 2 pi q within the range."""
        phi = self.round_trip_phase(t_c, t_a, a, b)
        q_lo = int(np.ceil(phi[0] / (2.0 * np.pi)))
        q_hi = int(np.floor(phi[-1] / (2.0 * np.pi)))
        if q_hi < q_lo:
            return np.array([], dtype=int), np.array([])
        qs = np.arange(q_lo, q_hi + 1)
        targets = 2.0 * np.pi * qs
        nu = np.interp(targets, phi, self.nu_grid)
        dphi = np.gradient(phi, self.nu_grid)
        for _ in range(3):  # Newton polish on the wrapped residual
            resid = _wrap_pi(self._phase_principal(nu, t_c, t_a, a, b) - targets)
            nu = nu - resid / np.interp(nu, self.nu_grid, dphi)
            nu = np.clip(nu, self.nu_grid[0], self.nu_grid[-1])
        return qs, nu

    def mode_frequencies(self, t_c, t_a, radius_of_curvature, a=0.0, b=0.0,
                         max_transverse: int = 0):
        """list of (q, m, frequency) including the transverse ladder."""
        qs, nu0 = self.longitudinal_frequencies(t_c, t_a, a, b)
        dnu_t = transverse_mode_splitting(t_c, t_a, self.n_crystal, radius_of_curvature)
        nu_lo, nu_hi = self.nu_grid[0], self.nu_grid[-1]
        out = []
        for m in range(max_transverse + 1):
            for q, nu in zip(qs, nu0 + m * dnu_t):
                if nu_lo <= nu <= nu_hi:
                    out.append((int(q), m, float(nu)))
        out.sort(key=lambda item: item[2])
        return out


@lru_cache(maxsize=8)
def _default_model(wavelength_range, n_crystal=1.80):
    curved = quarter_wave_stack(1536.4e-9, 2.10, 1.44, 1.44, 1.0, "high_index", 16)
    flat = quarter_wave_stack(1536.4e-9, 2.10, 1.44, 1.44, n_crystal, "low_index", 16)
    return ModeFrequencyModel(curved, flat, n_crystal, wavelength_range)


def predict_mode_frequencies(t_c, t_a, radius_of_curvature, phase_params,
                             wavelength_range, max_transverse: int = 0,
                             model: Optional[ModeFrequencyModel] = None):
    """Mode frequencies (q, m+n, Hz) for a geometry, default coating design."""
    if model is None:
        model = _default_model(tuple(sorted(wavelength_range)))
    a, b = phase_params
    return model.mode_frequencies(t_c, t_a, radius_of_curvature, a, b, max_transverse)


def _objective_residuals(theta, model, freqs_by_order):
    """Per-observation residuals with nearest-prediction assignment.

    Duplicate assignments (two observations matched to one predicted mode)
    are discouraged with a large additive penalty folded into the residuals.
    """
    t_c, t_a, radius, a, b = theta
    l_eff = t_a + t_c / model.n_crystal
    if radius <= l_eff:
        return None
    qs, nu0 = model.longitudinal_frequencies(t_c, t_a, a, b)
    if nu0.size == 0:
        return None
    dnu_t = transverse_mode_splitting(t_c, t_a, model.n_crystal, radius)
    fsr = C_LIGHT / (2.0 * (model.n_crystal * t_c + t_a))

    residuals = []
    duplicates = 0
    for m, freqs in freqs_by_order.items():
        ladder = nu0 + m * dnu_t
        idx = np.clip(np.searchsorted(ladder, freqs), 1, ladder.size - 1)
        left, right = ladder[idx - 1], ladder[idx]
        nearest = np.where(np.abs(freqs - left) <= np.abs(freqs - right), idx - 1, idx)
        residuals.append(freqs - ladder[nearest])
        duplicates += nearest.size - np.unique(nearest).size
    resid = np.concatenate(residuals)
    if duplicates:
        resid = np.concatenate([resid, np.full(duplicates, 0.25 * fsr)])
    return resid


def fit_geometry(observations: Sequence[ModeObservation], bounds, grid_points,
                 model: Optional[ModeFrequencyModel] = None,
                 local_tolerance: float = 1e-10, restarts: int = 2) -> GeometryEstimate:
    """Least-squares geometry fit: exhaustive grid, then simplex refinement.

    bounds/grid_points: dicts keyed by t_c, t_a, R, a, b, or sequences in
    that order. Requires >= 6 observations spanning at least two longitudinal
    and two transverse orders. A best fit on a bounds boundary is flagged.
    """
    obs = list(observations)
    if len(obs) < 6:
        raise ValueError("under-determined: need at least 6 observations")
    orders = sorted({o.transverse_order for o in obs})
    if len(orders) < 2:
        raise ValueError("under-determined: need at least 2 transverse orders")

    if isinstance(bounds, dict):
        bounds = [tuple(bounds[k]) for k in _PARAM_NAMES]
    else:
        bounds = [tuple(bd) for bd in bounds]
    if isinstance(grid_points, dict):
        grid_points = [int(grid_points[k]) for k in _PARAM_NAMES]
    else:
        grid_points = [int(g) for g in grid_points]

    freqs = np.array([o.frequency for o in obs])
    fsr_mid = C_LIGHT / (2.0 * (1.8 * 0.5 * (bounds[0][0] + bounds[0][1])
                                + 0.5 * (bounds[1][0] + bounds[1][1])))
    if freqs.max() - freqs.min() < 0.9 * fsr_mid:
        raise ValueError("under-determined: need at least 2 longitudinal orders")

    if model is None:
        margin = 0.2 * fsr_mid
        wl_range = (C_LIGHT / (freqs.max() + margin), C_LIGHT / (freqs.min() - margin))
        model = _default_model(tuple(sorted(wl_range)))

    freqs_by_order = {
        m: np.sort(np.array([o.frequency for o in obs if o.transverse_order == m]))
        for m in orders
    }

    def objective(theta):
        resid = _objective_residuals(theta, model, freqs_by_order)
        if resid is None:
            return np.inf
        return float(np.dot(resid, resid))

    result = grid_then_local(objective, bounds, grid_points,
                             local_tolerance=local_tolerance, restarts=restarts)
    theta = result.argmin

    resid = _objective_residuals(theta, model, freqs_by_order)
    n_obs = len(obs)
    rms = float(np.sqrt(result.value / n_obs))

    # finite-difference Gauss-Newton covariance at the optimum
    jac = np.zeros((resid.size, 5))
    for j in range(5):
        step = 1e-5 * max(abs(theta[j]), 1e-12)
        up, dn = theta.copy(), theta.copy()
        up[j] += step
        dn[j] -= step
        r_up = _objective_residuals(up, model, freqs_by_order)
        r_dn = _objective_residuals(dn, model, freqs_by_order)
        if r_up is None or r_dn is None or r_up.size != resid.size or r_dn.size != resid.size:
            continue
        jac[:, j] = (r_up - r_dn) / (2.0 * step)
    dof = max(resid.size - 5, 1)
    s2 = float(np.dot(resid, resid)) / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
        unc = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        cov = np.full((5, 5), np.nan)
        unc = np.full(5, np.nan)

    boundary = {}
    for name, value, (lo, hi) in zip(_PARAM_NAMES, theta, bounds):
        tol = 1e-6 * (hi - lo)
        boundary[name] = bool(value - lo <= tol or hi - value <= tol)

    return GeometryEstimate(
        t_c=float(theta[0]),
        t_a=float(theta[1]),
        radius_of_curvature=float(theta[2]),
        phase_params=(float(theta[3]), float(theta[4])),
        residual_rms=rms,
        covariance=cov,
        uncertainties=dict(zip(_PARAM_NAMES, map(float, unc))),
        boundary_flags=boundary,
        n_observations=n_obs,
    )
