"""Purcell-factor physics and statistics for an emitter ensemble in the cavity.

All rates follow the global storage convention: quantities quoted as angular
frequencies 2*pi*X are stored as the ordinary-frequency value X in Hz. The
total cavity field decay rate kappa is the half linewidth nu/(2Q); the
polarization decay rate gamma is 1/(4 pi T0) (angular 1/(2 T0)). Where a Rabi
argument needs angular rates, the 2*pi is reinstated explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .constants import C_LIGHT

__all__ = [
    "PurcellModel",
    "PurcellSample",
    "PurcellSamples",
    "purcell_two_level",
    "purcell_emitter",
    "purcell_at",
    "density_analytic",
    "sample_dopants",
    "excitation_probability",
    "collection_probability",
    "effective_average_purcell",
    "vibration_derating",
]

_QUAD_REL_TOL = 1e-8


def purcell_two_level(wavelength, quality_factor, crystal_index, mode_volume):
    """Peak Purcell factor of an ideal two-level emitter: 3 wl^3 Q / (4 pi^2 n^3 V)."""
    if min(wavelength, quality_factor, crystal_index, mode_volume) < 0:
        raise ValueError("all arguments must be non-negative")
    return (3.0 * wavelength**3 * quality_factor
            / (4.0 * np.pi**2 * crystal_index**3 * mode_volume))


@dataclass(frozen=True)
class PurcellModel:
    """Emitter-ensemble coupling description with derived coupling constants.

    Derived fields are maintained consistently on construction:
    p_tl = 3 wl^3 Q/(4 pi^2 n^3 V), p_max = branching * p_tl,
    g_max = sqrt(p_max * kappa * gamma).
    """

    wavelength: float
    quality_factor: float
    crystal_index: float
    mode_volume: float
    branching_ratio: float
    free_space_lifetime: float
    waist: float
    kappa: float = field(init=False)
    gamma: float = field(init=False)
    p_tl: float = field(init=False)
    p_max: float = field(init=False)
    g_max: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.branching_ratio <= 1.0:
            raise ValueError("branching_ratio must be in (0, 1]")
        if min(self.wavelength, self.quality_factor, self.crystal_index,
               self.mode_volume, self.free_space_lifetime, self.waist) <= 0.0:
            raise ValueError("model parameters must be positive")
        nu = C_LIGHT / self.wavelength
        object.__setattr__(self, "kappa", nu / (2.0 * self.quality_factor))
        object.__setattr__(self, "gamma", 1.0 / (4.0 * np.pi * self.free_space_lifetime))
        object.__setattr__(self, "p_tl", purcell_two_level(
            self.wavelength, self.quality_factor, self.crystal_index, self.mode_volume))
        object.__setattr__(self, "p_max", self.branching_ratio * self.p_tl)
        object.__setattr__(self, "g_max", float(np.sqrt(self.p_max * self.kappa * self.gamma)))


def purcell_emitter(model: PurcellModel):
    """(P_max, g_max) for the real emitter: branching-corrected peak Purcell
    factor and the corresponding coupling rate. Both construction routes,
    branching * P_TL and g_max^2/(kappa gamma), agree by construction."""
    return model.p_max, model.g_max


def purcell_at(model: PurcellModel, rho, z):
    """Position-dependent Purcell factor over the standing-wave Gaussian mode.

    z is measured from a field node; the axial envelope is sin^2(2 pi n z/wl)
    and the radial one exp(-2 rho^2 / w0^2).
    """
    axial = np.sin(2.0 * np.pi * model.crystal_index * np.asarray(z) / model.wavelength) ** 2
    radial = np.exp(-2.0 * np.asarray(rho) ** 2 / model.waist**2)
    return model.p_max * axial * radial


def density_analytic(p, p_max):
    """Relative density of Purcell factors: arctan(sqrt(P_max/P - 1)) / (4 pi P).

    The density is unnormalized (it is not integrable down to P = 0 for an
    unbounded radial domain); callers normalize on a stated interval.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p > p_max):
        raise ValueError("P must lie in (0, P_max]")
    return np.arctan(np.sqrt(p_max / p - 1.0)) / (4.0 * np.pi * p)


def collection_probability(p):
    """Probability that an emitted photon enters the cavity mode: P/(P+1)."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("P must be >= 0")
    return p / (p + 1.0)


def excitation_probability(p, model: PurcellModel, n_cav, tau):
    """Coherent-drive excitation probability sin^2(sqrt(n_cav) g tau / 2).

    g enters as an angular rate: stored ordinary-frequency kappa and gamma
    are multiplied by 2*pi each, i.e. g_ang = 2 pi sqrt(P kappa gamma).
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if n_cav < 0.0:
        raise ValueError("n_cav must be >= 0")
    g_angular = 2.0 * np.pi * np.sqrt(np.asarray(p) * model.kappa * model.gamma)
    return np.sin(np.sqrt(n_cav) * g_angular * tau / 2.0) ** 2


def effective_weight(p, model: PurcellModel, n_cav, tau, p_max=None):
    """Unnormalized effective density: p(P) * p_coll(P) * p_ex(P)."""
    if p_max is None:
        p_max = model.p_max
    return (density_analytic(p, p_max) * collection_probability(p)
            * excitation_probability(p, model, n_cav, tau))


def _checked_quad(fn, lo, hi):
    value, err = quad(fn, lo, hi, epsabs=0.0, epsrel=_QUAD_REL_TOL, limit=200)
    if not np.isfinite(value) or (value != 0.0 and err > 1e-4 * abs(value)):
        raise ArithmeticError(
            f"quadrature did not converge on [{lo}, {hi}]: value={value}, err={err}")
    return value


def effective_average_purcell(model: PurcellModel, n_cav, tau, lower_bound=1.0,
                              derating=1.0):
    """Mean Purcell factor weighted by the effective (detected) density.

    Integrates P * p(P) * p_coll * p_ex over [lower_bound, P_max] by adaptive
    quadrature (relative tolerance 1e-8) and normalizes by the same weight.
    derating scales P_max before averaging (vibrating-cavity operation).
    """
    if not 0.0 < derating <= 1.0:
        raise ValueError("derating must be in (0, 1]")
    p_max = derating * model.p_max
    if lower_bound <= 0.0 or lower_bound >= p_max:
        raise ValueError("lower_bound must be in (0, derated P_max)")

    def weight(p):
        return effective_weight(p, model, n_cav, tau, p_max=p_max)

    norm = _checked_quad(weight, lower_bound, p_max)
    mean = _checked_quad(lambda p: p * weight(p), lower_bound, p_max)
    return mean / norm


def vibration_derating(delta_nu_rms, fwhm):
    """Purcell derating by rms cavity detuning: 1/(1 + (dv_rms/(FWHM/2))^2)."""
    if fwhm <= 0.0:
        raise ValueError("fwhm must be positive")
    return 1.0 / (1.0 + (np.asarray(delta_nu_rms) / (0.5 * fwhm)) ** 2)


@dataclass(frozen=True)
class PurcellSample:
    rho: float
    z: float
    purcell: float
    weight_excitation: float
    weight_collection: float


@dataclass
class PurcellSamples:
    """Column-oriented set of sampled dopants; iterates as PurcellSample rows."""

    rho: np.ndarray
    z: np.ndarray
    purcell: np.ndarray
    weight_excitation: np.ndarray
    weight_collection: np.ndarray
    radial_cutoff: float
    seed: int

    def __len__(self):
        return self.purcell.size

    def __getitem__(self, i) -> PurcellSample:
        return PurcellSample(float(self.rho[i]), float(self.z[i]), float(self.purcell[i]),
                             float(self.weight_excitation[i]), float(self.weight_collection[i]))


def sample_dopants(model: PurcellModel, count: int, radial_cutoff: float = 4.0,
                   seed: int = 0, n_cav: Optional[float] = None,
                   tau: Optional[float] = None) -> PurcellSamples:
    """Uniformly sampled dopants in a cylinder around the mode axis.

    The cylinder has radius radial_cutoff * w0 (uniform in the area element
    rho drho dphi) and spans one standing-wave period wl/(2n) axially. The
    sample is a pure function of (seed, count, radial_cutoff): chunking or
    worker count never changes the output. Excitation weights are filled when
    n_cav and tau are given, otherwise set to 1.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if radial_cutoff < 3.0:
        raise ValueError("radial_cutoff must be >= 3 waists to cover the mode")
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    rho = radial_cutoff * model.waist * np.sqrt(u)
    period = model.wavelength / (2.0 * model.crystal_index)
    z = rng.random(count) * period
    p = purcell_at(model, rho, z)
    w_coll = collection_probability(p)
    if n_cav is not None and tau is not None:
        w_ex = excitation_probability(p, model, n_cav, tau)
    else:
        w_ex = np.ones_like(p)
    return PurcellSamples(rho, z, p, w_ex, w_coll, radial_cutoff, seed)
