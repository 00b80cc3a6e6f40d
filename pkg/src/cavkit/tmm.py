"""Transfer-matrix optics for planar dielectric layer stacks at normal incidence.

Field convention: in every medium the field is A*exp(ikz) + B*exp(-ikz) with
time dependence exp(-i w t), so absorption corresponds to a positive imaginary
part of the refractive index. The 2x2 matrices map (A, B) on the entry side to
(A, B) on the exit side; reflection and transmission amplitudes follow from
the total chain matrix as r = M10/M00, t = 1/M00.

Intensity coefficients: R = |r|^2 and T = |t|^2 * n_exit / n_entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Layer",
    "LayerStack",
    "chain_response",
    "stack_response",
    "stack_intensities",
    "build_quarter_wave_stack",
]

_MAX_PAIRS = 200


@dataclass(frozen=True)
class Layer:
    """Homogeneous dielectric layer.

    absorption_loss is the fractional intensity loss per single traversal at
    the wavelength of interest; it is mapped onto an imaginary index component
    internally.
    """

    refractive_index: float
    thickness: float
    absorption_loss: float = 0.0

    def __post_init__(self):
        if self.refractive_index < 1.0:
            raise ValueError(f"refractive_index must be >= 1, got {self.refractive_index}")
        if self.thickness <= 0.0:
            raise ValueError(f"thickness must be > 0, got {self.thickness}")
        if not 0.0 <= self.absorption_loss < 1.0:
            raise ValueError(f"absorption_loss must be in [0, 1), got {self.absorption_loss}")

    def complex_index(self, wavelength):
        """Refractive index including the absorption-equivalent imaginary part."""
        if self.absorption_loss == 0.0:
            return complex(self.refractive_index)
        kappa = -np.log1p(-self.absorption_loss) * np.asarray(wavelength) / (4.0 * np.pi * self.thickness)
        return self.refractive_index + 1j * kappa


@dataclass(frozen=True)
class LayerStack:
    """Ordered layer sequence between two semi-infinite media.

    Layers are stored in traversal order from the entry medium to the exit
    medium. termination labels the index class of the final layer (the one
    adjacent to the exit medium) and is checked for two-material stacks.
    """

    layers: tuple[Layer, ...]
    entry_index: float
    exit_index: float
    termination: Optional[str] = None  # "high_index" | "low_index"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.termination not in (None, "high_index", "low_index"):
            raise ValueError(f"unknown termination {self.termination!r}")
        if self.termination is not None and self.layers:
            indices = sorted({ly.refractive_index for ly in self.layers})
            last = self.layers[-1].refractive_index
            want = indices[-1] if self.termination == "high_index" else indices[0]
            if len(indices) > 1 and last != want:
                raise ValueError(f"termination {self.termination} does not match final layer index {last}")

    def reversed(self) -> "LayerStack":
        """The same physical stack probed from the other side."""
        return LayerStack(tuple(self.layers[::-1]), self.exit_index, self.entry_index, None)


def chain_response(n_entry, layers: Sequence[Layer], n_exit, wavelength, extra_phase=None):
    """Complex (r, t) amplitudes of a layer chain, vectorized over wavelength.

    extra_phase, if given, is a sequence (one entry per layer, None allowed)
    of additions to the one-way propagation phase of that layer in radians.
    """
    wl = np.asarray(wavelength, dtype=float)
    if np.any(wl <= 0.0):
        raise ValueError("wavelength must be positive")
    one = np.ones(wl.shape, dtype=complex)
    m00, m01, m10, m11 = one, 0.0 * one, 0.0 * one, one.copy()
    prev = complex(n_entry)
    for i, layer in enumerate(layers):
        nc = layer.complex_index(wl)
        r = (prev - nc) / (prev + nc)
        t = 2.0 * prev / (prev + nc)
        a00 = (m00 + m01 * r) / t
        a01 = (m00 * r + m01) / t
        a10 = (m10 + m11 * r) / t
        a11 = (m10 * r + m11) / t
        delta = 2.0 * np.pi * nc * layer.thickness / wl
        if extra_phase is not None and extra_phase[i] is not None:
            delta = delta + extra_phase[i]
        fwd = np.exp(-1j * delta)
        bwd = np.exp(1j * delta)
        m00, m01, m10, m11 = a00 * fwd, a01 * bwd, a10 * fwd, a11 * bwd
        prev = nc
    r = (prev - n_exit) / (prev + n_exit)
    t = 2.0 * prev / (prev + n_exit)
    a00 = (m00 + m01 * r) / t
    a10 = (m10 + m11 * r) / t
    r_tot = a10 / a00
    t_tot = 1.0 / a00
    if np.isscalar(wavelength):
        return complex(r_tot), complex(t_tot)
    return r_tot, t_tot


def stack_response(stack: LayerStack, wavelength):
    """Complex reflection/transmission amplitudes of a LayerStack."""
    return chain_response(stack.entry_index, stack.layers, stack.exit_index, wavelength)


def stack_intensities(stack: LayerStack, wavelength):
    """Intensity reflectance and transmittance (R, T) of a LayerStack."""
    r, t = stack_response(stack, wavelength)
    R = np.abs(r) ** 2
    T = np.abs(t) ** 2 * stack.exit_index / stack.entry_index
    return R, T


def _quarter_wave_layers(center_wavelength, n_high, n_low, pairs, termination):
    """Alternating quarter-wave layers, entry (substrate) to exit side.

    high_index termination: H (L H)^pairs, exit-adjacent layer is H.
    low_index termination:  (H L)^pairs, exit-adjacent layer is L.
    """
    d_high = center_wavelength / (4.0 * n_high)
    d_low = center_wavelength / (4.0 * n_low)
    high = Layer(n_high, d_high)
    low = Layer(n_low, d_low)
    if termination == "high_index":
        seq = [high] + [low, high] * pairs
    else:
        seq = [high, low] * pairs
    return tuple(seq)


def quarter_wave_stack(center_wavelength, n_high, n_low, n_substrate, n_exit,
                       termination, pairs) -> LayerStack:
    """Quarter-wave stack with a fixed pair count (entry side = substrate)."""
    layers = _quarter_wave_layers(center_wavelength, n_high, n_low, pairs, termination)
    return LayerStack(layers, n_substrate, n_exit, termination if layers else None)


def build_quarter_wave_stack(center_wavelength, target_transmission, n_high, n_low,
                             n_substrate, n_exit, termination="high_index") -> LayerStack:
    """Smallest quarter-wave stack whose transmission meets the target.

    Pair counts are increased until the transmission at center_wavelength,
    computed by stack_response, drops to or below target_transmission. A bare
    interface already meeting the target yields an empty stack.
    """
    if not 0.0 < target_transmission <= 1.0:
        raise ValueError("target_transmission must be in (0, 1]")
    if not 1.0 < n_low < n_high:
        raise ValueError("need 1 < n_low < n_high")
    if center_wavelength <= 0.0:
        raise ValueError("center_wavelength must be positive")
    bare = LayerStack((), n_substrate, n_exit, None)
    _, t_bare = stack_intensities(bare, center_wavelength)
    if t_bare <= target_transmission:
        return bare
    for pairs in range(_MAX_PAIRS + 1):
        stack = quarter_wave_stack(center_wavelength, n_high, n_low,
                                   n_substrate, n_exit, termination, pairs)
        if not stack.layers:
            continue
        _, T = stack_intensities(stack, center_wavelength)
        if T <= target_transmission:
            return stack
    raise ValueError(f"target transmission {target_transmission} not reachable "
                     f"within {_MAX_PAIRS} layer pairs")
