"""Right-hand side of the 3D viscous primitive equations on the periodic box.

With ``U = (v, b)`` and the vertical velocity ``w = -int_0^z div v`` the
system is written as::

    dU/dt = G - B(U, U) - C U - nu A U - (grad p, 0)

where ``B`` is the hydrostatic advection by ``(v1, v2, w)``, ``C U`` collects
the Coriolis force ``f v_perp`` and the buoyancy pressure gradient
``grad int_0^z b``, ``A`` is minus the 3D Laplacian and the surface pressure
``p(x)`` is the potential removed by the 2D Leray projection of the
barotropic tendency.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    EVEN, ScalarField, SpectralSpace, StateVector, _vertical_integral_coeffs,
    divergence_h, packed_project, packed_vertical_integral, project_coeffs, vertical_integral,
)

FORCING_PRESETS = ("default", "none")
FORCING_BAND = 4


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """Time-independent body forcing ``(G_f1, G_f2, G_b)``.

    ``G`` holds the *unit* forcing pattern; the applied forcing is
    ``amplitude * G``.
    """

    G: StateVector
    amplitude: float = 1.0

    def __post_init__(self):
        sp = self.G.space
        outside = ((np.abs(sp.k1) > FORCING_BAND) | (np.abs(sp.k2) > FORCING_BAND)
                   | (np.abs(sp.m) > FORCING_BAND))
        if np.any(self.G.coeffs[:, outside] != 0):
            raise ValueError(f"forcing must be band-limited to |k_i| <= {FORCING_BAND}")
        projected = project_coeffs(sp, self.G.coeffs)
        if not np.allclose(projected, self.G.coeffs, rtol=0, atol=1e-12 * max(np.abs(self.G.coeffs).max(), 1.0)):
            raise ValueError("forcing violates the state symmetries (parity, mean, barotropic constraint)")

    @property
    def field(self) -> StateVector:
        return self.G * self.amplitude

    @classmethod
    def zero(cls, space: SpectralSpace) -> "ForcingSpec":
        return cls(StateVector.zeros(space), 0.0)

    @classmethod
    def preset(cls, space: SpectralSpace, name: str = "default", amplitude: float = 1.0) -> "ForcingSpec":
        """``default``: ``G_f = (cos(2 pi z/L3) sin(2 pi x2/L2), 0)``, ``G_b = sin(2 pi z/L3) cos(2 pi x1/L1)``."""
        if name == "none":
            return cls.zero(space)
        if name != "default":
            raise ValueError(f"unknown forcing preset {name!r}; choose from {FORCING_PRESETS}")
        x1, x2, z = space.coordinates
        L1, L2, L3 = space.domain.lengths
        gz = np.cos(2 * np.pi * z / L3)
        gf1 = gz * np.sin(2 * np.pi * x2 / L2)
        gb = np.sin(2 * np.pi * z / L3) * np.cos(2 * np.pi * x1 / L1)
        G = StateVector.from_physical(space, gf1, 0.0, gb)
        c = project_coeffs(space, G.coeffs)
        c[np.abs(c) < 1e-15] = 0.0
        return cls(StateVector(space, c), amplitude)

    @classmethod
    def from_entries(cls, space: SpectralSpace, entries, amplitude: float = 1.0) -> "ForcingSpec":
        """Build from ``(component, k1, k2, m, re, im)`` coefficient entries.

        ``component`` is 0, 1, 2 (or ``"v1"``, ``"v2"``, ``"b"``).  Each entry
        and its complex conjugate at ``-k`` are set, then the symmetries are
        imposed by projection.
        """
        names = {"v1": 0, "v2": 1, "b": 2}
        c = space.zeros(3)
        for comp, k1, k2, m, re, im in entries:
            comp = names.get(comp, comp)
            if comp not in (0, 1, 2):
                raise ValueError(f"forcing component must be v1, v2 or b, got {comp!r}")
            if max(abs(k1), abs(k2), abs(m)) > FORCING_BAND:
                raise ValueError(f"forcing entry {(k1, k2, m)} outside band |k_i| <= {FORCING_BAND}")
            c[comp, k1, k2, m] += complex(re, im) / 2
            c[comp, -k1, -k2, -m] += complex(re, -im) / 2
        c = project_coeffs(space, c)
        c[np.abs(c) < 1e-15] = 0.0
        return cls(StateVector(space, c), amplitude)


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    nu: float
    f_coriolis: float = 1.0
    forcing: ForcingSpec | None = None
    nonlinear: bool = True
    buoyancy_coupling: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"viscosity nu must be positive, got {self.nu}")

    def forcing_coeffs(self, space: SpectralSpace):
        if self.forcing is None or self.forcing.amplitude == 0:
            return None
        if self.forcing.G.space != space:
            raise ValueError("forcing defined on a different spectral space")
        return self.forcing.amplitude * self.forcing.G.coeffs


@dataclass(frozen=True, eq=False)
class Tendency:
    """Time derivative of the state plus the diagnosed surface pressure (constant in z)."""

    dU: StateVector
    pressure: ScalarField = field(default=None)


# --- diagnostic vertical velocity ------------------------------------------

def vertical_velocity(v1: ScalarField, v2: ScalarField) -> ScalarField:
    """``w = -int_0^z div v``; odd in z and zero at the top and bottom."""
    return -vertical_integral(divergence_h(v1, v2))


def _w_coeffs(space: SpectralSpace, c: np.ndarray) -> np.ndarray:
    div = 1j * (space.D[0] * c[0] + space.D[1] * c[1])
    div[..., 0] = 0.0
    return -_vertical_integral_coeffs(space, div)


# --- nonlinear advection ----------------------------------------------------

def _advection(space: SpectralSpace, c: np.ndarray):
    """Skew-symmetric advection of (v1, v2, b) by (v1, v2, w), 2/3-dealiased.

    Returns the dealiased coefficient stack and the physical velocity
    samples (used for the CFL check).
    """
    D1, D2, D3 = space.D
    w = _w_coeffs(space, c)
    grads = np.empty((3, 3) + space.shape, dtype=complex)
    for j, D in enumerate((D1, D2, D3)):
        grads[:, j] = 1j * D * c
    phys = space.inverse(np.concatenate([c, w[None], grads.reshape((9,) + space.shape)]))
    u = phys[[0, 1, 3]]
    b = phys[2]
    g = phys[4:].reshape((3, 3) + space.shape)
    adv = np.einsum("jxyz,ijxyz->ixyz", u, g)
    fields = (u[0], u[1], b)
    flux = np.empty((3, 3) + space.shape)
    for i in range(3):
        for j in range(3):
            flux[i, j] = u[j] * fields[i]
    adv_hat, flux_hat = np.split(space.forward(np.concatenate([adv, flux.reshape((9,) + space.shape)])), [3])
    flux_hat = flux_hat.reshape((3, 3) + space.shape)
    div_flux = 1j * (D1 * flux_hat[:, 0] + D2 * flux_hat[:, 1] + D3 * flux_hat[:, 2])
    out = 0.5 * (adv_hat + div_flux) * space.dealias_mask
    return out, u


def nonlinear_term(U: StateVector) -> StateVector:
    """``B(U, U)``: advection of each component by the full 3D velocity.

    Uses the skew-symmetric form ``(u.grad phi + div(u phi)) / 2`` with
    2/3 dealiasing, so that ``(B(U, U), U)_H = 0`` holds to rounding for
    band-limited states.
    """
    out, _ = _advection(U.space, U.coeffs * U.space.dealias_mask)
    return StateVector(U.space, out)


# --- linear terms -----------------------------------------------------------

def _coriolis_buoyancy(space: SpectralSpace, c: np.ndarray, params: PhysicalParams) -> np.ndarray:
    out = space.zeros(3)
    f = params.f_coriolis
    if f:
        out[0] = -f * c[1]
        out[1] = f * c[0]
    if params.buoyancy_coupling:
        bint = c[2].copy()
        bint[..., 0] = 0.0
        B = _vertical_integral_coeffs(space, bint)
        out[0] += 1j * space.D[0] * B
        out[1] += 1j * space.D[1] * B
    return out


def linear_terms(U: StateVector, params: PhysicalParams, include_viscous: bool = True) -> StateVector:
    """``C U + nu A U`` in left-hand-side convention.

    ``C U`` is the Coriolis term ``f (-v2, v1)`` plus the buoyancy pressure
    gradient ``grad int_0^z b`` on the velocity components, so the tendency
    contribution is ``-linear_terms(U)``.
    """
    out = _coriolis_buoyancy(U.space, U.coeffs, params)
    if include_viscous:
        out = out + params.nu * U.space.lam * U.coeffs
    return StateVector(U.space, out)


# --- surface pressure -------------------------------------------------------

def _pressure_projection(space: SpectralSpace, t: np.ndarray):
    out = t.copy()
    u, v = t[0, :, :, 0], t[1, :, :, 0]
    K1 = space.K1[:, :, 0]
    K2 = space.K2[:, :, 0]
    kdot = K1 * u + K2 * v
    out[0, :, :, 0] = u - K1 * kdot * space.inv_kh2
    out[1, :, :, 0] = v - K2 * kdot * space.inv_kh2
    p = space.zeros()
    p[:, :, 0] = -1j * kdot * space.inv_kh2
    return out, p


def pressure_projection(dU: StateVector) -> tuple[StateVector, ScalarField]:
    """Remove the gradient part of the barotropic velocity tendency.

    Returns the projected tendency and the surface pressure ``p`` (a field
    constant in z) such that ``projected = dU - (grad p, 0)``.
    """
    out, p = _pressure_projection(dU.space, dU.coeffs)
    return StateVector(dU.space, out), ScalarField(dU.space, p, EVEN)


# --- full right-hand side ---------------------------------------------------

def _rhs_coeffs(space: SpectralSpace, c: np.ndarray, params: PhysicalParams, include_viscous: bool):
    """Tendency coefficients and the physical velocity (``None`` if linear)."""
    t = -_coriolis_buoyancy(space, c, params)
    u = None
    if params.nonlinear:
        adv, u = _advection(space, c)
        t -= adv
    G = params.forcing_coeffs(space)
    if G is not None:
        t += G
    if include_viscous:
        t -= params.nu * space.lam * c
    t, p = _pressure_projection(space, t)
    t = project_coeffs(space, t) * space.dealias_mask
    return t, p, u


# --- packed fast path (used by the time stepper) ----------------------------

def _packed_rhs(space: SpectralSpace, p: np.ndarray, params: PhysicalParams, G: np.ndarray | None):
    """Inviscid tendency on the packed dealiased block plus physical velocity."""
    pt = space.packed
    K1, K2, K3 = pt.K1, pt.K2, pt.K3
    t = np.zeros_like(p)
    f = params.f_coriolis
    if f:
        t[0] = f * p[1]
        t[1] = -f * p[0]
    if params.buoyancy_coupling:
        B = packed_vertical_integral(pt, p[2])
        t[0] -= 1j * K1 * B
        t[1] -= 1j * K2 * B
    u = None
    if params.nonlinear:
        # The velocity (v1, v2, w) is exactly divergence free on the block and
        # dealiased products are exact there, so the skew-symmetric form equals
        # the flux form div(u phi); this needs 4 + 8 transforms instead of 25.
        w = -packed_vertical_integral(pt, 1j * (K1 * p[0] + K2 * p[1]))
        v1, v2, b, w = space.packed_inverse(np.concatenate([p, w[None]]))
        u = (v1, v2, w)
        prods = space.packed_forward(np.stack([v1 * v1, v1 * v2, v1 * w, v2 * v2, v2 * w,
                                                b * v1, b * v2, b * w]))
        aa, ab, aw, bb, bw, s1, s2, sw = prods
        t[0] -= 1j * (K1 * aa + K2 * ab + K3 * aw)
        t[1] -= 1j * (K1 * ab + K2 * bb + K3 * bw)
        t[2] -= 1j * (K1 * s1 + K2 * s2 + K3 * sw)
    if G is not None:
        t += G
    return packed_project(pt, t), u


def rhs(U: StateVector, params: PhysicalParams, include_viscous: bool = True) -> Tendency:
    """``G - B(U, U) - C U - nu A U`` followed by the pressure and symmetry projections."""
    t, p, _ = _rhs_coeffs(U.space, U.coeffs, params, include_viscous)
    return Tendency(StateVector(U.space, t), ScalarField(U.space, p, EVEN))


def buoyancy_work(U: StateVector) -> float:
    """``(w, b)_H``: the rate at which buoyancy coupling feeds kinetic energy."""
    sp = U.space
    w = StateVector(sp, np.stack([sp.zeros(), sp.zeros(), _w_coeffs(sp, U.coeffs)]))
    from .spectral import inner_product
    return inner_product(w, U)
