"""Fourier representation of fields on the periodic box.

The box is ``(0, L1) x (0, L2) x (-L3/2, L3/2)``.  Every field is stored as
a full complex coefficient array in the standard FFT frequency layout,
indexed ``[k1, k2, m]``, normalised so that a constant field ``c`` has the
single coefficient ``c`` at ``(0, 0, 0)``.  The z origin sits at the centre
of the vertical interval so that "even in z" and "odd in z" mean symmetry
under ``m -> -m`` of the coefficients.

States ``U = (v1, v2, b)`` are stacked into a ``(3, N1, N2, N3)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

EVEN = "even"
ODD = "odd"
NONE = "none"

_FLIP = {EVEN: ODD, ODD: EVEN, NONE: NONE}


class PreconditionError(ValueError):
    """An operation was called on data violating its precondition."""


@dataclass(frozen=True)
class Domain:
    L1: float = 2 * np.pi
    L2: float = 2 * np.pi
    L3: float = 2 * np.pi

    def __post_init__(self):
        for name in ("L1", "L2", "L3"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"box length {name} must be positive and finite, got {val}")

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.L1, self.L2, self.L3)

    @property
    def volume(self) -> float:
        return self.L1 * self.L2 * self.L3


@dataclass(frozen=True)
class Grid:
    N1: int = 32
    N2: int = 32
    N3: int = 32

    def __post_init__(self):
        for name in ("N1", "N2", "N3"):
            n = getattr(self, name)
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"grid size {name} must be an even integer >= 8, got {n}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N1, self.N2, self.N3)

    @property
    def cutoffs(self) -> tuple[int, int, int]:
        """Largest retained |k| per direction (two-thirds rule).

        ``3 c < N`` guarantees that aliases of quadratic products land
        outside the retained band.
        """
        return tuple((n - 1) // 3 for n in self.shape)


class SpectralSpace:
    """Wavenumber tables and transforms for one (domain, grid) pair."""

    def __init__(self, domain: Domain | None = None, grid: Grid | None = None):
        self.domain = domain or Domain()
        self.grid = grid or Grid()
        N1, N2, N3 = self.grid.shape
        self.shape = self.grid.shape
        self.size = N1 * N2 * N3
        ints = [np.fft.fftfreq(n, 1.0 / n).astype(int) for n in self.shape]
        self.k1 = ints[0][:, None, None]
        self.k2 = ints[1][None, :, None]
        self.m = ints[2][None, None, :]
        L = self.domain.lengths
        self.K1 = 2 * np.pi * self.k1 / L[0]
        self.K2 = 2 * np.pi * self.k2 / L[1]
        self.K3 = 2 * np.pi * self.m / L[2]
        # odd derivatives drop the Nyquist wavenumber to keep real fields real
        self.D = [np.where(np.abs(k) == n // 2, 0.0, K)
                  for k, K, n in zip((self.k1, self.k2, self.m), (self.K1, self.K2, self.K3), self.shape)]
        self.lam = self.K1 ** 2 + self.K2 ** 2 + self.K3 ** 2
        c1, c2, c3 = self.grid.cutoffs
        self.dealias_mask = ((np.abs(self.k1) <= c1) & (np.abs(self.k2) <= c2) & (np.abs(self.m) <= c3))
        self.no_nyquist = ((np.abs(self.k1) != N1 // 2) & (np.abs(self.k2) != N2 // 2)
                           & (np.abs(self.m) != N3 // 2))
        kh2 = self.K1 ** 2 + self.K2 ** 2
        self.kh2 = np.broadcast_to(kh2, (N1, N2, 1))[..., 0]
        self.inv_kh2 = np.where(self.kh2 > 0, 1.0 / np.where(self.kh2 > 0, self.kh2, 1.0), 0.0)

    def __eq__(self, other):
        return (isinstance(other, SpectralSpace) and self.domain == other.domain
                and self.grid == other.grid)

    def __hash__(self):
        return hash((self.domain, self.grid))

    def __repr__(self):
        return f"SpectralSpace({self.domain}, {self.grid})"

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable physical coordinates (x1, x2, z) of the collocation points."""
        L = self.domain.lengths
        x1 = (np.arange(self.shape[0]) * L[0] / self.shape[0])[:, None, None]
        x2 = (np.arange(self.shape[1]) * L[1] / self.shape[1])[None, :, None]
        z = (np.arange(self.shape[2]) * L[2] / self.shape[2])[None, None, :]
        # z is measured from the mid-plane; the periodic grid wraps through -L3/2
        z = np.where(z >= L[2] / 2, z - L[2], z)
        return x1, x2, z

    @cached_property
    def lam_nonzero(self) -> np.ndarray:
        """Symbol of A with the (0,0,0) entry set to 1 (safe for negative powers)."""
        lam = self.lam.copy()
        lam[0, 0, 0] = 1.0
        return lam

    # Packed layout: the dealiased block k1 in [-c1, c1], k2 in [-c2, c2],
    # m in [0, c3], stored centred so that k -> -k is a reversal of the
    # first two axes.  Negative m follow from Hermitian symmetry.  Used
    # internally by the time stepper.

    @cached_property
    def _packed_index(self):
        c1, c2, c3 = self.grid.cutoffs
        i1 = np.arange(-c1, c1 + 1) % self.shape[0]
        i2 = np.arange(-c2, c2 + 1) % self.shape[1]
        return np.ix_(i1, i2, np.arange(c3 + 1)), np.ix_(i1, i2, (-np.arange(1, c3 + 1)) % self.shape[2])

    @cached_property
    def packed(self) -> "PackedTables":
        return PackedTables(self)

    def pack(self, c: np.ndarray) -> np.ndarray:
        """Full coefficient array (leading axes allowed) to the packed dealiased block."""
        pos, _ = self._packed_index
        return c[(Ellipsis,) + pos]

    def unpack(self, p: np.ndarray) -> np.ndarray:
        pos, neg = self._packed_index
        full = np.zeros(p.shape[:-3] + self.shape, dtype=complex)
        full[(Ellipsis,) + pos] = p
        full[(Ellipsis,) + neg] = np.conj(p[..., ::-1, ::-1, 1:])
        return full

    def packed_inverse(self, p: np.ndarray) -> np.ndarray:
        pos, _ = self._packed_index
        half = np.zeros(p.shape[:-3] + self.shape[:2] + (self.shape[2] // 2 + 1,), dtype=complex)
        half[(Ellipsis,) + pos] = p
        return sfft.irfftn(half, s=self.shape, axes=(-3, -2, -1), norm="forward")

    def packed_forward(self, samples: np.ndarray) -> np.ndarray:
        pos, _ = self._packed_index
        return sfft.rfftn(samples, axes=(-3, -2, -1), norm="forward")[(Ellipsis,) + pos]

    def forward(self, samples: np.ndarray) -> np.ndarray:
        """Real grid samples (leading axes allowed) to the full coefficient array."""
        n3 = self.shape[2]
        half = sfft.rfftn(samples, axes=(-3, -2, -1), norm="forward")
        full = np.empty(half.shape[:-1] + (n3,), dtype=complex)
        full[..., : n3 // 2 + 1] = half
        tail = np.roll(half[..., ::-1, ::-1, 1 : n3 // 2], (1, 1), axis=(-3, -2))
        full[..., n3 // 2 + 1 :] = np.conj(tail[..., ::-1])
        return full

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (leading axes allowed) to real grid samples.

        Assumes Hermitian symmetry (real fields); only ``m >= 0`` is read.
        """
        n3 = self.shape[2]
        return sfft.irfftn(coeffs[..., : n3 // 2 + 1], s=self.shape, axes=(-3, -2, -1), norm="forward")

    def flip_z(self, c: np.ndarray) -> np.ndarray:
        """Coefficient array with m -> -m."""
        return np.roll(c[..., ::-1], 1, axis=-1)

    def reflect(self, c: np.ndarray) -> np.ndarray:
        """Coefficient array with (k1, k2, m) -> (-k1, -k2, -m)."""
        out = c[..., ::-1, ::-1, ::-1]
        return np.roll(out, (1, 1, 1), axis=(-3, -2, -1))

    def zeros(self, *lead: int) -> np.ndarray:
        return np.zeros(lead + self.shape, dtype=complex)


class PackedTables:
    """Wavenumber tables on the packed dealiased block of a :class:`SpectralSpace`."""

    def __init__(self, space: SpectralSpace):
        c1, c2, c3 = space.grid.cutoffs
        L1, L2, L3 = space.domain.lengths
        self.shape = (2 * c1 + 1, 2 * c2 + 1, c3 + 1)
        self.center = (c1, c2)
        self.K1 = (2 * np.pi * np.arange(-c1, c1 + 1) / L1)[:, None, None]
        self.K2 = (2 * np.pi * np.arange(-c2, c2 + 1) / L2)[None, :, None]
        self.K3 = (2 * np.pi * np.arange(c3 + 1) / L3)[None, None, :]
        self.lam = self.K1 ** 2 + self.K2 ** 2 + self.K3 ** 2
        self.weight = np.where(np.arange(c3 + 1) == 0, 1.0, 2.0)[None, None, :]
        kh2 = (self.K1 ** 2 + self.K2 ** 2)[:, :, 0]
        self.inv_kh2 = np.where(kh2 > 0, 1.0 / np.where(kh2 > 0, kh2, 1.0), 0.0)
        inv = np.zeros(c3 + 1, dtype=complex)
        inv[1:] = 1.0 / (1j * self.K3[0, 0, 1:])
        self.inv_iK3 = inv[None, None, :]
        self.volume = space.domain.volume


def packed_vertical_integral(pt: PackedTables, f: np.ndarray) -> np.ndarray:
    """Packed ``int_0^z f``; the m = 0 plane of ``f`` is ignored."""
    out = f * pt.inv_iK3
    # m = 0 plane collects -sum over m != 0, with f(k, -m) = conj(f(-k, m))
    out[..., 0] = -(out[..., 1:] + np.conj(out[..., ::-1, ::-1, 1:])).sum(axis=-1)
    return out


def packed_project(pt: PackedTables, p: np.ndarray) -> np.ndarray:
    """:func:`project_coeffs` on the packed block of a (3, ...) state stack."""
    rev = np.conj(p[..., ::-1, ::-1, :])
    out = np.empty_like(p)
    out[:2] = 0.5 * (p[:2] + rev[:2])
    out[2] = 0.5 * (p[2] - rev[2])
    out[2, ..., 0] = 0.0
    c1, c2 = pt.center
    out[:, c1, c2, 0] = 0.0
    u, v = out[0, :, :, 0], out[1, :, :, 0]
    K1, K2 = pt.K1[:, :, 0], pt.K2[:, :, 0]
    kdot = (K1 * u + K2 * v) * pt.inv_kh2
    out[0, :, :, 0] = u - K1 * kdot
    out[1, :, :, 0] = v - K2 * kdot
    return out


def packed_norm(pt: PackedTables, p: np.ndarray, which: str = "H") -> float:
    sq = np.abs(p) ** 2 * pt.weight
    k = _POWERS[which]
    if k:
        sq = sq * pt.lam ** k
    return float(np.sqrt(pt.volume * sq.sum()))


def _check_space(a: "ScalarField | StateVector", b: "ScalarField | StateVector"):
    if a.space != b.space:
        raise ValueError("fields live on different spectral spaces")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real scalar field in Fourier representation.

    ``parity`` is a tag (``"even"``, ``"odd"`` or ``"none"``) describing the
    symmetry in z.  It is carried along, not enforced; see
    :func:`check_scalar` for the invariant checks.
    """

    space: SpectralSpace
    coeffs: np.ndarray
    parity: str = NONE

    def __post_init__(self):
        if self.coeffs.shape != self.space.shape:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match grid {self.space.shape}")
        if self.parity not in _FLIP:
            raise ValueError(f"unknown parity tag {self.parity!r}")

    @property
    def mean_zero(self) -> bool:
        return self.coeffs[0, 0, 0] == 0

    def _new(self, coeffs, parity=None):
        return ScalarField(self.space, coeffs, self.parity if parity is None else parity)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_space(self, other)
        parity = self.parity if self.parity == other.parity else NONE
        return ScalarField(self.space, self.coeffs + other.coeffs, parity)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return self + (-other)

    def __neg__(self) -> "ScalarField":
        return self._new(-self.coeffs)

    def __mul__(self, a: float) -> "ScalarField":
        return self._new(a * self.coeffs)

    __rmul__ = __mul__

    def physical(self) -> np.ndarray:
        return transform_inverse(self)


@dataclass(frozen=True, eq=False)
class StateVector:
    """The system state ``U = (v1, v2, b)`` as stacked Fourier coefficients."""

    space: SpectralSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (3,) + self.space.shape:
            raise ValueError(f"state coefficient shape {self.coeffs.shape} does not match grid {self.space.shape}")

    @classmethod
    def zeros(cls, space: SpectralSpace) -> "StateVector":
        return cls(space, space.zeros(3))

    @classmethod
    def from_fields(cls, v1: ScalarField, v2: ScalarField, b: ScalarField) -> "StateVector":
        _check_space(v1, v2)
        _check_space(v1, b)
        return cls(v1.space, np.stack([v1.coeffs, v2.coeffs, b.coeffs]))

    @classmethod
    def from_physical(cls, space: SpectralSpace, v1, v2, b) -> "StateVector":
        samples = np.stack([np.broadcast_to(np.asarray(f, dtype=float), space.shape) for f in (v1, v2, b)])
        return cls(space, space.forward(samples))

    @property
    def v1(self) -> ScalarField:
        return ScalarField(self.space, self.coeffs[0], EVEN)

    @property
    def v2(self) -> ScalarField:
        return ScalarField(self.space, self.coeffs[1], EVEN)

    @property
    def b(self) -> ScalarField:
        return ScalarField(self.space, self.coeffs[2], ODD)

    def physical(self) -> np.ndarray:
        return self.space.inverse(self.coeffs)

    def __add__(self, other: "StateVector") -> "StateVector":
        _check_space(self, other)
        return StateVector(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "StateVector") -> "StateVector":
        _check_space(self, other)
        return StateVector(self.space, self.coeffs - other.coeffs)

    def __neg__(self) -> "StateVector":
        return StateVector(self.space, -self.coeffs)

    def __mul__(self, a: float) -> "StateVector":
        return StateVector(self.space, a * self.coeffs)

    __rmul__ = __mul__

    def __truediv__(self, a: float) -> "StateVector":
        return StateVector(self.space, self.coeffs / a)


# --- transforms -------------------------------------------------------------

def transform_forward(space: SpectralSpace, samples: np.ndarray, parity: str = NONE) -> ScalarField:
    samples = np.asarray(samples)
    if samples.shape != space.shape:
        raise ValueError(f"sample shape {samples.shape} does not match grid {space.shape}")
    if np.iscomplexobj(samples):
        raise ValueError("physical samples must be real")
    return ScalarField(space, space.forward(samples), parity)


def transform_inverse(f: ScalarField) -> np.ndarray:
    return f.space.inverse(f.coeffs)


# --- differential and integral operators -----------------------------------

_AXES = {"x1": 0, "x2": 1, "z": 2}


def derivative(f: ScalarField, direction: str) -> ScalarField:
    try:
        axis = _AXES[direction]
    except KeyError:
        raise ValueError(f"direction must be one of {sorted(_AXES)}, got {direction!r}") from None
    parity = _FLIP[f.parity] if axis == 2 else f.parity
    return ScalarField(f.space, 1j * f.space.D[axis] * f.coeffs, parity)


def divergence_h(v1: ScalarField, v2: ScalarField) -> ScalarField:
    _check_space(v1, v2)
    sp = v1.space
    parity = v1.parity if v1.parity == v2.parity else NONE
    return ScalarField(sp, 1j * (sp.D[0] * v1.coeffs + sp.D[1] * v2.coeffs), parity)


def laplacian3(f: ScalarField) -> ScalarField:
    return f._new(-f.space.lam * f.coeffs)


def dealias(f: ScalarField) -> ScalarField:
    return f._new(f.coeffs * f.space.dealias_mask)


def _vertical_integral_coeffs(space: SpectralSpace, c: np.ndarray) -> np.ndarray:
    """Mode-wise antiderivative from z = 0; assumes the m = 0 plane of ``c`` is zero."""
    K3 = space.D[2]
    inv = np.zeros_like(K3, dtype=complex)
    nz = K3 != 0
    inv[nz] = 1.0 / (1j * K3[nz])
    out = c * inv
    out[..., 0] = -out.sum(axis=-1)
    return out


def vertical_integral(f: ScalarField, rtol: float = 1e-10) -> ScalarField:
    """``F(x, z) = integral of f(x, xi) for xi from 0 to z``.

    The input must have zero vertical mean for every horizontal wavevector,
    otherwise the antiderivative is not periodic in z and
    :class:`PreconditionError` is raised.  The constant-in-z part produced by
    the lower limit is kept in the ``m = 0`` plane.
    """
    scale = np.abs(f.coeffs).max()
    zmean = np.abs(f.coeffs[..., 0]).max()
    if zmean > rtol * scale and zmean > 0:
        raise PreconditionError(
            f"vertical_integral needs zero z-mean input; largest m=0 coefficient is {zmean:.3e}")
    c = f.coeffs.copy()
    c[..., 0] = 0.0
    return ScalarField(f.space, _vertical_integral_coeffs(f.space, c), _FLIP[f.parity])


# --- symmetries and constraints --------------------------------------------

def project_coeffs(space: SpectralSpace, c: np.ndarray) -> np.ndarray:
    """Array version of :func:`project_state_symmetries`."""
    flipped = space.flip_z(c)
    out = np.empty_like(c)
    out[:2] = 0.5 * (c[:2] + flipped[:2])
    out[2] = 0.5 * (c[2] - flipped[2])
    out = 0.5 * (out + np.conj(space.reflect(out)))
    out[:, 0, 0, 0] = 0.0
    # Nyquist modes have no distinct conjugate partner; they are outside the
    # dealiased band anyway and are dropped so the projection stays idempotent
    out *= space.no_nyquist
    # 2D Leray projection of the barotropic (z-mean) velocity
    u, v = out[0, :, :, 0], out[1, :, :, 0]
    K1 = space.K1[:, :, 0]
    K2 = space.K2[:, :, 0]
    kdotu = (K1 * u + K2 * v) * space.inv_kh2
    out[0, :, :, 0] = u - K1 * kdotu
    out[1, :, :, 0] = v - K2 * kdotu
    return out


def project_state_symmetries(U: StateVector) -> StateVector:
    """Orthogonal projection onto the admissible state space.

    Symmetrises ``v`` to be even and ``b`` to be odd in z, enforces real
    fields, removes the mean of ``v`` and replaces the z-mean of ``v`` by its
    horizontally divergence-free part.  Nyquist coefficients are removed.
    """
    return StateVector(U.space, project_coeffs(U.space, U.coeffs))


def dealias_state(U: StateVector) -> StateVector:
    return StateVector(U.space, U.coeffs * U.space.dealias_mask)


def constraint_violations(U: StateVector) -> dict[str, float]:
    """Absolute size of each constraint violation, measured on coefficients.

    Coefficient magnitudes are converted to the scale of the H norm
    (multiplied by the square root of the box volume).
    """
    sp = U.space
    c = U.coeffs
    w = np.sqrt(sp.domain.volume)
    flipped = sp.flip_z(c)
    parity = max(np.abs(c[:2] - flipped[:2]).max(), np.abs(c[2] + flipped[2]).max())
    reality = np.abs(c - np.conj(sp.reflect(c))).max()
    mean = np.abs(c[:, 0, 0, 0]).max()
    div = np.abs(sp.K1[:, :, 0] * c[0, :, :, 0] + sp.K2[:, :, 0] * c[1, :, :, 0]) * np.sqrt(sp.inv_kh2)
    return {"parity": w * parity, "reality": w * reality, "mean": w * mean, "barotropic": w * div.max()}


def check_scalar(f: ScalarField, rtol: float = 1e-12) -> dict[str, bool]:
    """Check the reality, parity and mean-zero invariants of a scalar field."""
    sp = f.space
    scale = max(np.abs(f.coeffs).max(), np.finfo(float).tiny)
    real_ok = np.abs(f.coeffs - np.conj(sp.reflect(f.coeffs))).max() <= rtol * scale
    flipped = sp.flip_z(f.coeffs)
    if f.parity == EVEN:
        par_ok = np.abs(f.coeffs - flipped).max() <= rtol * scale
    elif f.parity == ODD:
        par_ok = np.abs(f.coeffs + flipped).max() <= rtol * scale
    else:
        par_ok = True
    return {"reality": bool(real_ok), "parity": bool(par_ok), "mean_zero": abs(f.coeffs[0, 0, 0]) <= rtol * scale}


# --- norms ------------------------------------------------------------------

_POWERS = {"H": 0, "W1": 1, "W2": 2}


def _weight(space: SpectralSpace, which: str):
    try:
        p = _POWERS[which]
    except KeyError:
        raise ValueError(f"space must be one of {sorted(_POWERS)}, got {which!r}") from None
    return None if p == 0 else space.lam ** p


def inner_product(U: StateVector, V: StateVector, space: str = "H") -> float:
    """Real inner product of two states in H, W1 or W2 (Parseval-exact)."""
    _check_space(U, V)
    wt = _weight(U.space, space)
    prod = np.conj(U.coeffs) * V.coeffs
    if wt is not None:
        prod = prod * wt
    return float(U.space.domain.volume * prod.real.sum())


def norm(U: StateVector, space: str = "H") -> float:
    wt = _weight(U.space, space)
    sq = np.abs(U.coeffs) ** 2
    if wt is not None:
        sq = sq * wt
    return float(np.sqrt(U.space.domain.volume * sq.sum()))


def coeff_norm(space: SpectralSpace, c: np.ndarray, which: str = "H") -> float:
    """Norm of a raw coefficient stack, same convention as :func:`norm`."""
    wt = _weight(space, which)
    sq = np.abs(c) ** 2
    if wt is not None:
        sq = sq * wt
    return float(np.sqrt(space.domain.volume * sq.sum()))


def random_state(space: SpectralSpace, rng: np.random.Generator, *, kmax: int | None = None,
                 slope: float = 0.0, scale: float = 1.0, norm_space: str = "H") -> StateVector:
    """Random admissible state, band-limited to |k_i| <= kmax (dealias cutoff by default).

    Coefficients are Gaussian with amplitude proportional to ``lam**(-slope/2)``
    before projection; the result is rescaled to have norm ``scale``.
    """
    c = rng.standard_normal((3,) + space.shape) + 1j * rng.standard_normal((3,) + space.shape)
    if kmax is None:
        mask = space.dealias_mask
    else:
        mask = (np.abs(space.k1) <= kmax) & (np.abs(space.k2) <= kmax) & (np.abs(space.m) <= kmax)
    c = c * mask * space.lam_nonzero ** (-slope / 2)
    c = project_coeffs(space, c)
    n = coeff_norm(space, c, norm_space)
    return StateVector(space, c * (scale / n))
