"""Eigenbasis of A, observation functionals and interpolation operators.

The eigenfunctions of ``A`` (minus the 3D Laplacian restricted to the
admissible state space) are real trigonometric modes.  For a canonical
wavevector ``(k1, k2, m)`` with ``m >= 0`` and ``(k1, k2)`` in the upper
half plane:

* ``m > 0``: velocity modes ``cos(m' z) h(k.x) e_i`` for ``i = 1, 2`` and
  buoyancy modes ``sin(m' z) h(k.x)``, with ``h`` in ``{cos, sin}``
  (only ``cos`` when ``k = 0``);
* ``m = 0``: barotropic velocity modes ``h(k.x) k_perp/|k|``.

Each mode carries a component index ``2 * field + trig`` where field is
0/1 for the two velocity polarisations and 2 for buoyancy, and trig is 0
for cos and 1 for sin.  Modes are ordered by eigenvalue with ties broken
lexicographically by ``(k1, k2, m, component)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .spectral import SpectralSpace, StateVector, project_coeffs, random_state

SPACES = {"H": 0, "W1": 1, "W2": 2}
SHELL_RTOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


# --- enumeration of the eigenbasis -----------------------------------------

@lru_cache(maxsize=8)
def _enumerate(space: SpectralSpace):
    """Labels ``(k1, k2, m, component)`` and eigenvalues of every admissible mode
    in the dealiased space, sorted in canonical order, plus shell ids."""
    c1, c2, c3 = space.grid.cutoffs
    L1, L2, L3 = space.domain.lengths
    k1, k2, m = np.meshgrid(np.arange(-c1, c1 + 1), np.arange(-c2, c2 + 1), np.arange(0, c3 + 1), indexing="ij")
    k1, k2, m = k1.ravel(), k2.ravel(), m.ravel()
    upper = (k1 > 0) | ((k1 == 0) & (k2 > 0))
    zero_h = (k1 == 0) & (k2 == 0)
    rows = []
    # k_h = 0, m > 0: two velocity polarisations and one buoyancy mode (cos only)
    sel = zero_h & (m > 0)
    for comp in (0, 2, 4):
        rows.append(np.stack([k1[sel], k2[sel], m[sel], np.full(sel.sum(), comp)], axis=1))
    # k_h != 0, m = 0: divergence-free barotropic velocity
    sel = upper & (m == 0)
    for comp in (0, 1):
        rows.append(np.stack([k1[sel], k2[sel], m[sel], np.full(sel.sum(), comp)], axis=1))
    # k_h != 0, m > 0: everything
    sel = upper & (m > 0)
    for comp in range(6):
        rows.append(np.stack([k1[sel], k2[sel], m[sel], np.full(sel.sum(), comp)], axis=1))
    labels = np.concatenate(rows)
    lam = ((2 * np.pi * labels[:, 0] / L1) ** 2 + (2 * np.pi * labels[:, 1] / L2) ** 2
           + (2 * np.pi * labels[:, 2] / L3) ** 2)
    order = np.argsort(lam, kind="stable")
    lam_sorted = lam[order]
    jumps = np.diff(lam_sorted) > SHELL_RTOL * lam_sorted[1:]
    shell = np.concatenate([[0], np.cumsum(jumps)])
    shell_of = np.empty_like(shell)
    shell_of[order] = shell
    order = np.lexsort((labels[:, 3], labels[:, 2], labels[:, 1], labels[:, 0], shell_of))
    labels = labels[order]
    lam = lam[order]
    shell = shell_of[order]
    # a shell's eigenvalue is taken as the value of its first member
    first = np.concatenate([[True], shell[1:] != shell[:-1]])
    lam = lam[first][shell]
    labels.setflags(write=False)
    lam.setflags(write=False)
    shell.setflags(write=False)
    return labels, lam, shell


def mode_table(space: SpectralSpace):
    """``(labels, lambdas, shell ids)`` of every mode in canonical order (shell ids from 0)."""
    labels, lam, shell = _enumerate(space)
    return labels.copy(), lam.copy(), shell.copy()


def total_modes(space: SpectralSpace) -> int:
    return len(_enumerate(space)[1])


def shell_ends(space: SpectralSpace) -> np.ndarray:
    """Mode counts at which shells end (``N`` values allowed for a mode set)."""
    _, _, shell = _enumerate(space)
    return np.flatnonzero(np.diff(np.concatenate([shell, [shell[-1] + 1]]))) + 1


def modes_for_shells(space: SpectralSpace, n_shells: int) -> int:
    ends = shell_ends(space)
    if not 0 <= n_shells <= len(ends):
        raise ValueError(f"shell count must lie in [0, {len(ends)}], got {n_shells}")
    return 0 if n_shells == 0 else int(ends[n_shells - 1])


def modes_below(space: SpectralSpace, lam_max: float) -> int:
    """Number of modes with eigenvalue <= lam_max (always a shell boundary)."""
    _, lam, _ = _enumerate(space)
    return int(np.searchsorted(lam, lam_max * (1 + SHELL_RTOL), side="right"))


def _mode_entries(space: SpectralSpace, label):
    """Flat indices into the (3, N1, N2, N3) coefficient stack and complex values."""
    k1, k2, m, comp = (int(x) for x in label)
    field, trig = divmod(comp, 2)
    N1, N2, N3 = space.shape
    L1, L2, _ = space.domain.lengths
    if k1 == 0 and k2 == 0:
        hpart = [((0, 0), 1.0)]
    elif trig == 0:
        hpart = [((k1, k2), 0.5), ((-k1, -k2), 0.5)]
    else:
        hpart = [((k1, k2), -0.5j), ((-k1, -k2), 0.5j)]
    if m == 0:
        zpart = [(0, 1.0)]
    elif field < 2:
        zpart = [(m, 0.5), (-m, 0.5)]
    else:
        zpart = [(m, -0.5j), (-m, 0.5j)]
    if field == 2:
        directions = [(2, 1.0)]
    elif m == 0:
        K1, K2 = 2 * np.pi * k1 / L1, 2 * np.pi * k2 / L2
        kn = math.hypot(K1, K2)
        directions = [(0, -K2 / kn), (1, K1 / kn)]
    else:
        directions = [(field, 1.0)]
    acc: dict[int, complex] = {}
    for comp_idx, d in directions:
        if d == 0:
            continue
        for (a, b), hv in hpart:
            for mm, zv in zpart:
                flat = np.ravel_multi_index((comp_idx, a % N1, b % N2, mm % N3), (3, N1, N2, N3))
                acc[flat] = acc.get(flat, 0) + d * hv * zv
    flat = np.fromiter(acc.keys(), dtype=np.int64)
    vals = np.fromiter(acc.values(), dtype=complex)
    vals /= math.sqrt(space.domain.volume * np.sum(np.abs(vals) ** 2))
    return flat, vals


@dataclass(frozen=True, eq=False)
class ModeSet:
    """The first ``N`` eigenpairs of ``A`` (always whole shells)."""

    space: SpectralSpace
    labels: np.ndarray
    lams: np.ndarray
    _rows: np.ndarray
    _flat: np.ndarray
    _vals: np.ndarray

    @property
    def N(self) -> int:
        return len(self.lams)

    def __len__(self):
        return self.N

    @property
    def shell_ends(self) -> np.ndarray:
        ends = shell_ends(self.space)
        return ends[ends <= self.N]

    @property
    def lam_next(self) -> float:
        """``lambda_{N+1}``; infinite when the whole dealiased space is covered."""
        _, lam, _ = _enumerate(self.space)
        return float(lam[self.N]) if self.N < len(lam) else math.inf

    @property
    def lam_max(self) -> float:
        return float(self.lams[-1]) if self.N else 0.0

    @property
    def complete(self) -> bool:
        return self.N == total_modes(self.space)

    def mode(self, j: int) -> StateVector:
        """``e_{j+1}`` as a state (0-based index)."""
        sel = self._rows == j
        c = np.zeros(3 * self.space.size, dtype=complex)
        c[self._flat[sel]] = self._vals[sel]
        return StateVector(self.space, c.reshape((3,) + self.space.shape))

    def coefficients(self, U: StateVector) -> np.ndarray:
        """``(e_j, U)_H`` for every mode."""
        flat = U.coeffs.reshape(-1)
        prod = (np.conj(self._vals) * flat[self._flat]).real
        return self.space.domain.volume * np.bincount(self._rows, prod, minlength=self.N)

    def synthesize(self, a) -> StateVector:
        """``sum_j a_j e_j``."""
        a = np.asarray(a, dtype=float)
        c = np.zeros(3 * self.space.size, dtype=complex)
        np.add.at(c, self._flat, a[self._rows] * self._vals)
        return StateVector(self.space, c.reshape((3,) + self.space.shape))

    def mask(self) -> np.ndarray:
        """Wavevectors carrying the retained modes (for the fast projection)."""
        if self.N == 0:
            return np.zeros(self.space.shape, dtype=bool)
        return self.space.dealias_mask & (self.space.lam <= self.lam_max * (1 + SHELL_RTOL))


def build_mode_set(space: SpectralSpace, N_request: int) -> ModeSet:
    """First ``N_request`` eigenmodes, extended to the end of the current shell."""
    labels, lam, shell = _enumerate(space)
    if N_request < 0:
        raise ValueError("N_request must be nonnegative")
    if N_request > len(lam):
        raise ValueError(f"requested {N_request} modes but the dealiased space holds {len(lam)}")
    N = N_request
    if N > 0:
        N = int(np.searchsorted(shell, shell[N - 1], side="right"))
    rows, flats, vals = [], [], []
    for j in range(N):
        f, v = _mode_entries(space, labels[j])
        rows.append(np.full(len(f), j))
        flats.append(f)
        vals.append(v)
    if N:
        rows, flats, vals = np.concatenate(rows), np.concatenate(flats), np.concatenate(vals)
    else:
        rows, flats, vals = np.zeros(0, int), np.zeros(0, int), np.zeros(0, complex)
    return ModeSet(space, labels[:N], lam[:N], rows, flats, vals)


def project_modes(U: StateVector, modes: ModeSet) -> StateVector:
    """``P_N U``: orthogonal projection onto ``span{e_1, ..., e_N}``."""
    c = project_coeffs(U.space, U.coeffs) * modes.mask()
    return StateVector(U.space, c)


def complement(U: StateVector, modes: ModeSet) -> StateVector:
    """``Q_N U = U - P_N U``."""
    return U - project_modes(U, modes)


# --- multipliers and interpolation operators --------------------------------

@dataclass(frozen=True, eq=False)
class MultiplierK:
    """Self-adjoint, bounded, invertible Fourier multiplier ``K`` with real symbol.

    The symbol must be invariant under ``k -> -k`` and ``m -> -m`` so that
    ``K`` maps real admissible states to real admissible states.
    """

    space: SpectralSpace
    symbol: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        s = self.symbol
        if s.shape != self.space.shape or np.iscomplexobj(s):
            raise ValueError("symbol must be a real array on the grid")
        if not np.all(np.isfinite(s)) or s.min() <= 0:
            raise ValueError("symbol must be positive and finite")
        sp = self.space
        if not (np.array_equal(s, sp.reflect(s)) and np.array_equal(s, sp.flip_z(s))):
            raise ValueError("symbol must be symmetric under k -> -k and m -> -m")

    @property
    def kappa_min(self) -> float:
        return float(self.symbol[self.space.dealias_mask].min())

    @property
    def kappa_max(self) -> float:
        return float(self.symbol[self.space.dealias_mask].max())

    def apply(self, U: StateVector) -> StateVector:
        return StateVector(U.space, U.coeffs * self.symbol)

    def solve(self, U: StateVector) -> StateVector:
        return StateVector(U.space, U.coeffs / self.symbol)

    @classmethod
    def identity(cls, space: SpectralSpace) -> "MultiplierK":
        return cls(space, np.ones(space.shape), "identity")

    @classmethod
    def smooth(cls, space: SpectralSpace) -> "MultiplierK":
        """``kappa = 1 + cos(pi lam / lam_max) / 2`` with lam_max over the dealiased space."""
        lam_max = space.lam[space.dealias_mask].max()
        lam = np.minimum(space.lam, lam_max)
        return cls(space, 1.0 + 0.5 * np.cos(np.pi * lam / lam_max), "smooth")

    @classmethod
    def random(cls, space: SpectralSpace, rng: np.random.Generator, low: float = 0.5,
               high: float = 2.0) -> "MultiplierK":
        """Independent uniform values in ``[low, high]`` per symmetry orbit of wavevectors."""
        s = rng.uniform(low, high, space.shape)
        s = np.maximum(s, space.reflect(s))
        s = np.maximum(s, space.flip_z(s))
        return cls(space, s, "random")

    @classmethod
    def preset(cls, space: SpectralSpace, name: str, rng: np.random.Generator | None = None) -> "MultiplierK":
        if name == "identity":
            return cls.identity(space)
        if name == "smooth":
            return cls.smooth(space)
        if name == "random":
            return cls.random(space, rng if rng is not None else np.random.default_rng(0))
        raise ValueError(f"unknown multiplier preset {name!r}; choose identity, smooth or random")


@dataclass(frozen=True, eq=False)
class InterpolationOperator:
    """``R v = sum_j l_j(v) psi_j`` for a family of observation functionals.

    Modal operators (``multiplier is None``) use ``l_j(u) = (e_j, u)`` and
    ``psi_j = e_j``.  Generalised modes use ``l_j(u) = (K e_j, u)`` with
    ``psi_j = K^{-1} e_j``.  Both are Lagrange operators.
    """

    modes: ModeSet
    multiplier: MultiplierK | None = None

    lagrange = True

    @property
    def space(self) -> SpectralSpace:
        return self.modes.space

    @property
    def N(self) -> int:
        return self.modes.N

    def functional_values(self, U: StateVector) -> np.ndarray:
        """``l_j(U)`` for every functional."""
        if self.multiplier is not None:
            U = self.multiplier.apply(U)
        return self.modes.coefficients(U)

    def riesz_element(self, j: int) -> StateVector:
        e = self.modes.mode(j)
        return e if self.multiplier is None else self.multiplier.apply(e)

    def psi(self, j: int) -> StateVector:
        e = self.modes.mode(j)
        return e if self.multiplier is None else self.multiplier.solve(e)

    def apply(self, U: StateVector) -> StateVector:
        out = self.modes.synthesize(self.functional_values(U))
        return out if self.multiplier is None else self.multiplier.solve(out)

    def apply_adjoint(self, U: StateVector) -> StateVector:
        """``R* v = sum_j (psi_j, v) g_j`` with ``g_j`` the Riesz elements."""
        if self.multiplier is not None:
            U = self.multiplier.solve(U)
        out = self.modes.synthesize(self.modes.coefficients(U))
        return out if self.multiplier is None else self.multiplier.apply(out)

    def apply_complement(self, U: StateVector) -> StateVector:
        return U - self.apply(U)


def modal_operator(modes: ModeSet) -> InterpolationOperator:
    return InterpolationOperator(modes)


def build_generalized_operator(modes: ModeSet, K: MultiplierK) -> InterpolationOperator:
    if K.space != modes.space:
        raise ValueError("multiplier and mode set live on different spaces")
    return InterpolationOperator(modes, K)


def apply_interpolation(U: StateVector, R: InterpolationOperator) -> StateVector:
    return R.apply(U)


# --- power iteration --------------------------------------------------------

@dataclass(frozen=True)
class NormEstimate:
    """Result of a power iteration: estimate, relative residual, iterations used."""

    value: float
    residual: float
    iterations: int
    converged: bool
    method: str = "power-iteration"

    def __float__(self):
        return float(self.value)


def power_iteration(apply, x0: np.ndarray, inner=None, tol: float = 1e-8, maxiter: int = 500) -> NormEstimate:
    """Largest eigenvalue of a self-adjoint positive semidefinite operator.

    ``apply`` maps a vector to a vector; ``inner`` is the inner product
    (Euclidean by default).  Iterates until the eigen-residual
    ``||B x - rho x|| / rho`` drops below ``tol``.  Returns ``rho`` (not its
    square root).
    """
    inner = inner or (lambda a, b: float(np.vdot(a, b).real))
    x = x0 / math.sqrt(inner(x0, x0))
    rho, res = 0.0, math.inf
    for it in range(1, maxiter + 1):
        y = apply(x)
        rho = inner(x, y)
        ny = math.sqrt(inner(y, y))
        if ny == 0 or rho <= 0:
            return NormEstimate(0.0, 0.0, it, True)
        r = y - rho * x
        res = math.sqrt(inner(r, r)) / rho
        if res <= tol:
            return NormEstimate(rho, res, it, True)
        x = y / ny
    return NormEstimate(rho, res, maxiter, False)


def _state_inner(space):
    vol = space.domain.volume
    return lambda a, b: float(vol * (np.conj(a) * b).real.sum())


def operator_norm(R: InterpolationOperator, space: str = "H", *, target: str | None = None,
                  complement: bool = True, tol: float = 1e-8, maxiter: int = 500,
                  rng: np.random.Generator | None = None) -> NormEstimate:
    """Power-iteration estimate of ``||I - R||`` (or ``||R||``) from ``space`` to ``target``.

    Works on the dealiased admissible space: ``M = A^{t/2} T A^{-s/2}`` with
    ``T = I - R`` (or ``R``), and the top eigenvalue of ``M* M`` is computed
    in the H inner product.
    """
    s = SPACES[space]
    t = SPACES[target or space]
    sp = R.space
    lam = sp.lam_nonzero
    down = lam ** (-s / 2)
    up = lam ** (t / 2)

    def T(c, adjoint=False):
        U = StateVector(sp, c)
        out = R.apply_adjoint(U) if adjoint else R.apply(U)
        return (U - out).coeffs if complement else out.coeffs

    def MtM(c):
        y = up * T(down * c)
        return down * T(up * y, adjoint=True)

    rng = rng or np.random.default_rng(12345)
    x0 = random_state(sp, rng).coeffs
    return _sqrt_estimate(power_iteration(MtM, x0, _state_inner(sp), tol, maxiter))


def _sqrt_estimate(est: NormEstimate) -> NormEstimate:
    return NormEstimate(math.sqrt(est.value), est.residual, est.iterations, est.converged, est.method)


# --- completeness defect ----------------------------------------------------

def defect_closed_form(modes: ModeSet, V: str = "W1") -> float:
    """``lambda_{N+1}^{-s/2}`` for a modal family, ``s = 1, 2``."""
    s = SPACES[V]
    if s == 0:
        raise ValueError("the defect is defined for V = W1 or W2")
    lam_next = modes.lam_next
    return 0.0 if math.isinf(lam_next) else lam_next ** (-s / 2)


@lru_cache(maxsize=4)
def _full_basis(space: SpectralSpace) -> ModeSet:
    return build_mode_set(space, total_modes(space))


def riesz_matrix(R: "InterpolationOperator | ModeSet") -> sps.csr_matrix:
    """Riesz elements of the functionals in coordinates of the full dealiased eigenbasis."""
    if isinstance(R, ModeSet):
        R = modal_operator(R)
    full = _full_basis(R.space)
    rows, cols, vals = [], [], []
    for j in range(R.N):
        g = full.coefficients(R.riesz_element(j))
        nz = np.flatnonzero(np.abs(g) > 1e-14 * np.abs(g).max())
        rows.append(np.full(len(nz), j))
        cols.append(nz)
        vals.append(g[nz])
    if R.N == 0:
        return sps.csr_matrix((0, full.N))
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(R.N, full.N))


def estimate_defect(R: "InterpolationOperator | ModeSet", V: str = "W1", tol: float = 1e-8,
                    maxiter: int = 2000, rng: np.random.Generator | None = None) -> NormEstimate:
    """``sup{ ||Q_L u||_H : ||u||_V <= 1 }`` on the dealiased space by power iteration.

    In the variable ``y = A^{s/2} u`` the V-orthogonal projector onto the
    annihilator becomes the H-orthogonal projector ``Q`` onto the complement
    of ``span{A^{-s/2} g_j}`` (``g_j`` the Riesz elements), and the defect
    squared is the top eigenvalue of ``Q A^{-s} Q``.
    """
    s = SPACES[V]
    if s == 0:
        raise ValueError("the defect is defined for V = W1 or W2")
    space = R.space
    full = _full_basis(space)
    lam = np.asarray(full.lams)
    G = riesz_matrix(R)
    if G.shape[0]:
        Hm = G @ sps.diags(lam ** (-s / 2))
        gram = (Hm @ Hm.T).toarray()
        cho = sla.cho_factor(gram)

        def Q(y):
            return y - Hm.T @ sla.cho_solve(cho, Hm @ y)
    else:
        def Q(y):
            return y
    if G.shape[0] >= full.N:
        return NormEstimate(0.0, 0.0, 0, True)
    rng = rng or np.random.default_rng(2024)
    y0 = Q(rng.standard_normal(full.N))
    if np.linalg.norm(y0) == 0:
        return NormEstimate(0.0, 0.0, 0, True)
    est = power_iteration(lambda y: Q(lam ** (-s) * Q(y)), y0, tol=tol, maxiter=maxiter)
    return _sqrt_estimate(est)


def completeness_defect(obj: "InterpolationOperator | ModeSet", V: str = "W1", **kw) -> NormEstimate:
    """Completeness defect of the functionals with respect to H.

    Pure modal sets use the closed form ``lambda_{N+1}^{-s/2}``; other
    families are estimated numerically (see :func:`estimate_defect`).
    """
    if isinstance(obj, ModeSet) or (isinstance(obj, InterpolationOperator) and obj.multiplier is None):
        modes = obj if isinstance(obj, ModeSet) else obj.modes
        return NormEstimate(defect_closed_form(modes, V), 0.0, 0, True, "closed-form")
    return estimate_defect(obj, V, **kw)
