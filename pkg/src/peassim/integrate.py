"""Time stepping of ``dU/dt + nu A U + B(U, U) + C U = G``.

The integrator is a fourth-order integrating-factor Runge-Kutta scheme
(Lawson RK4): diffusion is diagonal in Fourier space and handled exactly by
``exp(-nu lam h)``, everything else is explicit RK4.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import PhysicalParams, _packed_rhs
from .spectral import SpectralSpace, StateVector, coeff_norm, norm, packed_norm, packed_project, project_coeffs

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6


class IntegrationError(RuntimeError):
    """Numerical failure while stepping (CFL violation or blow-up)."""


class CFLError(IntegrationError):
    pass


class BlowUpError(IntegrationError):
    pass


class SpinUpError(IntegrationError):
    """Spin-up did not reach a plateau within the time budget."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.01
    scheme: str = "IFRK4"
    cfl_guard: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme != "IFRK4":
            raise ValueError(f"unsupported scheme {self.scheme!r}; only IFRK4 is available")
        if not self.cfl_guard > 0:
            raise ValueError(f"cfl_guard must be positive, got {self.cfl_guard}")


@dataclass
class Trajectory:
    """Sampled states ``(t, U(t))`` with strictly increasing times."""

    times: list[float] = field(default_factory=list)
    states: list[StateVector] = field(default_factory=list)

    def append(self, t: float, U: StateVector):
        if self.times and not t > self.times[-1]:
            raise ValueError(f"trajectory times must increase strictly ({t} after {self.times[-1]})")
        self.times.append(float(t))
        self.states.append(U)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.states))

    def at(self, t: float, atol: float = 1e-9) -> StateVector:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[i] - t) > atol:
            raise KeyError(f"no sample at t={t}")
        return self.states[i]

    def norms(self, space: str = "H") -> np.ndarray:
        return np.array([norm(U, space) for U in self.states])


class Stepper:
    """IFRK4 stepping for one parameter set.

    Internally states live on the packed dealiased block (see
    :meth:`SpectralSpace.pack`); :meth:`advance` accepts and returns full
    coefficient arrays.
    """

    def __init__(self, space: SpectralSpace, params: PhysicalParams, config: IntegratorConfig | None = None):
        self.space = space
        self.params = params
        self.config = config or IntegratorConfig()
        self.pt = space.packed
        self._factors: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        dx = [L / n for L, n in zip(space.domain.lengths, space.shape)]
        self._inv_dx = np.array([1.0 / d for d in dx])
        G = params.forcing_coeffs(space)
        self._G = None if G is None else space.pack(G)
        self.scale = None

    def factors(self, h: float):
        if h not in self._factors:
            lam = self.pt.lam
            self._factors[h] = (np.exp(-self.params.nu * lam * h), np.exp(-self.params.nu * lam * h / 2))
        return self._factors[h]

    def F(self, p: np.ndarray):
        return _packed_rhs(self.space, p, self.params, self._G)

    def cfl(self, u, h: float) -> float:
        if u is None:
            return 0.0
        speed = sum(np.abs(u[i]) * self._inv_dx[i] for i in range(3))
        return float(h * speed.max())

    def set_scale(self, p: np.ndarray):
        """Reference size for the blow-up guard."""
        scale = packed_norm(self.pt, p, "W1")
        if self._G is not None:
            lam1 = self.space.lam_nonzero.min()
            scale = max(scale, packed_norm(self.pt, self._G, "H") / (self.params.nu * math.sqrt(lam1)))
        self.scale = scale if scale > 0 else 1.0

    def step_packed(self, p: np.ndarray, h: float) -> np.ndarray:
        E, E2 = self.factors(h)
        k1, u = self.F(p)
        courant = self.cfl(u, h)
        if courant > self.config.cfl_guard:
            raise CFLError(f"CFL number {courant:.3f} exceeds guard {self.config.cfl_guard}")
        k2, _ = self.F(E2 * (p + 0.5 * h * k1))
        k3, _ = self.F(E2 * p + 0.5 * h * k2)
        k4, _ = self.F(E * p + h * (E2 * k3))
        out = E * p + (h / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        out = packed_project(self.pt, out)
        if not np.all(np.isfinite(out)):
            raise BlowUpError("non-finite values in state")
        if self.scale is None:
            self.set_scale(p)
        n1 = packed_norm(self.pt, out, "W1")
        if n1 > BLOWUP_FACTOR * self.scale:
            raise BlowUpError(f"W1 norm {n1:.3e} exceeds {BLOWUP_FACTOR:g} x initial scale {self.scale:.3e}")
        return out

    def step(self, c: np.ndarray, h: float) -> np.ndarray:
        return self.space.unpack(self.step_packed(self.space.pack(c), h))

    def advance_packed(self, p: np.ndarray, duration: float) -> np.ndarray:
        if duration < 0:
            raise ValueError("duration must be nonnegative")
        if duration == 0:
            return p
        n = partition(duration, self.config.dt)
        h = duration / n
        for _ in range(n):
            p = self.step_packed(p, h)
        return p

    def advance(self, c: np.ndarray, duration: float) -> np.ndarray:
        """Integrate over ``duration`` with the largest uniform step <= dt."""
        return self.space.unpack(self.advance_packed(self.space.pack(c), duration))


def partition(duration: float, dt: float) -> int:
    """Number of equal substeps of size <= dt covering ``duration``."""
    return max(1, math.ceil(duration / dt - 1e-9))


def _prepare(U: StateVector) -> np.ndarray:
    return project_coeffs(U.space, U.coeffs) * U.space.dealias_mask


def step(U: StateVector, params: PhysicalParams, dt: float, config: IntegratorConfig | None = None) -> StateVector:
    """One IFRK4 step of size ``dt``; output re-projected onto the constraints."""
    config = config or IntegratorConfig(dt=dt)
    stepper = Stepper(U.space, params, config)
    return StateVector(U.space, stepper.step(_prepare(U), dt))


def evolve(U0: StateVector, params: PhysicalParams, T: float, sample_times=None,
           config: IntegratorConfig | None = None, t0: float = 0.0,
           stepper: Stepper | None = None) -> Trajectory:
    """Sample ``S_t U0`` at the requested times in ``[0, T]``.

    Each interval between consecutive sample times is covered by an integer
    number of equal steps no larger than ``config.dt``, so samples are
    landed on exactly.  Times in the returned trajectory are offset by ``t0``.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if sample_times is None:
        sample_times = [0.0, T] if T > 0 else [0.0]
    times = sorted(set(float(s) for s in sample_times))
    if times and (times[0] < 0 or times[-1] > T + 1e-12):
        raise ValueError(f"sample times must lie in [0, {T}]")
    stepper = stepper or Stepper(U0.space, params, config)
    sp = U0.space
    p = sp.pack(_prepare(U0))
    traj = Trajectory()
    t = 0.0
    for s in times:
        p = stepper.advance_packed(p, s - t)
        t = s
        traj.append(t0 + s, StateVector(sp, sp.unpack(p)))
    return traj


@dataclass
class SpinUpResult:
    state: StateVector
    radius: float
    time: float
    converged: bool
    trace: list[tuple[float, float]]


def spin_up(U0: StateVector, params: PhysicalParams, window: float = 5.0, tol: float = 0.05,
            max_time: float = 200.0, config: IntegratorConfig | None = None,
            atol: float = 1e-10, sample_every: float | None = None) -> SpinUpResult:
    """Integrate until the W2 radius of the trajectory plateaus.

    The trajectory is cut into consecutive windows of length ``window``; the
    run stops once the maximum of ``||U(t)||_W2`` over the latest window
    differs from that over the previous window by less than ``tol``
    (relative), or falls below ``atol``.  The last window maximum is the
    empirical absorbing-ball radius ``K``.
    """
    stepper = Stepper(U0.space, params, config)
    sample_every = sample_every or stepper.config.dt
    n_per = max(1, round(window / sample_every))
    h_sample = window / n_per
    sp = U0.space
    p = sp.pack(_prepare(U0))
    t = 0.0
    trace = [(0.0, packed_norm(sp.packed, p, "W2"))]
    prev = last = None
    while t < max_time - 1e-9:
        wmax = 0.0
        for _ in range(n_per):
            p = stepper.advance_packed(p, h_sample)
            t += h_sample
            n2 = packed_norm(sp.packed, p, "W2")
            trace.append((t, n2))
            wmax = max(wmax, n2)
        log.debug("spin-up t=%.2f window max W2=%.6g", t, wmax)
        if wmax < atol or (prev is not None and abs(wmax - prev) <= tol * prev):
            return SpinUpResult(StateVector(sp, sp.unpack(p)), wmax, t, True, trace)
        last, prev = prev, wmax
    raise SpinUpError(f"no W2 plateau within t={max_time} (last window max {prev:.4g}, previous {last})", trace)


def lipschitz_probe(U: StateVector, U_star: StateVector, params: PhysicalParams, T: float,
                    n_samples: int = 10, config: IntegratorConfig | None = None) -> float:
    """``max_t ||S_t U - S_t U*||_H / ||U - U*||_H`` over ``n_samples`` times in ``(0, T]``."""
    d0 = norm(U - U_star)
    if d0 == 0:
        return 1.0
    times = np.linspace(0, T, n_samples + 1)[1:]
    a = evolve(U, params, T, times, config)
    b = evolve(U_star, params, T, times, config)
    return max(norm(x - y) for x, y in zip(a.states, b.states)) / d0


def fit_decay_rate(times, values) -> tuple[float, float]:
    """Least-squares exponential rate ``a`` with ``values ~ C exp(-a t)``.

    Returns ``(a, rms_residual)`` of the fit in log space.
    """
    t = np.asarray(times, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(-coef[0]), float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class DissipativityFit:
    a0: float
    a1: float
    K_G: float
    residual: float


def measure_dissipativity(U0: StateVector, params: PhysicalParams, T: float, n_samples: int = 40,
                          config: IntegratorConfig | None = None,
                          transient: float = 0.0) -> DissipativityFit:
    """Fit the constants in ``||S_t U|| <= exp(-a0 t) ||U|| + a1 K_G``.

    ``a0`` comes from an unforced run started at ``U0``, fitted on samples
    after ``transient * T`` so fast modes have died out.  ``a1`` comes from
    a forced run: the smallest value making the bound hold at every sample.
    """
    times = np.linspace(0, T, n_samples + 1)
    free = PhysicalParams(params.nu, params.f_coriolis, None, params.nonlinear, params.buoyancy_coupling)
    tr = evolve(U0, free, T, times, config)
    nh = tr.norms("H")
    keep = (nh > 1e-13 * nh[0]) & (times >= transient * T)
    a0, res = fit_decay_rate(times[1:][keep[1:]], nh[1:][keep[1:]])
    G = params.forcing_coeffs(U0.space)
    K_G = coeff_norm(U0.space, G, "H") if G is not None else 0.0
    a1 = 0.0
    if K_G > 0:
        forced = evolve(U0, params, T, times, config).norms("H")
        excess = forced - np.exp(-a0 * times) * nh[0]
        a1 = max(0.0, float(excess.max()) / K_G)
    return DissipativityFit(a0, a1, K_G, res)
