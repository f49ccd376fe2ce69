"""Discrete data assimilation from finitely many observations at discrete times.

The prognosis is built by the recursion::

    u_n = (I - R) S_{t_n - t_{n-1}} u_{n-1} + R U(t_n)

where ``R`` is a finite-rank Lagrange interpolation operator and ``U`` the
(unknown) reference trajectory observed through ``r^n = R U(t_n)``.  Between
observation times the prognostic trajectory is ``u(t) = S_{t - t_n} u_n``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import InterpolationOperator, ModeSet, complement
from .integrate import IntegratorConfig, Stepper, Trajectory, _prepare, evolve, spin_up
from .model import PhysicalParams
from .spectral import SpectralSpace, StateVector, norm, project_state_symmetries, random_state

log = logging.getLogger(__name__)

GAP_RTOL = 1e-12


class ScheduleError(ValueError):
    """Observation times violate the gap bounds ``alpha <= t_{n+1} - t_n <= beta``."""


class InsufficientDataError(ValueError):
    """Too few post-transient steps to fit a contraction ratio."""


# --- observation schedule and stream ----------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationSchedule:
    """Observation times ``t_0 < t_1 < ...`` with gaps in ``[alpha, beta]``."""

    times: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if not 0 < self.alpha <= self.beta < math.inf:
            raise ScheduleError(f"need 0 < alpha <= beta < inf, got alpha={self.alpha}, beta={self.beta}")
        if times.ndim != 1 or len(times) < 2:
            raise ScheduleError("a schedule needs at least two times")
        gaps = np.diff(times)
        tol = GAP_RTOL * max(1.0, abs(times[-1]))
        bad = np.flatnonzero((gaps < self.alpha - tol) | (gaps > self.beta + tol))
        if bad.size:
            i = int(bad[0])
            raise ScheduleError(f"gap t[{i + 1}] - t[{i}] = {gaps[i]:.6g} outside [{self.alpha}, {self.beta}]")

    @classmethod
    def uniform(cls, gap: float, n_steps: int, t0: float = 0.0) -> "ObservationSchedule":
        return cls(t0 + gap * np.arange(n_steps + 1), gap, gap)

    @classmethod
    def jittered(cls, alpha: float, beta: float, n_steps: int, rng: np.random.Generator,
                 t0: float = 0.0) -> "ObservationSchedule":
        gaps = rng.uniform(alpha, beta, size=n_steps)
        return cls(t0 + np.concatenate([[0.0], np.cumsum(gaps)]), alpha, beta)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True, eq=False)
class ObservationStream:
    """Observation values ``r^n = R U(t_n)``."""

    times: np.ndarray
    values: list
    operator: InterpolationOperator

    def residual(self, n: int) -> float:
        """``||R r^n - r^n||_H``; zero for Lagrange operators."""
        r = self.values[n]
        return norm(self.operator.apply(r) - r)


def observe(reference: Trajectory, R: InterpolationOperator, schedule: ObservationSchedule,
            noise=None) -> ObservationStream:
    """Noise-free observations of the reference at every scheduled time.

    ``noise`` is an optional callable ``(n, r) -> perturbation`` added to
    each value; it is off by default.
    """
    values = []
    for n, t in enumerate(schedule.times):
        try:
            U = reference.at(t)
        except KeyError:
            raise KeyError(f"reference trajectory has no sample at observation time t={t}") from None
        r = R.apply(U)
        if noise is not None:
            r = R.apply(r + noise(n, r))
        values.append(r)
    return ObservationStream(schedule.times.copy(), values, R)


# --- the recursion ------------------------------------------------------------

def assimilate_step(u_prev: StateVector, r_n: StateVector, delta: float, params: PhysicalParams,
                    R: InterpolationOperator, config: IntegratorConfig | None = None,
                    bounds: tuple[float, float] | None = None, stepper: Stepper | None = None,
                    return_forecast: bool = False):
    """``u_n = (I - R) S_delta u_prev + r_n`` followed by the symmetry projection.

    With ``return_forecast`` the free forecast ``S_delta u_prev`` is returned
    as well.
    """
    if bounds is not None:
        a, b = bounds
        tol = GAP_RTOL * max(1.0, delta)
        if not a - tol <= delta <= b + tol:
            raise ScheduleError(f"gap {delta} outside [{a}, {b}]")
    sp = u_prev.space
    stepper = stepper or Stepper(sp, params, config)
    forecast = StateVector(sp, stepper.advance(_prepare(u_prev), delta))
    u = project_state_symmetries(R.apply_complement(forecast) + r_n)
    return (u, forecast) if return_forecast else u


@dataclass
class AssimilationReport:
    """Per-step errors of a twin experiment and the fitted contraction ratio.

    Arrays are indexed by ``n = 0..n_steps``.  ``jump_norm[n]`` is the W1
    norm of ``u_n - S u_{n-1}`` and ``q_local[n]`` the ratio of consecutive
    W1 errors (both NaN at ``n = 0``).
    """

    times: np.ndarray
    err_H: np.ndarray
    err_W1: np.ndarray
    err_W2: np.ndarray
    jump_norm: np.ndarray
    q_local: np.ndarray
    scale: float
    N_modes: int
    q_tilde: float = math.nan
    fit_residual: float = math.nan
    fit_points: int = 0
    verdict: str = "undetermined"
    prognoses: list = field(default_factory=list, repr=False)
    reference: list = field(default_factory=list, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def reduction(self) -> float:
        """Final over initial W1 error."""
        return float(self.err_W1[-1] / self.err_W1[0]) if self.err_W1[0] > 0 else 0.0

    def rows(self):
        for n in range(len(self.times)):
            yield (n, self.times[n], self.err_H[n], self.err_W1[n], self.err_W2[n],
                   self.jump_norm[n], self.q_local[n])


@dataclass(frozen=True)
class Verdict:
    reliable: bool
    q_tilde: float
    residual: float
    n_fit: int
    final_ratio: float

    @property
    def label(self) -> str:
        return "reliable" if self.reliable else "not-reliable"


def fit_contraction(errors, transient: float = 0.2, floor: float = 0.0, min_steps: int = 10):
    """Geometric fit ``e_n ~ C q^n`` over the post-transient tail.

    The first ``transient`` fraction of the steps is discarded.  Samples at
    or below ``floor`` (the round-off level) carry no information about the
    rate and are dropped; if fewer than two remain in the tail, the fit falls
    back to every sample above the floor, and if the error hits the floor at
    once the rate is bounded by the single-step drop.

    Returns ``(q, rms_residual, n_points)``.
    """
    e = np.asarray(errors, dtype=float)
    n_steps = len(e) - 1
    start = int(math.ceil(transient * n_steps))
    if n_steps - start + 1 < min_steps:
        raise InsufficientDataError(
            f"need at least {min_steps} post-transient samples, have {n_steps - start + 1}")
    idx = np.arange(len(e))
    tail = idx[start:][e[start:] > floor]
    if len(tail) < 2:
        tail = idx[e > floor]
    if len(tail) < 2:
        if e[0] <= floor:
            return 0.0, 0.0, 0
        first = int(np.argmax(e <= floor))
        return float((floor / e[0]) ** (1.0 / max(first, 1))), 0.0, 1
    y = np.log(e[tail])
    A = np.vstack([tail, np.ones_like(tail)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(np.exp(coef[0])), float(np.sqrt(np.mean(resid ** 2))), len(tail)


def reliability_verdict(report, margin: float = 0.05, reduction: float = 1e-6,
                        transient: float = 0.2, floor_rtol: float = 1e-11) -> Verdict:
    """Reliable iff the fitted ratio is ``<= 1 - margin`` and the final error
    has dropped by ``reduction`` relative to the initial one.

    ``report`` is an :class:`AssimilationReport` or a plain W1 error sequence.
    Samples below ``floor_rtol`` times the problem scale are treated as
    converged to round-off and excluded from the rate fit.
    """
    if isinstance(report, AssimilationReport):
        errors, scale = report.err_W1, max(report.scale, float(report.err_W1[0]))
    else:
        errors = np.asarray(report, dtype=float)
        scale = float(errors[0]) if len(errors) else 0.0
    errors = np.asarray(errors, dtype=float)
    if np.any(errors < 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be finite and nonnegative")
    floor = floor_rtol * scale
    q, res, npts = fit_contraction(errors, transient, floor)
    final = float(errors[-1] / errors[0]) if errors[0] > 0 else 0.0
    ok = q <= 1 - margin and (final <= reduction or errors[-1] <= floor)
    return Verdict(bool(ok), q, res, npts, final)


# --- twin experiment ----------------------------------------------------------

@dataclass
class TwinConfig:
    """Inputs of a twin experiment.

    ``reference0`` skips the spin-up when given (it should already lie in
    the absorbing ball).  ``initial_error`` is the W1 norm of the seeded
    perturbation of the initial guess; ``0`` starts synchronized.
    """

    params: PhysicalParams
    operator: InterpolationOperator
    schedule: ObservationSchedule
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    seed: int = 0
    reference0: StateVector | None = None
    initial_error: float = 1.0
    initial_guess: StateVector | None = None
    spin_window: float = 5.0
    spin_tol: float = 0.05
    spin_max_time: float = 200.0
    margin: float = 0.05
    keep_states: bool = False


def initial_perturbation(space: SpectralSpace, rng: np.random.Generator, size: float) -> StateVector:
    """Seeded random perturbation with W1 norm ``size`` spread over every shell."""
    if size == 0:
        return StateVector.zeros(space)
    return random_state(space, rng, scale=size, norm_space="W1")


def run_twin_experiment(cfg: TwinConfig) -> AssimilationReport:
    """Spin up a reference, observe it, and run the assimilation recursion."""
    R = cfg.operator
    sp = R.space
    rng = np.random.default_rng(cfg.seed)
    if cfg.reference0 is None:
        U0 = random_state(sp, rng, slope=3)
        U0 = spin_up(U0, cfg.params, cfg.spin_window, cfg.spin_tol, cfg.spin_max_time, cfg.integrator).state
    else:
        U0 = cfg.reference0
    times = cfg.schedule.times
    ref_stepper = Stepper(sp, cfg.params, cfg.integrator)
    ref = evolve(U0, cfg.params, times[-1] - times[0], times - times[0], cfg.integrator,
                 t0=times[0], stepper=ref_stepper)
    stream = observe(ref, R, cfg.schedule)

    if cfg.initial_guess is not None:
        u = cfg.initial_guess
    else:
        u = project_state_symmetries(ref.states[0] + initial_perturbation(sp, rng, cfg.initial_error))
    stepper = Stepper(sp, cfg.params, cfg.integrator)
    n = len(times)
    errs = {k: np.empty(n) for k in ("H", "W1", "W2")}
    jump = np.full(n, np.nan)
    prog = [u]

    def record(i, u):
        d = ref.states[i] - u
        for k in errs:
            errs[k][i] = norm(d, k)

    record(0, u)
    for i in range(1, n):
        u, forecast = assimilate_step(u, stream.values[i], times[i] - times[i - 1], cfg.params, R,
                                      bounds=(cfg.schedule.alpha, cfg.schedule.beta),
                                      stepper=stepper, return_forecast=True)
        jump[i] = norm(u - forecast, "W1")
        record(i, u)
        if cfg.keep_states:
            prog.append(u)
        log.debug("step %d t=%.4g err_W1=%.3e", i, times[i], errs["W1"][i])
    with np.errstate(divide="ignore", invalid="ignore"):
        ql = np.concatenate([[np.nan], errs["W1"][1:] / errs["W1"][:-1]])
    scale = max(norm(U, "W1") for U in ref.states)
    report = AssimilationReport(times.copy(), errs["H"], errs["W1"], errs["W2"], jump, ql, scale, R.N,
                                prognoses=prog if cfg.keep_states else [],
                                reference=list(ref.states) if cfg.keep_states else [])
    try:
        v = reliability_verdict(report, cfg.margin)
        report.q_tilde, report.fit_residual, report.fit_points = v.q_tilde, v.residual, v.n_fit
        report.verdict = v.label
    except InsufficientDataError as exc:
        log.warning("no verdict: %s", exc)
    return report


# --- prognostic trajectory ------------------------------------------------------

class PrognosticTrajectory:
    """Piecewise trajectory ``u(t) = S_{t - t_n} u_n`` on ``[t_n, t_{n+1})``."""

    def __init__(self, times, states, params: PhysicalParams, config: IntegratorConfig | None = None):
        self.times = np.asarray(times, dtype=float)
        self.states = list(states)
        if len(self.times) != len(self.states) or len(self.times) == 0:
            raise ValueError("need one prognostic value per time")
        self.params = params
        self.config = config or IntegratorConfig()
        self._stepper = Stepper(self.states[0].space, params, self.config)

    def __call__(self, t: float) -> StateVector:
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        n = int(np.searchsorted(self.times, t, side="right")) - 1
        u = self.states[n]
        dt = t - self.times[n]
        if dt == 0:
            return u
        return StateVector(u.space, self._stepper.advance(_prepare(u), dt))

    def left_limit(self, n: int) -> StateVector:
        """``S_{t_n - t_{n-1}} u_{n-1}``, the state just before the jump at ``t_n``."""
        u = self.states[n - 1]
        return StateVector(u.space, self._stepper.advance(_prepare(u), self.times[n] - self.times[n - 1]))

    def jump(self, n: int) -> StateVector:
        return self.states[n] - self.left_limit(n)


def prognostic_trajectory(times, states, params: PhysicalParams,
                          config: IntegratorConfig | None = None) -> PrognosticTrajectory:
    return PrognosticTrajectory(times, states, params, config)


# --- squeezing ----------------------------------------------------------------

@dataclass(frozen=True)
class SqueezingEstimate:
    q: float
    ratios: np.ndarray
    N: int
    t: float


def estimate_squeezing(pairs, modes: ModeSet, t: float, params: PhysicalParams,
                       config: IntegratorConfig | None = None) -> SqueezingEstimate:
    """``max ||Q_N (S_t U - S_t U*)||_W1 / ||U - U*||_W1`` over the pairs.

    Pairs with ``U == U*`` are skipped.
    """
    ratios = []
    for U, V in pairs:
        d0 = norm(U - V, "W1")
        if d0 == 0:
            continue
        a = evolve(U, params, t, [t], config).states[-1]
        b = evolve(V, params, t, [t], config).states[-1]
        ratios.append(norm(complement(a - b, modes), "W1") / d0)
    ratios = np.array(ratios)
    q = float(ratios.max()) if ratios.size else math.nan
    return SqueezingEstimate(q, ratios, modes.N, t)


def squeezing_from_evolved(pairs0, pairs_t, modes: ModeSet) -> np.ndarray:
    """Squeezing ratios for pairs already evolved by the same time."""
    out = []
    for (U, V), (a, b) in zip(pairs0, pairs_t):
        d0 = norm(U - V, "W1")
        if d0 > 0:
            out.append(norm(complement(a - b, modes), "W1") / d0)
    return np.array(out)


# --- dissipativity of prognostic values ------------------------------------------

@dataclass(frozen=True)
class DissipativityCheck:
    sup_H: float
    sup_W2: float
    rho_star: float
    q_star: float
    hypothesis_ok: bool
    bounded: bool


def verify_dissipativity(states, a0: float, a1: float, K_G: float, c0: float, c1: float,
                         K: float, alpha: float, transient: float = 0.2) -> DissipativityCheck:
    """Compare the prognostic values with the bound ``1 + rho*``.

    ``rho* = (a1 K_G + c0 K) / (1 - c1 exp(-a0 alpha))`` needs
    ``c1 < exp(a0 alpha)``; when that fails the hypothesis is flagged and
    ``rho*`` is infinite.  ``bounded`` reports whether the post-transient
    values satisfy the bound.
    """
    nH = np.array([norm(u, "H") for u in states])
    nW2 = np.array([norm(u, "W2") for u in states])
    q_star = c1 * math.exp(-a0 * alpha)
    ok = q_star < 1
    rho = (a1 * K_G + c0 * K) / (1 - q_star) if ok else math.inf
    start = int(math.ceil(transient * (len(states) - 1)))
    bounded = bool(np.all(nH[start:] <= 1 + rho))
    return DissipativityCheck(float(nH.max()), float(nW2.max()), rho, q_star, ok, bounded)
