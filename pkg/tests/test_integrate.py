import math

import numpy as np
import pytest

from peassim.integrate import (
    BlowUpError, CFLError, IntegratorConfig, SpinUpError, Trajectory, evolve, fit_decay_rate,
    lipschitz_probe, measure_dissipativity, partition, spin_up, step,
)
from peassim.model import ForcingSpec, PhysicalParams
from peassim.spectral import StateVector, constraint_violations, norm, random_state


def self_convergence_order(U, params, T, dts):
    ends = [evolve(U, params, T, config=IntegratorConfig(dt=dt)).states[-1] for dt in dts]
    e1 = norm(ends[0] - ends[1])
    e2 = norm(ends[1] - ends[2])
    return math.log2(e1 / e2)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="RK2")
    with pytest.raises(ValueError):
        IntegratorConfig(cfl_guard=0.0)


def test_partition():
    assert partition(0.1, 0.025) == 4
    assert partition(0.1, 0.03) == 4
    assert partition(1e-6, 0.1) == 1


def test_trajectory_requires_increasing_times(space16):
    tr = Trajectory()
    U = StateVector.zeros(space16)
    tr.append(0.0, U)
    with pytest.raises(ValueError):
        tr.append(0.0, U)
    with pytest.raises(KeyError):
        tr.at(1.0)


def test_rest_stays_at_rest(space16):
    out = step(StateVector.zeros(space16), PhysicalParams(0.1), 0.05)
    assert np.all(out.coeffs == 0)


def test_pure_diffusion_is_exact(space16, rng):
    U = random_state(space16, rng, kmax=4)
    p = PhysicalParams(0.2, 0.0, nonlinear=False, buoyancy_coupling=False)
    tr = evolve(U, p, 0.5, config=IntegratorConfig(dt=0.05))
    expect = U.coeffs * np.exp(-0.2 * space16.lam * 0.5)
    assert np.abs(tr.states[-1].coeffs - expect).max() < 1e-15


def test_self_convergence_order(space16, forced16, rng):
    U = random_state(space16, rng, slope=2.0, scale=4.0)
    order = self_convergence_order(U, forced16, 0.4, (0.04, 0.02, 0.01))
    assert order >= 3.7


def test_evolve_zero_duration(space16, rng):
    U = random_state(space16, rng)
    tr = evolve(U, PhysicalParams(0.1), 0.0)
    assert len(tr) == 1 and np.allclose(tr.states[0].coeffs, U.coeffs, rtol=0, atol=1e-15)


def test_evolve_rejects_bad_times(space16, rng):
    U = random_state(space16, rng)
    with pytest.raises(ValueError):
        evolve(U, PhysicalParams(0.1), 1.0, [0.5, 2.0])
    with pytest.raises(ValueError):
        evolve(U, PhysicalParams(0.1), -1.0)


def test_semigroup_property(space16, forced16, rng):
    U = random_state(space16, rng, slope=1.0, scale=3.0)
    cfg = IntegratorConfig(dt=0.05)
    direct = evolve(U, forced16, 0.3, [0.1, 0.3], cfg)
    first = evolve(U, forced16, 0.1, config=cfg).states[-1]
    second = evolve(first, forced16, 0.2, config=cfg).states[-1]
    assert norm(direct.at(0.3) - second) < 1e-10 * norm(second)


def test_samples_land_exactly_and_time_offset(space16, forced16, rng):
    U = random_state(space16, rng)
    tr = evolve(U, forced16, 0.25, [0.0, 0.07, 0.25], IntegratorConfig(dt=0.05), t0=3.0)
    assert tr.times == [3.0, 3.07, 3.25]


def test_step_is_deterministic(space16, forced16, rng):
    U = random_state(space16, rng, scale=2.0)
    a = step(U, forced16, 0.02)
    b = step(U, forced16, 0.02)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_output_satisfies_constraints(space16, forced16, rng):
    U = random_state(space16, rng, scale=3.0)
    V = evolve(U, forced16, 1.0, config=IntegratorConfig(dt=0.05)).states[-1]
    assert max(constraint_violations(V).values()) < 1e-12 * norm(V, "W1")


def test_cfl_guard(space16, rng):
    U = random_state(space16, rng, scale=50.0)
    with pytest.raises(CFLError):
        step(U, PhysicalParams(0.1), 0.5)


def test_blowup_guard(space16, rng):
    U = random_state(space16, rng, scale=1.0)
    # negative effective dissipation is impossible, so blow up through a huge forcing instead
    F = ForcingSpec.preset(space16, amplitude=1e12)
    with pytest.raises(BlowUpError):
        evolve(U, PhysicalParams(0.1, forcing=F), 0.1, config=IntegratorConfig(dt=0.05, cfl_guard=1e30))


def test_unforced_norm_decreases(space16, rng):
    U = random_state(space16, rng, slope=1.0, scale=2.0)
    tr = evolve(U, PhysicalParams(0.1), 4.0, np.linspace(0, 4, 41), IntegratorConfig(dt=0.05))
    nh = tr.norms("H")
    assert np.all(np.diff(nh) < 0)


def test_decay_rate_small_data(space16, rng):
    U = random_state(space16, rng, scale=1e-6)
    fit = measure_dissipativity(U, PhysicalParams(0.1), 80.0, config=IntegratorConfig(dt=0.5), transient=0.5)
    assert fit.a0 > 0
    assert fit.a0 == pytest.approx(0.1, rel=0.1)
    assert fit.a1 == 0.0


def test_fit_decay_rate_exact():
    t = np.linspace(0, 3, 10)
    a, res = fit_decay_rate(t, 2.0 * np.exp(-0.7 * t))
    assert a == pytest.approx(0.7, rel=1e-12) and res < 1e-12


def test_spin_up_without_forcing_goes_to_rest(space16, rng):
    U = random_state(space16, rng)
    r = spin_up(U, PhysicalParams(1.0), window=2.0, max_time=60.0, config=IntegratorConfig(dt=0.1), atol=1e-8)
    assert r.converged and r.radius < 1e-8


def test_spin_up_failure_reports_trace(space16, rng):
    U = random_state(space16, rng)
    with pytest.raises(SpinUpError) as info:
        spin_up(U, PhysicalParams(0.01), window=0.5, tol=1e-12, max_time=1.0, config=IntegratorConfig(dt=0.1))
    assert len(info.value.trace) > 1


def test_lipschitz_probe_conventions(space16, rng):
    U = random_state(space16, rng)
    assert lipschitz_probe(U, U, PhysicalParams(0.1), 1.0) == 1.0
    V = U + random_state(space16, rng, scale=1e-3)
    small = PhysicalParams(0.1)
    r = lipschitz_probe(U * 1e-6, V * 1e-6, small, 1.0, config=IntegratorConfig(dt=0.1))
    assert r <= 1 + 1e-6
