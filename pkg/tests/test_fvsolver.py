import numpy as np
import pytest

from conftest import make_spec, sample_f0

from torusfp.coeff import build_coefficients
from torusfp.equilibrium import equilibrium_state, free_energy, integrate
from torusfp.errors import AssumptionError, NumericsError
from torusfp.fvsolver import FVConfig, chemical_potential, fv_step, simulate, stable_dt
from torusfp.grid import Field


def test_chemical_potential_examples(heat64, cosine128):
    _, c = cosine128
    eq = equilibrium_state(c, 1.0)
    mu = chemical_potential(eq.f_eq, c)
    assert np.max(np.abs(mu.values - eq.C_eq)) <= 1e-12
    _, ch = heat64
    assert np.max(np.abs(chemical_potential(Field.constant(ch.grid, 1.0), ch).values)) == 0.0


def test_chemical_potential_direct():
    spec = make_spec(n=64, d="2", phi="cos(2*pi*x1)")
    c = build_coefficients(spec)
    f = Field.constant(c.grid, np.e)
    expected = 2.0 + np.cos(2 * np.pi * c.grid.coords1d())
    assert np.max(np.abs(chemical_potential(f, c).values - expected)) <= 1e-14


def test_chemical_potential_rejects_nonpositive(heat64):
    _, c = heat64
    with pytest.raises(NumericsError):
        chemical_potential(Field.constant(c.grid, -1.0), c)


def test_equilibrium_is_exact_steady_state(cosine128):
    _, c = cosine128
    eq = equilibrium_state(c, 1.0)
    cfg = FVConfig()
    f = eq.f_eq
    for k in range(50):
        f2 = fv_step(f, c, 0.007 * k, 0.007, cfg)
        assert np.array_equal(f2.values, f.values)
        f = f2


def test_step_conserves_mass(cosine128, rng):
    _, c = cosine128
    cfg = FVConfig()
    x = c.grid.coords1d()
    f = Field(c.grid, 1 + 0.4 * np.cos(2 * np.pi * x) + 0.1 * np.cos(6 * np.pi * x))
    m0 = integrate(f)
    out = fv_step(f, c, 0.0, 0.01, cfg)
    assert abs(integrate(out) - m0) <= 1e-13


def test_heat_single_step_decay():
    spec = make_spec(n=128, f0="1+0.5*cos(2*pi*x1)")
    c = build_coefficients(spec)
    f = sample_f0(spec)
    dt = 1e-5
    out = fv_step(f, c, 0.0, dt, FVConfig())
    x = c.grid.coords1d()
    exact = 1 + 0.5 * np.exp(-4 * np.pi**2 * dt) * np.cos(2 * np.pi * x)
    # measured one-step error 3.2e-6 (dt * first-order upwind truncation)
    assert np.max(np.abs(out.values - exact)) <= 1e-5


def test_stable_dt_explicit_formula(heat64):
    spec, c = heat64
    f = sample_f0(spec)
    cfg = FVConfig(stepper="explicit", dt_safety=0.9)
    assert stable_dt(f, c, 0.0, cfg) == pytest.approx(0.9 / (2 * 64**2), rel=1e-12)
    # doubling max(D/pi) halves the explicit step
    c2 = build_coefficients(make_spec(n=64, d="2"))
    assert stable_dt(f, c2, 0.0, cfg) == pytest.approx(0.45 / (2 * 64**2), rel=1e-12)


def test_stable_dt_implicit(heat64):
    spec, c = heat64
    f = sample_f0(spec)
    cfg = FVConfig(stepper="implicit", dt_safety=1.0)
    assert stable_dt(f, c, 0.0, cfg) == 1.0 / 64


def test_constant_is_steady_with_flat_potential():
    spec = make_spec(n=64, d="1.5", pi="2+cos(2*pi*x1)", f0="2", t_final=0.2)
    res = simulate(spec, FVConfig(diag_every=5))
    for row in res.rows:
        assert row.min_f == 2.0 and row.max_f == 2.0
        assert row.dissipation_rate == 0.0
    f_energies = [r.free_energy for r in res.rows]
    assert max(f_energies) - min(f_energies) == 0.0


def test_simulate_heat_matches_fourier():
    spec = make_spec(n=128, f0="1+0.1*cos(2*pi*x1)", t_final=0.01)
    cfg = FVConfig(dt_safety=128 * 1e-5, diag_every=100)  # dt = 1e-5
    res = simulate(spec, cfg)
    x = res.trajectory.grid.coords1d()
    worst = max(
        np.max(np.abs(fr.values - (1 + 0.1 * np.exp(-4 * np.pi**2 * t) * np.cos(2 * np.pi * x))))
        for fr, t in zip(res.trajectory.frames, res.trajectory.times)
    )
    assert worst <= 1e-3


def test_simulate_long_run_reaches_equilibrium(cosine128):
    spec = make_spec(n=128, phi="cos(2*pi*x1)", t_final=10.0)
    res = simulate(spec, FVConfig(diag_every=200))
    assert res.rows[-1].linf_to_feq <= 1e-5
    fes = [r.free_energy for r in res.rows]
    assert all(b <= a + 1e-12 for a, b in zip(fes, fes[1:]))
    assert not res.warnings


def test_simulate_validates_assumptions():
    spec = make_spec(n=64, mu=0.5)  # f0 = 1 < 4 mu
    with pytest.raises(AssumptionError, match="A3"):
        simulate(spec, FVConfig())


def test_mass_conservation_over_thousand_steps():
    spec = make_spec(n=64, phi="cos(2*pi*x1)", t_final=1000 * 0.9 / 64)
    res = simulate(spec, FVConfig(diag_every=100))
    assert res.n_steps == 1000
    drift = max(abs(r.mass - res.rows[0].mass) for r in res.rows)
    assert drift <= 1e-11


def test_energy_dissipates_every_implicit_step():
    spec = make_spec(n=64, phi="cos(2*pi*x1)", t_final=0.5)
    res = simulate(spec, FVConfig(diag_every=1))
    fes = [r.free_energy for r in res.rows]
    assert all(b <= a + 1e-12 for a, b in zip(fes, fes[1:]))


def test_dissipation_identity_on_refined_run():
    spec = make_spec(n=256, phi="cos(2*pi*x1)", t_final=0.05)
    cfg = FVConfig(dt_safety=256 * 1e-4, diag_every=10)  # dt = 1e-4
    res = simulate(spec, cfg)
    for r in res.rows[1:-1]:
        rel = abs(r.dF_dt_numeric + r.dissipation_rate) / max(r.dissipation_rate, 1e-8)
        assert rel <= 0.05


def test_positivity_and_envelope(cosine128):
    spec = make_spec(n=128, phi="cos(2*pi*x1)", t_final=2.0)
    res = simulate(spec, FVConfig(diag_every=20))
    slack = 1e-6 + res.trajectory.grid.h**2
    for r in res.rows:
        assert r.min_f > 0
        assert r.min_f >= res.bounds.m - slack
        assert r.max_f <= res.bounds.M + slack


def test_explicit_step_matches_implicit_for_small_dt():
    spec = make_spec(n=64, phi="cos(2*pi*x1)")
    c = build_coefficients(spec)
    f = sample_f0(spec)
    dt = 1e-6
    a = fv_step(f, c, 0.0, dt, FVConfig(stepper="explicit"))
    b = fv_step(f, c, 0.0, dt, FVConfig(stepper="implicit"))
    assert np.max(np.abs(a.values - b.values)) <= 1e-8  # O(dt^2) splitting gap


def test_explicit_positivity_rescue():
    # a large explicit step would go negative; halving restores positivity
    spec = make_spec(n=64, phi="cos(2*pi*x1)", f0="0.05+0.9*(0.5+0.5*cos(2*pi*x1))^8")
    c = build_coefficients(spec)
    f = sample_f0(spec)
    out = fv_step(f, c, 0.0, 5e-4, FVConfig(stepper="explicit"))
    assert np.min(out.values) > 0


def test_explicit_dt_floor_raises():
    import torusfp.fvsolver as fv

    spec = make_spec(n=64, phi="cos(2*pi*x1)")
    c = build_coefficients(spec)
    f = sample_f0(spec)
    with pytest.raises(NumericsError, match="positivity"):
        fv._explicit_step(c.grid, f.values, c, 0.0, 5e-13)


def test_newton_failure_reports():
    spec = make_spec(n=64, phi="cos(2*pi*x1)")
    c = build_coefficients(spec)
    f = sample_f0(spec)
    with pytest.raises(NumericsError, match="Newton"):
        fv_step(f, c, 0.0, 50.0, FVConfig(max_newton_iter=1))


def test_simulate_2d_constant_and_conservation():
    spec = make_spec(
        n=12, dim=2, phi="0.2*cos(2*pi*x1)*cos(2*pi*x2)", f0="1", t_final=0.05
    )
    res = simulate(spec, FVConfig(diag_every=2))
    drift = max(abs(r.mass - res.rows[0].mass) for r in res.rows)
    assert drift <= 1e-13
    fes = [r.free_energy for r in res.rows]
    assert all(b <= a + 1e-12 for a, b in zip(fes, fes[1:]))


def test_2d_equilibrium_steady():
    spec = make_spec(n=12, dim=2, phi="0.3*cos(2*pi*x1)+0.2*cos(2*pi*x2)", f0="1")
    c = build_coefficients(spec)
    eq = equilibrium_state(c, 1.0)
    out = fv_step(eq.f_eq, c, 0.0, 0.01, FVConfig())
    assert np.array_equal(out.values, eq.f_eq.values)


def test_cross_solver_agreement_on_heat_window():
    # finite-volume vs fixed-point solver over the picard horizon
    from torusfp.picard import fixed_point_solve, picard_space

    spec = make_spec(n=128, f0="1+0.1*cos(2*pi*x1)")
    c = build_coefficients(spec)
    f0 = sample_f0(spec)
    space = picard_space(f0, c)
    traj, _ = fixed_point_solve(f0, c, space, tol=1e-10)
    vals = f0.values.copy()
    nsteps = 50
    dt = space.T / nsteps
    import torusfp.fvsolver as fv

    for k in range(nsteps):
        vals = fv._implicit_step(c.grid, vals, c, (k + 1) * dt, dt, FVConfig())
    assert np.max(np.abs(vals - traj.frames[-1].values)) <= 1e-3
