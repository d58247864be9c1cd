import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentz_kinetics.collision import PICARD_TOL
from lorentz_kinetics.evolution import (
    InitialData,
    cosine_datum,
    equilibrium_datum,
    equilibrium_distance,
    fit_decay,
    fit_power_law,
    random_datum,
    reconstruct,
    solve_trace,
    tabulated_datum,
)
from lorentz_kinetics.grids import build_phase_grid, integrate, lp_norm
from lorentz_kinetics.kernels import TWO_PI, eval_E

T_END = 10.0
DT = 0.1


@pytest.fixture(scope="module")
def grid():
    return build_phase_grid(8, 40, 20.0, 32)


@pytest.fixture(scope="module")
def equilibrium_run(grid):
    mu0 = equilibrium_datum(grid)
    return mu0, solve_trace(mu0, T_END, DT)


@pytest.fixture(scope="module")
def cosine_run(grid):
    mu0 = cosine_datum(grid)
    return mu0, solve_trace(mu0, T_END, DT)


@pytest.fixture(scope="module")
def random_run(grid):
    mu0 = random_datum(grid, np.random.default_rng(1))
    return mu0, solve_trace(mu0, T_END, DT)


def test_equilibrium_trace_is_collision_rate(equilibrium_run):
    # rho = E(0, h) / (2 pi) = 1 / (2 pi) for the stationary state
    _, trace = equilibrium_run
    assert eval_E(0.0, 0.3) == 1.0
    assert np.max(np.abs(TWO_PI * trace.values - 1.0)) < 3e-3
    assert np.max(np.ptp(trace.values, axis=1)) < 1e-14


def test_equilibrium_is_stationary(equilibrium_run):
    mu0, trace = equilibrium_run
    start = mu0.field
    for t in (1.0, 5.0, 10.0):
        mu_t = reconstruct(mu0, trace, t)
        assert lp_norm(mu_t - start, 1) < 3e-3
        assert np.max(np.ptp(mu_t.values, axis=0)) < 1e-14


def test_stationarity_error_shrinks_at_second_order():
    errors = []
    for n_s, n_h in ((40, 32), (80, 64)):
        mu0 = equilibrium_datum(build_phase_grid(8, n_s, 20.0, n_h))
        errors.append(lp_norm(reconstruct(mu0, solve_trace(mu0, 5.0, DT), 5.0) - mu0.field, 1))
    assert errors[1] < 0.35 * errors[0]


def test_reconstruct_at_time_zero_is_the_datum(cosine_run):
    mu0, trace = cosine_run
    assert np.array_equal(reconstruct(mu0, trace, 0.0).values, mu0.field.values)


@pytest.mark.parametrize("run", ["cosine_run", "random_run"])
def test_mass_conserved_and_density_nonnegative(run, request):
    mu0, trace = request.getfixturevalue(run)
    mass0 = mu0.total_mass
    for t in (1.0, 2.0, 5.0, 10.0):
        mu_t = reconstruct(mu0, trace, t)
        assert abs(integrate(mu_t) - mass0) < 2e-3 * mass0
        assert mu_t.values.min() >= -1e-12


def test_l1_distance_between_solutions_does_not_grow(cosine_run, random_run):
    (a0, ta), (b0, tb) = cosine_run, random_run
    dist = [lp_norm(reconstruct(a0, ta, t) - reconstruct(b0, tb, t), 1) for t in np.arange(0.0, 10.01, 0.5)]
    assert np.all(np.diff(dist) <= 1e-6)
    assert dist[-1] < 0.1 * dist[0]


def test_distance_to_equilibrium_decreases(cosine_run):
    mu0, trace = cosine_run
    mass0 = mu0.total_mass
    d = [equilibrium_distance(reconstruct(mu0, trace, t), mass0, 1) for t in (0.0, 2.0, 5.0, 10.0)]
    assert np.all(np.diff(d) < 0)


def test_zero_datum_stays_zero(grid):
    mu0 = InitialData(grid, lambda th, s, h: np.zeros(np.broadcast_shapes(th.shape, s.shape, h.shape)), "zero")
    trace = solve_trace(mu0, 2.0, DT)
    assert np.all(trace.values == 0)
    assert np.all(reconstruct(mu0, trace, 2.0).values == 0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_trace_is_linear_in_the_datum(a, b):
    grid = build_phase_grid(4, 16, 10.0, 8)
    eq, cs = equilibrium_datum(grid), cosine_datum(grid)
    mix = InitialData(grid, lambda th, s, h: a * eq.evaluate(th, s, h) + b * cs.evaluate(th, s, h))
    lhs = solve_trace(mix, 2.0, DT).values
    rhs = a * solve_trace(eq, 2.0, DT).values + b * solve_trace(cs, 2.0, DT).values
    # linear up to the stopping tolerance of the inner fixed-point solve
    assert np.max(np.abs(lhs - rhs)) < PICARD_TOL * (1 + abs(a) + abs(b))


def test_time_checks(cosine_run):
    mu0, trace = cosine_run
    with pytest.raises(ValueError):
        reconstruct(mu0, trace, T_END + 1.0)
    with pytest.raises(ValueError):
        trace.index_of(0.05)
    with pytest.raises(ValueError):
        solve_trace(mu0, 0.0, DT)
    with pytest.raises(ValueError):
        solve_trace(mu0, 1.0, -DT)


def test_fit_recovers_exact_power_laws():
    t = np.array([2.0, 5.0, 7.0, 10.0, 14.0, 20.0])
    exponent, constant, resid = fit_power_law(t, 3.0 / t, (2.0, 20.0))
    assert exponent == pytest.approx(-1.0, abs=1e-12)
    assert constant == pytest.approx(3.0, rel=1e-12)
    assert resid < 1e-12
    report = fit_decay(t, np.full_like(t, 0.5), (2.0, 20.0))
    assert report.fitted_exponent == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isnan(report.l2))
    assert report.as_dict()["window"] == [2.0, 20.0]


def test_fit_rejects_degenerate_windows():
    t = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.raises(ValueError):
        fit_power_law(t, 1 / t, (1.0, 3.0))
    with pytest.raises(ValueError):
        fit_power_law(t, t - 2.0, (1.0, 5.0))


def test_tabulated_datum_interpolates_and_truncates(grid):
    reference = cosine_datum(grid)
    table = tabulated_datum(grid, reference.field.values)
    assert np.allclose(table.field.values, reference.field.values, atol=1e-15)
    past = table.values_at(np.array([grid.s_max + 1.0]))
    assert np.all(past == 0)
    mid = 0.5 * (grid.s.nodes[3] + grid.s.nodes[4])
    expect = 0.5 * (reference.field.values[:, 3] + reference.field.values[:, 4])
    assert np.allclose(table.values_at(np.array([mid]))[:, 0], expect, atol=1e-15)
    with pytest.raises(ValueError):
        tabulated_datum(grid, np.zeros((2, 2, 2)))
