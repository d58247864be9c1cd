import numpy as np
import pytest
from scipy.stats import chisquare

from lorentz_kinetics.constants import _panel_rule
from lorentz_kinetics.grids import build_phase_grid, integrate, tail_estimate
from lorentz_kinetics.kernels import PairGeometry, scatter_angle
from lorentz_kinetics.particles import (
    EquilibriumSampler,
    acceptance_rate,
    empirical_field,
    envelope_area,
    make_ensemble,
    sample_transition,
    statistical_l1_error,
    step_ensemble,
    support_curve,
)


@pytest.fixture(scope="module")
def sampler():
    return EquilibriumSampler.build()


def _h_bin_probabilities(hp, edges):
    probs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h, w = _panel_rule(np.unique([lo, hi, *[e for e in (-abs(hp), abs(hp)) if lo < e < hi]]))
        probs.append(np.sum(w * PairGeometry(h, hp).tail(0.0)))
    return np.array(probs)


@pytest.mark.parametrize("hp", [0.3, -0.6])
def test_transition_h_marginal_chi_square(hp):
    rng = np.random.default_rng(11)
    _, h, _ = sample_transition(np.full(200_000, hp), rng)
    edges = np.linspace(-1.0, 1.0, 21)
    counts, _ = np.histogram(h, edges)
    probs = _h_bin_probabilities(hp, edges)
    assert probs.sum() == pytest.approx(1.0, abs=1e-8)
    assert chisquare(counts, probs * counts.sum()).pvalue > 0.01


def test_transition_s_marginal_chi_square():
    hp = 0.3
    rng = np.random.default_rng(12)
    s, _, _ = sample_transition(np.full(200_000, hp), rng)
    cuts = np.array([0.0, 0.3, 0.6, 0.8, 1.0, 1.1, 1.2, np.inf])
    h, w = _panel_rule(np.concatenate([[-1.0, -hp, hp, 1.0], 1 - 4.0 ** -np.arange(1, 12)]))
    tails = np.array([np.sum(w * PairGeometry(h, hp).tail(c)) if np.isfinite(c) else 0.0 for c in cuts])
    counts, _ = np.histogram(s, cuts)
    assert chisquare(counts, -np.diff(tails) * counts.sum()).pvalue > 0.01


def test_transition_stays_in_support_and_acceptance_matches():
    rng = np.random.default_rng(13)
    hp = np.full(100_000, 0.3)
    s, h, draws = sample_transition(hp, rng)
    assert np.all(s >= 0)
    assert np.all(s <= support_curve(h, hp) + 1e-12)
    rate = hp.size / draws
    assert rate == pytest.approx(acceptance_rate(0.3), rel=0.02)
    assert 0.3 <= rate <= 1.0


def test_envelope_area_closed_form():
    h, w = _panel_rule(np.array([-1.0, -0.4, 0.4, 1.0]))
    assert envelope_area(0.4) == pytest.approx(np.sum(w * support_curve(h, 0.4)), rel=1e-10)
    assert acceptance_rate(0.0) == pytest.approx(np.pi**2 / 12)


def test_ensembles_are_reproducible(sampler):
    a = step_ensemble(make_ensemble(5000, 4, sampler=sampler, block=1024), 3.0)
    b = step_ensemble(make_ensemble(5000, 4, sampler=sampler, block=1024), 3.0)
    c = step_ensemble(make_ensemble(5000, 5, sampler=sampler, block=1024), 3.0)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.s, b.s)
    assert not np.array_equal(a.theta, c.theta)


def test_stepping_to_the_current_time_is_identity(sampler):
    ens = make_ensemble(1000, 1, sampler=sampler)
    same = step_ensemble(ens, 0.0)
    assert np.array_equal(same.s, ens.s) and same.collisions == 0
    with pytest.raises(ValueError):
        step_ensemble(step_ensemble(ens, 1.0), 0.5)


def test_free_flight_then_scatter():
    rng_state = make_ensemble(1, 0, angle_law="equilibrium")
    ens = rng_state.copy()
    ens.theta[:] = 1.0
    ens.s[:] = 0.5
    ens.h[:] = 0.2
    early = step_ensemble(ens, 0.3)
    assert early.theta[0] == 1.0 and early.s[0] == pytest.approx(0.2) and early.collisions == 0
    late = step_ensemble(ens, 0.6)
    assert late.collisions >= 1
    if late.collisions == 1:
        assert late.theta[0] == pytest.approx(np.mod(1.0 + scatter_angle(0.2), 2 * np.pi))


def test_histogram_density_has_unit_mass(sampler):
    grid = build_phase_grid(8, 24, 20.0, 16)
    ens = make_ensemble(20_000, 2, sampler=sampler)
    inside = np.mean(ens.s <= grid.s_max)
    assert integrate(empirical_field(ens, grid)) == pytest.approx(inside, abs=1e-12)
    one = make_ensemble(1, 3, sampler=sampler)
    assert np.count_nonzero(empirical_field(one, grid).values) == 1
    assert statistical_l1_error(100, grid) == pytest.approx(np.sqrt(grid.size / 100))


def test_equilibrium_law_is_stationary(sampler):
    ens = step_ensemble(make_ensemble(100_000, 6, angle_law="equilibrium", sampler=sampler), 5.0)
    assert ens.collisions > 0
    cuts = np.array([0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, np.inf])
    probs = -np.diff([1.0] + [tail_estimate(c) for c in cuts[1:-1]] + [0.0])
    counts, _ = np.histogram(ens.s, cuts)
    assert chisquare(counts, probs * counts.sum()).pvalue > 0.01
    theta_counts, _ = np.histogram(ens.theta, np.linspace(0, 2 * np.pi, 9))
    assert chisquare(theta_counts).pvalue > 0.01
    # E is even in h
    assert abs(ens.h.mean()) < 4 * ens.h.std() / np.sqrt(ens.size)


def test_cosine_law_relaxes(sampler):
    ens = make_ensemble(100_000, 8, angle_law="cosine", sampler=sampler)
    edges = np.linspace(0, 2 * np.pi, 9)

    def anisotropy(e):
        counts, _ = np.histogram(e.theta, edges)
        return np.abs(counts / counts.mean() - 1).max()

    early = anisotropy(step_ensemble(ens, 2.0))
    late = anisotropy(step_ensemble(ens, 20.0))
    assert late < 0.5 * early
