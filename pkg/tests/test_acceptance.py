"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line each in the summary."""

import numpy as np
import pytest

from lorentz_kinetics.acceptance import run_check


@pytest.fixture
def measure(acceptance_lines):
    def run(criterion):
        result = run_check(criterion)
        acceptance_lines.append(result.line())
        print(result.line())
        return result.measured

    return run


def test_criterion_01_kernel_normalization(measure):
    m = measure(1)
    assert m["max_mass_error"] < 1e-6


def test_criterion_02_equilibrium_normalization(measure):
    m = measure(2)
    assert m["mass_error"] < 1e-4
    assert m["max_outside_support"] == 0.0


def test_criterion_03_iterated_identities(measure):
    m = measure(3)
    for key in ("q2_mass_error", "q3_mass_error", "e2_mass_error", "e3_mass_error"):
        assert m[key] < 1e-3
    assert m["q2_small_time_rel_error"] < 1e-4


def test_criterion_04_f_marginal(measure):
    assert measure(4)["max_error"] < 1e-3


def test_criterion_05_stationarity(measure):
    assert measure(5)["sup_l1_distance"] < 1e-3


def test_criterion_06_conservation_and_contraction(measure):
    m = measure(6)
    assert m["relative_mass_error"] < 1e-3
    assert m["max_distance_increase"] <= 1e-3


def test_criterion_07_equilibrium_rate(measure):
    m = measure(7)
    assert -1.3 <= m["l1_exponent"] <= -0.7
    assert np.isfinite(m["l2_constant"]) and m["l2_constant"] > 0


def test_criterion_08_contraction_constant(measure):
    m = measure(8)
    assert abs(m["d0"] - 1.0) <= 1e-3
    assert m["d_best"] <= 0.999
    assert 0 < m["best_c"] <= 0.5


def test_criterion_09_memory_kernel_decay(measure):
    assert measure(9)["max_relative_growth"] < 0.1


def test_criterion_10_four_term_representation(measure):
    assert measure(10)["max_linf"] < 1e-3


def test_criterion_11_mode_decay(measure):
    m = measure(11)
    assert m["ratio_t20_t2"] <= 0.2
    assert m["l1_exponent"] <= -0.7


def test_criterion_12_oscillatory_margin(measure):
    m = measure(12)
    assert m["min_margin"] >= 1e-3
    assert len([k for k in m if k.startswith("margin_")]) == 3


def test_criterion_13_monte_carlo(measure):
    m = measure(13)
    assert m["l1_distance"] <= 3 * m["statistical_error"] + 0.05


def test_criterion_14_plane_pairing(measure):
    assert measure(14)["ratio_t20_t2"] < 0.5
