import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from lorentz_kinetics.constants import (
    equilibrium_flight_mass,
    kernel_mass,
    measure_e_constant,
    measure_f_constant,
    measure_q_constant,
)
from lorentz_kinetics.iterated import pi_chain_mass, theta_marginal_of_f
from lorentz_kinetics.kernels import (
    KERNEL_SCALE,
    PI_CORNER,
    eval_E,
    eval_f,
    eval_gk,
    eval_hpp,
    eval_Pi,
    eval_Q,
    gauss_legendre,
    hpp_derivative,
    pair_convolution,
    pair_convolution_exact,
    pair_convolution_oscillatory,
    reduce_to_window,
    scatter_angle,
    velocity,
)

impact = st.floats(-1.0, 1.0, allow_nan=False)
flight = st.floats(-0.5, 6.0, allow_nan=False)
C = 6.0 / np.pi**2


def test_q_flat_branch():
    assert eval_Q(0.5, 0.3, 0.1) == pytest.approx(C, rel=1e-15)


def test_q_negative_time_vanishes():
    assert eval_Q(-0.1, 0.2, -0.7) == 0.0


def test_q_decreasing_branch():
    assert eval_Q(0.9, 0.5, 0.0) == pytest.approx(C * (1 / 0.9 - 1) / 0.5, rel=1e-12)
    assert eval_Q(0.9, 0.5, 0.0) == pytest.approx(0.135095, abs=5e-7)


@settings(max_examples=300, deadline=None)
@given(flight, impact, impact)
def test_q_symmetries_bit_identical(s, h, hp):
    q = eval_Q(s, h, hp)
    assert eval_Q(s, hp, h) == q
    assert eval_Q(s, -h, -hp) == q
    assert eval_Q(s, -hp, -h) == q


def test_q_symmetry_random_triples():
    rng = np.random.default_rng(1)
    s, h, hp = rng.uniform(0, 3, 10**4), rng.uniform(-1, 1, 10**4), rng.uniform(-1, 1, 10**4)
    assert np.array_equal(eval_Q(s, h, hp), eval_Q(s, hp, h))


@settings(max_examples=200, deadline=None)
@given(flight, impact, impact)
def test_q_range(s, h, hp):
    q = eval_Q(s, h, hp)
    assert 0.0 <= q <= C


def test_q_normalization_every_probe():
    for hp in np.linspace(-0.999, 0.999, 41):
        assert kernel_mass(hp) == pytest.approx(1.0, abs=1e-10)


def test_q_decay_constant():
    # (s + 1) Q peaks at s = 1 on the flat branch, so the sharp constant is 2 * 6/pi^2
    c_q = measure_q_constant()
    assert c_q == pytest.approx(12 / np.pi**2, rel=1e-6)
    assert c_q <= 18 / np.pi**2


def test_pi_closed_form():
    assert eval_Pi(0.5, 0.1) == pytest.approx(C * (np.log(1.5) - np.log(1.1)) / 0.4, rel=1e-14)
    # the quoted 0.471386 is a rounding slip; the formula gives 0.4713790
    assert eval_Pi(0.5, 0.1) == pytest.approx(0.471386, abs=1e-5)


@pytest.mark.parametrize("h", [-0.9, -0.2, 0.0, 0.4, 0.95])
def test_pi_diagonal_limit(h):
    # the closed form lives on the cone |h'| <= h; negative diagonals reflect onto it
    a = abs(h)
    assert eval_Pi(h, h) == pytest.approx(C / (1 + a), rel=1e-14)
    assert eval_Pi(a, a - 1e-7) == pytest.approx(C / (1 + a), rel=1e-6)


def test_pi_corners_are_infinite():
    assert eval_Pi(1.0, -1.0) == PI_CORNER == np.inf
    assert eval_Pi(-1.0, 1.0) == np.inf


@settings(max_examples=200, deadline=None)
@given(impact, impact)
def test_pi_is_s_marginal_of_q(h, hp):
    if abs(abs(h) - 1) < 1e-6 and abs(abs(hp) - 1) < 1e-6:
        return
    pi = eval_Pi(h, hp)
    s2 = 1.0 / (1.0 + min(abs(h), abs(hp)) * (-1 if h * hp < 0 else 1))
    val, _ = quad(lambda s: eval_Q(s, h, hp), 0, min(s2, 1e6) * 1.001 + 1e-9, points=[1 / (1 + max(abs(h), abs(hp)))],
                  limit=200)
    assert val == pytest.approx(pi, rel=1e-6, abs=1e-9)


def test_pi_log_bound():
    eps = 0.1
    h = np.linspace(-0.999, 0.999, 301)
    hh, pp = np.meshgrid(h, h, indexing="ij")
    bound = C * np.maximum(1 / eps, (np.log(2) - np.log(1 - np.abs(hh))) / (2 * (1 - eps)))
    assert np.all(eval_Pi(hh, pp) <= bound)


def test_e_at_zero_is_one():
    h = np.linspace(-0.99, 0.99, 21)
    assert np.allclose(eval_E(0.0, h), 1.0, atol=1e-12)


def test_e_support_edge_at_center():
    assert eval_E(2.0, 0.0) == 0.0
    assert eval_E(1.0, 0.0) == 0.0
    assert eval_E(0.999, 0.0) > 0.0


def test_e_small_time_linear():
    assert eval_E(0.25, 0.3) == pytest.approx(1 - 3 / np.pi**2, abs=1e-12)
    assert eval_E(0.25, 0.3) == pytest.approx(0.696036, abs=5e-7)


def test_e_against_brute_force_double_integral():
    # independent route: adaptive quadrature of the defining tail integral
    s, h = 0.7, 0.4

    def inner(hp):
        top = 1.0 / (1.0 + min(abs(h), abs(hp)) * (-1 if h * hp < 0 else 1))
        lo, hi = s, max(s, top)
        kink = 1 / (1 + max(abs(h), abs(hp)))
        pts = [kink] if lo < kink < hi else None
        return quad(lambda x: eval_Q(x, h, hp), lo, hi, points=pts, limit=200)[0] if hi > lo else 0.0

    val = sum(quad(inner, a, b, limit=200)[0] for a, b in [(-1, -0.4), (-0.4, 1 / s - 1), (1 / s - 1, 0.4), (0.4, 1)])
    assert eval_E(s, h) == pytest.approx(val, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(-0.999, 0.999))
def test_e_support_and_evenness(s, h):
    e = eval_E(s, h)
    assert e == eval_E(s, -h)
    assert 0.0 <= e <= 1.0 + 1e-12
    if s * (1 - abs(h)) >= 1:
        assert e == 0.0
    else:
        assert e > 0.0


def test_e_decay_constant_bounded():
    assert measure_e_constant() < 2.0


def test_e_flight_mass_matches_moment():
    # int E(s, h) ds = int int s Q(s, h | h') ds dh', an independent closed form per h'
    from lorentz_kinetics.kernels import PairGeometry

    for h in (0.0, 0.5, 0.95):
        val = quad(lambda hp: float(PairGeometry(h, hp).primitives(1e12)[1]), -1, 1, points=[-h, h], limit=200)[0]
        assert equilibrium_flight_mass(h) == pytest.approx(val, rel=1e-8)


def test_hpp_window():
    hp = 0.3
    a = np.arcsin(hp)
    assert eval_hpp(2 * a - 2 * np.pi, hp) == pytest.approx(0.0, abs=1e-15)
    assert eval_hpp(2 * a - 3 * np.pi, hp) == pytest.approx(-1.0, abs=1e-15)
    assert eval_hpp(2 * a, hp) == 0.0
    assert hpp_derivative(2 * a - 2 * np.pi, hp) == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), impact)
def test_hpp_derivative_matches_finite_difference(theta, hp):
    red = reduce_to_window(theta, hp)
    lo = 2 * np.arcsin(hp) - 3 * np.pi
    if min(red - lo, lo + 2 * np.pi - red) < 1e-3:
        return
    d = 1e-6
    fd = (eval_hpp(red + d, hp) - eval_hpp(red - d, hp)) / (2 * d)
    assert hpp_derivative(red, hp) == pytest.approx(fd, abs=1e-6)


def test_reduce_to_window_examples():
    assert reduce_to_window(0.0, 0.0) == pytest.approx(-2 * np.pi)
    assert reduce_to_window(-2 * np.pi, 0.0) == pytest.approx(-2 * np.pi)
    assert reduce_to_window(5 * np.pi, 1.0) == pytest.approx(-np.pi)


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), impact)
def test_reduce_to_window_unique_representative(delta, hp):
    lo = 2 * np.arcsin(hp) - 3 * np.pi
    r = reduce_to_window(delta, hp)
    assert lo - 1e-12 <= r < lo + 2 * np.pi
    shifts = [(r - delta) / (2 * np.pi) - l for l in range(-10, 11)]
    assert min(abs(s) for s in shifts) < 1e-9


def test_scatter_angle():
    assert scatter_angle(0.0) == pytest.approx(np.pi)
    assert scatter_angle(1.0) == pytest.approx(0.0)
    assert np.mod(scatter_angle(-1.0), 2 * np.pi) == pytest.approx(0.0, abs=1e-15) or scatter_angle(-1.0) == pytest.approx(2 * np.pi)


def test_velocity():
    assert np.allclose(velocity(0.0), [1, 0])
    assert np.allclose(velocity(np.pi / 2), [0, 1], atol=1e-16)
    th = np.random.default_rng(0).uniform(-10, 10, 100)
    assert np.allclose(np.linalg.norm(velocity(th), axis=-1), 1.0)


def test_f_vanishes_at_time_zero():
    rng = np.random.default_rng(2)
    th, h, hp = rng.uniform(-7, 7, 50), rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50)
    assert np.all(eval_f(th, 0.0, h, hp) == 0.0)


def test_f_small_time_value():
    hp = 0.2
    center = 2 * np.arcsin(hp) - 2 * np.pi  # h'' = 0
    expected = quad(lambda u: eval_Q(0.25 - u, 0.4, 0.0) * eval_Q(u, 0.0, hp), 0, 0.25)[0] / 2
    assert eval_f(center, 0.25, 0.4, hp) == pytest.approx(expected, rel=1e-12)
    assert eval_f(center, 0.25, 0.4, hp) == pytest.approx(0.5 * 36 / np.pi**4 * 0.25, rel=1e-12)


def test_f_theta_marginal_is_q2_at_small_time():
    t = np.array([0.1, 0.3, 0.5])
    assert np.allclose(theta_marginal_of_f(t, 0.3, -0.2), 72 * t / np.pi**4, rtol=1e-10)


def test_f_normalization_both_ways():
    # int f dtheta dt dh' at fixed h, and by the swap symmetry of Q the dh integral too
    for h in (-0.6, 0.0, 0.35):
        assert pi_chain_mass(h) == pytest.approx(1.0, abs=1e-5)


def test_f_decay_constant_finite():
    c_f = measure_f_constant(n_t=40, n_h=9)
    assert 0.0 < c_f < 1.0


def test_pair_convolution_routes_agree():
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 4, 2000)
    h, hpp, hp = rng.uniform(-1, 1, (3, 2000))
    gauss = pair_convolution(t, h, hpp, hp, nodes=24)
    exact = pair_convolution_exact(t, h, hpp, hp)
    assert np.max(np.abs(gauss - exact)) < 1e-9


def test_oscillatory_convolution_routes_agree():
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 4, 500)
    h, hpp, hp = rng.uniform(-1, 1, (3, 500))
    omega = rng.uniform(-20, 20, 500)
    gauss = pair_convolution(t, h, hpp, hp, omega, nodes=24)
    closed = pair_convolution_oscillatory(t, h, hpp, hp, omega)
    assert np.max(np.abs(gauss - closed)) < 1e-9
    assert np.allclose(pair_convolution_oscillatory(t, h, hpp, hp, 0.0), pair_convolution_exact(t, h, hpp, hp))


def test_gk_vanishes_at_time_zero():
    assert eval_gk((1, 0), 0.3, 0.0, 0.2, 1.0, -0.4) == 0.0


def test_gk_rejects_zero_wave_vector():
    with pytest.raises(ValueError):
        eval_gk((0, 0), 0.3, 1.0, 0.2, 1.0, -0.4)


def test_gk_modulus_below_f():
    rng = np.random.default_rng(5)
    n = 10**4
    th, thp = rng.uniform(0, 2 * np.pi, (2, n))
    t = rng.uniform(0, 5, n)
    h, hp = rng.uniform(-1, 1, (2, n))
    k = np.array([3.0, -2.0])
    g = eval_gk(k, th, t, h, thp, hp)
    f = eval_f(th - thp, t, h, hp)
    assert np.all(np.abs(g) <= f * (1 + 1e-12) + 1e-15)


def test_gk_continuous_at_zero_wave_vector():
    rng = np.random.default_rng(6)
    th, thp = rng.uniform(0, 2 * np.pi, (2, 100))
    t = rng.uniform(0, 3, 100)
    h, hp = rng.uniform(-1, 1, (2, 100))
    g = eval_gk((1e-6, 0.0), th, t, h, thp, hp)
    assert np.allclose(g, eval_f(th - thp, t, h, hp), atol=1e-6)
