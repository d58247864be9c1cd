"""Closed-form collision kernels of the Boltzmann-Grad periodic Lorentz gas in 2D.

All evaluators broadcast over numpy arrays and return plain floats for scalar
input.  Impact parameters live in [-1, 1], flight times are non-negative and
angles are radians taken modulo 2*pi.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import sici

KERNEL_SCALE = 6.0 / np.pi**2
TWO_PI = 2.0 * np.pi
DIAGONAL_CUTOFF = 2e-12
PI_CORNER = np.inf  # value of the transition kernel at (h, h') = (+-1, -+1)

_E_NODES = 20
_GRADING = 4.0 ** np.arange(6)
_CONV_NODES = 16


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _out(x):
    x = np.asarray(x)
    return x[()] if x.ndim == 0 else x


def reduce_pair(h, hp):
    """Map (h, h') onto the cone |b| <= a using the kernel symmetries.

    The reduced pair depends only on the orbit of (h, h') under swapping and
    joint negation, so every symmetric image gets bit-identical values.
    """
    h, hp = np.broadcast_arrays(np.asarray(h, float), np.asarray(hp, float))
    keep = np.abs(h) >= np.abs(hp)
    a = np.where(keep, h, hp)
    b = np.where(keep, hp, h)
    flip = a < 0
    return np.where(flip, -a, a), np.where(flip, -b, b)


class PairGeometry:
    """Breakpoints of Q(., h|h') in the flight time for a reduced pair (a, b).

    On [0, s1] the kernel equals the constant 6/pi^2; on (s1, s2] it equals
    slope/s + offset; beyond s2 it vanishes.
    """

    def __init__(self, h, hp):
        a, b = reduce_pair(h, hp)
        self.a, self.b = a, b
        self.s1 = 1.0 / (1.0 + a)
        with np.errstate(divide="ignore"):
            self.s2 = 1.0 / (1.0 + b)
        gap = a - b
        self.diag = gap < DIAGONAL_CUTOFF
        safe = np.where(self.diag, 1.0, gap)
        self.slope = np.where(self.diag, 0.0, KERNEL_SCALE / safe)
        self.s2 = np.where(self.diag, self.s1, self.s2)

    def value(self, s):
        s = np.asarray(s, float)
        inner = KERNEL_SCALE * ((s >= 0) & (s <= self.s1))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            mid = self.slope * (1.0 / s - (1.0 + self.b))
        mid = np.where((s > self.s1) & (s <= self.s2), mid, 0.0)
        return inner + mid

    def tail(self, s):
        """Integral of Q over flight times in [s, infinity)."""
        s = np.asarray(s, float)
        x_lo = np.maximum(s, self.s1)
        y = (1.0 + self.b) * x_lo - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            mid = self.slope * (y - np.log1p(y))
        mid = np.where(x_lo < self.s2, mid, 0.0)
        mid = np.where(self.diag, 0.0, mid)
        flat = KERNEL_SCALE * np.clip(self.s1 - np.maximum(s, 0.0), 0.0, None)
        return flat + mid

    def primitives(self, tau):
        """Return (int_0^tau Q, int_0^tau s*Q) for tau >= 0."""
        tau = np.asarray(tau, float)
        t_in = np.clip(tau, 0.0, self.s1)
        f0 = KERNEL_SCALE * t_in
        f1 = 0.5 * KERNEL_SCALE * t_in**2
        t_mid = np.clip(tau, self.s1, self.s2)
        run = t_mid - self.s1
        b1 = 1.0 + self.b
        f0 = f0 + self.slope * (np.log1p(run / self.s1) - b1 * run)
        f1 = f1 + self.slope * run * (1.0 - 0.5 * b1 * (t_mid + self.s1))
        return f0, f1


def eval_Q(s, h, hp):
    """Transition kernel Q(s, h | h')."""
    return _out(PairGeometry(h, hp).value(s))


def eval_Pi(h, hp):
    """Transition probability of impact parameters, the s-marginal of Q."""
    a, b = reduce_pair(h, hp)
    gap = a - b
    corner = (a == 1.0) & (b == -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = np.log1p(gap / (1.0 + b)) / gap
    value = np.where(gap < DIAGONAL_CUTOFF, 1.0 / (1.0 + a), quotient)
    value = np.where(corner, PI_CORNER, KERNEL_SCALE * value)
    return _out(value)


def support_edge(h):
    """Largest flight time with E(s, h) > 0, namely 1/(1 - |h|)."""
    with np.errstate(divide="ignore"):
        return _out(1.0 / (1.0 - np.abs(np.asarray(h, float))))


def _e_breakpoints(s, ha):
    with np.errstate(divide="ignore", over="ignore"):
        u = np.clip(1.0 / np.maximum(s, 0.0) - 1.0, -1.0, 1.0)
    ones = np.ones_like(s)
    # the integrand varies on the scale 1-|h| next to h' = -|h|, so grade there
    graded = np.clip(-ha[..., None] + (1.0 - ha[..., None]) * _GRADING, -1.0, 1.0)
    pts = np.concatenate([np.stack([-ones, -ha, ha, -u, u, ones], axis=-1), graded], axis=-1)
    return np.sort(pts, axis=-1)


def eval_E(s, h, chunk: int = 20000):
    """Equilibrium density E(s, h), the double tail integral of Q.

    The s-integration is analytic; the h'-integration is Gauss-Legendre on the
    pieces between the kinks of the integrand, so the result is accurate to
    near machine precision and vanishes exactly outside s < 1/(1-|h|).
    """
    s, h = np.broadcast_arrays(np.asarray(s, float), np.asarray(h, float))
    shape = s.shape
    s_flat = s.ravel()
    ha_flat = np.abs(h).ravel()
    out = np.empty(s_flat.size)
    x, w = gauss_legendre(_E_NODES)
    for lo in range(0, s_flat.size, chunk):
        sc = s_flat[lo : lo + chunk]
        hc = ha_flat[lo : lo + chunk]
        pts = _e_breakpoints(sc, hc)
        left, right = pts[:, :-1, None], pts[:, 1:, None]
        half = 0.5 * (right - left)
        nodes = 0.5 * (right + left) + half * x
        geo = PairGeometry(hc[:, None, None], nodes)
        vals = geo.tail(sc[:, None, None])
        out[lo : lo + chunk] = np.sum(vals * half * w, axis=(1, 2))
    out = np.where(s_flat * (1.0 - ha_flat) >= 1.0, 0.0, out)
    return _out(out.reshape(shape))


def scatter_angle(hp):
    """Velocity rotation pi - 2 arcsin(h') applied at a collision."""
    return _out(np.pi - 2.0 * np.arcsin(np.asarray(hp, float)))


def velocity(theta):
    """Unit velocity (cos theta, sin theta), stacked on the last axis."""
    theta = np.asarray(theta, float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def window_start(hp):
    return 2.0 * np.arcsin(np.asarray(hp, float)) - 3.0 * np.pi


def reduce_to_window(delta_theta, hp):
    """Representative of delta_theta mod 2pi in [2 arcsin h' - 3pi, 2 arcsin h' - pi)."""
    lo = window_start(hp)
    r = np.mod(np.asarray(delta_theta, float) - lo, TWO_PI)
    r = np.where(r >= TWO_PI, r - TWO_PI, r)
    return _out(lo + r)


def _hpp_raw(theta, hp):
    theta, hp = np.broadcast_arrays(np.asarray(theta, float), np.asarray(hp, float))
    lo = window_start(hp)
    inside = (theta >= lo) & (theta < lo + TWO_PI)
    value = np.sin(0.5 * (theta + TWO_PI - 2.0 * np.arcsin(hp)))
    return np.where(inside, value, 0.0), inside


def eval_hpp(theta, hp):
    """Intermediate impact parameter h''(theta, h'); zero off its window."""
    return _out(_hpp_raw(theta, hp)[0])


def hpp_derivative(theta, hp):
    """d h''/d theta = sqrt(1 - h''^2)/2 on the window, zero elsewhere."""
    value, inside = _hpp_raw(theta, hp)
    return _out(np.where(inside, 0.5 * np.sqrt(np.clip(1.0 - value**2, 0.0, None)), 0.0))


def pair_convolution(t, h, hpp, hp, omega=0.0, nodes: int = _CONV_NODES):
    """int_0^t Q(t - u, h | h'') Q(u, h'' | h') exp(i omega u) du.

    The u-range is split at the breakpoints of both factors; each smooth piece
    is further cut so that the phase turns by at most pi/2 per sub-panel.
    Returns a real array when omega is identically zero.
    """
    t, h, hpp, hp, omega = np.broadcast_arrays(
        *(np.asarray(v, float) for v in (t, h, hpp, hp, omega))
    )
    first = PairGeometry(h, hpp)
    second = PairGeometry(hpp, hp)
    tt = np.maximum(t, 0.0)
    pts = np.stack(
        [
            np.zeros_like(tt),
            tt,
            np.clip(tt - first.s1, 0.0, tt),
            np.clip(tt - first.s2, 0.0, tt),
            np.clip(second.s1, 0.0, tt),
            np.clip(second.s2, 0.0, tt),
        ],
        axis=-1,
    )
    pts = np.sort(pts, axis=-1)
    oscillating = bool(np.any(omega != 0.0))
    n_sub = 1
    if oscillating:
        turn = np.max(np.abs(omega) * tt)
        n_sub = max(1, int(np.ceil(turn / (0.5 * np.pi))))
    x, w = gauss_legendre(nodes)
    frac = (np.arange(n_sub)[:, None] + 0.5 * (x + 1.0)) / n_sub  # (n_sub, nodes)
    left = pts[..., :-1, None, None]
    width = (pts[..., 1:] - pts[..., :-1])[..., None, None]
    u = left + width * frac
    ex = (...,) + (None,) * 3
    first = PairGeometry(h[ex], hpp[ex])
    second = PairGeometry(hpp[ex], hp[ex])
    integrand = first.value(t[ex] - u) * second.value(u)
    if oscillating:
        integrand = integrand * np.exp(1j * omega[ex] * u)
    weights = 0.5 * w / n_sub
    return _out(np.sum(integrand * weights * width, axis=(-3, -2, -1)))


def _pieces(geo: PairGeometry):
    """Q on its two flight-time pieces as p/s + q: [(lo, hi, p, q), ...]."""
    zero = np.zeros_like(geo.s1)
    flat = (zero, geo.s1, zero, np.full_like(geo.s1, KERNEL_SCALE))
    tail = (geo.s1, geo.s2, geo.slope, -geo.slope * (1.0 + geo.b))
    return flat, tail


def pair_convolution_exact(t, h, hpp, hp):
    """int_0^t Q(t - u, h | h'') Q(u, h'' | h') du in closed form.

    Each factor is p/s + q on at most two pieces, so every piece pair
    integrates to logarithms.  Used by the memory-kernel source, where f is
    needed on large tensor grids.
    """
    t, h, hpp, hp = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, h, hpp, hp)))
    tt = np.maximum(t, 0.0)
    safe_t = np.where(tt > 0, tt, 1.0)
    total = np.zeros(tt.shape)
    tiny = np.finfo(float).tiny

    def ln(x):
        return np.log(np.maximum(x, tiny))

    for lo1, hi1, p1, q1 in _pieces(PairGeometry(h, hpp)):
        for lo2, hi2, p2, q2 in _pieces(PairGeometry(hpp, hp)):
            u_lo = np.maximum(np.maximum(tt - hi1, lo2), 0.0)
            u_hi = np.minimum(np.minimum(tt - lo1, hi2), tt)
            live = u_hi > u_lo

            def prim(u):
                val = q1 * q2 * u
                val = val + np.where(p2 != 0, q1 * p2 * ln(u), 0.0)
                val = val - np.where(p1 != 0, p1 * q2 * ln(tt - u), 0.0)
                both = (p1 != 0) & (p2 != 0)
                return val + np.where(both, p1 * p2 / safe_t * (ln(u) - ln(tt - u)), 0.0)

            total = total + np.where(live, prim(u_hi) - prim(u_lo), 0.0)
    return _out(total)


def _log_moment(omega, a, b):
    """int_a^b exp(i omega u) / u du for 0 < a <= b, through Ci and Si."""
    absw = np.abs(omega)
    tiny = np.finfo(float).tiny
    a = np.maximum(a, tiny)
    b = np.maximum(b, a)
    # Ci differences lose digits for tiny arguments; use the series there
    small = absw * b < 1e-4
    wa = np.where(small, 1.0, absw * a)
    wb = np.where(small, 1.0, absw * b)
    si_a, ci_a = sici(wa)
    si_b, ci_b = sici(wb)
    osc = (ci_b - ci_a) + 1j * np.sign(omega) * (si_b - si_a)
    series = np.log(b / a) + 1j * omega * (b - a) - 0.25 * omega**2 * (b * b - a * a)
    return np.where(small, series, osc)


def _flat_moment(omega, a, b):
    """int_a^b exp(i omega u) du, stable as omega -> 0."""
    half = 0.5 * (b - a)
    return np.exp(1j * omega * (a + half)) * (b - a) * np.sinc(omega * half / np.pi)


def pair_convolution_oscillatory(t, h, hpp, hp, omega):
    """int_0^t Q(t - u, h | h'') Q(u, h'' | h') exp(i omega u) du in closed form.

    Same piece decomposition as pair_convolution_exact; the logarithms become
    cosine and sine integrals.  Cost does not grow with omega * t.
    """
    t, h, hpp, hp, omega = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, h, hpp, hp, omega)))
    tt = np.maximum(t, 0.0)
    safe_t = np.where(tt > 0, tt, 1.0)
    total = np.zeros(tt.shape, complex)
    for lo1, hi1, p1, q1 in _pieces(PairGeometry(h, hpp)):
        for lo2, hi2, p2, q2 in _pieces(PairGeometry(hpp, hp)):
            u_lo = np.maximum(np.maximum(tt - hi1, lo2), 0.0)
            u_hi = np.minimum(np.minimum(tt - lo1, hi2), tt)
            live = u_hi > u_lo
            if not np.any(live):
                continue
            val = q1 * q2 * _flat_moment(omega, u_lo, u_hi)
            c_u = p1 * p2 / safe_t + q1 * p2
            c_v = p1 * p2 / safe_t + p1 * q2
            has_u = live & (c_u != 0)
            has_v = live & (c_v != 0)
            if np.any(has_u):
                val = val + np.where(has_u, c_u * _log_moment(omega, np.where(has_u, u_lo, 1.0), np.where(has_u, u_hi, 1.0)), 0.0)
            if np.any(has_v):
                a = np.where(has_v, tt - u_hi, 1.0)
                b = np.where(has_v, tt - u_lo, 1.0)
                val = val + np.where(has_v, c_v * np.exp(1j * omega * tt) * _log_moment(-omega, a, b), 0.0)
            total = total + np.where(live, val, 0.0)
    return _out(total)


def eval_f(theta, t, h, hp):
    """Two-collision density f(theta, t, h | h') in the rotation angle theta."""
    red = reduce_to_window(theta, hp)
    hpp = eval_hpp(red, hp)
    jac = hpp_derivative(red, hp)
    return _out(jac * pair_convolution_exact(t, h, hpp, hp))


def eval_gk(k, theta, t, h, theta_p, hp):
    """Oscillatory two-collision amplitude g^k(theta, t, h | theta', h')."""
    k = np.asarray(k, float)
    if k.shape != (2,):
        raise ValueError("wave vector must have two components")
    if not np.any(k):
        raise ValueError("g^k is degenerate at k = (0, 0); use eval_f")
    theta = np.asarray(theta, float)
    red = reduce_to_window(theta - np.asarray(theta_p, float), hp)
    hpp = eval_hpp(red, hp)
    jac = hpp_derivative(red, hp)
    v_out = velocity(theta)
    v_mid = velocity(np.asarray(theta_p, float) - np.pi + 2.0 * np.arcsin(np.asarray(hp, float)))
    omega = TWO_PI * ((v_mid - v_out) @ k)
    outer = np.exp(1j * TWO_PI * np.asarray(t, float) * (v_out @ k))
    return _out(jac * outer * pair_convolution_oscillatory(t, h, hpp, hp, omega))
