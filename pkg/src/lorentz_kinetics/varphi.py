"""Memory kernels phi and phi^k, the contraction constant d(c), and the four-term representation.

f(theta, t, h | h') is a density in the rotation angle whose theta-profile
has kinks, so it is never sampled on the theta-grid.  Instead the source is
its exact Fourier projection onto the modes the grid resolves.  The
projection coefficients are integrals over the intermediate impact parameter
h'' = sin(psi), where f dtheta = conv(t; h, h'', h') cos(psi) dpsi and
theta = 2 psi + 2 arcsin h' (mod 2 pi).  With that source the discrete
solution is the projection of the exact memory kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionOperator, RenewalMarcher
from .evolution import InitialData
from .grids import AxisGrid, gauss_axis, periodic_axis
from .iterated import EnTable, build_En, kernel_time_axis, pi_chain_mass
from .kernels import (
    TWO_PI,
    eval_E,
    gauss_legendre,
    pair_convolution_exact,
    pair_convolution_oscillatory,
    velocity,
)

PSI_NODES = 24
PSI_SPLIT = 2


def psi_rule(h, hp, nodes: int = PSI_NODES, split: int = PSI_SPLIT):
    """Gauss rule in psi on [-pi/2, pi/2], panels cut where sin(psi) = +-h or +-h'.

    Those are the kinks of the pair convolution in h''.  Returns (psi,
    weights) with a trailing node axis; h and hp broadcast.
    """
    h, hp = np.broadcast_arrays(np.asarray(h, float), np.asarray(hp, float))
    x, w = gauss_legendre(nodes)
    half = 0.5 * np.pi
    cuts = np.arcsin(np.clip(np.stack([h, -h, hp, -hp], axis=-1), -1.0, 1.0))
    edges = np.sort(np.concatenate([np.full(h.shape + (1,), -half), cuts, np.full(h.shape + (1,), half)], axis=-1), -1)
    frac = (np.arange(split)[:, None] + 0.5 * (x + 1.0)) / split  # (split, nodes)
    left = edges[..., :-1, None, None]
    width = (edges[..., 1:] - edges[..., :-1])[..., None, None]
    psi = left + width * frac
    wts = np.broadcast_to(width * (0.5 * w / split), psi.shape)
    return psi.reshape(h.shape + (-1,)), wts.reshape(h.shape + (-1,))


def dirichlet_kernel(x, n_theta: int) -> np.ndarray:
    """sum_{|m| < n_theta / 2} exp(i m x): projection onto the resolved modes."""
    x = np.asarray(x, float)
    out = np.ones_like(x)
    for m in range(1, (n_theta + 1) // 2):
        out = out + 2.0 * np.cos(m * x)
    return out


def f_projection(theta_nodes, times, h_nodes, hp: float) -> np.ndarray:
    """Fourier projection of f(., t, h_i | h') on the theta-grid, shape (n_t, n_theta, n_h)."""
    theta_nodes = np.asarray(theta_nodes, float)
    times = np.atleast_1d(np.asarray(times, float))
    h_nodes = np.asarray(h_nodes, float)
    psi, w = psi_rule(h_nodes, hp)  # (n_h, q)
    hpp = np.sin(psi)
    weight = np.cos(psi) * w
    theta_q = 2.0 * psi + 2.0 * np.arcsin(hp)
    kernel = dirichlet_kernel(theta_nodes[:, None, None] - theta_q[None], len(theta_nodes)) / TWO_PI
    out = np.empty((times.size, theta_nodes.size, h_nodes.size))
    for lo in range(0, times.size, 64):
        t = times[lo : lo + 64, None, None]
        amp = pair_convolution_exact(t, h_nodes[None, :, None], hpp[None], hp) * weight[None]
        out[lo : lo + 64] = np.einsum("jiq,tiq->tji", kernel, amp, optimize=True)
    return out


def gk_projection(k, theta_nodes, times, h_nodes, theta_p: float, hp: float) -> np.ndarray:
    """Fourier projection in theta of g^k(., t, h_i | theta', h'), shape (n_t, n_theta, n_h)."""
    k = np.asarray(k, float)
    theta_nodes = np.asarray(theta_nodes, float)
    times = np.atleast_1d(np.asarray(times, float))
    h_nodes = np.asarray(h_nodes, float)
    psi, w = psi_rule(h_nodes, hp)
    hpp = np.sin(psi)
    weight = np.cos(psi) * w
    theta_q = theta_p + 2.0 * psi + 2.0 * np.arcsin(hp)
    drift = TWO_PI * (velocity(theta_q) @ k)
    mid = TWO_PI * float(velocity(theta_p - np.pi + 2.0 * np.arcsin(hp)) @ k)
    omega = mid - drift
    kernel = dirichlet_kernel(theta_nodes[:, None, None] - theta_q[None], len(theta_nodes)) / TWO_PI
    out = np.empty((times.size, theta_nodes.size, h_nodes.size), complex)
    for lo in range(0, times.size, 32):
        t = times[lo : lo + 32, None, None]
        conv = pair_convolution_oscillatory(t, h_nodes[None, :, None], hpp[None], hp, omega[None])
        amp = np.exp(1j * t * drift[None]) * conv * weight[None]
        out[lo : lo + 32] = np.einsum("jiq,tiq->tji", kernel, amp, optimize=True)
    return out


@dataclass
class VarphiTable:
    theta_axis: AxisGrid
    times: np.ndarray
    h_axis: AxisGrid
    hp: np.ndarray  # probe impact parameters h'
    values: np.ndarray  # (n_t, n_theta, n_h, n_hp)
    op: CollisionOperator = field(repr=False)

    @property
    def dt(self) -> float:
        return self.op.dt

    def gamma(self) -> np.ndarray:
        """gamma = phi + 1/(2 pi), the full at-least-two-collisions kernel."""
        return self.values + 1.0 / TWO_PI

    def sup_abs(self) -> np.ndarray:
        """max over (theta, h, h') of |phi| at every time node."""
        return np.max(np.abs(self.values), axis=(1, 2, 3))

    def weighted_sup(self, T: float | None = None, per_probe: bool = False):
        """sup over t <= T of (t + 1) |phi|."""
        sel = self.times <= (self.times[-1] if T is None else T) + 1e-12
        mags = np.max(np.abs(self.values[sel]), axis=(1, 2)) * (self.times[sel] + 1.0)[:, None]
        return mags.max(axis=0) if per_probe else float(mags.max())

    def decay_rows(self) -> np.ndarray:
        """Columns t, sup|phi|, (t + 1) sup|phi|."""
        sup = self.sup_abs()
        return np.column_stack([self.times, sup, (self.times + 1.0) * sup])


def _validate_march(T: float, dt: float) -> int:
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    return int(round(T / dt))


def solve_varphi(hp, T: float, dt: float, n_theta: int = 8, n_h: int = 32,
                 h_axis: AxisGrid | None = None, op: CollisionOperator | None = None) -> VarphiTable:
    """March phi = f - E/(2 pi) + Q-convolution of phi for each probe h'."""
    n_steps = _validate_march(T, dt)
    hp = np.atleast_1d(np.asarray(hp, float))
    if np.any(np.abs(hp) > 1):
        raise ValueError("probe impact parameters must lie in [-1, 1]")
    h_axis = gauss_axis(n_h) if h_axis is None else h_axis
    theta_axis = periodic_axis(n_theta)
    if op is None or op.dt != dt or op.n_steps < n_steps or op.h_axis is not h_axis:
        op = CollisionOperator(h_axis, dt, n_steps)
    times = dt * np.arange(n_steps + 1)
    equilibrium = eval_E(times[:, None], h_axis.nodes[None, :]) / TWO_PI
    source = np.empty((n_steps + 1, n_theta, len(h_axis), hp.size))
    for p, val in enumerate(hp):
        source[..., p] = f_projection(theta_axis.nodes, times, h_axis.nodes, val) - equilibrium[:, None, :]
    values = RenewalMarcher(op).run(lambda n: source[n], n_steps)
    return VarphiTable(theta_axis, times, h_axis, hp, values, op)


def step_two_identity(table: VarphiTable, t: float, en: list[EnTable]):
    """Both sides of the E^(2)-weighted identity for phi at time t, per probe h'.

    lhs = int dtheta int_0^t dt' int dh phi(theta, t', h | h') E^(2)(t - t', h)
    rhs = int_t^inf int E^(2) - E^(2)(t, h') - E^(3)(t, h')

    The probes must be nodes of the h-axis of the E^(n) tables.
    """
    if len(en) < 3:
        raise ValueError("need E^(1), E^(2) and E^(3)")
    e2, e3 = en[1], en[2]
    n = int(round(t / table.dt))
    times = table.times[: n + 1]
    mean = table.values[: n + 1].sum(axis=1) * (TWO_PI / len(table.theta_axis))  # (n+1, n_h, n_p)
    if e2.h_axis.nodes.shape != table.h_axis.nodes.shape or not np.allclose(e2.h_axis.nodes, table.h_axis.nodes):
        raise ValueError("E^(n) tables must share the h-axis of phi")
    weight = e2.at(times[n] - times)  # (n+1, n_h)
    tw = np.full(n + 1, table.dt)
    tw[[0, -1]] *= 0.5
    lhs = np.einsum("m,mi,mip,i->p", tw, weight, mean, table.h_axis.weights)
    s = e2.s_axis.nodes
    dens = e2.values @ e2.h_axis.weights
    head = np.interp(t, s, np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s) * (dens[1:] + dens[:-1]))]))
    tail = e2.mass() - head
    idx = [int(np.argmin(np.abs(e2.h_axis.nodes - p))) for p in table.hp]
    rhs = tail - e2.at(t)[idx] - e3.at(t)[idx]
    return lhs, rhs


@dataclass
class RepresentationTerms:
    first: np.ndarray  # mu0(theta, t, h)
    second: np.ndarray  # one collision between the datum and t
    mean: np.ndarray  # <mu0 up to t> / (2 pi)
    memory: np.ndarray  # phi convolved with mu0

    @property
    def total(self) -> np.ndarray:
        return self.first + self.second + self.mean + self.memory


def _trapezoid(n: int, dt: float) -> np.ndarray:
    tw = np.full(n + 1, dt)
    tw[[0, -1]] *= 0.5
    if n == 0:
        tw[:] = 0.0
    return tw


def reconstruct_trace_via_varphi(mu0: InitialData, table: VarphiTable, t: float) -> RepresentationTerms:
    """mu_t(theta, 0, h) from the four-term representation.

    The table must use the theta- and h-axes of the datum's grid with every
    h-node as a probe.  The second term uses the product-integration weights
    of the table's operator; the other time integrals are trapezoidal.
    """
    grid = mu0.grid
    n = int(round(t / table.dt))
    if n > len(table.times) - 1 or abs(n * table.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not covered by the memory-kernel table")
    if len(table.theta_axis) != len(grid.theta) or not np.allclose(table.h_axis.nodes, grid.h.nodes):
        raise ValueError("memory-kernel table and datum grid differ")
    if table.hp.shape != grid.h.nodes.shape or not np.allclose(table.hp, grid.h.nodes):
        raise ValueError("memory-kernel probes must be the h-nodes of the grid")
    times = table.times[: n + 1]
    src = mu0.trace_source(times)  # (n+1, n_theta, n_h)
    first = src[n]
    second = RenewalMarcher(table.op).history_term(src, n)
    tw = _trapezoid(n, table.dt)
    total = np.einsum("m,mjh,j,h->", tw, src, grid.theta.weights, grid.h.weights)
    mean = np.full_like(first, total / TWO_PI)
    # circular convolution in theta is exact for the projected kernel
    phi_hat = np.fft.fft(table.values[n::-1], axis=1)  # lag n - m for m = 0..n
    src_hat = np.fft.fft(src, axis=1)
    conv = np.einsum("m,mjip,mjp,p->ji", tw, phi_hat, src_hat, grid.h.weights)
    memory = np.fft.ifft(conv, axis=0).real * (TWO_PI / len(grid.theta))
    return RepresentationTerms(first, second, mean, memory)


@dataclass
class ContractionScan:
    c_values: np.ndarray
    d_values: np.ndarray  # sup over probes
    best_c: float
    probes: np.ndarray
    d_by_probe: np.ndarray  # (n_c, n_probes)
    f_mass: np.ndarray  # int f over (theta, t, h') per probe
    e2_mass: float
    horizon: float

    def as_rows(self) -> np.ndarray:
        return np.column_stack([self.c_values, self.d_values])


def scan_contraction(c_grid, n_probes: int = 16, n_hp: int = 64, horizon: float = 6.0,
                     en: list[EnTable] | None = None) -> ContractionScan:
    """d(c) = sup_h || f(., ., h | .) - c E^(2) / (2 pi) ||_1 on a probe set of h.

    Uses |a - b| = a + b - 2 min(a, b): the masses of f and E^(2) are known
    accurately, and the overlap integral is truncated at ``horizon``, which
    can only overestimate d.  In psi the overlap reads
    int dtheta min(f, g) = int dpsi min(conv cos psi, 2 g).
    """
    c_grid = np.atleast_1d(np.asarray(c_grid, float))
    if en is None:
        h_axis = gauss_axis(n_hp)
        en = build_En(2, kernel_time_axis(h_axis, 2), h_axis)
    e2 = en[1]
    hp = e2.h_axis.nodes
    hp_w = e2.h_axis.weights
    s = e2.s_axis.nodes
    keep = s <= horizon + 1e-12
    t = s[keep]
    tw = np.zeros(t.size)
    gaps = np.diff(t)
    tw[:-1] += 0.5 * gaps
    tw[1:] += 0.5 * gaps
    e2_vals = e2.values[keep]  # (n_t, n_hp)
    e2_mass = e2.mass()
    probes = gauss_axis(n_probes).nodes
    d = np.empty((c_grid.size, probes.size))
    f_mass = np.empty(probes.size)
    for p, h in enumerate(probes):
        f_mass[p] = pi_chain_mass(h)
        psi, w = psi_rule(h, hp)  # (n_hp, q)
        conv = pair_convolution_exact(t[:, None, None], h, np.sin(psi)[None], hp[None, :, None])
        dens = conv * np.cos(psi)[None]  # (n_t, n_hp, q)
        for c_i, c in enumerate(c_grid):
            cap = 2.0 * c / TWO_PI * e2_vals[:, :, None]
            overlap = np.einsum("tjq,jq,t,j->", np.minimum(dens, cap), w, tw, hp_w)
            d[c_i, p] = f_mass[p] + c * e2_mass - 2.0 * overlap
    d_sup = d.max(axis=1)
    best = float(c_grid[int(np.argmin(d_sup))])
    return ContractionScan(c_grid, d_sup, best, probes, d, f_mass, e2_mass, horizon)


@dataclass
class VarphiKTable:
    k: np.ndarray
    theta_axis: AxisGrid
    times: np.ndarray
    h_axis: AxisGrid
    theta_p: np.ndarray
    hp: np.ndarray
    values: np.ndarray  # (n_t, n_theta, n_h, n_theta_p, n_hp), complex
    marcher: RenewalMarcher = field(repr=False)

    @property
    def dt(self) -> float:
        return self.marcher.op.dt

    def weighted_sup(self) -> float:
        mags = np.max(np.abs(self.values), axis=(1, 2, 3, 4))
        return float(np.max((self.times + 1.0) * mags))


def solve_varphi_k(k, theta_p, hp, T: float, dt: float, n_theta: int = 16, n_h: int = 16,
                   h_axis: AxisGrid | None = None, refine: bool = True) -> VarphiKTable:
    """March phi^k = g^k + oscillatory Q-convolution of phi^k for probe pairs (theta', h')."""
    from .modes import mode_frequency, mode_time_step

    k = np.asarray(k, float)
    if k.shape != (2,):
        raise ValueError("wave vector must have two components")
    if not np.any(k):
        raise ValueError("phi^k is defined for k != (0, 0); use solve_varphi")
    if refine:
        dt = mode_time_step(k, dt)
    n_steps = _validate_march(T, dt)
    theta_p = np.atleast_1d(np.asarray(theta_p, float))
    hp = np.atleast_1d(np.asarray(hp, float))
    h_axis = gauss_axis(n_h) if h_axis is None else h_axis
    theta_axis = periodic_axis(n_theta)
    op = CollisionOperator(h_axis, dt, n_steps)
    times = dt * np.arange(n_steps + 1)
    source = np.empty((n_steps + 1, n_theta, len(h_axis), theta_p.size, hp.size), complex)
    for a, th in enumerate(theta_p):
        for b, val in enumerate(hp):
            source[..., a, b] = gk_projection(k, theta_axis.nodes, times, h_axis.nodes, th, val)
    marcher = RenewalMarcher(op, mode_frequency(k, theta_axis.nodes))
    values = marcher.run(lambda n: source[n], n_steps)
    return VarphiKTable(k, theta_axis, times, h_axis, theta_p, hp, values, marcher)


def reconstruct_mode_trace_via_varphi_k(mu0k: InitialData, table: VarphiKTable, t: float) -> np.ndarray:
    """mu_t^k(theta, 0, h) from the three-term representation with phi^k.

    The table must have every theta-node as theta' and every h-node as h'.
    """
    from .modes import mode_frequency

    grid = mu0k.grid
    n = int(round(t / table.dt))
    if n > len(table.times) - 1 or abs(n * table.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not covered by the memory-kernel table")
    if table.theta_p.size != len(grid.theta) or table.hp.size != len(grid.h):
        raise ValueError("memory-kernel probes must be the theta- and h-nodes of the grid")
    times = table.times[: n + 1]
    omega = mode_frequency(table.k, grid.theta.nodes)
    src = mu0k.trace_source(times) * np.exp(1j * omega[None, :, None] * times[:, None, None])
    first = src[n]
    second = table.marcher.history_term(src, n)
    tw = _trapezoid(n, table.dt)
    third = np.einsum("m,mjiab,mab,a,b->ji", tw, table.values[n::-1], src, grid.theta.weights, grid.h.weights)
    return first + second + third
