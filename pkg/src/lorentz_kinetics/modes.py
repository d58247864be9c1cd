"""Fourier modes in x of the kinetic equation on the torus and on the plane.

A mode with wave vector k evolves like the spatially averaged problem, with
the extra phase exp(2 pi i t k.v(theta)) of free flight.  The phase is
applied in physical theta-space; the collision shift still uses
trigonometric interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionOperator, RenewalMarcher
from .evolution import DecayReport, InitialData, fit_power_law
from .grids import PhaseField, PhaseGrid, integrate, lp_norm
from .kernels import TWO_PI, gauss_legendre, velocity

MAX_PHASE_STEP = np.pi / 4


def mode_frequency(k, theta) -> np.ndarray:
    """Angular frequency 2 pi k.v(theta) of the free-flight phase."""
    k = np.asarray(k, float)
    return TWO_PI * (velocity(theta) @ k)


def mode_time_step(k, dt: float) -> float:
    """Largest step <= dt with phase turn |2 pi k.v| dt <= pi/4 per step."""
    speed = TWO_PI * float(np.hypot(*np.asarray(k, float)))
    if speed == 0.0:
        return dt
    limit = MAX_PHASE_STEP / speed
    return dt if dt <= limit else dt / np.ceil(dt / limit)


@dataclass
class ModeState:
    k: np.ndarray
    datum: InitialData
    times: np.ndarray
    trace: np.ndarray  # (n_t, n_theta, n_h), complex
    marcher: RenewalMarcher = field(repr=False)
    snapshots: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return self.marcher.op.dt

    def index_of(self, t: float) -> int:
        n = int(round(t / self.dt))
        if n < 0 or n >= len(self.times) or abs(self.times[n] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a node of the mode time grid")
        return n


def solve_mode_trace(k, mu0k: InitialData, T: float, dt: float, op: CollisionOperator | None = None,
                     refine: bool = True) -> ModeState:
    """March mu_t^k(theta, 0, h) with the oscillatory collision operator.

    With ``refine`` the step is reduced so the phase turns by at most pi/4.
    k = (0, 0) reproduces the spatially averaged trace exactly.
    """
    k = np.asarray(k, float)
    if k.shape != (2,):
        raise ValueError("wave vector must have two components")
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if refine:
        dt = mode_time_step(k, dt)
    n_steps = int(round(T / dt))
    grid = mu0k.grid
    if op is None or op.dt != dt or op.n_steps < n_steps or op.h_axis is not grid.h:
        op = CollisionOperator(grid.h, dt, n_steps)
    times = dt * np.arange(n_steps + 1)
    source = mu0k.trace_source(times)
    if np.any(k):
        omega = mode_frequency(k, grid.theta.nodes)
        marcher = RenewalMarcher(op, omega)
        phase = np.exp(1j * omega[None, :, None] * times[:, None, None])
        source = source * phase
    else:
        marcher = RenewalMarcher(op)
    values = marcher.run(lambda n: source[n], n_steps)
    return ModeState(k, mu0k, times, values, marcher)


def mode_field(state: ModeState, t: float) -> PhaseField:
    """mu_t^k(theta, s, h): phased free flight of the datum plus collisions."""
    if t in state.snapshots:
        return state.snapshots[t]
    n = state.index_of(t)
    grid = state.datum.grid
    free = np.asarray(state.datum.values_at(grid.s.nodes, t))
    if np.any(state.k):
        omega = mode_frequency(state.k, grid.theta.nodes)
        free = free * np.exp(1j * omega * t)[:, None, None]
    coll = state.marcher.reconstruct(state.trace, n, grid.s.nodes)
    out = PhaseField(grid, free + coll)
    state.snapshots[t] = out
    return out


def mode_norm_series(state: ModeState, times, p=1, window=None, subtract=None) -> DecayReport:
    """Norms of the reconstructed mode at the given times, with a log-log fit.

    ``subtract`` is an optional field removed before taking norms (the
    equilibrium at k = 0).
    """
    times = np.asarray(times, float)
    rows = []
    for t in times:
        fld = mode_field(state, float(t))
        if subtract is not None:
            fld = fld - subtract
        rows.append([lp_norm(fld, q) for q in (1, 2, np.inf)])
    rows = np.array(rows)
    col = {1: 0, 2: 1, np.inf: 2, "inf": 2}[p]
    if window is None:
        slope = const = resid = np.nan
        window = (np.nan, np.nan)
    else:
        slope, const, resid = fit_power_law(times, rows[:, col], window)
    return DecayReport(times, rows[:, 0], rows[:, 1], rows[:, 2], slope, const, resid, tuple(window))


@dataclass
class ContractionCertificate:
    k: np.ndarray
    sup_l1: float
    margin: float
    probes_theta: np.ndarray
    probes_h: np.ndarray
    l1_by_probe: np.ndarray  # (n_theta, n_h)
    horizon: float


def _horizon_axis(horizon: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, horizon, int(round(horizon / step)) + 1)
    w = np.full(t.size, t[1] - t[0])
    w[[0, -1]] *= 0.5
    return t, w


def gk_contraction(k, probe_grid: PhaseGrid | None = None, n_hp: int = 32, horizon: float = 6.0,
                   step: float = 0.05) -> ContractionCertificate:
    """sup over probes (theta, h) of ||g^k(theta, ., h | ., .)||_1.

    In psi = half the h''-window angle, theta' = theta - 2 psi - 2 arcsin h'
    and the phase frequency 2 pi k.(v(theta') rotated) - 2 pi k.v(theta) reduces
    to -2 pi k.(v(theta - 2 psi) + v(theta)), independent of h'.  Then
    ||g^k||_1 = ||f||_1 - int (conv_0 - |conv_w|) with a non-negative
    integrand, so truncating that integral at ``horizon`` bounds the margin
    from below.
    """
    from .iterated import pi_chain_mass
    from .kernels import pair_convolution_exact, pair_convolution_oscillatory
    from .varphi import psi_rule

    k = np.asarray(k, float)
    if k.shape != (2,):
        raise ValueError("wave vector must have two components")
    if not np.any(k):
        raise ValueError("g^k contraction is defined for k != (0, 0)")
    if probe_grid is None:
        from .grids import build_phase_grid

        probe_grid = build_phase_grid(8, 4, 2.0, 8)
    theta_probes = probe_grid.theta.nodes
    h_probes = probe_grid.h.nodes
    hp_x, hp_w = gauss_legendre(n_hp)
    t, tw = _horizon_axis(horizon, step)
    l1 = np.empty((theta_probes.size, h_probes.size))
    for b, h in enumerate(h_probes):
        mass = pi_chain_mass(h)
        psi, w = psi_rule(h, hp_x, nodes=12, split=1)  # (n_hp, q)
        hpp = np.sin(psi)
        weight = np.cos(psi) * w * hp_w[:, None]
        base = pair_convolution_exact(t[:, None, None], h, hpp[None], hp_x[None, :, None])
        for a, th in enumerate(theta_probes):
            omega = -TWO_PI * ((velocity(th - 2.0 * psi) + velocity(th)) @ k)
            osc = pair_convolution_oscillatory(t[:, None, None], h, hpp[None], hp_x[None, :, None], omega[None])
            gap = np.einsum("tjq,jq,t->", base - np.abs(osc), weight, tw)
            l1[a, b] = mass - gap
    sup = float(l1.max())
    return ContractionCertificate(k, sup, 1.0 - sup, theta_probes, h_probes, l1, horizon)


@dataclass
class TorusField:
    x: np.ndarray  # (n_x, 2)
    values: np.ndarray  # (n_x, n_theta, n_s, n_h)
    imag_residue: float


def _check_conjugate_closed(ks: list[np.ndarray]) -> None:
    keys = {tuple(np.round(k, 12)) for k in ks}
    for k in keys:
        if tuple(np.round(-np.asarray(k), 12) + 0.0) not in {tuple(np.asarray(q) + 0.0) for q in keys}:
            raise ValueError(f"mode set is not closed under k -> -k (missing {tuple(-np.asarray(k))})")


def assemble_torus(modes, t: float, x) -> TorusField:
    """Truncated synthesis mu_t(x, .) = sum_k mu_t^k exp(-2 pi i k.x) at the sample points x."""
    modes = list(modes)
    if not modes:
        raise ValueError("need at least one mode")
    _check_conjugate_closed([m.k for m in modes])
    x = np.atleast_2d(np.asarray(x, float))
    first = mode_field(modes[0], t)
    total = np.zeros((x.shape[0],) + first.values.shape, complex)
    for m in modes:
        fld = mode_field(m, t)
        phase = np.exp(-1j * TWO_PI * (x @ m.k))
        total += phase[:, None, None, None] * fld.values
    residue = float(np.max(np.abs(total.imag), initial=0.0))
    return TorusField(x, total.real, residue)


def torus_l2_distance(modes, t: float, mass0: float, n_x: int | None = None) -> tuple[float, float]:
    """||mu_t - mass0 E/(2 pi)||_2 over the torus and phase space, two ways.

    Returns (per-mode root sum of squares, direct synthesis on a uniform
    n_x^2 point grid).  The grid default resolves twice the largest |k_i|.
    """
    from .grids import equilibrium_field

    modes = list(modes)
    grid = modes[0].datum.grid
    eq = equilibrium_field(grid, mass0).values
    w = grid.weights()
    squares = 0.0
    for m in modes:
        vals = mode_field(m, t).values
        if not np.any(m.k):
            vals = vals - eq
        squares += float(np.tensordot(np.abs(vals) ** 2, w, axes=3))
    if n_x is None:
        n_x = 2 * int(max(np.max(np.abs(m.k)) for m in modes)) + 2
    xs = np.arange(n_x) / n_x
    pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    fld = assemble_torus(modes, t, pts)
    diff = fld.values - eq[None]
    direct = float(np.sum(np.tensordot(diff**2, w, axes=3)) / pts.shape[0])
    return float(np.sqrt(squares)), float(np.sqrt(direct))


@dataclass
class KQuadrature:
    """Nodes and weights for integrals over wave vectors in R^2."""

    points: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,)
    excised_radius: float = 0.0


def gaussian_test_hat(sigma: float):
    """Fourier transform of exp(-|x|^2 / (2 sigma^2)) in the convention exp(-2 pi i k.x)."""

    def hat(points):
        r2 = np.sum(np.asarray(points, float) ** 2, axis=-1)
        return TWO_PI * sigma**2 * np.exp(-2.0 * np.pi**2 * sigma**2 * r2)

    return hat


def gauss_hermite_k_rule(sigma: float, n: int = 4, excised_radius: float = 1e-2) -> KQuadrature:
    """Product Gauss-Hermite rule matched to the Gaussian test function of width sigma.

    Nodes inside the excised disk are dropped; their share is bounded separately.
    """
    y, w = np.polynomial.hermite.hermgauss(n)
    scale = np.pi * sigma * np.sqrt(2.0)
    kx, ky = np.meshgrid(y / scale, y / scale, indexing="ij")
    wy = np.outer(w * np.exp(y**2), w * np.exp(y**2)) / scale**2
    pts = np.column_stack([kx.ravel(), ky.ravel()])
    wts = wy.ravel()
    keep = np.hypot(pts[:, 0], pts[:, 1]) > excised_radius
    return KQuadrature(pts[keep], wts[keep], excised_radius)


@dataclass
class PairingReport:
    times: np.ndarray
    values: np.ndarray  # upper estimate at each time
    disk_bound: float
    per_node: np.ndarray  # (n_nodes, n_times) weighted mode norms


def schwartz_pairing(test_fn_hat, k_samples: KQuadrature, mu0: InitialData, times, dt: float = 0.1,
                     op_cache: dict | None = None) -> PairingReport:
    """Upper estimate of ||int eta(x) mu_t(x, .) dx||_1 for the datum delta_0(x) mu0.

    With a point-mass spatial factor every mode starts from mu0, and the
    pairing is bounded by int |eta_hat(k)| ||mu_t^k||_1 dk.  Real data give
    ||mu_t^{-k}|| = ||mu_t^k||, so each +-k pair is solved once.  The disk
    of radius r0 around k = 0 contributes at most sup|eta_hat| pi r0^2 ||mu0||_1
    since mode norms never exceed the initial one.
    """
    if k_samples.points.size == 0:
        raise ValueError("empty wave-vector quadrature")
    times = np.atleast_1d(np.asarray(times, float))
    pts = k_samples.points
    hat = np.abs(np.asarray(test_fn_hat(pts)))
    done: dict[tuple, np.ndarray] = {}
    per_node = np.zeros((pts.shape[0], times.size))
    for i, k in enumerate(pts):
        key = tuple(np.round(k, 12))
        mirror = tuple(np.round(-k, 12) + 0.0)
        if mirror in done:
            norms = done[mirror]
        else:
            state = solve_mode_trace(k, mu0, float(times.max()), dt)
            norms = np.array([lp_norm(mode_field(state, _node_time(state, t)), 1) for t in times])
            done[key] = norms
        per_node[i] = k_samples.weights[i] * hat[i] * norms
    mass = lp_norm(mu0.field, 1)
    peak = float(np.abs(np.asarray(test_fn_hat(np.zeros((1, 2)))))[0])
    disk = peak * np.pi * k_samples.excised_radius**2 * mass
    return PairingReport(times, per_node.sum(axis=0) + disk, disk, per_node)


def _node_time(state: ModeState, t: float) -> float:
    """Nearest node of the (possibly refined) mode time grid."""
    return float(state.times[int(round(t / state.dt))])
