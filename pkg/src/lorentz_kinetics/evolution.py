"""Spatially averaged kinetic equation: collision trace, reconstruction, decay fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .collision import CollisionOperator, RenewalMarcher
from .grids import PhaseField, PhaseGrid, integrate, lp_norm
from .kernels import TWO_PI, eval_E

Profile = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class InitialData:
    """Initial density in closure form, so it can be evaluated at shifted times s + t."""

    grid: PhaseGrid
    evaluate: Profile
    label: str = "custom"

    def values_at(self, s_nodes, t: float = 0.0) -> np.ndarray:
        th = self.grid.theta.nodes[:, None, None]
        s = np.asarray(s_nodes, float)[None, :, None] + t
        h = self.grid.h.nodes[None, None, :]
        return np.broadcast_to(self.evaluate(th, s, h), (len(th), s.shape[1], h.shape[2]))

    def trace_source(self, times) -> np.ndarray:
        """mu0(theta, t_n, h) for all times, shape (n_t, n_theta, n_h)."""
        vals = self.values_at(times)
        return np.ascontiguousarray(np.moveaxis(vals, 1, 0))

    @property
    def field(self) -> PhaseField:
        return PhaseField(self.grid, np.array(self.values_at(self.grid.s.nodes)))

    @property
    def total_mass(self) -> float:
        return float(np.real(integrate(self.field)))


class _EquilibriumProfile:
    """E(s, h) cached on the h-nodes of a grid, evaluated lazily in s."""

    def __init__(self):
        self._cache: dict[tuple, np.ndarray] = {}

    def __call__(self, s, h):
        s, h = np.broadcast_arrays(np.asarray(s, float), np.asarray(h, float))
        key = (s.tobytes(), h.tobytes(), s.shape)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = eval_E(s, h)
        return self._cache[key]


_E_PROFILE = _EquilibriumProfile()


def separable_datum(grid: PhaseGrid, theta_profile: Callable, label: str = "separable") -> InitialData:
    """mu0(theta, s, h) = mu_in(theta) E(s, h)."""

    def evaluate(th, s, h):
        return theta_profile(th) * _E_PROFILE(s, h)

    return InitialData(grid, evaluate, label)


def equilibrium_datum(grid: PhaseGrid, mass: float = 1.0) -> InitialData:
    return separable_datum(grid, lambda th: np.full_like(th, mass / TWO_PI), "equilibrium")


def cosine_datum(grid: PhaseGrid) -> InitialData:
    return separable_datum(grid, lambda th: (1.0 + np.cos(th)) / TWO_PI, "cosine")


def random_datum(grid: PhaseGrid, rng: np.random.Generator, n_modes: int = 3) -> InitialData:
    """Positive smooth datum that is not a multiple of E in (s, h).

    mu0 = a(theta) * b(h) * lam * exp(-lam * s), with a a positive random
    trigonometric polynomial and b a positive random quadratic.
    """
    amp = rng.uniform(-0.3, 0.3, size=(n_modes, 2))
    lam = rng.uniform(0.5, 2.0)
    tilt = rng.uniform(-0.5, 0.5, size=2)

    def evaluate(th, s, h):
        a = 1.0 + sum(c * np.cos((m + 1) * th) + d * np.sin((m + 1) * th) for m, (c, d) in enumerate(amp))
        b = 1.0 + tilt[0] * h + tilt[1] * h**2
        return a * b * lam * np.exp(-lam * s) * (s >= 0) / (2 * TWO_PI)

    return InitialData(grid, evaluate, "random")


def tabulated_datum(grid: PhaseGrid, values: np.ndarray, label: str = "tabulated") -> InitialData:
    """Datum given by its values on the grid; linear in s between nodes and zero past s_max."""
    values = np.asarray(values, float)
    if values.shape != grid.shape:
        raise ValueError(f"datum shape {values.shape} != grid shape {grid.shape}")
    nodes = grid.s.nodes
    flat = np.moveaxis(values, 1, -1).reshape(-1, nodes.size)  # (theta*h, s)

    def evaluate(th, s, h):
        s_row = np.asarray(s, float).reshape(-1)
        out = np.array([np.interp(s_row, nodes, row, right=0.0) for row in flat])
        out = out.reshape(len(grid.theta), len(grid.h), s_row.size)
        return np.moveaxis(out, -1, 1)

    return InitialData(grid, evaluate, label)


@dataclass
class CollisionTrace:
    times: np.ndarray
    values: np.ndarray  # (n_t, n_theta, n_h)
    marcher: RenewalMarcher = field(repr=False)
    datum: InitialData = field(repr=False)

    def index_of(self, t: float) -> int:
        n = int(round(t / self.marcher.op.dt))
        if n < 0 or n >= len(self.times) or abs(self.times[n] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a node of the trace time grid")
        return n


def solve_trace(mu0: InitialData, T: float, dt: float, op: CollisionOperator | None = None) -> CollisionTrace:
    """March rho(theta, t, h) = mu0(theta, t, h) + int int Q rho(theta + pi - 2 arcsin h', t', h')."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n_steps = int(round(T / dt))
    if op is None or op.dt != dt or op.n_steps < n_steps or op.h_axis is not mu0.grid.h:
        op = CollisionOperator(mu0.grid.h, dt, n_steps)
    times = dt * np.arange(n_steps + 1)
    source = mu0.trace_source(times)
    marcher = RenewalMarcher(op)
    values = marcher.run(lambda n: source[n], n_steps)
    return CollisionTrace(times, values, marcher, mu0)


def reconstruct(mu0: InitialData, trace: CollisionTrace, t: float) -> PhaseField:
    """mu_t(theta, s, h) = mu0(theta, s + t, h) + collisions from the trace up to time t."""
    if t > trace.times[-1] + 1e-12:
        raise ValueError(f"time {t} beyond the trace horizon {trace.times[-1]}")
    n = trace.index_of(t)
    grid = mu0.grid
    free = np.asarray(mu0.values_at(grid.s.nodes, t))
    coll = trace.marcher.reconstruct(trace.values, n, grid.s.nodes)
    return PhaseField(grid, free + coll)


def equilibrium_distance(mu_t: PhaseField, mass0: float, p) -> float:
    """||mu_t - mass0 E/(2 pi)||_p on the grid."""
    from .grids import equilibrium_field

    target = equilibrium_field(mu_t.grid, mass0)
    return lp_norm(mu_t - target, p)


@dataclass
class DecayReport:
    times: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    fitted_exponent: float
    fitted_constant: float
    fit_residual: float
    window: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "l1": self.l1.tolist(),
            "l2": self.l2.tolist(),
            "linf": self.linf.tolist(),
            "fitted_exponent": self.fitted_exponent,
            "fitted_constant": self.fitted_constant,
            "fit_residual": self.fit_residual,
            "window": list(self.window),
        }


def fit_power_law(times, values, window) -> tuple[float, float, float]:
    """Least-squares line through (log t, log value) on the window; returns (exponent, constant, rms residual)."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    lo, hi = window
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if sel.sum() < 4:
        raise ValueError("need at least 4 samples in the fit window")
    if np.any(values[sel] <= 0):
        raise ValueError("power-law fit needs positive values")
    x, y = np.log(times[sel]), np.log(values[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(np.exp(intercept)), float(np.sqrt(np.mean(resid**2)))


def fit_decay(times, l1, window, l2=None, linf=None) -> DecayReport:
    times = np.asarray(times, float)
    l1 = np.asarray(l1, float)
    slope, const, resid = fit_power_law(times, l1, window)
    nan = np.full_like(l1, np.nan)
    return DecayReport(
        times,
        l1,
        nan if l2 is None else np.asarray(l2, float),
        nan if linf is None else np.asarray(linf, float),
        slope,
        const,
        resid,
        tuple(window),
    )


def decay_series(mu0: InitialData, times, dt: float, trace: CollisionTrace | None = None):
    """Norm series of mu_t - <mu0> E/(2 pi) at the requested times (p = 1, 2, inf)."""
    times = np.asarray(times, float)
    if trace is None:
        trace = solve_trace(mu0, float(times.max()), dt)
    mass0 = mu0.total_mass
    rows = []
    for t in times:
        mu_t = reconstruct(mu0, trace, float(t))
        rows.append([equilibrium_distance(mu_t, mass0, p) for p in (1, 2, np.inf)])
    rows = np.array(rows)
    return trace, rows[:, 0], rows[:, 1], rows[:, 2]
