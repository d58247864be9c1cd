"""Monte Carlo simulation of the limiting Markov renewal flight.

A particle carries (theta, s, h): velocity angle, time to the next collision
and the impact parameter of that collision.  At a collision the velocity
turns by pi - 2 arcsin(h) and a fresh (s, h) is drawn from Q(., . | h).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .grids import PhaseField, PhaseGrid, gauss_axis
from .kernels import KERNEL_SCALE, TWO_PI, PairGeometry, eval_E, scatter_angle

BLOCK_SIZE = 65536
MAX_REJECTION_ROUNDS = 10_000


class SamplingError(RuntimeError):
    pass


def support_curve(h, hp):
    """Largest flight time with Q(s, h | h') > 0."""
    return PairGeometry(h, hp).s2


def envelope_area(hp):
    """int_{-1}^{1} support_curve(h, h') dh in closed form."""
    p = np.abs(np.asarray(hp, float))
    return np.log((1.0 + p) / (1.0 - p)) + (1.0 - p) / (1.0 + p) + 1.0


def acceptance_rate(hp):
    """Probability that one envelope draw is accepted: 1 / (6/pi^2 * area)."""
    return 1.0 / (KERNEL_SCALE * envelope_area(hp))


def _sample_under_curve(hp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of h with density proportional to support_curve(h, h').

    For h' >= 0 the curve is 1/(1-h') on h < -h', 1/(1+h) on |h| < h' and
    1/(1+h') on h > h'; negative h' is the mirror image.
    """
    p = np.abs(hp)
    sign = np.where(hp < 0, -1.0, 1.0)
    low = np.ones_like(p)  # mass of h in [-1, -p): (1 - p) / (1 - p)
    mid = np.log((1.0 + p) / (1.0 - p))
    high = (1.0 - p) / (1.0 + p)
    total = low + mid + high
    x = u * total
    h = np.where(
        x < low,
        -1.0 + x * (1.0 - p),
        np.where(x < low + mid, np.exp(x - low) * (1.0 - p) - 1.0, p + (x - low - mid) * (1.0 + p)),
    )
    h = np.clip(h, -1.0, 1.0)
    # the profile for h' < 0 is the reflection h -> -h of the one for |h'|
    return sign * h


def sample_transition(hp, rng: np.random.Generator, max_rounds: int = MAX_REJECTION_ROUNDS):
    """Draw (s, h) from Q(., . | h') for every entry of hp.

    Rejection against the constant 6/pi^2 on the region under the support
    curve; returns (s, h, number of envelope draws).
    """
    hp = np.atleast_1d(np.asarray(hp, float))
    s_out = np.empty_like(hp)
    h_out = np.empty_like(hp)
    pending = np.arange(hp.size)
    draws = 0
    for _ in range(max_rounds):
        if pending.size == 0:
            return s_out, h_out, draws
        p = hp[pending]
        u = rng.random((3, pending.size))
        h = _sample_under_curve(p, u[0])
        geo = PairGeometry(h, p)
        s = u[1] * geo.s2
        ok = u[2] * KERNEL_SCALE < geo.value(s)
        draws += pending.size
        s_out[pending[ok]] = s[ok]
        h_out[pending[ok]] = h[ok]
        pending = pending[~ok]
    raise SamplingError(f"{pending.size} draws still rejected after {max_rounds} rounds")


@dataclass
class EquilibriumSampler:
    """Draws (s, h) from E: h on Gauss nodes by node mass, s by inverse transform."""

    h_nodes: np.ndarray
    h_prob: np.ndarray
    s_tables: np.ndarray  # (n_h, n_s) s-nodes per h
    cdf_tables: np.ndarray  # (n_h, n_s) conditional CDF

    @classmethod
    def build(cls, n_h: int = 64, n_s: int = 2048) -> "EquilibriumSampler":
        axis = gauss_axis(n_h)
        h = axis.nodes
        edge = 1.0 / (1.0 - np.abs(h))
        frac = np.linspace(0.0, 1.0, n_s)
        s = edge[:, None] * frac[None, :]
        dens = eval_E(s, h[:, None])
        steps = 0.5 * np.diff(s, axis=1) * (dens[:, 1:] + dens[:, :-1])
        cdf = np.concatenate([np.zeros((n_h, 1)), np.cumsum(steps, axis=1)], axis=1)
        marginal = cdf[:, -1]
        prob = axis.weights * marginal
        prob = prob / prob.sum()
        return cls(h, prob, s, cdf / marginal[:, None])

    def sample(self, rng: np.random.Generator, size: int):
        idx = rng.choice(self.h_nodes.size, size=size, p=self.h_prob)
        u = rng.random(size)
        s = np.empty(size)
        for j in np.unique(idx):
            sel = idx == j
            s[sel] = np.interp(u[sel], self.cdf_tables[j], self.s_tables[j])
        return s, self.h_nodes[idx]


def cosine_angle_law(rng: np.random.Generator, size: int) -> np.ndarray:
    """Angles with density (1 + cos theta) / (2 pi), by rejection."""
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        th = TWO_PI * rng.random(pending.size)
        ok = 2.0 * rng.random(pending.size) < 1.0 + np.cos(th)
        out[pending[ok]] = th[ok]
        pending = pending[~ok]
    return out


def uniform_angle_law(rng: np.random.Generator, size: int) -> np.ndarray:
    return TWO_PI * rng.random(size)


ANGLE_LAWS = {"cosine": cosine_angle_law, "equilibrium": uniform_angle_law}


@dataclass
class Ensemble:
    theta: np.ndarray
    s: np.ndarray
    h: np.ndarray
    rng_seed: int
    t_now: float = 0.0
    generators: list = field(default_factory=list, repr=False)
    block_size: int = BLOCK_SIZE
    collisions: int = 0

    @property
    def size(self) -> int:
        return self.theta.size

    def copy(self) -> "Ensemble":
        return Ensemble(self.theta.copy(), self.s.copy(), self.h.copy(), self.rng_seed, self.t_now,
                        copy.deepcopy(self.generators), self.block_size, self.collisions)


def _block_generators(seed: int, n: int, block: int) -> list[np.random.Generator]:
    """One counter-based stream per fixed-size particle block, keyed by (seed, block index)."""
    count = -(-n // block)
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b]))) for b in range(count)]


def make_ensemble(n_particles: int, seed: int, angle_law: str = "cosine",
                  sampler: EquilibriumSampler | None = None, block: int = BLOCK_SIZE) -> Ensemble:
    """Initial law angle_law(theta) x E(s, h)."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if angle_law not in ANGLE_LAWS:
        raise ValueError(f"unknown angle law {angle_law!r}")
    sampler = EquilibriumSampler.build() if sampler is None else sampler
    gens = _block_generators(seed, n_particles, block)
    theta = np.empty(n_particles)
    s = np.empty(n_particles)
    h = np.empty(n_particles)
    for b, gen in enumerate(gens):
        sl = slice(b * block, min((b + 1) * block, n_particles))
        size = sl.stop - sl.start
        theta[sl] = ANGLE_LAWS[angle_law](gen, size)
        s[sl], h[sl] = sampler.sample(gen, size)
    return Ensemble(theta, s, h, seed, 0.0, gens, block)


def step_ensemble(ens: Ensemble, until: float) -> Ensemble:
    """Advance every particle to time ``until``; returns a new ensemble."""
    if until < ens.t_now - 1e-12:
        raise ValueError("cannot step an ensemble backwards in time")
    out = ens.copy()
    if until <= ens.t_now:
        return out
    block = out.block_size
    for b, gen in enumerate(out.generators):
        sl = slice(b * block, min((b + 1) * block, out.size))
        theta, s, h = out.theta[sl], out.s[sl], out.h[sl]
        left = np.full(theta.size, until - out.t_now)
        due = np.nonzero(s <= left)[0]
        while due.size:
            left[due] -= s[due]
            theta[due] = np.mod(theta[due] + scatter_angle(h[due]), TWO_PI)
            s[due], h[due], _ = sample_transition(h[due], gen)
            out.collisions += due.size
            due = due[s[due] <= left[due]]
        s -= left
    out.t_now = float(until)
    return out


def _cell_edges(grid: PhaseGrid):
    """Bin edges whose widths equal the quadrature weights of each axis."""
    n = len(grid.theta)
    step = TWO_PI / n
    theta_edges = grid.theta.nodes[0] - 0.5 * step + step * np.arange(n + 1)
    s_nodes = grid.s.nodes
    s_edges = np.concatenate([[s_nodes[0]], 0.5 * (s_nodes[1:] + s_nodes[:-1]), [s_nodes[-1]]])
    h_edges = np.concatenate([[-1.0], -1.0 + np.cumsum(grid.h.weights)])
    h_edges[-1] = 1.0
    return theta_edges, s_edges, h_edges


def empirical_field(ens: Ensemble, grid: PhaseGrid) -> PhaseField:
    """Histogram density on the grid cells; cell volumes are the quadrature weights."""
    if ens.size == 0:
        raise ValueError("empty ensemble")
    theta_edges, s_edges, h_edges = _cell_edges(grid)
    th = np.mod(ens.theta - theta_edges[0], TWO_PI) + theta_edges[0]
    counts, _ = np.histogramdd(
        np.column_stack([th, ens.s, ens.h]), bins=(theta_edges, s_edges, h_edges)
    )
    return PhaseField(grid, counts / (ens.size * grid.weights()))


def statistical_l1_error(n_particles: int, grid: PhaseGrid) -> float:
    """N^(-1/2) sqrt(cells): scale of the L1 distance caused by sampling noise alone."""
    return float(np.sqrt(grid.size / n_particles))
