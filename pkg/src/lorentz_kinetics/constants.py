"""Measured decay constants and normalization integrals of the kernels.

Each bound has the shape value <= C / (t + 1); the constants are reported by
maximizing (t + 1) * value over a scan, never assumed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grids import tail_estimate
from .kernels import PairGeometry, eval_E, eval_Q, gauss_legendre, pair_convolution_exact, support_edge

# panel edges 1 - 4^-j crowd the ends of [-1, 1], where the kernels vary fastest
_END_GRADING = 1.0 - 4.0 ** -np.arange(0, 14)


@dataclass(frozen=True)
class KernelConstants:
    q_bound: float  # sup (s + 1) Q(s, h | h')
    e_bound: float  # sup (s + 1) E(s, h)
    e_tail_bound: float  # sup (s + 1) * mass of E beyond s
    f_bound: float  # sup (t + 1) f(theta, t, h | h')

    def as_dict(self) -> dict:
        return asdict(self)


def measure_q_constant(n_h: int = 201) -> float:
    """sup of (s + 1) Q; on each branch the sup sits at a breakpoint, so scan those."""
    h = np.linspace(-0.999, 0.999, n_h)
    hh, pp = np.meshgrid(h, h, indexing="ij")
    geo = PairGeometry(hh, pp)
    best = 0.0
    for s in (geo.s1, geo.s2, 0.5 * (geo.s1 + geo.s2)):
        for nudge in (-1e-12, 0.0):
            ss = s * (1.0 + nudge)
            best = max(best, float(np.max((ss + 1.0) * eval_Q(ss, hh, pp))))
    return best


def measure_e_constant(n_h: int = 101, n_s: int = 400) -> float:
    h = np.linspace(-0.99, 0.99, n_h)
    frac = np.linspace(0.0, 1.0, n_s)
    s = support_edge(h)[:, None] * frac[None, :]
    return float(np.max((s + 1.0) * eval_E(s, h[:, None])))


def measure_e_tail_constant(s_values=None) -> float:
    s_values = np.geomspace(0.05, 1e4, 60) if s_values is None else np.asarray(s_values, float)
    return float(max((s + 1.0) * tail_estimate(float(s)) for s in s_values))


def measure_f_constant(n_t: int = 120, n_h: int = 25, t_max: float = 40.0) -> float:
    """sup of (t + 1) f; f = (cos psi / 2) conv with h'' = sin psi, largest where h'' = 0 weighs most."""
    t = np.concatenate([np.linspace(0.0, 2.0, n_t // 2), np.geomspace(2.0, t_max, n_t - n_t // 2)])
    h = np.linspace(-0.98, 0.98, n_h)
    best = 0.0
    for hpp in h:
        conv = pair_convolution_exact(t[:, None, None], h[None, :, None], hpp, h[None, None, :])
        jac = 0.5 * np.sqrt(1.0 - hpp**2)
        best = max(best, float(np.max((t[:, None, None] + 1.0) * jac * conv)))
    return best


def measure_kernel_constants() -> KernelConstants:
    return KernelConstants(
        measure_q_constant(), measure_e_constant(), measure_e_tail_constant(), measure_f_constant()
    )


def _panel_rule(edges, nodes: int = 24):
    x, w = gauss_legendre(nodes)
    edges = np.unique(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def kernel_mass(hp: float) -> float:
    """int int Q(s, h | h') ds dh: exact s-integral, Gauss panels in h split at +-h'."""
    h, w = _panel_rule(np.concatenate([[-1.0, 0.0, 1.0, -hp, hp], _END_GRADING, -_END_GRADING]))
    return float(np.sum(w * PairGeometry(h, hp).tail(0.0)))


def equilibrium_flight_mass(h: float) -> float:
    """int E(s, h) ds over the support [0, 1/(1 - |h|)].

    Past s = 1 the density falls like 1/s up to the support edge, so the
    panels are geometric in s and graded again towards the edge.
    """
    ha = abs(float(h))
    edge = 1.0 / (1.0 - ha)
    run = edge - 1.0
    edges = np.concatenate([
        [0.0, 0.5, 1.0 / (1.0 + ha), 1.0, edge],
        np.geomspace(1.0, edge, int(np.log2(edge)) + 2),
        edge - run * 2.0 ** -np.arange(1, 30),
    ])
    s, w = _panel_rule(edges)
    return float(np.sum(w * eval_E(s, ha)))


def equilibrium_mass() -> float:
    """int int E(s, h) ds dh, using the evenness of E in h."""
    h, w = _panel_rule(np.concatenate([[0.0, 1.0], _END_GRADING]))
    return 2.0 * float(sum(wi * equilibrium_flight_mass(hi) for hi, wi in zip(h, w)))
