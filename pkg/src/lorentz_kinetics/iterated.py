"""Iterated kernels Q^(n), their tails E^(n), and the angular marginal of f.

Tables live on a Gauss h-axis and a graded time axis that reaches the whole
support of the discrete kernels: with impact parameters restricted to Gauss
nodes, Q(., h_i | h_j) vanishes beyond 1/(1 - max|h|), so Q^(n) vanishes
beyond n times that.  Time convolutions use product integration (exact
moments of Q against piecewise-linear interpolants), so the breakpoints of Q
cost nothing extra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import AxisGrid, gauss_axis, write_field_binary
from .kernels import (
    PairGeometry,
    eval_E,
    eval_f,
    gauss_legendre,
    pair_convolution_exact,
    reduce_to_window,
    support_edge,
    window_start,
)

MAX_ORDER = 4


def kernel_time_axis(h_axis: AxisGrid, order: int, step: float = 0.025, fine_edge: float = 2.0,
                     ratio: float = 1.04) -> AxisGrid:
    """Uniform nodes on [0, fine_edge], then geometric spacing up to the support of Q^(order)."""
    reach = 1.05 * order * float(support_edge(np.max(np.abs(h_axis.nodes))))
    nodes = list(np.arange(0.0, fine_edge + 0.5 * step, step))
    gap = step
    while nodes[-1] < reach:
        gap *= ratio
        nodes.append(nodes[-1] + gap)
    nodes = np.array(nodes)
    gaps = np.diff(nodes)
    weights = np.zeros_like(nodes)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    return AxisGrid(nodes, weights, "graded")


class TableConvolution:
    """u -> int_0^t int Q(t - t', h | h'') u(t', h'') dh'' dt' on a nonuniform time axis."""

    def __init__(self, t_axis: AxisGrid, h_axis: AxisGrid):
        self.t_axis = t_axis
        self.h_axis = h_axis
        h = h_axis.nodes
        self.geometry = PairGeometry(h[:, None], h[None, :])
        self.pair_weight = np.broadcast_to(h_axis.weights[None, :], self.geometry.a.shape)

    def weights_at(self, n: int) -> np.ndarray:
        """W[m, i, k] with out[n] = sum_m W[m] @ u[m]."""
        t = self.t_axis.nodes
        nh = len(self.h_axis)
        out = np.zeros((n + 1, nh, nh))
        if n == 0:
            return out
        tau = t[n] - t[: n + 1]  # decreasing in m
        geo = self.geometry
        # a cell [t_m, t_m+1] matters only if its lower tau end is inside the support
        first_cell = np.searchsorted(-tau[1:], -geo.s2, side="left")
        first_cell = np.minimum(first_cell, n - 1)
        for lo, hi in _cell_buckets(n):
            ii, jj = np.nonzero((first_cell >= lo) & (first_cell < hi))
            if ii.size == 0:
                continue
            sub = _subset(geo, ii, jj)
            taus = tau[lo:].reshape(-1, 1)
            f0, f1 = sub.primitives(taus)
            d0 = f0[:-1] - f0[1:]
            d1 = f1[:-1] - f1[1:]
            t_hi, t_lo = taus[:-1], taus[1:]
            width = t_hi - t_lo
            pw = self.pair_weight[ii, jj]
            towards_lo = (t_hi * d0 - d1) / width * pw  # hat at t_{m+1}
            towards_hi = (d1 - t_lo * d0) / width * pw  # hat at t_m
            block = np.zeros((n + 1 - lo, ii.size))
            block[1:] += towards_lo
            block[:-1] += towards_hi
            out[lo:, ii, jj] = block
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """u has shape (n_t, n_h, cols); returns the convolution on the same layout."""
        u = np.asarray(u, float)
        n_t, nh = u.shape[:2]
        flat = u.reshape(n_t, nh, -1)
        out = np.zeros_like(flat)
        for n in range(1, n_t):
            w = self.weights_at(n)
            out[n] = np.einsum("mik,mkc->ic", w, flat[: n + 1], optimize=True)
        return out.reshape(u.shape)


def _cell_buckets(n: int):
    """Ranges [lo, hi) of first live cell, split so deep histories share work."""
    edges = sorted({0, *(n - 2**k for k in range(1, 40) if n - 2**k > 0), n})
    return list(zip(edges[:-1], edges[1:]))


def _subset(geometry: PairGeometry, ii, jj) -> PairGeometry:
    sub = object.__new__(PairGeometry)
    for name in ("a", "b", "s1", "s2", "slope", "diag"):
        setattr(sub, name, getattr(geometry, name)[ii, jj])
    return sub


@dataclass
class KernelTable:
    order: int
    t_axis: AxisGrid
    h_axis: AxisGrid
    hp_axis: AxisGrid
    values: np.ndarray  # (n_t, n_h, n_hp)
    breakpoints: np.ndarray  # flight times where Q(., h_i | h_j) changes branch

    def mass(self) -> np.ndarray:
        """int_0^infinity int Q^(n)(t, h | h') dh dt for every h' node."""
        return np.einsum("t,i,tij->j", self.t_axis.weights, self.h_axis.weights, self.values)

    def save(self, path) -> None:
        write_field_binary(self.values, path)


@dataclass
class EnTable:
    order: int
    s_axis: AxisGrid
    h_axis: AxisGrid
    values: np.ndarray  # (n_s, n_h)

    def mass(self) -> float:
        return float(self.s_axis.weights @ self.values @ self.h_axis.weights)

    def at(self, s) -> np.ndarray:
        """Linear interpolation in s on every h node; zero beyond the axis."""
        s = np.asarray(s, float)
        nodes = self.s_axis.nodes
        out = np.empty(s.shape + (len(self.h_axis),))
        for j in range(len(self.h_axis)):
            out[..., j] = np.interp(s, nodes, self.values[:, j], right=0.0)
        return out

    def save(self, path) -> None:
        write_field_binary(self.values, path)


def first_kernel_table(t_axis: AxisGrid, h_axis: AxisGrid) -> KernelTable:
    h = h_axis.nodes
    geo = PairGeometry(h[:, None], h[None, :])
    values = geo.value(t_axis.nodes[:, None, None])
    marks = np.unique(np.concatenate([geo.s1.ravel(), geo.s2.ravel()]))
    return KernelTable(1, t_axis, h_axis, h_axis, values, marks)


def _second_kernel_values(t_axis: AxisGrid, h_axis: AxisGrid) -> np.ndarray:
    """Q^(2) on the table nodes: closed-form time convolution, Gauss sum over h''."""
    h, w = h_axis.nodes, h_axis.weights
    nh = h.size
    s2 = PairGeometry(h[:, None], h[None, :]).s2
    ii, kk, jj = (idx.ravel() for idx in np.indices((nh, nh, nh)))
    reach = s2[ii, kk] + s2[kk, jj]
    out = np.zeros((len(t_axis), nh, nh))
    for n, t in enumerate(t_axis.nodes):
        live = np.nonzero(reach > t)[0] if t > 0 else np.empty(0, int)
        if live.size == 0:
            continue
        i, k, j = ii[live], kk[live], jj[live]
        vals = pair_convolution_exact(t, h[i], h[k], h[j]) * w[k]
        out[n] = np.bincount(i * nh + j, weights=vals, minlength=nh * nh).reshape(nh, nh)
    return out


def convolve_next(qn: KernelTable, conv: TableConvolution | None = None) -> KernelTable:
    """Q^(n+1) = int int Q(t - t', h | h'') Q^(n)(t', h'' | h').

    From order 1 the time integral is done in closed form, since Q itself is
    known exactly; higher orders use product integration against the
    piecewise-linear interpolant of the previous table.
    """
    if qn.order >= MAX_ORDER:
        raise ValueError(f"orders above {MAX_ORDER} are not supported")
    if qn.order == 1 and qn.hp_axis is qn.h_axis:
        values = _second_kernel_values(qn.t_axis, qn.h_axis)
        return KernelTable(2, qn.t_axis, qn.h_axis, qn.hp_axis, values, qn.breakpoints)
    if conv is None:
        conv = TableConvolution(qn.t_axis, qn.h_axis)
    if conv.t_axis is not qn.t_axis or conv.h_axis is not qn.h_axis:
        raise ValueError("convolution and table axes differ")
    values = conv.apply(qn.values)
    return KernelTable(qn.order + 1, qn.t_axis, qn.h_axis, qn.hp_axis, values, qn.breakpoints)


def build_kernel_tables(order: int, n_h: int = 64, step: float = 0.025) -> list[KernelTable]:
    """[Q^(1), ..., Q^(order)] on a shared axis pair."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}")
    h_axis = gauss_axis(n_h)
    t_axis = kernel_time_axis(h_axis, order, step)
    tables = [first_kernel_table(t_axis, h_axis)]
    conv = TableConvolution(t_axis, h_axis)
    while len(tables) < order:
        tables.append(convolve_next(tables[-1], conv))
    return tables


def build_En(order: int, s_axis: AxisGrid, h_axis: AxisGrid, conv: TableConvolution | None = None) -> list[EnTable]:
    """[E^(1), ..., E^(order)] from the recursion in the convolution with Q.

    E^(1) = E and E^(n) = E^(n-1) + Q * (E^(n-1) - E^(n-2)) with E^(0) = 0;
    for n = 2 this is E + Q * E.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    if conv is None:
        conv = TableConvolution(s_axis, h_axis)
    first = eval_E(s_axis.nodes[:, None], h_axis.nodes[None, :])
    tables = [EnTable(1, s_axis, h_axis, first)]
    prev, cur = np.zeros_like(first), first
    while len(tables) < order:
        nxt = cur + conv.apply((cur - prev)[:, :, None])[:, :, 0]
        prev, cur = cur, nxt
        tables.append(EnTable(len(tables) + 1, s_axis, h_axis, cur))
    return tables


def theta_marginal_of_f(t, h, hp, panels: int = 4, nodes: int = 16) -> np.ndarray:
    """int f(theta, t, h | h') dtheta by Gauss panels over the h''-window.

    The window is split where h'' crosses +-h and +-h', the kinks of the
    time convolution as a function of h''.
    """
    t, h, hp = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, h, hp)))
    x, w = gauss_legendre(nodes)
    lo = window_start(hp)
    # theta in the window with h''(theta) = x, for each of the kink values
    kinks = np.stack([h, -h, hp, -hp], axis=-1)
    cut = lo[..., None] + np.pi + 2.0 * np.arcsin(np.clip(kinks, -1.0, 1.0))
    edges = np.sort(np.concatenate([lo[..., None], cut, lo[..., None] + 2.0 * np.pi], axis=-1), axis=-1)
    frac = (np.arange(panels)[:, None] + 0.5 * (x + 1.0)) / panels
    left = edges[..., :-1, None, None]
    width = (edges[..., 1:] - edges[..., :-1])[..., None, None]
    theta = left + width * frac
    ex = (...,) + (None,) * 3
    vals = eval_f(reduce_to_window(theta, hp[ex]), t[ex], h[ex], hp[ex])
    return np.sum(vals * width * (0.5 * w / panels), axis=(-3, -2, -1))


def verify_f_marginal(q2: KernelTable, t_stride: int = 10, h_stride: int = 8, t_max: float = 3.0) -> float:
    """max |int f dtheta - Q^(2)| on a coarse sub-grid of the table."""
    if q2.order != 2:
        raise ValueError("verify_f_marginal needs the order-2 table")
    t_idx = np.arange(0, len(q2.t_axis), t_stride)
    t_idx = t_idx[q2.t_axis.nodes[t_idx] <= t_max]
    h_idx = np.arange(0, len(q2.h_axis), h_stride)
    t = q2.t_axis.nodes[t_idx][:, None, None]
    h = q2.h_axis.nodes[h_idx][None, :, None]
    hp = q2.hp_axis.nodes[h_idx][None, None, :]
    marginal = theta_marginal_of_f(t, h, hp)
    table = q2.values[np.ix_(t_idx, h_idx, h_idx)]
    return float(np.max(np.abs(marginal - table)))


def pi_chain_mass(h, n_inner: int = 24) -> float:
    """int int Pi(h | h'') Pi(h'' | h') dh'' dh', the total mass of f at fixed h.

    Gauss panels split at the kinks of Pi and graded towards the corners,
    where Pi diverges logarithmically.
    """
    from .kernels import eval_Pi

    x, w = gauss_legendre(n_inner)
    grading = 1.0 - np.concatenate([[1.0], 4.0 ** -np.arange(1, 12)])

    def split(points):
        pts = np.unique(np.clip(np.concatenate([points, -grading, grading]), -1.0, 1.0))
        mid = 0.5 * (pts[1:] + pts[:-1])[:, None]
        half = 0.5 * (pts[1:] - pts[:-1])[:, None]
        return (mid + half * x).ravel(), (half * w).ravel()

    hpp, w_hpp = split(np.array([h, -h]))
    # int Pi(h'' | h') dh' for every h''
    inner = np.empty(hpp.size)
    for k, val in enumerate(hpp):
        hp, w_hp = split(np.array([val, -val]))
        inner[k] = np.sum(w_hp * eval_Pi(val, hp))
    return float(np.sum(w_hpp * eval_Pi(h, hpp) * inner))
