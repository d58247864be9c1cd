"""Discrete collision operator shared by the trace, mode and memory-kernel solvers.

The renewal equations all have the form

    u(theta, t, h) = source(theta, t, h)
        + int_0^t dt' int dh' Q(t - t', h | h') e^{i w(theta) (t - t')} u(theta + sigma(h'), t', h')

with sigma(h') = pi - 2 arcsin h'.  Time integrals use product integration:
u is interpolated linearly between uniform time nodes and the moments of Q
against the hat functions are exact.  The h'-integral uses the Gauss nodes of
the h-axis with a symmetric rescaling that makes the discrete transition
matrix exactly stochastic, so the discrete dynamics conserves mass.
"""

from __future__ import annotations

import numpy as np

from .grids import AxisGrid, shift_periodic
from .kernels import PairGeometry, eval_Pi, scatter_angle

PICARD_TOL = 1e-10
PICARD_MAX_ITER = 50


class PicardError(RuntimeError):
    pass


def balance_symmetric(matrix: np.ndarray, weights: np.ndarray, tol: float = 1e-15, max_iter: int = 500) -> np.ndarray:
    """Scaling d with sum_j d_i matrix_ij weights_j d_j = 1 for every i."""
    d = np.ones(len(weights))
    for _ in range(max_iter):
        rows = d * (matrix @ (weights * d))
        if np.max(np.abs(rows - 1.0)) < tol:
            break
        d = d / np.sqrt(rows)
    return d


class CollisionOperator:
    """Product-integration weights of Q on a uniform time grid and a Gauss h-axis."""

    def __init__(self, h_axis: AxisGrid, dt: float, n_steps: int, balance: bool = True):
        if dt <= 0 or n_steps < 1:
            raise ValueError("need dt > 0 and at least one step")
        self.h_axis = h_axis
        self.dt = float(dt)
        self.n_steps = int(n_steps)
        h = h_axis.nodes
        self.geometry = PairGeometry(h[:, None], h[None, :])
        pi_matrix = eval_Pi(h[:, None], h[None, :])
        self.scaling = balance_symmetric(pi_matrix, h_axis.weights) if balance else np.ones(len(h))
        # multiplies Q(h_i | h_j) in every quadrature sum over j
        self.pair_weight = self.scaling[:, None] * self.scaling[None, :] * h_axis.weights[None, :]
        self.shifts = scatter_angle(h)
        self._build_lag_tables()

    @property
    def n_h(self) -> int:
        return len(self.h_axis)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def _cell_parts(self, taus: np.ndarray, geometry: PairGeometry, pair_weight):
        """Hat-function moments over the cells between consecutive tau nodes.

        taus is decreasing; the cell [taus[c+1], taus[c]] returns its moments
        against the hat that peaks at taus[c+1] (``rising``) and at taus[c]
        (``falling``), both multiplied by the quadrature weights.
        """
        f0, f1 = geometry.primitives(taus.reshape((-1,) + (1,) * geometry.a.ndim))
        d0 = f0[:-1] - f0[1:]
        d1 = f1[:-1] - f1[1:]
        lo = taus[1:].reshape((-1,) + (1,) * geometry.a.ndim)
        hi = taus[:-1].reshape((-1,) + (1,) * geometry.a.ndim)
        towards_lo = (hi * d0 - d1) / self.dt
        towards_hi = (d1 - lo * d0) / self.dt
        return towards_lo * pair_weight, towards_hi * pair_weight

    def _build_lag_tables(self):
        taus = self.dt * np.arange(self.n_steps, -1, -1.0)
        to_lo, to_hi = self._cell_parts(taus, self.geometry, self.pair_weight)
        # cell with lag e covers tau in [(e-1) dt, e dt]; reversed order above
        to_lo, to_hi = to_lo[::-1], to_hi[::-1]
        n = self.n_steps
        nh = self.n_h
        self.implicit = np.ascontiguousarray(to_lo[0])  # weight of the newest node
        # lag_table[i, e, j]: weight for history node at lag e >= 1, e < n
        # first_weight[e]: weight of the initial node when the current step is e
        lag = np.zeros((n + 1, nh, nh))
        lag[1:n] = to_hi[: n - 1] + to_lo[1:n]
        self.lag_table = np.ascontiguousarray(lag.transpose(1, 0, 2))
        self.first_weight = np.zeros((n + 1, nh, nh))
        self.first_weight[1:] = to_hi

    def history_weights(self, s: float, n: int, active_only: bool = True) -> np.ndarray:
        """Weights W[m, i, j] for int_0^{t_n} Q(s + t_n - t', h_i | h_j) u(t', h_j) dt'.

        Only pairs whose kernel support reaches flight time s are evaluated.
        """
        nh = self.n_h
        out = np.zeros((n + 1, nh, nh))
        if n == 0:
            return out
        if active_only:
            # cell e covers tau in [s + e dt, s + (e+1) dt] and links hats n-e (low end)
            # and n-e-1; only cells starting below the pair's support edge matter
            reach = np.minimum(n, np.ceil((self.geometry.s2 - s) / self.dt)).astype(int)
            for lo, hi in _buckets(n):
                ii, jj = np.nonzero((reach > lo) & (reach <= hi))
                if ii.size == 0:
                    continue
                taus = s + self.dt * np.arange(hi, -1, -1.0)
                geo = _subset(self.geometry, ii, jj)
                to_lo, to_hi = self._cell_parts(taus, geo, self.pair_weight[ii, jj])
                block = np.zeros((n + 1, ii.size))
                # reversed order: row c of to_lo/to_hi is cell e = hi - 1 - c
                block[n - hi + 1 :] += to_lo
                block[n - hi : n] += to_hi
                out[:, ii, jj] = block
            return out
        taus = s + self.dt * np.arange(n, -1, -1.0)
        to_lo, to_hi = self._cell_parts(taus, self.geometry, self.pair_weight)
        out[:-1] += to_hi
        out[1:] += to_lo
        return out

    def shift(self, values: np.ndarray) -> np.ndarray:
        """values[theta, j] -> values(theta + sigma(h_j), h_j)."""
        return shift_periodic(values, self.shifts)


def _buckets(n: int):
    """Ranges (lo, hi] of cell counts, doubling, with hi capped at n."""
    lo, hi = 0, 4
    while lo < n:
        yield lo, min(hi, n)
        lo, hi = hi, 2 * hi


def _subset(geometry: PairGeometry, ii, jj) -> PairGeometry:
    sub = object.__new__(PairGeometry)
    for name in ("a", "b", "s1", "s2", "slope", "diag"):
        setattr(sub, name, getattr(geometry, name)[ii, jj])
    return sub


class RenewalMarcher:
    """Time-march u = source + (oscillatory) collision convolution of u.

    ``frequency`` is the angular frequency w(theta) of the phase factor
    exp(i w(theta) (t - t')); None means no phase.  The source may carry extra
    trailing batch axes after (theta, h).
    """

    def __init__(self, op: CollisionOperator, frequency: np.ndarray | None = None):
        self.op = op
        self.frequency = None if frequency is None else np.asarray(frequency, float)

    def _phase(self, t: float, sign: float) -> np.ndarray | float:
        if self.frequency is None:
            return 1.0
        return np.exp(sign * 1j * self.frequency * t)

    def run(self, source, n_steps: int | None = None) -> np.ndarray:
        """source(n) -> array (n_theta, n_h, *batch) at time t_n.  Returns u[n, theta, h, *batch]."""
        op = self.op
        n_steps = op.n_steps if n_steps is None else n_steps
        first = np.asarray(source(0))
        complex_run = np.iscomplexobj(first) or self.frequency is not None
        dtype = complex if complex_run else float
        n_theta, nh = first.shape[:2]
        batch = first.shape[2:]
        cols = n_theta * int(np.prod(batch, dtype=int))
        u = np.zeros((n_steps + 1,) + first.shape, dtype=dtype)
        # history[N - m] holds G_m[j, theta * batch] in the reversed layout
        history = np.zeros((n_steps + 1, nh, cols), dtype=dtype)
        self._history = history
        total = n_steps
        u[0] = first
        history[total] = self._to_history(u[0], 0.0)
        for n in range(1, n_steps + 1):
            t = n * op.dt
            acc = self._contract(op.first_weight[n], history[total])
            if n > 1:
                lag = op.lag_table[:, 1:n, :].reshape(nh, (n - 1) * nh)
                past = history[total - n + 1 : total].reshape((n - 1) * nh, cols)
                acc = acc + _matmul(lag, past)
            hist = self._from_history(acc, first.shape) * self._phase_full(t, first.shape)
            rhs = np.asarray(source(n), dtype=dtype) + hist
            u[n] = self._picard(rhs, n)
            history[total - n] = self._to_history(u[n], t)
        return u

    def _phase_full(self, t, shape):
        ph = self._phase(t, 1.0)
        if np.isscalar(ph):
            return ph
        return ph.reshape((shape[0],) + (1,) * (len(shape) - 1))

    def _to_history(self, values: np.ndarray, t: float) -> np.ndarray:
        shifted = self._shift(values) * self._phase_full(-t, values.shape)
        nh = values.shape[1]
        return np.moveaxis(shifted, 1, 0).reshape(nh, -1)

    def _from_history(self, acc: np.ndarray, shape) -> np.ndarray:
        nh = shape[1]
        rest = (shape[0],) + tuple(shape[2:])
        return np.moveaxis(acc.reshape((nh,) + rest), 0, 1)

    def _shift(self, values: np.ndarray) -> np.ndarray:
        shifts = self.op.shifts.reshape((-1,) + (1,) * (values.ndim - 2))
        return shift_periodic(values, shifts)

    def _contract(self, weights: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return _matmul(weights, cols)

    def _picard(self, rhs: np.ndarray, step: int) -> np.ndarray:
        implicit = self.op.implicit
        current = rhs
        scale = max(1.0, float(np.max(np.abs(rhs))))
        for _ in range(PICARD_MAX_ITER):
            shifted = self._shift(current)
            coll = np.einsum("ij,tj...->ti...", implicit, shifted)
            new = rhs + coll
            if np.max(np.abs(new - current)) <= PICARD_TOL * scale:
                return new
            current = new
        raise PicardError(f"inner iteration did not converge at step {step}")

    def history_term(self, series: np.ndarray, n: int) -> np.ndarray:
        """Collision integral of a prescribed series u[0..n] at t_n, with the weights of ``run``.

        Nothing is solved: the newest node enters with the implicit weight
        like every other node.
        """
        op = self.op
        shape = series.shape[1:]
        if n == 0:
            return np.zeros(shape, dtype=complex if self.frequency is not None else series.dtype)
        nh = shape[1]
        hist = np.stack([self._to_history(series[m], m * op.dt) for m in range(n + 1)])
        acc = _matmul(op.first_weight[n], hist[0]) + _matmul(op.implicit, hist[n])
        if n > 1:
            lag = op.lag_table[:, 1:n, :].reshape(nh, (n - 1) * nh)
            past = hist[n - 1 : 0 : -1].reshape((n - 1) * nh, -1)
            acc = acc + _matmul(lag, past)
        return self._from_history(acc, shape) * self._phase_full(n * op.dt, shape)

    def reconstruct(self, u: np.ndarray, n: int, s_nodes: np.ndarray) -> np.ndarray:
        """Collision part of the field at time t_n on the given s-nodes.

        Returns array (n_theta, n_s, n_h, *batch); uses the history of the last run.
        """
        op = self.op
        history = self._history
        total = history.shape[0] - 1
        shape = u.shape[1:]
        nh = shape[1]
        # history rows for m = 0..n in increasing m
        past = history[total - n : total + 1][::-1].reshape((n + 1) * nh, -1)
        out = np.zeros((shape[0], len(s_nodes)) + tuple(shape[1:]), dtype=u.dtype)
        phase = self._phase_full(n * op.dt, shape)
        for q, s in enumerate(s_nodes):
            w = op.history_weights(float(s), n)
            if not w.any():
                continue
            acc = _matmul(w.transpose(1, 0, 2).reshape(nh, (n + 1) * nh), past)
            out[:, q] = self._from_history(acc, shape) * phase
        return out


def _matmul(weights: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(cols):
        flat = np.ascontiguousarray(cols).view(float)
        return (weights @ flat).view(complex)
    return weights @ cols
