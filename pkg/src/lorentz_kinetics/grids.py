"""Tensor grids over (theta, s, h), field containers, norms and field I/O."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import KERNEL_SCALE, TWO_PI, eval_E, gauss_legendre

AXIS_KINDS = ("uniform-periodic", "gauss-legendre", "graded")
FINE_S_EDGE = 2.0
BINARY_MAGIC = b"LKFIELD1"


@dataclass(frozen=True)
class AxisGrid:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise ValueError(f"unknown axis kind {self.kind!r}")
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and weights must be matching 1-d arrays")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("axis nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("axis weights must be positive")

    def __len__(self) -> int:
        return self.nodes.size


def periodic_axis(n: int) -> AxisGrid:
    if n < 4 or n % 2:
        raise ValueError(f"n_theta must be an even count >= 4, got {n}")
    nodes = TWO_PI * np.arange(n) / n
    return AxisGrid(nodes, np.full(n, TWO_PI / n), "uniform-periodic")


def gauss_axis(n: int, lo: float = -1.0, hi: float = 1.0) -> AxisGrid:
    if n < 2:
        raise ValueError(f"n_h must be >= 2, got {n}")
    x, w = gauss_legendre(n)
    half = 0.5 * (hi - lo)
    return AxisGrid(lo + half * (x + 1.0), half * w, "gauss-legendre")


def graded_axis(n: int, s_max: float, fine_edge: float = FINE_S_EDGE) -> AxisGrid:
    """Trapezoidal axis on [0, s_max]: uniform on [0, fine_edge], geometric beyond.

    Half of the nodes go to the uniform part; the geometric ratio is chosen so
    that the first coarse step matches the fine spacing.  Node 0 is always
    present.
    """
    if n < 2:
        raise ValueError(f"n_s must be >= 2, got {n}")
    n_fine = max(1, n // 2)
    n_geo = n - 1 - n_fine
    step = fine_edge / n_fine
    if s_max <= fine_edge or n_geo < 1 or n_geo * step >= s_max - fine_edge:
        nodes = np.linspace(0.0, s_max, n)
    else:
        ratio = _geometric_ratio(n_geo, (s_max - fine_edge) / step)
        coarse = fine_edge + step * np.cumsum(ratio ** np.arange(n_geo))
        coarse[-1] = s_max
        nodes = np.concatenate([np.linspace(0.0, fine_edge, n_fine + 1), coarse])
    gaps = np.diff(nodes)
    weights = np.zeros_like(nodes)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    return AxisGrid(nodes, weights, "graded")


def _geometric_ratio(count: int, target: float) -> float:
    """Ratio r > 1 with 1 + r + ... + r^(count-1) = target."""
    total = lambda r: (r**count - 1.0) / (r - 1.0)
    lo, hi = 1.0 + 1e-12, 2.0
    while total(hi) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if total(mid) < target else (lo, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PhaseGrid:
    theta: AxisGrid
    s: AxisGrid
    h: AxisGrid

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.theta), len(self.s), len(self.h)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def s_max(self) -> float:
        return float(self.s.nodes[-1])

    def weights(self) -> np.ndarray:
        return self.theta.weights[:, None, None] * self.s.weights[None, :, None] * self.h.weights


def build_phase_grid(n_theta: int, n_s: int, s_max: float, n_h: int) -> PhaseGrid:
    """Uniform periodic theta, graded s on [0, s_max], Gauss-Legendre h."""
    if s_max <= 1.0:
        raise ValueError(f"s_max must exceed 1, got {s_max}")
    return PhaseGrid(periodic_axis(n_theta), graded_axis(n_s, s_max), gauss_axis(n_h))


@dataclass
class PhaseField:
    grid: PhaseGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    @property
    def scalar_kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    def __sub__(self, other: PhaseField) -> PhaseField:
        return PhaseField(self.grid, self.values - other.values)

    def __add__(self, other: PhaseField) -> PhaseField:
        return PhaseField(self.grid, self.values + other.values)

    def __mul__(self, c) -> PhaseField:
        return PhaseField(self.grid, self.values * c)

    __rmul__ = __mul__


def field_from_function(grid: PhaseGrid, fn) -> PhaseField:
    th, s, h = np.meshgrid(grid.theta.nodes, grid.s.nodes, grid.h.nodes, indexing="ij")
    return PhaseField(grid, fn(th, s, h))


def equilibrium_field(grid: PhaseGrid, mass: float = 1.0) -> PhaseField:
    """mass * E(s, h) / (2 pi) on the grid."""
    e = eval_E(grid.s.nodes[:, None], grid.h.nodes[None, :])
    values = np.broadcast_to(mass * e / TWO_PI, grid.shape).copy()
    return PhaseField(grid, values)


def integrate(field: PhaseField):
    return np.tensordot(field.values, field.grid.weights(), axes=3)[()]


def lp_norm(field: PhaseField, p) -> float:
    mag = np.abs(field.values)
    if p in (np.inf, "inf"):
        return float(mag.max(initial=0.0))
    p = float(p)
    if p not in (1.0, 2.0):
        raise ValueError(f"unsupported norm order {p}")
    return float(np.tensordot(mag**p, field.grid.weights(), axes=3) ** (1.0 / p))


def _tail_beyond_one(s_cut: float, n: int = 48) -> float:
    """Mass of E beyond s_cut >= 1.

    Only pairs near the corner (h, h') = (1, -1) reach flight times above 1.
    Writing a = 1 - alpha, b = -1 + beta on the reduced cone, the alpha
    integral is analytic and beta runs over (0, 1/s_cut].
    """
    x, w = gauss_legendre(n)
    top = 1.0 / s_cut
    # grade towards beta = 0 where the integrand has a logarithmic factor
    edges = top * np.concatenate([[0.0], 4.0 ** np.arange(-8, 1)])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        beta = lo + 0.5 * (hi - lo) * (x + 1.0)
        reach = 1.0 / beta
        excess = (
            (reach - s_cut)
            - s_cut * np.log(reach / s_cut)
            - 0.5 * beta * (reach**2 - s_cut**2)
            + beta * s_cut * (reach - s_cut)
        )
        weight = np.log((2.0 - beta) / (2.0 - 2.0 * beta))
        total += 0.5 * (hi - lo) * np.sum(w * weight * excess)
    return 4.0 * KERNEL_SCALE * total


def tail_estimate(s_cut: float) -> float:
    """Mass of the equilibrium E beyond flight time s_cut."""
    if s_cut <= 0:
        raise ValueError("s_cut must be positive")
    if s_cut >= 1.0:
        return _tail_beyond_one(s_cut)
    head = 2.0 * (min(s_cut, 0.5) - KERNEL_SCALE * min(s_cut, 0.5) ** 2)
    if s_cut > 0.5:
        x, w = gauss_legendre(24)
        s = 0.5 + 0.5 * (s_cut - 0.5) * (x + 1.0)
        hx, hw = gauss_legendre(40)
        # E(s, .) is even with kinks at |h| = 1/s - 1 and |h| = 0
        acc = 0.0
        for si, wi in zip(s, w):
            kink = 1.0 / si - 1.0
            for lo, hi in ((0.0, kink), (kink, 1.0)):
                hh = lo + 0.5 * (hi - lo) * (hx + 1.0)
                acc += wi * (hi - lo) * np.sum(hw * eval_E(si, hh))
        head += 0.5 * (s_cut - 0.5) * acc
    return 1.0 - head


def shift_periodic(values: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of f(theta + shift) along axis 0.

    values has shape (n_theta, ..., m) and shifts broadcasts against the
    trailing axes.  The Nyquist mode is moved by cos(n/2 * shift), which keeps
    real data real.
    """
    n = values.shape[0]
    coef = np.fft.fft(values, axis=0)
    modes = np.fft.fftfreq(n, 1.0 / n)
    phase = np.exp(1j * modes.reshape((n,) + (1,) * (values.ndim - 1)) * shifts)
    phase[n // 2] = np.cos(0.5 * n * shifts)
    out = np.fft.ifft(coef * phase, axis=0)
    return out.real if not np.iscomplexobj(values) else out


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write(Path(path), text.encode())


def write_field_csv(field: PhaseField, path) -> None:
    """Columns theta, s, h, re, im with theta slowest and h fastest."""
    th, s, h = np.meshgrid(field.grid.theta.nodes, field.grid.s.nodes, field.grid.h.nodes, indexing="ij")
    vals = np.asarray(field.values, complex)
    table = np.column_stack([th.ravel(), s.ravel(), h.ravel(), vals.real.ravel(), vals.imag.ravel()])
    lines = ["theta,s,h,re,im"] + [",".join(repr(float(v)) for v in row) for row in table]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_field_binary(values: np.ndarray, path) -> None:
    """Binary dump: 8-byte magic, int64 rank, int64 axis sizes, float64 row-major data.

    Complex arrays gain a trailing axis of size 2 holding (re, im).
    """
    arr = np.asarray(values)
    if np.iscomplexobj(arr):
        arr = np.stack([arr.real, arr.imag], axis=-1)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = BINARY_MAGIC + struct.pack(f"<q{arr.ndim}q", arr.ndim, *arr.shape)
    _atomic_write(Path(path), header + arr.tobytes())


def read_field_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError("not a field dump")
    (rank,) = struct.unpack_from("<q", raw, 8)
    shape = struct.unpack_from(f"<{rank}q", raw, 16)
    offset = 16 + 8 * rank
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(shape).copy()
