"""Time grids, reproducible Gaussian streams, and the increment rotation.

Two independent d-dimensional Brownian motions W and W' are simulated as
increment arrays on a common partition 0 = t_0 < ... < t_M = T.  A profile
phi: (0,T] -> [0,1], constant on grid cells, rotates the increments of W
toward those of W':

    dV_k = sqrt(1 - phi_k^2) dW_k + phi_k dW'_k.

Every cell keeps the centered Gaussian law with variance dt_k because the
two coefficients lie on the unit circle.  phi == 0 reproduces W exactly,
phi == 1 reproduces W', and the indicator of (a, b] swaps the increments on
that interval only, so the cumulative rotated path equals W on [0, a],
W_a + (W'_t - W'_a) on (a, b], and W_a + (W'_b - W'_a) + (W_t - W_b) after b.

Profiles carry the L_2 pseudometric

    delta(phi, psi) = (sum_k (phi_k - psi_k)^2 dt_k)^(1/2),

the distance in which the rotated evaluation of a fixed functional is
continuous.

Randomness is counter-based: a (seed, stream_id) pair keys a Philox
generator, so any block of draws is reproducible bit for bit regardless of
execution order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Two objects that must share a TimeGrid do not."""


class ProfileError(ValueError):
    """Invalid rotation profile (values outside [0,1], endpoints off-grid, ...)."""


_NODE_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing nodes t_0 = 0 < t_1 < ... < t_M = T."""

    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("first node must be 0")
        if not np.all(np.diff(nodes) > 0.0):
            raise ValueError("nodes must be strictly increasing")
        nodes.setflags(write=False)

    @classmethod
    def uniform(cls, horizon: float, n_cells: int) -> "TimeGrid":
        if horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        if n_cells < 1:
            raise ValueError("need at least one cell")
        return cls(np.linspace(0.0, horizon, n_cells + 1))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    def node_index(self, t: float) -> int:
        """Index of the node equal to t; ProfileError if t is not a node."""
        tol = _NODE_ATOL * max(1.0, self.horizon)
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > tol:
            raise ProfileError(f"{t!r} is not a grid node")
        return i

    def cell_slice(self, a: float, b: float) -> slice:
        """Cells covering (a, b]; both endpoints must be nodes."""
        ia, ib = self.node_index(a), self.node_index(b)
        if ia >= ib:
            raise ProfileError(f"need a < b, got ({a!r}, {b!r})")
        return slice(ia, ib)

    def matches(self, other: "TimeGrid") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TimeGrid) and self.matches(other)

    def __hash__(self) -> int:
        return hash(self.nodes.tobytes())


def require_same_grid(a: TimeGrid, b: TimeGrid) -> None:
    if not a.matches(b):
        raise GridMismatchError("objects live on different time grids")


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Each call to generator() restarts the Philox counter, so the same
    (seed, stream_id) always produces the same draws, independently of what
    any other stream did before or concurrently.
    """

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def block(self, offset: int) -> "RngStream":
        """Derived stream for a sub-block (batch, inner loop, replica)."""
        return RngStream(self.seed, (self.stream_id + offset) & _MASK64)


@dataclass(frozen=True)
class BrownianPair:
    """Coupled increment arrays of two independent Brownian motions.

    dW and dWp have shape (n_samples, M, d); column k is N(0, dt_k) per
    coordinate, and the two arrays are independent.  Increments are stored,
    never cumulative paths; use cumulative() on demand.
    """

    dW: np.ndarray
    dWp: np.ndarray
    grid: TimeGrid

    def __post_init__(self) -> None:
        if self.dW.shape != self.dWp.shape:
            raise ValueError("dW and dW' must have identical shapes")
        if self.dW.ndim != 3 or self.dW.shape[1] != self.grid.n_cells:
            raise ValueError("increment arrays must be (n, M, d) on the grid")

    @property
    def n_samples(self) -> int:
        return self.dW.shape[0]

    @property
    def dim(self) -> int:
        return self.dW.shape[2]


def sample_pair(grid: TimeGrid, d: int, stream: RngStream,
                n_samples: int = 1) -> BrownianPair:
    """Draw n_samples coupled (W, W') increment blocks on the grid."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    gen = stream.generator()
    z = gen.standard_normal((n_samples, grid.n_cells, 2 * d))
    scale = np.sqrt(grid.widths)[None, :, None]
    return BrownianPair(dW=z[:, :, :d] * scale,
                        dWp=z[:, :, d:] * scale,
                        grid=grid)


def sample_increments(grid: TimeGrid, d: int, stream: RngStream,
                      n_samples: int = 1) -> np.ndarray:
    """Increments of a single Brownian motion, shape (n, M, d)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    gen = stream.generator()
    z = gen.standard_normal((n_samples, grid.n_cells, d))
    return z * np.sqrt(grid.widths)[None, :, None]


def cumulative(incr: np.ndarray) -> np.ndarray:
    """Path values at all nodes, shape (n, M+1, d), starting at 0."""
    n, m, d = incr.shape
    out = np.empty((n, m + 1, d), dtype=incr.dtype)
    out[:, 0, :] = 0.0
    np.cumsum(incr, axis=1, out=out[:, 1:, :])
    return out


@dataclass(frozen=True, eq=False)
class RotationProfile:
    """Grid-piecewise-constant element of the profile space, values in [0,1]."""

    values: np.ndarray
    grid: TimeGrid
    label: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n_cells,):
            raise ProfileError("profile needs one value per grid cell")
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ProfileError("profile values must lie in [0, 1]")
        values.setflags(write=False)

    @classmethod
    def constant(cls, grid: TimeGrid, r: float) -> "RotationProfile":
        return cls(np.full(grid.n_cells, float(r)), grid, label=f"const[{r:g}]")

    @classmethod
    def indicator(cls, grid: TimeGrid, a: float, b: float) -> "RotationProfile":
        """chi_{(a,b]}; endpoints must be grid nodes (no cell splitting)."""
        sl = grid.cell_slice(a, b)
        v = np.zeros(grid.n_cells)
        v[sl] = 1.0
        return cls(v, grid, label=f"swap({a:g},{b:g}]")

    @classmethod
    def custom(cls, grid: TimeGrid, values) -> "RotationProfile":
        return cls(np.asarray(values, dtype=float), grid, label="custom")


def rotate(pair: BrownianPair, profile: RotationProfile) -> np.ndarray:
    """Increments of the rotated path, shape (n, M, d).

    Cells where the profile is exactly 0 or 1 are copied from dW / dW'
    verbatim, so the lattice identities hold bitwise.
    """
    require_same_grid(pair.grid, profile.grid)
    v = profile.values
    keep = np.sqrt(1.0 - v * v)
    out = keep[None, :, None] * pair.dW + v[None, :, None] * pair.dWp
    zero = v == 0.0
    one = v == 1.0
    if zero.any():
        out[:, zero, :] = pair.dW[:, zero, :]
    if one.any():
        out[:, one, :] = pair.dWp[:, one, :]
    return out


def delta_distance(phi: RotationProfile, psi: RotationProfile) -> float:
    """L_2((0,T]) distance between two profiles on a shared grid."""
    require_same_grid(phi.grid, psi.grid)
    diff = phi.values - psi.values
    return float(np.sqrt(np.sum(diff * diff * phi.grid.widths)))
