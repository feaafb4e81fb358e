"""Random variables on the simulated Wiener space.

A functional consumes an increment array of shape (n, M, d) and returns one
value per sample.  Everything downstream (decoupled evaluation, conditional
expectations, seminorms) is built from this single entry point, so a
functional is usable in every estimator as soon as evaluate() works.

Functionals that know their Malliavin derivative expose it as a piecewise
constant process on the same grid, shape (n, M, d): entry k is the value of
D_s on the cell (t_k, t_{k+1}].  Everything here is exact given the
discretised path except DiffusionTerminal, whose path and tangent process
are Euler approximations.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core_paths import (BrownianPair, RotationProfile, TimeGrid, cumulative,
                         require_same_grid, rotate)


class NoMalliavinError(NotImplementedError):
    """The functional does not provide a Malliavin derivative."""


class WienerFunctional:
    """Base class: a map from increment blocks to sample values."""

    name: str = "functional"
    grid: TimeGrid
    dim: int = 1
    has_malliavin: bool = False

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        raise NoMalliavinError(f"{self.name} has no Malliavin derivative")

    def _check(self, incr: np.ndarray) -> None:
        if incr.ndim != 3:
            raise ValueError("increments must be (n_samples, M, d)")
        if incr.shape[1] != self.grid.n_cells:
            raise ValueError(f"{self.name}: increment array does not match grid")
        if incr.shape[2] < self.dim:
            raise ValueError(f"{self.name}: needs at least {self.dim} coordinates")


def evaluate(xi: WienerFunctional, incr: np.ndarray) -> np.ndarray:
    xi._check(incr)
    return xi.evaluate(incr)


def decoupled_evaluate(xi: WienerFunctional, pair: BrownianPair,
                       profile: RotationProfile) -> np.ndarray:
    """xi read along the rotated path: evaluate(rotate(pair, profile))."""
    require_same_grid(xi.grid, pair.grid)
    return evaluate(xi, rotate(pair, profile))


def malliavin_path(xi: WienerFunctional, incr: np.ndarray) -> np.ndarray:
    xi._check(incr)
    if not xi.has_malliavin:
        raise NoMalliavinError(f"{xi.name} has no Malliavin derivative")
    return xi.malliavin(incr)


class LinearTerminal(WienerFunctional):
    """xi = W_T (one coordinate).  D_s = 1 on (0, T]."""

    has_malliavin = True

    def __init__(self, grid: TimeGrid, coord: int = 0) -> None:
        self.grid = grid
        self.coord = coord
        self.dim = coord + 1
        self.name = "linear-terminal"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return incr[:, :, self.coord].sum(axis=1)

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        d = np.zeros_like(incr)
        d[:, :, self.coord] = 1.0
        return d


class SquareTerminal(WienerFunctional):
    """xi = W_T^2.  D_s = 2 W_T, constant in s."""

    has_malliavin = True

    def __init__(self, grid: TimeGrid, coord: int = 0) -> None:
        self.grid = grid
        self.coord = coord
        self.dim = coord + 1
        self.name = "square-terminal"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        w = incr[:, :, self.coord].sum(axis=1)
        return w * w

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        w = incr[:, :, self.coord].sum(axis=1)
        d = np.zeros_like(incr)
        d[:, :, self.coord] = 2.0 * w[:, None]
        return d


class ConstantFunctional(WienerFunctional):
    """xi identically equal to a constant; D = 0."""

    has_malliavin = True

    def __init__(self, grid: TimeGrid, value: float) -> None:
        self.grid = grid
        self.value = float(value)
        self.name = f"constant[{value:g}]"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return np.full(incr.shape[0], self.value)

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        return np.zeros_like(incr)


class PolyIncrements(WienerFunctional):
    """Polynomial in finitely many path increments.

    intervals is a list of (a, b] blocks with node endpoints; monomials is a
    list of (coeff, exponents) terms, exponents one per interval, and

        xi = sum_m coeff_m * prod_i X_i^{e_{m,i}},   X_i = W_{b_i} - W_{a_i}.

    The gradient is analytic, so the Malliavin derivative is exact:
    D_s xi = d xi / d X_i on cells inside interval i (blocks may overlap;
    contributions add).
    """

    has_malliavin = True

    def __init__(self, grid: TimeGrid,
                 intervals: Sequence[tuple[float, float]],
                 monomials: Sequence[tuple[float, Sequence[int]]],
                 coord: int = 0) -> None:
        self.grid = grid
        self.coord = coord
        self.dim = coord + 1
        self.intervals = [(float(a), float(b)) for a, b in intervals]
        self.slices = [grid.cell_slice(a, b) for a, b in self.intervals]
        self.monomials = []
        for coeff, exps in monomials:
            exps = tuple(int(e) for e in exps)
            if len(exps) != len(self.intervals):
                raise ValueError("each monomial needs one exponent per interval")
            if any(e < 0 for e in exps):
                raise ValueError("exponents must be >= 0")
            self.monomials.append((float(coeff), exps))
        self.name = f"poly[{len(self.intervals)} blocks]"

    @classmethod
    def product_of_increments(cls, grid: TimeGrid,
                              intervals: Sequence[tuple[float, float]],
                              coeff: float = 1.0,
                              coord: int = 0) -> "PolyIncrements":
        return cls(grid, intervals, [(coeff, (1,) * len(intervals))], coord)

    def _block_values(self, incr: np.ndarray) -> np.ndarray:
        cols = [incr[:, sl, self.coord].sum(axis=1) for sl in self.slices]
        return np.stack(cols, axis=1)  # (n, n_blocks)

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        x = self._block_values(incr)
        out = np.zeros(incr.shape[0])
        for coeff, exps in self.monomials:
            term = np.full(incr.shape[0], coeff)
            for i, e in enumerate(exps):
                if e:
                    term = term * x[:, i] ** e
            out += term
        return out

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        x = self._block_values(incr)
        d = np.zeros_like(incr)
        for i, sl in enumerate(self.slices):
            grad_i = np.zeros(incr.shape[0])
            for coeff, exps in self.monomials:
                e = exps[i]
                if e == 0:
                    continue
                term = np.full(incr.shape[0], coeff * e)
                for j, ej in enumerate(exps):
                    p = ej - 1 if j == i else ej
                    if p:
                        term = term * x[:, j] ** p
                grad_i += term
            d[:, sl, self.coord] += grad_i[:, None]
        return d


class DiffusionTerminal(WienerFunctional):
    """xi = g(X_T) for an Euler scheme dX = b(t,X) dt + sigma(t,X) dW.

    The Malliavin derivative uses the first-variation (tangent) process and
    is available once b_x, sigma_x and g' are supplied:

        D_{s} xi = g'(X_T) sigma(t_k, X_k) prod_{j>k} (1 + b_x dt_j + sigma_x dW_j)

    for s in cell k.  Both path and tangent share one forward sweep.
    """

    def __init__(self, grid: TimeGrid,
                 drift: Callable[[float, np.ndarray], np.ndarray],
                 sigma: Callable[[float, np.ndarray], np.ndarray],
                 g: Callable[[np.ndarray], np.ndarray],
                 x0: float,
                 coord: int = 0,
                 drift_dx: Callable[[float, np.ndarray], np.ndarray] | None = None,
                 sigma_dx: Callable[[float, np.ndarray], np.ndarray] | None = None,
                 g_prime: Callable[[np.ndarray], np.ndarray] | None = None,
                 name: str = "diffusion-terminal") -> None:
        self.grid = grid
        self.drift = drift
        self.sigma = sigma
        self.g = g
        self.x0 = float(x0)
        self.coord = coord
        self.dim = coord + 1
        self.drift_dx = drift_dx
        self.sigma_dx = sigma_dx
        self.g_prime = g_prime
        self.has_malliavin = (drift_dx is not None and sigma_dx is not None
                              and g_prime is not None)
        self.name = name

    def path(self, incr: np.ndarray) -> np.ndarray:
        """Euler path at all nodes, shape (n, M+1)."""
        self._check(incr)
        dw = incr[:, :, self.coord]
        dt = self.grid.widths
        t = self.grid.nodes
        x = np.empty((incr.shape[0], self.grid.n_cells + 1))
        x[:, 0] = self.x0
        for k in range(self.grid.n_cells):
            xk = x[:, k]
            x[:, k + 1] = xk + self.drift(t[k], xk) * dt[k] \
                + self.sigma(t[k], xk) * dw[:, k]
        return x

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return self.g(self.path(incr)[:, -1])

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        if not self.has_malliavin:
            raise NoMalliavinError(f"{self.name}: supply drift_dx, sigma_dx, g_prime")
        dw = incr[:, :, self.coord]
        dt = self.grid.widths
        t = self.grid.nodes
        m = self.grid.n_cells
        x = self.path(incr)
        # E_j = 1 + b_x dt + sigma_x dW collects the tangent flow over cell j;
        # suffix[k] = prod_{j >= k} E_j, suffix[m] = 1
        factors = np.empty((incr.shape[0], m))
        sig = np.empty((incr.shape[0], m))
        for j in range(m):
            xj = x[:, j]
            factors[:, j] = 1.0 + self.drift_dx(t[j], xj) * dt[j] \
                + self.sigma_dx(t[j], xj) * dw[:, j]
            sig[:, j] = self.sigma(t[j], xj)
        suffix = np.ones((incr.shape[0], m + 1))
        for j in range(m - 1, -1, -1):
            suffix[:, j] = suffix[:, j + 1] * factors[:, j]
        # scalar-returning g_prime broadcasts like scalar drift/sigma do
        gp = np.broadcast_to(np.asarray(self.g_prime(x[:, -1]), dtype=float),
                             (incr.shape[0],))
        d = np.zeros_like(incr)
        d[:, :, self.coord] = gp[:, None] * sig * suffix[:, 1:]
        return d


class BVIndicator(WienerFunctional):
    """chi_{[threshold, inf)} composed with a base functional.

    Bounded with total variation 1; no Malliavin derivative.
    """

    has_malliavin = False
    variation = 1.0

    def __init__(self, base: WienerFunctional, threshold: float = 0.0) -> None:
        self.base = base
        self.grid = base.grid
        self.dim = base.dim
        self.threshold = float(threshold)
        self.name = f"indicator[{base.name}>={threshold:g}]"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return (self.base.evaluate(incr) >= self.threshold).astype(float)


def series_layout(n_terms: int, horizon: float = 1.0
                  ) -> tuple[TimeGrid, list[tuple[float, float]]]:
    """Grid and intervals for the lacunary cosine series, terms l = 1..n_terms.

    Interval l has width horizon * 4^-l; consecutive intervals are separated
    by a gap cell of width horizon * 4^-(l+1), and a final cell runs to the
    horizon.  Beyond 15 terms the cells would shrink below what float64
    resolves against round-off in the node ladder.
    """
    if n_terms < 1:
        raise ValueError("need at least one term")
    if n_terms > 15:
        raise ValueError("series supports at most 15 terms")
    nodes = [0.0]
    intervals = []
    s = 0.0
    for l in range(1, n_terms + 1):
        t = s + horizon * 4.0 ** (-l)
        intervals.append((s, t))
        nodes.append(t)
        if l < n_terms:
            s = t + horizon * 4.0 ** (-(l + 1))
            nodes.append(s)
    nodes.append(horizon)
    return TimeGrid(np.array(nodes)), intervals


class CounterexampleSeries(WienerFunctional):
    """xi_L = sum_{l<=L} l * cos(W_{s_l}) * (W_{t_l} - W_{s_l}).

    The intervals (s_l, t_l] shrink geometrically (width T 4^-l) and are
    pairwise disjoint.  Swapping the increments on the last interval alone
    leaves every earlier term unchanged and refreshes the last increment
    independently, which is what makes the family's interval seminorm grow
    linearly in L while xi_L itself stays bounded in L_p.

    D_s xi on (0, s_l] picks up -l sin(W_{s_l}) (W_{t_l} - W_{s_l}); on
    (s_l, t_l] it picks up l cos(W_{s_l}).
    """

    has_malliavin = True

    def __init__(self, grid: TimeGrid,
                 intervals: Sequence[tuple[float, float]],
                 coord: int = 0) -> None:
        self.grid = grid
        self.coord = coord
        self.dim = coord + 1
        self.intervals = [(float(a), float(b)) for a, b in intervals]
        self.s_idx = [grid.node_index(a) for a, _ in self.intervals]
        self.t_idx = [grid.node_index(b) for _, b in self.intervals]
        self.name = f"cosine-series[L={len(self.intervals)}]"

    @classmethod
    def build(cls, n_terms: int, horizon: float = 1.0) -> "CounterexampleSeries":
        grid, intervals = series_layout(n_terms, horizon)
        return cls(grid, intervals)

    @property
    def n_terms(self) -> int:
        return len(self.intervals)

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        w = cumulative(incr)[:, :, self.coord]
        out = np.zeros(incr.shape[0])
        for l, (i, j) in enumerate(zip(self.s_idx, self.t_idx), start=1):
            out += l * np.cos(w[:, i]) * (w[:, j] - w[:, i])
        return out

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        w = cumulative(incr)[:, :, self.coord]
        d = np.zeros_like(incr)
        for l, (i, j) in enumerate(zip(self.s_idx, self.t_idx), start=1):
            ws = w[:, i]
            if i > 0:
                d[:, :i, self.coord] += (-l * np.sin(ws) * (w[:, j] - ws))[:, None]
            d[:, i:j, self.coord] += (l * np.cos(ws))[:, None]
        return d


class ScaledFunctional(WienerFunctional):
    """lam * xi, with the derivative scaled alongside."""

    def __init__(self, base: WienerFunctional, lam: float) -> None:
        self.base = base
        self.grid = base.grid
        self.dim = base.dim
        self.lam = float(lam)
        self.has_malliavin = base.has_malliavin
        self.name = f"{lam:g}*{base.name}"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return self.lam * self.base.evaluate(incr)

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        return self.lam * self.base.malliavin(incr)


class ShiftedFunctional(WienerFunctional):
    """xi + c; shifts drop out of every difference-based quantity."""

    def __init__(self, base: WienerFunctional, c: float) -> None:
        self.base = base
        self.grid = base.grid
        self.dim = base.dim
        self.c = float(c)
        self.has_malliavin = base.has_malliavin
        self.name = f"{base.name}+{c:g}"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return self.base.evaluate(incr) + self.c

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        return self.base.malliavin(incr)


class SumFunctional(WienerFunctional):
    """xi_1 + xi_2 on a shared grid."""

    def __init__(self, first: WienerFunctional, second: WienerFunctional) -> None:
        require_same_grid(first.grid, second.grid)
        self.first = first
        self.second = second
        self.grid = first.grid
        self.dim = max(first.dim, second.dim)
        self.has_malliavin = first.has_malliavin and second.has_malliavin
        self.name = f"({first.name})+({second.name})"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        return self.first.evaluate(incr) + self.second.evaluate(incr)

    def malliavin(self, incr: np.ndarray) -> np.ndarray:
        return self.first.malliavin(incr) + self.second.malliavin(incr)
