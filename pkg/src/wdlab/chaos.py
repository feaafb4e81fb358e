"""Exact Wiener-chaos computations for polynomial functionals (d = 1).

A chaos expansion stores the symmetric kernels f_n of

    xi = f_0 + sum_{n>=1} I_n(f_n),

each kernel a function on the grid cells, represented as an array with n
axes of length M (value on a product of cells).  With the normalization
E I_n(f)^2 = n! ||f||^2 for symmetric f, all second-moment quantities reduce
to weighted tensor sums, which makes this module an oracle layer: no
sampling, only quadrature-exact arithmetic on the kernels.

expand_library turns the polynomial functionals of the library (terminal
value, its square, polynomials of increments over pairwise disjoint blocks)
into expansions via the Hermite decomposition of monomials,

    x^e = h^{e/2} sum_{j = e, e-2, ...} e! / (j! 2^m m!) He_j(x / sqrt(h)),

with m = (e - j)/2, and He_j(I_1(v)) = I_j(v^{tensor j}) for a unit vector v.
Products over disjoint blocks merge into a single iterated integral, so the
kernels come out as symmetrized outer products of normalized indicators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core_paths import TimeGrid
from .functionals import (ConstantFunctional, LinearTerminal, PolyIncrements,
                          ScaledFunctional, ShiftedFunctional, SquareTerminal,
                          SumFunctional, WienerFunctional)

MAX_ORDER = 4
_MAX_KERNEL_ELEMENTS = 5_000_000


class UnsupportedFunctionalError(TypeError):
    """expand_library cannot produce an exact expansion for this functional."""


def symmetrize(arr: np.ndarray) -> np.ndarray:
    """Average over all axis permutations."""
    n = arr.ndim
    if n <= 1:
        return np.asarray(arr, dtype=float)
    perms = list(itertools.permutations(range(n)))
    out = np.zeros_like(arr, dtype=float)
    for p in perms:
        out += np.transpose(arr, p)
    return out / len(perms)


def _weighted_norm_sq(arr: np.ndarray, w: np.ndarray) -> float:
    """sum arr^2 * w x ... x w over all axes."""
    acc = np.asarray(arr, dtype=float) ** 2
    for _ in range(acc.ndim):
        acc = np.tensordot(acc, w, axes=([0], [0]))
    return float(acc)


@dataclass(frozen=True)
class ChaosExpansion:
    """Symmetric kernels {n: f_n} on a grid; f_0 is the scalar mean."""

    grid: TimeGrid
    f0: float
    kernels: dict  # n >= 1 -> ndarray with n axes of length n_cells

    def __post_init__(self) -> None:
        m = self.grid.n_cells
        fixed = {}
        for n, arr in self.kernels.items():
            if not (1 <= n <= MAX_ORDER):
                raise ValueError(f"chaos order {n} outside 1..{MAX_ORDER}")
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (m,) * n:
                raise ValueError(f"kernel {n} must have shape {(m,) * n}")
            if arr.size > _MAX_KERNEL_ELEMENTS:
                raise ValueError("kernel too large for dense storage")
            fixed[n] = symmetrize(arr)
        object.__setattr__(self, "kernels", fixed)

    @property
    def max_order(self) -> int:
        return max(self.kernels, default=0)

    def kernel_norm_sq(self, n: int) -> float:
        if n == 0:
            return self.f0 ** 2
        if n not in self.kernels:
            return 0.0
        return _weighted_norm_sq(self.kernels[n], self.grid.widths)

    def second_moment(self) -> float:
        """E xi^2 = f_0^2 + sum n! ||f_n||^2."""
        total = self.f0 ** 2
        for n in self.kernels:
            total += math.factorial(n) * self.kernel_norm_sq(n)
        return total

    def variance(self) -> float:
        return self.second_moment() - self.f0 ** 2


def _merge(dst: dict, n: int, arr: np.ndarray) -> None:
    if n in dst:
        dst[n] = dst[n] + arr
    else:
        dst[n] = arr


def _hermite_coeff(e: int, j: int) -> float:
    # x^e = sum_j a(e,j) He_j(x), j = e, e-2, ..., a = e!/(j! 2^m m!), m=(e-j)/2
    m = (e - j) // 2
    return math.factorial(e) / (math.factorial(j) * 2 ** m * math.factorial(m))


def _expand_poly(xi: PolyIncrements) -> ChaosExpansion:
    grid = xi.grid
    m_cells = grid.n_cells
    masks = []
    for sl in xi.slices:
        mask = np.zeros(m_cells, dtype=bool)
        mask[sl] = True
        masks.append(mask)
    for i, j in itertools.combinations(range(len(masks)), 2):
        if np.any(masks[i] & masks[j]):
            raise UnsupportedFunctionalError(
                "expansion needs pairwise disjoint increment blocks")
    widths = grid.widths
    # normalized indicator of block i as a cell function: I_1 of it is N(0,1)
    vecs, hs = [], []
    for mask in masks:
        h = float(widths[mask].sum())
        v = np.where(mask, 1.0 / np.sqrt(h), 0.0)
        vecs.append(v)
        hs.append(h)

    f0 = 0.0
    kernels: dict = {}
    for coeff, exps in xi.monomials:
        if sum(exps) > MAX_ORDER:
            raise UnsupportedFunctionalError(
                f"monomial degree {sum(exps)} exceeds {MAX_ORDER}")
        choices = []
        for e in exps:
            choices.append([(j, _hermite_coeff(e, j)) for j in range(e, -1, -2)])
        for combo in itertools.product(*choices):
            scalar = coeff
            for (j, a), h, e in zip(combo, hs, (int(e) for e in exps)):
                scalar *= a * h ** (e / 2.0)
            order = sum(j for j, _ in combo)
            if order == 0:
                f0 += scalar
                continue
            tensor = None
            for (j, _), v in zip(combo, vecs):
                for _ in range(j):
                    tensor = v if tensor is None else np.multiply.outer(tensor, v)
            _merge(kernels, order, scalar * symmetrize(tensor))
    return ChaosExpansion(grid, f0, kernels)


def expand_library(xi: WienerFunctional) -> ChaosExpansion:
    """Exact expansion of a supported polynomial functional."""
    if isinstance(xi, ConstantFunctional):
        return ChaosExpansion(xi.grid, xi.value, {})
    if isinstance(xi, LinearTerminal):
        horizon = xi.grid.horizon
        poly = PolyIncrements(xi.grid, [(0.0, horizon)], [(1.0, (1,))], xi.coord)
        return _expand_poly(poly)
    if isinstance(xi, SquareTerminal):
        horizon = xi.grid.horizon
        poly = PolyIncrements(xi.grid, [(0.0, horizon)], [(1.0, (2,))], xi.coord)
        return _expand_poly(poly)
    if isinstance(xi, PolyIncrements):
        return _expand_poly(xi)
    if isinstance(xi, ScaledFunctional):
        base = expand_library(xi.base)
        return ChaosExpansion(base.grid, xi.lam * base.f0,
                              {n: xi.lam * k for n, k in base.kernels.items()})
    if isinstance(xi, ShiftedFunctional):
        base = expand_library(xi.base)
        return ChaosExpansion(base.grid, base.f0 + xi.c, dict(base.kernels))
    if isinstance(xi, SumFunctional):
        a = expand_library(xi.first)
        bexp = expand_library(xi.second)
        kernels = dict(a.kernels)
        for n, arr in bexp.kernels.items():
            _merge(kernels, n, arr)
        return ChaosExpansion(a.grid, a.f0 + bexp.f0, kernels)
    raise UnsupportedFunctionalError(
        f"no exact chaos expansion for {type(xi).__name__}")


def conditional_residual_exact(exp: ChaosExpansion, a: float, b: float) -> float:
    """|| xi - E(xi | G_a^b) ||_2 computed from the kernels.

    Conditioning keeps exactly the kernel mass supported outside (a, b]^n,
    so the squared residual is sum_n n! (||f_n||^2 - ||f_n restricted||^2).
    """
    grid = exp.grid
    sl = grid.cell_slice(a, b)
    outside = np.ones(grid.n_cells, dtype=bool)
    outside[sl] = False
    idx = np.flatnonzero(outside)
    w_out = grid.widths[idx]
    total = 0.0
    for n, f in exp.kernels.items():
        full = _weighted_norm_sq(f, grid.widths)
        kept = _weighted_norm_sq(f[np.ix_(*([idx] * n))], w_out)
        total += math.factorial(n) * (full - kept)
    return float(np.sqrt(max(total, 0.0)))


class D12Report(NamedTuple):
    value: float       # sqrt( sum (n+1) n! ||f_n||^2 )
    membership: float  # sum n n! ||f_n||^2


def d12_norm(exp: ChaosExpansion) -> D12Report:
    """First-order Sobolev-type norm and the derivative-membership sum."""
    total = exp.f0 ** 2
    member = 0.0
    for n in exp.kernels:
        nn = math.factorial(n) * exp.kernel_norm_sq(n)
        total += (n + 1) * nn
        member += n * nn
    return D12Report(float(np.sqrt(total)), float(member))


@dataclass(frozen=True)
class BdgReport:
    lhs: float
    rhs: float
    rel_error: float
    passed: bool
    interval: tuple[float, float]


def bdg_chaos_check(exp: ChaosExpansion, a: float, b: float, p: float = 2.0,
                    rel_tol: float = 1e-10) -> BdgReport:
    """Conditional residual vs the time integral of the projection kernel.

    At p = 2 both sides are exact:

      LHS^2 = || xi - E(xi|G_a^b) ||_2^2,
      RHS^2 = int_a^b E |mu_s|^2 ds,
      mu_s  = sum_n n I_{n-1}( f_n(., s) restricted to ((0,s] u (b,T])^{n-1} ),

    where the time integral is done cell by cell: inside cell c at position
    x, the partial cell contributes weight (x - left endpoint), and x^j
    integrates to w_c^{j+1}/(j+1).  Binomial bookkeeping over how many of
    the n-1 free axes sit in the partial cell makes the quadrature exact for
    piecewise constant kernels.  Orders p != 2 have no exact identity here.
    """
    if p != 2.0:
        raise NotImplementedError("exact two-sided computation exists only at p=2")
    grid = exp.grid
    sl = grid.cell_slice(a, b)
    ib = sl.stop
    w = grid.widths
    rhs_sq = 0.0
    for n, f in exp.kernels.items():
        r = n - 1
        pref = n * math.factorial(n)
        for c in range(sl.start, ib):
            g = f[c, ...] if r > 0 else np.asarray(f[c])
            m0 = w.copy()
            blocked = np.zeros(grid.n_cells, dtype=bool)
            blocked[c:ib] = True  # cell c is the partial one; later swap cells excluded
            m0[blocked] = 0.0
            for j in range(r + 1):
                pinned = g[(c,) * j + (Ellipsis,)] if j else g
                acc = np.asarray(pinned, dtype=float) ** 2
                for _ in range(r - j):
                    acc = np.tensordot(acc, m0, axes=([0], [0]))
                s_j = float(acc)
                rhs_sq += pref * math.comb(r, j) * s_j \
                    * w[c] ** (j + 1) / (j + 1)
    lhs = conditional_residual_exact(exp, a, b)
    rhs = float(np.sqrt(max(rhs_sq, 0.0)))
    denom = max(lhs * lhs, rhs_sq, 1e-300)
    rel = abs(lhs * lhs - rhs_sq) / denom
    return BdgReport(lhs, rhs, rel, rel <= rel_tol, (a, b))
