"""Derivative-based seminorms and their interval-seminorm comparison.

Two p-norms of the Malliavin derivative bracket the square-root-weighted
interval seminorm of a functional:

    lip  = esssup_s || |D_s xi| ||_p         (cellwise max; D is cellwise
                                              constant for the library)
    lips = sup_{(a,b]} || ( (b-a)^{-1} int_a^b |D_s xi|^2 ds )^{1/2} ||_p

over the dyadic interval family.  At p = 2 the two coincide (interchanging
expectation and time average); for other p they differ and only the
equivalence with the interval seminorm, up to constants, is testable.

The lacunary cosine series is the stress case: its interval seminorm grows
linearly in the number of terms while the series itself and the square
function of its derivative stay bounded, separating the seminorm from plain
derivative membership.  counterexample_growth measures exactly that:
swapping the increments on the last interval (s_L, t_L] leaves every earlier
term untouched, so the normalized distance equals
sqrt(2) c_p ||cos(W_{s_L})||_p * L for the partial sum of L terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .besov import dyadic_intervals, sup_interval_seminorm
from .core_paths import cumulative, sample_increments
from .estimators import (Estimate, McConfig, _batch_stats, _root_estimate,
                         p_norm, p_norm_diff)
from .core_paths import RotationProfile
from .functionals import (CounterexampleSeries, WienerFunctional,
                          malliavin_path, series_layout)


def gaussian_p_norm(p: float) -> float:
    """c_p = || N(0,1) ||_p = (2^{p/2} Gamma((p+1)/2) / sqrt(pi))^{1/p}."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return (2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0)
            / math.sqrt(math.pi)) ** (1.0 / p)


@dataclass(frozen=True)
class MalliavinReport:
    p: float
    lip: Estimate
    lips: Estimate
    phi2: Estimate
    ratio: float          # phi2 / lips; NaN when degenerate
    ratio_stderr: float
    degenerate: bool
    lip_argmax: tuple[float, float]
    lips_argmax: tuple[float, float]


def _derivative_sq(xi: WienerFunctional, incr: np.ndarray) -> np.ndarray:
    d = malliavin_path(xi, incr)
    return np.sum(d * d, axis=2)  # (n, M) squared Euclidean norm per cell


def malliavin_seminorms(xi: WienerFunctional, p: float, cfg: McConfig,
                        depth: int = 4, d: int = 1,
                        n_sigma: float = 3.0) -> MalliavinReport:
    """Estimate lip, lips and the interval seminorm on one sample stream.

    The grid must contain the dyadic nodes down to `depth` (the interval
    family is shared with the seminorm estimate so the three numbers are
    coupled sample-by-sample).
    """
    grid = xi.grid
    intervals = dyadic_intervals(grid, depth)
    slices = [grid.cell_slice(a, b) for a, b in intervals]
    inv_len = np.array([1.0 / (b - a) for a, b in intervals])
    m_cells = grid.n_cells
    half = p / 2.0

    cell_means = np.empty((cfg.n_batches, m_cells))
    int_means = np.empty((cfg.n_batches, len(intervals)))
    for bt in range(cfg.n_batches):
        incr = sample_increments(grid, d, cfg.stream(bt), cfg.batch_size)
        sq = _derivative_sq(xi, incr)
        cell_means[bt] = np.mean(sq ** half, axis=0)
        w_sq = sq * grid.widths[None, :]
        for j, sl in enumerate(slices):
            avg = np.sum(w_sq[:, sl], axis=1) * inv_len[j]
            int_means[bt, j] = np.mean(avg ** half)

    def pick_max(means: np.ndarray) -> tuple[Estimate, int]:
        m = means.mean(axis=0)
        j = int(np.argmax(m))
        mj, se = _batch_stats(means[:, j])
        return _root_estimate(mj, se, p, cfg.n_samples), j

    lip, k_lip = pick_max(cell_means)
    lips, j_lips = pick_max(int_means)
    phi2 = sup_interval_seminorm(xi, p, cfg, r=2.0, depth=depth, d=d)

    degenerate = lips.value <= n_sigma * lips.stderr
    if degenerate:
        ratio, rse = float("nan"), float("nan")
    else:
        ratio = phi2.estimate.value / lips.value
        rse = ratio * float(np.hypot(
            phi2.estimate.stderr / max(phi2.estimate.value, 1e-300),
            lips.stderr / lips.value))
    return MalliavinReport(
        p, lip, lips, phi2.estimate, ratio, rse, degenerate,
        (float(grid.nodes[k_lip]), float(grid.nodes[k_lip + 1])),
        intervals[j_lips])


def s2_norm(xi: WienerFunctional, p: float, cfg: McConfig,
            d: int = 1) -> Estimate:
    """|| (int_0^T |D_s xi|^2 ds)^{1/2} ||_p of the derivative square function."""
    means = np.empty(cfg.n_batches)
    for bt in range(cfg.n_batches):
        incr = sample_increments(xi.grid, d, cfg.stream(bt), cfg.batch_size)
        sq = _derivative_sq(xi, incr)
        s2 = np.sqrt(np.sum(sq * xi.grid.widths[None, :], axis=1))
        means[bt] = np.mean(s2 ** p)
    m, se = _batch_stats(means)
    return _root_estimate(m, se, p, cfg.n_samples)


@dataclass(frozen=True)
class GrowthRow:
    n_terms: int
    value: Estimate        # F(swap last interval) / sqrt(width)
    series_norm: Estimate  # || xi_L ||_p
    deriv_s2: Estimate     # || S_2(D xi_L) ||_p


@dataclass(frozen=True)
class GrowthReport:
    p: float
    rows: tuple
    kappa_hat: Estimate    # sqrt(2) c_p min_l ||cos(W_{s_l})||_p, measured
    slope: float           # least-squares slope of value vs n_terms
    slope_over_kappa: float


class _CosAtNode(WienerFunctional):
    """cos(W at a fixed grid node); helper for the kappa measurement."""

    def __init__(self, grid, node_idx: int) -> None:
        self.grid = grid
        self.node_idx = node_idx
        self.name = f"cos(W@node{node_idx})"

    def evaluate(self, incr: np.ndarray) -> np.ndarray:
        w = cumulative(incr)[:, self.node_idx, 0]
        return np.cos(w)


def counterexample_growth(n_terms_max: int, p: float, cfg: McConfig,
                          horizon: float = 1.0) -> GrowthReport:
    """Linear growth table for the lacunary cosine series.

    For each L <= n_terms_max the reported value is the normalized
    decoupling distance of the L-term partial sum under a swap of the last
    interval; its exact mean is sqrt(2) c_p ||cos(W_{s_L})||_p * L, so the
    fitted slope should sit near the measured kappa_hat while the series
    norm and the derivative square function stay bounded.
    """
    grid, intervals = series_layout(n_terms_max, horizon)
    cos_norms = [p_norm(_CosAtNode(grid, grid.node_index(a)), p, cfg)
                 for a, _ in intervals]
    j_min = int(np.argmin([e.value for e in cos_norms]))
    c_p = gaussian_p_norm(p)
    kappa = Estimate(math.sqrt(2.0) * c_p * cos_norms[j_min].value,
                     math.sqrt(2.0) * c_p * cos_norms[j_min].stderr,
                     cfg.n_samples)
    rows = []
    for n_terms in range(1, n_terms_max + 1):
        xi = CounterexampleSeries(grid, intervals[:n_terms])
        a, b = intervals[n_terms - 1]
        profile = RotationProfile.indicator(grid, a, b)
        dist = p_norm_diff(xi, profile, p, cfg)
        scale = 1.0 / math.sqrt(b - a)
        value = Estimate(dist.value * scale, dist.stderr * scale, dist.n_used)
        rows.append(GrowthRow(n_terms, value, p_norm(xi, p, cfg),
                              s2_norm(xi, p, cfg)))
    ls = np.array([r.n_terms for r in rows], dtype=float)
    vs = np.array([r.value.value for r in rows])
    slope = float(np.polyfit(ls, vs, 1)[0]) if len(rows) > 1 \
        else float(vs[0] / ls[0])
    return GrowthReport(p, tuple(rows), kappa,
                        slope, slope / kappa.value)
