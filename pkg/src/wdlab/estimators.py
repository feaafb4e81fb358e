"""Monte Carlo estimators for decoupling distances and conditional residuals.

All estimators draw in independent batches (at least 20) and report the
batch-means standard error.  Quantities of the form (E|X|^p)^(1/p) propagate
the error through the 1/p power by the delta method.  Batch b of a run with
seed s reads the counter-based stream (s, b); nested estimators shift the
stream id into a disjoint range, so no draw is ever reused across roles.

The conditional-expectation residual || xi - E(xi | G_a^b) ||_p conditions on
the sigma-algebra generated by the path outside (a, b]: it is estimated by
resampling only the increments inside (a, b].  For p = 2 the estimator is
unbiased: with two independent inner replicas I_1, I_2 of the inner mean,
E[xi^2 - I_1 I_2] equals the squared residual exactly, so no inner-loop
bias enters.  For other p a plain nested loop is used and the inner sample
size must grow with the outer one (n_inner >= sqrt(n_samples) is enforced).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core_paths import (RngStream, RotationProfile, TimeGrid, rotate,
                         sample_increments, sample_pair)
from .functionals import WienerFunctional, decoupled_evaluate, evaluate

_INNER_NS = 1 << 40  # stream-id offset separating inner draws from outer ones


class McConfigError(ValueError):
    """Invalid Monte Carlo configuration."""


class EstimationError(RuntimeError):
    """An estimator produced non-finite samples."""


@dataclass(frozen=True)
class McConfig:
    """Sample budget, batching and seeding for one estimator call."""

    n_samples: int
    n_batches: int = 20
    seed: int = 0
    n_inner: int | None = None

    def __post_init__(self) -> None:
        if self.n_batches < 20:
            raise McConfigError("need at least 20 batches for batch-means errors")
        if self.n_samples < self.n_batches:
            raise McConfigError("n_samples must be >= n_batches")
        if self.n_samples % self.n_batches != 0:
            raise McConfigError("n_samples must be divisible by n_batches")
        if self.n_inner is not None and self.n_inner < 1:
            raise McConfigError("n_inner must be >= 1")

    @property
    def batch_size(self) -> int:
        return self.n_samples // self.n_batches

    def stream(self, batch: int, namespace: int = 0) -> RngStream:
        return RngStream(self.seed, namespace + batch)


@dataclass(frozen=True)
class Estimate:
    """Point value with batch-means standard error."""

    value: float
    stderr: float
    n_used: int

    def within(self, target: float, n_sigma: float = 3.0,
               extra_tol: float = 0.0) -> bool:
        return abs(self.value - target) <= n_sigma * self.stderr + extra_tol


def _batch_stats(batch_means: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(batch_means))
    se = float(np.std(batch_means, ddof=1) / np.sqrt(batch_means.size))
    return m, se


def _root_estimate(m: float, se: float, p: float, n: int) -> Estimate:
    """(m, se) for E|X|^p mapped through x -> x^(1/p)."""
    if m <= 0.0:
        # all-zero batches: the distance is 0 with no first-order error term
        return Estimate(0.0, 0.0 if se == 0.0 else se ** (1.0 / p), n)
    value = m ** (1.0 / p)
    return Estimate(value, se * value / (p * m), n)


def _require_finite(x: np.ndarray, who: str) -> None:
    if not np.all(np.isfinite(x)):
        raise EstimationError(f"non-finite samples from {who}")


def p_norm(xi: WienerFunctional, p: float, cfg: McConfig, d: int = 1) -> Estimate:
    """(E |xi|^p)^(1/p) by plain Monte Carlo on a single Brownian motion."""
    if p < 1:
        raise McConfigError("p must be >= 1")
    means = np.empty(cfg.n_batches)
    for b in range(cfg.n_batches):
        incr = sample_increments(xi.grid, d, cfg.stream(b), cfg.batch_size)
        v = evaluate(xi, incr)
        _require_finite(v, xi.name)
        means[b] = np.mean(np.abs(v) ** p)
    m, se = _batch_stats(means)
    return _root_estimate(m, se, p, cfg.n_samples)


def p_norm_diff_profiles(xi: WienerFunctional,
                         profiles: Sequence[RotationProfile],
                         p: float, cfg: McConfig,
                         d: int = 1) -> list[Estimate]:
    """|| xi - xi^phi ||_p for several profiles on shared coupled samples.

    Sharing one (W, W') draw across all profiles couples the estimates, so
    curves phi -> F(phi) tabulated this way are smooth in phi and suprema
    over profile families are not noise-dominated.
    """
    if p < 1:
        raise McConfigError("p must be >= 1")
    if not profiles:
        return []
    means = np.empty((cfg.n_batches, len(profiles)))
    for b in range(cfg.n_batches):
        pair = sample_pair(xi.grid, d, cfg.stream(b), cfg.batch_size)
        base = evaluate(xi, pair.dW)
        _require_finite(base, xi.name)
        for j, profile in enumerate(profiles):
            diff = base - decoupled_evaluate(xi, pair, profile)
            _require_finite(diff, xi.name)
            means[b, j] = np.mean(np.abs(diff) ** p)
    out = []
    for j in range(len(profiles)):
        m, se = _batch_stats(means[:, j])
        out.append(_root_estimate(m, se, p, cfg.n_samples))
    return out


def p_norm_diff(xi: WienerFunctional, profile: RotationProfile,
                p: float, cfg: McConfig, d: int = 1) -> Estimate:
    """F_{xi,p}(profile) = || xi - xi^profile ||_p by coupled Monte Carlo."""
    return p_norm_diff_profiles(xi, [profile], p, cfg, d)[0]


def p_norm_rotation_gap(xi: WienerFunctional, phi: RotationProfile,
                        psi: RotationProfile, p: float, cfg: McConfig,
                        d: int = 1) -> Estimate:
    """|| xi^phi - xi^psi ||_p on coupled samples (continuity diagnostics)."""
    if p < 1:
        raise McConfigError("p must be >= 1")
    means = np.empty(cfg.n_batches)
    for b in range(cfg.n_batches):
        pair = sample_pair(xi.grid, d, cfg.stream(b), cfg.batch_size)
        diff = decoupled_evaluate(xi, pair, phi) - decoupled_evaluate(xi, pair, psi)
        _require_finite(diff, xi.name)
        means[b] = np.mean(np.abs(diff) ** p)
    m, se = _batch_stats(means)
    return _root_estimate(m, se, p, cfg.n_samples)


def _resampled_eval(xi: WienerFunctional, incr: np.ndarray, cells: slice,
                    widths: np.ndarray, stream: RngStream, n_inner: int,
                    d: int) -> np.ndarray:
    """Inner mean of xi with the increments in `cells` redrawn n_inner times."""
    gen = stream.generator()
    n = incr.shape[0]
    k = widths.size
    acc = np.zeros(n)
    work = incr.copy()
    scale = np.sqrt(widths)[None, :, None]
    for _ in range(n_inner):
        work[:, cells, :] = gen.standard_normal((n, k, d)) * scale
        acc += evaluate(xi, work)
    return acc / n_inner


def cond_exp_residual(xi: WienerFunctional, a: float, b: float,
                      p: float, cfg: McConfig, d: int = 1) -> Estimate:
    """|| xi - E(xi | G_a^b) ||_p, conditioning on the path outside (a, b]."""
    if p < 1:
        raise McConfigError("p must be >= 1")
    if cfg.n_inner is None:
        raise McConfigError("cond_exp_residual needs n_inner in McConfig")
    grid = xi.grid
    cells = grid.cell_slice(a, b)
    widths = grid.widths[cells]
    n_b = cfg.batch_size

    if p == 2:
        means = np.empty(cfg.n_batches)
        for bt in range(cfg.n_batches):
            incr = sample_increments(grid, d, cfg.stream(bt), n_b)
            base = evaluate(xi, incr)
            _require_finite(base, xi.name)
            inner = [
                _resampled_eval(xi, incr, cells, widths,
                                cfg.stream(4 * bt + j, _INNER_NS),
                                cfg.n_inner, d)
                for j in (1, 2)
            ]
            means[bt] = np.mean(base * base - inner[0] * inner[1])
        m, se = _batch_stats(means)
        if m <= 0.0:
            # compatible with residual 0; sqrt(se) is the resolvable scale
            return Estimate(0.0, float(np.sqrt(max(se, 0.0))), cfg.n_samples)
        value = float(np.sqrt(m))
        return Estimate(value, se / (2.0 * value), cfg.n_samples)

    if cfg.n_inner * cfg.n_inner < cfg.n_samples:
        raise McConfigError(
            f"p={p}: nested estimator needs n_inner >= sqrt(n_samples) "
            f"(got {cfg.n_inner} < sqrt({cfg.n_samples}))")
    means = np.empty(cfg.n_batches)
    for bt in range(cfg.n_batches):
        incr = sample_increments(grid, d, cfg.stream(bt), n_b)
        base = evaluate(xi, incr)
        inner = _resampled_eval(xi, incr, cells, widths,
                                cfg.stream(4 * bt, _INNER_NS), cfg.n_inner, d)
        _require_finite(inner, xi.name)
        means[bt] = np.mean(np.abs(base - inner) ** p)
    m, se = _batch_stats(means)
    return _root_estimate(m, se, p, cfg.n_samples)


@dataclass(frozen=True)
class SandwichReport:
    """Two-sided comparison of the conditional residual with the swap distance.

    ratio = || xi - E(xi|G_a^b) ||_p / || xi - xi^{swap(a,b]} ||_p must lie
    in [1/2, 1].  `degenerate` flags a denominator that is zero within noise
    (xi measurable w.r.t. the outside path), where the ratio is meaningless.
    """

    numerator: Estimate
    denominator: Estimate
    ratio: float
    ratio_stderr: float
    degenerate: bool
    passes: bool
    interval: tuple[float, float]
    p: float


def sandwich_check(xi: WienerFunctional, a: float, b: float, p: float,
                   cfg: McConfig, d: int = 1,
                   n_sigma: float = 3.0) -> SandwichReport:
    num = cond_exp_residual(xi, a, b, p, cfg, d)
    swap = RotationProfile.indicator(xi.grid, a, b)
    den = p_norm_diff(xi, swap, p, cfg, d)
    degenerate = den.value <= n_sigma * den.stderr
    if degenerate or den.value == 0.0:
        ratio, rse = float("nan"), float("nan")
        passes = num.value <= n_sigma * max(num.stderr, den.stderr)
    else:
        ratio = num.value / den.value
        rse = ratio * np.hypot(num.stderr / max(num.value, 1e-300),
                               den.stderr / den.value)
        passes = (ratio >= 0.5 - n_sigma * rse) and (ratio <= 1.0 + n_sigma * rse)
    return SandwichReport(num, den, ratio, rse, degenerate, passes, (a, b), p)


def orlicz_exp_norm(samples, weights=None, cap: float = 1e12,
                    rel_tol: float = 1e-13) -> float:
    """Orlicz norm inf{lam > 0 : E exp(|X|/lam) <= 2} of an empirical law.

    `samples` are the support points (or draws) and `weights` optional
    probabilities; uniform weights otherwise.  Returns 0.0 for an a.s. zero
    variable and inf when no lam below `cap` brings the expectation to 2.
    """
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("need at least one sample")
    if weights is None:
        logw = np.full(x.size, -np.log(x.size))
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0.0) or w.sum() <= 0.0:
            raise ValueError("weights must be nonnegative and match samples")
        with np.errstate(divide="ignore"):
            logw = np.log(w / w.sum())
    if np.all(x[np.isfinite(logw)] == 0.0):
        return 0.0

    log2 = np.log(2.0)

    def excess(lam: float) -> float:
        return float(logsumexp(x / lam + logw)) - log2

    hi = max(float(np.max(x)), 1e-300)
    while excess(hi) > 0.0:
        hi *= 2.0
        if hi > cap:
            return float("inf")
    lo = hi
    while excess(lo) <= 0.0:
        lo /= 2.0
        if lo < 1e-300:
            return lo
    # excess is strictly decreasing in lam; bracket [lo, hi] with f(lo) > 0 >= f(hi)
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
