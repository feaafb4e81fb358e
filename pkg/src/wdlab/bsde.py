"""Markovian BSDE solver and the decoupling stability / variation probes.

The solver runs a backward time-stepping scheme on a fixed space grid:
conditional expectations under the one-step Euler transition are computed
with Gauss-Hermite quadrature, the gradient process comes from the same
quadrature via Gaussian integration by parts, and the generator is folded
in either with an implicit midpoint rule (default, second order in time)
or plain backward Euler.  The value function is then a lookup table, so a
solution can be evaluated along any simulated path - in particular along
a path and its rotated twin driven by the same noise, which is what the
stability and variation checks do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bmo import DomainError, StepProcess, p0_threshold, sliceable_upper
from .core_paths import (BrownianPair, RngStream, RotationProfile, TimeGrid,
                         require_same_grid, rotate, sample_pair)
from .estimators import Estimate, McConfig, _batch_stats, _root_estimate


class SolverError(RuntimeError):
    """The backward scheme produced non-finite values."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver f(t, x, y, z) with its growth/continuity parameters.

    lip_y and lip_z bound |f(t,x,y,z) - f(t,x,y',z')| by
    lip_y |y-y'| + lip_z (1 + |z| + |z'|)^z_growth |z-z'|; z_growth = 0 is
    the Lipschitz case, z_growth = 1 covers drivers of quadratic type.
    lip_x only matters when depends_on_x is set.  f_at_zero(t) = f(t,0,0,0)
    feeds the deterministic part of the variation bound; None means the
    driver vanishes at the origin.
    """

    f: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lip_y: float = 0.0
    lip_z: float = 0.0
    z_growth: float = 0.0
    depends_on_x: bool = False
    lip_x: float = 0.0
    f_at_zero: Callable[[float], float] | None = None
    label: str = "generator"

    def zero_level(self, t: float) -> float:
        return 0.0 if self.f_at_zero is None else float(self.f_at_zero(t))

    def probe(self, seed: int = 0, n: int = 256, horizon: float = 1.0,
              scale: float = 3.0, tol: float = 1e-9) -> list[dict]:
        """Sampled check of the stated continuity bounds; [] means clean."""
        gen = RngStream(seed, 0).generator()
        out: list[dict] = []
        t = gen.uniform(0.0, horizon, n)
        x0, x1 = scale * gen.standard_normal((2, n))
        y0, y1 = scale * gen.standard_normal((2, n))
        z0, z1 = scale * gen.standard_normal((2, n))
        for i in range(n):
            f0 = float(self.f(t[i], np.array([x0[i]]), np.array([y0[i]]),
                              np.array([z0[i]]))[0])
            f1 = float(self.f(t[i], np.array([x0[i]]), np.array([y1[i]]),
                              np.array([z1[i]]))[0])
            allowed = self.lip_y * abs(y0[i] - y1[i]) \
                + self.lip_z * (1.0 + abs(z0[i]) + abs(z1[i])) ** self.z_growth \
                * abs(z0[i] - z1[i])
            slack = tol * (1.0 + abs(f0) + abs(f1))
            if abs(f0 - f1) > allowed + slack:
                out.append({"kind": "yz", "t": float(t[i]), "gap":
                            float(abs(f0 - f1) - allowed)})
            if self.depends_on_x:
                fx = float(self.f(t[i], np.array([x1[i]]), np.array([y0[i]]),
                                  np.array([z0[i]]))[0])
                if abs(f0 - fx) > self.lip_x * abs(x0[i] - x1[i]) + slack:
                    out.append({"kind": "x", "t": float(t[i]), "gap":
                                float(abs(f0 - fx)
                                      - self.lip_x * abs(x0[i] - x1[i]))})
            elif self.lip_x == 0.0:
                fx = float(self.f(t[i], np.array([x1[i]]), np.array([y0[i]]),
                                  np.array([z0[i]]))[0])
                if abs(f0 - fx) > slack:
                    out.append({"kind": "hidden-x", "t": float(t[i]),
                                "gap": float(abs(f0 - fx))})
        return out


@dataclass(frozen=True)
class MarkovModel:
    """Forward diffusion dX = b(t,X) dt + sigma(t,X) dW, X_0 = x0.

    sigma_bar is an upper bound for |sigma| used to size the space domain;
    drift_reach adds extra room when the drift pushes paths away from x0.
    """

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    x0: float = 0.0
    sigma_bar: float = 1.0
    drift_reach: float = 0.0
    label: str = "model"


@dataclass(frozen=True)
class SolverConfig:
    n_x: int = 6001
    n_quad: int = 16
    n_picard: int = 2
    scheme: str = "midpoint"
    domain_radius_sigmas: float = 8.0

    def __post_init__(self) -> None:
        if self.n_x < 2:
            raise ValueError("n_x must be >= 2")
        if self.n_quad < 2:
            raise ValueError("n_quad must be >= 2")
        if self.n_picard < 0:
            raise ValueError("n_picard must be >= 0")
        if self.scheme not in ("midpoint", "backward-euler"):
            raise ValueError("scheme must be 'midpoint' or 'backward-euler'")


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Tabulated value function u(t_k, x) and gradient z(t_k, x).

    u has one row per node (row M is the terminal condition), z one row
    per cell.  Evaluation interpolates linearly in x and clamps outside
    the domain; the clamp rate seen while solving is in diagnostics.
    """

    grid: TimeGrid
    x_grid: np.ndarray
    u: np.ndarray
    z: np.ndarray
    model: MarkovModel
    gen: GeneratorSpec
    terminal: Callable[[np.ndarray], np.ndarray]
    config: SolverConfig
    diagnostics: dict = field(default_factory=dict)

    def y_at(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.x_grid, self.u[k])

    def z_at(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.x_grid, self.z[k])

    @property
    def y0(self) -> float:
        return float(self.y_at(0, np.array([self.model.x0]))[0])


def solve_markovian(model: MarkovModel, gen: GeneratorSpec,
                    terminal: Callable[[np.ndarray], np.ndarray],
                    grid: TimeGrid,
                    config: SolverConfig | None = None) -> BsdeSolution:
    """Backward Gauss-Hermite scheme for the decoupled Markovian system.

    Per step: E u(t_{k+1}, X_next) and E u(t_{k+1}, X_next) zeta / sqrt(dt)
    give the conditional expectation and the gradient surrogate; the
    driver enters through fixed-point iterations of either

        y = Eu + dt f(t_k + dt/2, x, (y + Eu)/2, z)      (midpoint)
        y = Eu + dt f(t_k,        x,  y,         z)      (backward-euler)

    run 1 + n_picard times from y = Eu.
    """
    cfg = config or SolverConfig()
    horizon = grid.horizon
    radius = cfg.domain_radius_sigmas * model.sigma_bar * math.sqrt(horizon) \
        + model.drift_reach
    x = np.linspace(model.x0 - radius, model.x0 + radius, cfg.n_x)
    gh_x, gh_w = np.polynomial.hermite.hermgauss(cfg.n_quad)
    wt = gh_w / math.sqrt(math.pi)          # weights of N(0,1) quadrature
    zeta = math.sqrt(2.0) * gh_x            # standard normal nodes

    m = grid.n_cells
    u = np.empty((m + 1, cfg.n_x))
    zmat = np.empty((m, cfg.n_x))
    u[m] = terminal(x)
    if not np.all(np.isfinite(u[m])):
        raise SolverError("terminal condition produced non-finite values")
    clamped = 0
    for k in range(m - 1, -1, -1):
        dt = float(grid.widths[k])
        t_k = float(grid.nodes[k])
        sdt = math.sqrt(dt)
        b = np.broadcast_to(np.asarray(model.drift(t_k, x), dtype=float),
                            x.shape)
        s = np.broadcast_to(np.asarray(model.diffusion(t_k, x),
                                       dtype=float), x.shape)
        x_next = x[:, None] + b[:, None] * dt + s[:, None] * sdt * zeta[None, :]
        clamped += int(np.count_nonzero((x_next < x[0]) | (x_next > x[-1])))
        uq = np.interp(x_next.ravel(), x, u[k + 1]).reshape(cfg.n_x,
                                                            cfg.n_quad)
        eu = uq @ wt
        zk = (uq @ (wt * zeta)) / sdt
        y = eu.copy()
        if cfg.scheme == "midpoint":
            tm = t_k + dt / 2.0
            for _ in range(1 + cfg.n_picard):
                y = eu + dt * gen.f(tm, x, 0.5 * (y + eu), zk)
        else:
            for _ in range(1 + cfg.n_picard):
                y = eu + dt * gen.f(t_k, x, y, zk)
        if not np.all(np.isfinite(y)):
            bad = int(np.count_nonzero(~np.isfinite(y)))
            raise SolverError(f"non-finite values at step {k} ({bad} nodes)")
        u[k] = y
        zmat[k] = zk
    diag = {
        "quad_clamp_frac": clamped / (m * cfg.n_x * cfg.n_quad),
        "domain_radius": radius,
    }
    return BsdeSolution(grid, x, u, zmat, model, gen, terminal, cfg, diag)


def _euler_twin(sol: BsdeSolution, pair: BrownianPair,
                profile: RotationProfile | None):
    """Yield per-step state for a path and (optionally) its rotated twin.

    Generator of (k, t_k, x, x_twin); the caller accumulates whatever
    reductions it needs without the full (n, M+1) path matrix being held.
    """
    grid = sol.grid
    dw = pair.dW[:, :, 0]
    dw_twin = dw if profile is None else rotate(pair, profile)[:, :, 0]
    n = pair.n_samples
    x = np.full(n, sol.model.x0)
    xt = x.copy()
    for k in range(grid.n_cells):
        yield k, float(grid.nodes[k]), x, xt
        t_k = float(grid.nodes[k])
        dt = float(grid.widths[k])
        x = x + sol.model.drift(t_k, x) * dt \
            + sol.model.diffusion(t_k, x) * dw[:, k]
        xt = xt + sol.model.drift(t_k, xt) * dt \
            + sol.model.diffusion(t_k, xt) * dw_twin[:, k]
    yield grid.n_cells, grid.horizon, x, xt


@dataclass(frozen=True)
class StabilityReport:
    """Both sides of the decoupling stability estimate for one profile.

    lhs = sup-of-Y-difference + D * Z-mass-on-window + Z-difference;
    rhs = terminal difference (+ lip_x * integrated X difference when the
    driver reads x).  exact_zero marks the identity-profile case, where
    the left side vanishes bitwise rather than statistically.
    """

    profile_label: str
    p: float
    t_start: float
    lhs_sup_y: Estimate
    lhs_z_window: Estimate
    lhs_z_diff: Estimate
    rhs_terminal: Estimate
    rhs_x_term: Estimate | None
    lhs_total: float
    lhs_stderr: float
    rhs_total: float
    rhs_stderr: float
    ratio: float
    ratio_stderr: float
    exact_zero: bool


def _combine(parts: list[Estimate]) -> tuple[float, float]:
    tot = sum(e.value for e in parts)
    err = math.sqrt(sum(e.stderr ** 2 for e in parts))
    return tot, err


def stability_check(sol: BsdeSolution, profile: RotationProfile, p: float,
                    cfg: McConfig, t_start: float = 0.0) -> StabilityReport:
    """Monte Carlo evaluation of the stability estimate along twin paths.

    The comparison profile is the identity (no rotation), so the profile
    distance weight D is max |profile|, the Z-window is the profile's
    support intersected with (t_start, T], and all three left-hand terms
    plus both right-hand terms are estimated from the same coupled paths.
    """
    grid = sol.grid
    require_same_grid(grid, profile.grid)
    if p < 1:
        raise ValueError("p must be >= 1")
    if not 0.0 <= t_start < grid.horizon:
        raise ValueError("t_start must lie in [0, horizon)")
    weight_d = float(np.max(np.abs(profile.values)))
    nodes, widths = grid.nodes, grid.widths
    # cell overlap with (t_start, T], and with the profile support
    tail_w = np.clip(nodes[1:] - np.maximum(nodes[:-1], t_start), 0.0, None)
    win_w = tail_w * (profile.values != 0.0)

    nb = cfg.n_batches
    means = np.zeros((nb, 5))  # supY^p, zwin^{p/2}, zdiff^{p/2}, term^p, xint^p
    for bt in range(nb):
        pair = sample_pair(grid, 1, cfg.stream(bt), cfg.batch_size)
        n = pair.n_samples
        sup_y = np.zeros(n)
        z_win = np.zeros(n)
        z_diff = np.zeros(n)
        x_int = np.zeros(n)
        for k, t_k, x, xt in _euler_twin(sol, pair, profile):
            if k < grid.n_cells:
                if win_w[k] > 0.0:
                    z_win += sol.z_at(k, x) ** 2 * win_w[k]
                if tail_w[k] > 0.0:
                    z_diff += (sol.z_at(k, xt) - sol.z_at(k, x)) ** 2 \
                        * tail_w[k]
                    x_int += np.abs(xt - x) * tail_w[k]
                if t_k >= t_start - 1e-12 * max(1.0, grid.horizon):
                    np.maximum(sup_y, np.abs(sol.y_at(k, xt)
                                             - sol.y_at(k, x)), out=sup_y)
            else:
                xi = sol.terminal(x)
                xi_t = sol.terminal(xt)
                np.maximum(sup_y, np.abs(xi_t - xi), out=sup_y)
                term = np.abs(xi_t - xi)
        means[bt, 0] = np.mean(sup_y ** p)
        means[bt, 1] = np.mean(z_win ** (p / 2.0))
        means[bt, 2] = np.mean(z_diff ** (p / 2.0))
        means[bt, 3] = np.mean(term ** p)
        means[bt, 4] = np.mean(x_int ** p)

    def est(col: int, power: float) -> Estimate:
        m, se = _batch_stats(means[:, col])
        return _root_estimate(m, se, power, cfg.n_samples)

    sup_e = est(0, p)
    zwin_raw = est(1, p)   # already the p-norm of the square root, see below
    zwin_e = Estimate(weight_d * zwin_raw.value, weight_d * zwin_raw.stderr,
                      zwin_raw.n_used)
    zdiff_e = est(2, p)
    term_e = est(3, p)
    lhs_parts = [sup_e, zwin_e, zdiff_e]
    rhs_parts = [term_e]
    x_e: Estimate | None = None
    if sol.gen.depends_on_x:
        x_e = est(4, p)
        rhs_parts.append(Estimate(sol.gen.lip_x * x_e.value,
                                  sol.gen.lip_x * x_e.stderr, x_e.n_used))
    lhs, lhs_se = _combine(lhs_parts)
    rhs, rhs_se = _combine(rhs_parts)
    exact_zero = weight_d == 0.0
    if exact_zero or lhs == 0.0:
        ratio, ratio_se = 0.0, 0.0
    else:
        ratio = lhs / rhs
        ratio_se = ratio * math.sqrt((lhs_se / lhs) ** 2 + (rhs_se / rhs) ** 2)
    return StabilityReport(profile.label, p, t_start, sup_e, zwin_e, zdiff_e,
                           term_e, x_e, lhs, lhs_se, rhs, rhs_se,
                           ratio, ratio_se, exact_zero)


@dataclass(frozen=True)
class VariationRow:
    s: float
    gap: float
    lhs: Estimate          # || Y_T - Y_s ||_p
    rhs_det: float         # int_s^T (1 + |f(r,0,0)|) dr
    rhs_swap: Estimate     # || xi - xi^{(s,T]} ||_p
    ratio: float


@dataclass(frozen=True)
class VariationReport:
    p: float
    rows: list[VariationRow]
    slope: float           # d log lhs / d log gap
    max_ratio: float


def variation_check(sol: BsdeSolution, p: float, cfg: McConfig,
                    gaps=None) -> VariationReport:
    """Terminal-window variation of Y against the decoupling bound.

    Windows are (T - gap, T]; the left side is the p-variation of Y over
    the window and the right side the deterministic driver mass plus the
    terminal swap distance for the matching indicator profile.  The fitted
    log-log slope of lhs against gap is the report's headline number.
    """
    grid = sol.grid
    if p < 1:
        raise ValueError("p must be >= 1")
    horizon = grid.horizon
    if gaps is None:
        gaps = [horizon * 2.0 ** (-j) for j in range(1, 6)]
    rows: list[VariationRow] = []
    for gap in gaps:
        s = horizon - gap
        k_s = grid.node_index(s)
        profile = RotationProfile.indicator(grid, float(grid.nodes[k_s]),
                                            horizon)
        nb = cfg.n_batches
        means = np.zeros((nb, 2))
        for bt in range(nb):
            pair = sample_pair(grid, 1, cfg.stream(bt), cfg.batch_size)
            y_s = None
            for k, t_k, x, xt in _euler_twin(sol, pair, profile):
                if k == k_s:
                    y_s = sol.y_at(k, x)
                if k == grid.n_cells:
                    xi = sol.terminal(x)
                    xi_t = sol.terminal(xt)
            means[bt, 0] = np.mean(np.abs(xi - y_s) ** p)
            means[bt, 1] = np.mean(np.abs(xi - xi_t) ** p)
        m0, se0 = _batch_stats(means[:, 0])
        lhs = _root_estimate(m0, se0, p, cfg.n_samples)
        m1, se1 = _batch_stats(means[:, 1])
        swap = _root_estimate(m1, se1, p, cfg.n_samples)
        in_win = slice(k_s, grid.n_cells)
        mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        det = float(np.sum((1.0 + np.abs([sol.gen.zero_level(t)
                                          for t in mid[in_win]]))
                           * grid.widths[in_win]))
        rhs = det + swap.value
        rows.append(VariationRow(float(grid.nodes[k_s]), gap, lhs, det, swap,
                                 lhs.value / rhs))
    lg = np.log([r.gap for r in rows])
    lv = np.log([max(r.lhs.value, 1e-300) for r in rows])
    slope = float(np.polyfit(lg, lv, 1)[0])
    return VariationReport(p, rows, slope, max(r.ratio for r in rows))


@dataclass(frozen=True)
class GradientDiagnostics:
    """Sliceability data of the solved gradient's deterministic envelope.

    envelope[k] = sup_x |z(t_k, x)|; the step process carries
    envelope^theta (theta = 0 gives the constant 1).  p0 is the moment
    threshold implied by the equidistant sliceable upper bound; since the
    bound can only overstate the sliceable number, p0 is an upper bound
    too (math.inf when outside the invertible range).
    """

    theta: float
    eta: float
    n_slices: int
    envelope: np.ndarray
    process: StepProcess
    slice_upper: float
    p0: float


def gradient_diagnostics(sol: BsdeSolution, theta: float,
                         n_slices: int = 8,
                         eta: float = 1.0) -> GradientDiagnostics:
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    envelope = np.max(np.abs(sol.z), axis=1)
    values = np.ones_like(envelope) if theta == 0.0 else envelope ** theta
    proc = StepProcess.deterministic(sol.grid, values)
    sl = sliceable_upper(proc, eta, n_slices)
    try:
        p0 = p0_threshold(sol.gen.lip_z, sl)
    except DomainError:
        p0 = math.inf
    return GradientDiagnostics(theta, eta, n_slices, envelope, proc, sl, p0)


# ---------------------------------------------------------------------------
# preset catalog


@dataclass(frozen=True)
class BsdePreset:
    """Named model/driver/terminal triple with its exact value at x0, if any."""

    name: str
    horizon: float
    model: MarkovModel
    gen: GeneratorSpec
    terminal: Callable[[np.ndarray], np.ndarray]
    terminal_label: str
    y0_exact: float | None
    notes: str = ""

    def solve(self, n_cells: int,
              config: SolverConfig | None = None) -> BsdeSolution:
        grid = TimeGrid.uniform(self.horizon, n_cells)
        return solve_markovian(self.model, self.gen, self.terminal, grid,
                               config)


def _zero_f(t, x, y, z):
    return np.zeros_like(y)


_BM = MarkovModel(drift=lambda t, x: np.zeros_like(x),
                  diffusion=lambda t, x: np.ones_like(x),
                  x0=0.0, sigma_bar=1.0, label="brownian")
_OU = MarkovModel(drift=lambda t, x: -x,
                  diffusion=lambda t, x: np.ones_like(x),
                  x0=0.0, sigma_bar=1.0, label="ornstein-uhlenbeck")

_T = 1.0

PRESETS: dict[str, BsdePreset] = {}


def _register(p: BsdePreset) -> None:
    PRESETS[p.name] = p


_register(BsdePreset(
    name="linear-terminal", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=_zero_f, label="zero"),
    terminal=lambda x: x, terminal_label="identity",
    y0_exact=0.0,
    notes="Y follows the driving motion itself; z is identically 1."))

_register(BsdePreset(
    name="heat-square", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=_zero_f, label="zero"),
    terminal=lambda x: x * x, terminal_label="square",
    y0_exact=_T,
    notes="value function x^2 + (T - t); Y_0 equals the horizon."))

_register(BsdePreset(
    name="linear-oracle", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=lambda t, x, y, z: y, lip_y=1.0, label="f=y"),
    terminal=lambda x: x * x, terminal_label="square",
    y0_exact=_T * math.exp(_T),
    notes="value function e^{T-t} (x^2 + T - t)."))

_register(BsdePreset(
    name="quadratic-cole-hopf", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=lambda t, x, y, z: 0.5 * z * z,
                      lip_z=0.5, z_growth=1.0, label="half-z-squared"),
    terminal=lambda x: x, terminal_label="identity",
    y0_exact=0.5 * _T,
    notes="log-transform solution x + (T - t)/2 stays linear in x."))

_register(BsdePreset(
    name="table1a-lipschitz", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=lambda t, x, y, z: -0.5 * y, lip_y=0.5,
                      label="minus-half-y"),
    terminal=lambda x: np.maximum(x, 0.0), terminal_label="relu",
    y0_exact=math.exp(-_T / 2.0) * math.sqrt(_T / (2.0 * math.pi)),
    notes="discounted call-type claim on the driving motion."))

_register(BsdePreset(
    name="ou-lipschitz", horizon=_T, model=_OU,
    gen=GeneratorSpec(f=lambda t, x, y, z: -0.5 * y, lip_y=0.5,
                      label="minus-half-y"),
    terminal=lambda x: np.maximum(x, 0.0), terminal_label="relu",
    y0_exact=math.exp(-_T / 2.0)
    * math.sqrt((1.0 - math.exp(-2.0 * _T)) / 2.0) / math.sqrt(2.0 * math.pi),
    notes="mean-reverting state, Lipschitz claim; stability test bed."))

_register(BsdePreset(
    name="bv-terminal", horizon=_T, model=_BM,
    gen=GeneratorSpec(f=_zero_f, label="zero"),
    terminal=lambda x: (x >= 0.0).astype(float), terminal_label="indicator",
    y0_exact=0.5,
    notes="bounded-variation terminal condition, no driver."))


def get_preset(name: str) -> BsdePreset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(PRESETS)
        raise ValueError(f"unknown preset {name!r}; choose from: {known}") \
            from None


def preset_names() -> list[str]:
    return list(PRESETS)
