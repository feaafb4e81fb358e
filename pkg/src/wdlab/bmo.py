"""BMO-type norms on finite filtrations, sliceable bounds, reverse Hölder.

Everything in this module is exact arithmetic, no Monte Carlo: processes
are piecewise constant on a grid and either deterministic or driven by a
finite scenario tree (a filtration that refines at grid nodes).  On such a
tree, conditional expectations are weighted block averages and essential
suprema are maxima over positive-probability blocks, so

    || Z ||_{BMO(S_{2 eta})} = sup_t || E( int_t^T |Z_s|^{2 eta} ds | A_t ) ||_inf^{1/(2 eta)}

is computable to machine precision.  On top of it sit: equidistant upper
bounds for the N-sliceable number, the explicit reverse-Hölder machinery
(Phi, Psi, the [Psi]^N bound, the p_0 integrability threshold), the
step-process counterexample separating exponential integrability of the
square function from BMO, and the Fefferman-type inequality check.

The sliceable quantities here are upper bounds (equidistant deterministic
nets, not optimized stopping times) - sufficient for every bound consumed
downstream and labeled accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_paths import TimeGrid
from .estimators import orlicz_exp_norm


class TreeError(ValueError):
    """Scenario-tree data violates adaptedness, refinement, or probability."""


class DomainError(ValueError):
    """Argument outside the validity region of an explicit formula."""


def _group_check_constant(block_ids: np.ndarray, x: np.ndarray, what: str) -> None:
    hi = np.full(int(block_ids.max()) + 1, -np.inf)
    lo = np.full(int(block_ids.max()) + 1, np.inf)
    np.maximum.at(hi, block_ids, x)
    np.minimum.at(lo, block_ids, x)
    seen = lo <= hi
    if np.any(hi[seen] - lo[seen] != 0.0):
        raise TreeError(f"{what} not constant on filtration blocks")


@dataclass(frozen=True, eq=False)
class StepProcess:
    """|Z| piecewise constant on grid cells, deterministic or tree-driven.

    Deterministic flavor: values shape (M,), probs/levels None.
    Scenario flavor: values shape (M, S); probs (S,) sums to 1; levels
    (M, S) integer block ids where levels[k] encodes the information
    available at t_k (start of cell k) and must refine levels[k-1].
    """

    grid: TimeGrid
    values: np.ndarray
    probs: np.ndarray | None = None
    levels: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        m = self.grid.n_cells
        if self.probs is None:
            if values.shape != (m,):
                raise TreeError("deterministic flavor needs one value per cell")
            if self.levels is not None:
                raise TreeError("levels given without probabilities")
            return
        probs = np.asarray(self.probs, dtype=float)
        levels = np.asarray(self.levels, dtype=np.int64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "levels", levels)
        s = probs.size
        if values.shape != (m, s) or levels.shape != (m, s):
            raise TreeError("values and levels must be (n_cells, n_scenarios)")
        if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-12:
            raise TreeError("scenario probabilities must be >= 0 and sum to 1")
        for k in range(m):
            _group_check_constant(levels[k], values[k], f"cell-{k} values")
            if k > 0:
                _group_check_constant(levels[k], levels[k - 1].astype(float),
                                      f"level-{k} refinement")

    @classmethod
    def deterministic(cls, grid: TimeGrid, values) -> "StepProcess":
        return cls(grid, np.asarray(values, dtype=float))

    @property
    def is_deterministic(self) -> bool:
        return self.probs is None

    def scaled_power(self, theta: float) -> "StepProcess":
        """|Z|^theta as a new process on the same tree."""
        return StepProcess(self.grid, np.abs(self.values) ** theta,
                           self.probs, self.levels)


def _cond_sup(block_ids: np.ndarray, probs: np.ndarray, x: np.ndarray) -> float:
    """esssup over blocks of E(x | block): max weighted block average."""
    wsum = np.bincount(block_ids, weights=probs * x)
    psum = np.bincount(block_ids, weights=probs)
    mask = psum > 0.0
    return float(np.max(wsum[mask] / psum[mask]))


def _tail_sums(z: StepProcess, eta: float,
               overlap: np.ndarray | None = None) -> np.ndarray:
    """int over each suffix of |Z|^{2 eta}, per scenario; optional cell widths."""
    w = z.grid.widths if overlap is None else overlap
    if z.is_deterministic:
        contrib = np.abs(z.values) ** (2.0 * eta) * w
    else:
        contrib = np.abs(z.values) ** (2.0 * eta) * w[:, None]
    return np.cumsum(contrib[::-1], axis=0)[::-1]


def bmo_s2eta_norm(z: StepProcess, eta: float) -> float:
    """Exact BMO(S_{2 eta}) norm on the grid filtration.

    The filtration refines only at nodes, so the sup over t is a max over
    cell left-endpoints, each conditioned on that cell's information level.
    """
    if eta <= 0.0:
        raise DomainError("eta must be > 0")
    tails = _tail_sums(z, eta)
    if z.is_deterministic:
        best = float(np.max(tails))
    else:
        best = max(_cond_sup(z.levels[k], z.probs, tails[k])
                   for k in range(z.grid.n_cells))
    return best ** (1.0 / (2.0 * eta))


def bmo_slice_norm(z: StepProcess, eta: float, s0: float, s1: float) -> float:
    """BMO(S_{2 eta}) norm of Z restricted to the window (s0, s1].

    Window endpoints need not be grid nodes: cells are clipped by their
    overlap with (t, s1].  Candidate conditioning times are s0 and the
    nodes inside the window (between nodes the filtration and the integral
    both favor the left end).
    """
    if eta <= 0.0:
        raise DomainError("eta must be > 0")
    if not 0.0 <= s0 < s1 <= z.grid.horizon + 1e-12:
        raise DomainError("need 0 <= s0 < s1 <= horizon")
    nodes = z.grid.nodes
    cands = [s0] + [float(t) for t in nodes if s0 < t < s1]
    best = 0.0
    for t in cands:
        lo = np.maximum(nodes[:-1], t)
        hi = np.minimum(nodes[1:], s1)
        overlap = np.clip(hi - lo, 0.0, None)
        if z.is_deterministic:
            val = float(np.sum(np.abs(z.values) ** (2.0 * eta) * overlap))
        else:
            integ = np.sum(np.abs(z.values) ** (2.0 * eta)
                           * overlap[:, None], axis=0)
            k = min(int(np.searchsorted(nodes, t, side="right")) - 1,
                    z.grid.n_cells - 1)
            val = _cond_sup(z.levels[k], z.probs, integ)
        best = max(best, val)
    return best ** (1.0 / (2.0 * eta))


def sliceable_upper(z: StepProcess, eta: float, n_slices: int) -> float:
    """Equidistant upper bound for the N-sliceable number of Z in S_{2 eta}."""
    if n_slices < 1:
        raise DomainError("need at least one slice")
    horizon = z.grid.horizon
    edges = np.linspace(0.0, horizon, n_slices + 1)
    return max(bmo_slice_norm(z, eta, float(a), float(b))
               for a, b in zip(edges[:-1], edges[1:]))


def interp_slice_bound(z: StepProcess, theta: float, eta: float,
                       n_slices: int) -> float:
    """(T/N)^{(1 - theta/eta)/2} ||Z||_{BMO(S_{2 eta})}^theta.

    Upper bound for the N-sliceable number of |Z|^theta in S_2, valid for
    0 <= theta <= eta; theta = 0 degenerates to sqrt(T/N) independently
    of Z.
    """
    if not 0.0 <= theta <= eta:
        raise DomainError("need 0 <= theta <= eta")
    if n_slices < 1:
        raise DomainError("need at least one slice")
    width = z.grid.horizon / n_slices
    if theta == 0.0:
        return math.sqrt(width)
    return width ** ((1.0 - theta / eta) / 2.0) \
        * bmo_s2eta_norm(z, eta) ** theta


def kazamaki_phi(beta: float) -> float:
    """Phi(beta) = sqrt(1 + beta^(-2) ln(1 + 1/(2 beta - 2))) - 1, beta > 1.

    Strictly decreasing, +inf at 1+, 0 at infinity: the largest BMO size
    for which the beta-reverse-Holder property is guaranteed.
    """
    if beta <= 1.0:
        raise DomainError("beta must be > 1")
    return math.sqrt(1.0 + math.log1p(1.0 / (2.0 * beta - 2.0)) / beta ** 2) - 1.0


def kazamaki_psi(gamma: float, beta: float) -> float:
    """Psi(gamma, beta) = (2 / (1 - (2b-2)/(2b-1) e^{b^2 (g^2 + 2g)}))^{1/b}.

    Defined for 0 <= gamma < Phi(beta); the denominator hits zero exactly
    at gamma = Phi(beta), so the domain guard rejects rather than clamps.
    """
    if beta <= 1.0:
        raise DomainError("beta must be > 1")
    if gamma < 0.0 or gamma >= kazamaki_phi(beta):
        raise DomainError(
            f"gamma={gamma!r} outside [0, Phi(beta)={kazamaki_phi(beta):.6g})")
    denom = 1.0 - (2.0 * beta - 2.0) / (2.0 * beta - 1.0) \
        * math.exp(beta ** 2 * (gamma ** 2 + 2.0 * gamma))
    return (2.0 / denom) ** (1.0 / beta)


_PHI_INV_LO = 1.0 + 1e-9
_PHI_INV_HI = 1e6


def phi_inverse(x: float) -> float:
    """The beta > 1 with Phi(beta) = x, by bisection on (1+1e-9, 1e6)."""
    if x <= 0.0:
        raise DomainError("x must be > 0")
    lo, hi = _PHI_INV_LO, _PHI_INV_HI
    if x > kazamaki_phi(lo) or x < kazamaki_phi(hi):
        raise DomainError(f"x={x!r} outside the invertible range")
    while hi - lo > 1e-13 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if kazamaki_phi(mid) > x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class KazamakiBound:
    """Phi/Psi pair at a fixed beta with its validity region."""

    beta: float
    phi: float

    @classmethod
    def of_beta(cls, beta: float) -> "KazamakiBound":
        return cls(beta, kazamaki_phi(beta))

    def valid_for(self, gamma: float) -> bool:
        return 0.0 <= gamma < self.phi

    def psi(self, gamma: float) -> float:
        return kazamaki_psi(gamma, self.beta)


def rh_bound(sl: float, n_slices: int, beta: float) -> float | None:
    """[Psi(sl, beta)]^N when sl < Phi(beta); None when not applicable."""
    if sl < 0.0:
        raise DomainError("sliceable bound must be >= 0")
    if n_slices < 1:
        raise DomainError("need at least one slice")
    if sl >= kazamaki_phi(beta):
        return None
    return kazamaki_psi(sl, beta) ** n_slices


def deterministic_rh_constant(kappa: float, beta: float,
                              horizon: float = 1.0) -> float:
    """Exact reverse-Holder constant of the exponential of kappa * W.

    For deterministic integrand kappa the stochastic exponential is
    lognormal and the conditional beta-moment ratio is largest at time 0:
    E(E_T^beta | F_t)^{1/beta} = E_t exp((beta-1) kappa^2 (T-t) / 2).
    """
    if beta <= 1.0:
        raise DomainError("beta must be > 1")
    return math.exp((beta - 1.0) * kappa ** 2 * horizon / 2.0)


def p0_threshold(l_z: float, s_inf: float) -> float:
    """Moment threshold p_0 = beta*/(beta* - 1), beta* = Phi^{-1}(2 sqrt2 L_Z s).

    s_inf = 0 (Lipschitz-in-z or perfectly sliceable gradient) fixes
    p_0 = 3/2; the threshold grows as the gradient's BMO size grows.
    """
    if l_z < 0.0 or s_inf < 0.0:
        raise DomainError("arguments must be >= 0")
    x = 2.0 * math.sqrt(2.0) * l_z * s_inf
    if x == 0.0:
        return 1.5
    beta_star = phi_inverse(x)
    return beta_star / (beta_star - 1.0)


@dataclass(frozen=True)
class WeakerBmoReport:
    """Diagnostics of the exponential-but-not-BMO step process.

    series_i: per-slice lower bounds for the BMO(S_2) norm (diverging
    geometrically); series_ii: partial sums bounding BMO(S_{2 eta})
    (convergent); series_iii: partial sums of the Orlicz bounds
    (convergent).  computed_slices are the exact per-slice norms, each at
    least its series_i term; orlicz rows compare the numeric two-point
    Orlicz norm with the closed form 2^{alpha n}.
    """

    eta: float
    alpha: float
    beta: float
    n_max: int
    series_i: np.ndarray
    computed_slices: np.ndarray
    series_ii_partial: np.ndarray
    series_iii_partial: np.ndarray
    orlicz_numeric: np.ndarray
    orlicz_closed: np.ndarray
    bmo_s2eta: float

    @property
    def growth_factor(self) -> float:
        return 2.0 ** (self.beta - 0.5)

    def tail_fraction(self, partial: np.ndarray, ratio: float) -> float:
        last_term = partial[-1] - (partial[-2] if partial.size > 1 else 0.0)
        return float(last_term * ratio / (1.0 - ratio) / partial[-1])

    @property
    def tail_ii(self) -> float:
        return self.tail_fraction(self.series_ii_partial,
                                  2.0 ** (self.beta - 1.0 / (2.0 * self.eta)))

    @property
    def tail_iii(self) -> float:
        return self.tail_fraction(self.series_iii_partial,
                                  2.0 ** (self.alpha - 0.5))


def weaker_bmo_construction(eta: float, alpha: float, beta: float,
                            n_max: int) -> tuple[StepProcess, WeakerBmoReport]:
    """Step process with exponentially integrable square function, no BMO.

    On cells (1 - 2^-k, 1 - 2^-(k-1)] ... precisely cell k = (t_k, t_{k+1}]
    with t_k = 1 - 2^-k, the process takes the value 2^{beta k} on an
    independent event A_k with P(A_k) = 1/(e^{2^{(beta-alpha) k}} - 1),
    chosen so the Orlicz norm of each summand is exactly 2^{alpha k}.  The
    per-slice BMO(S_2) norms then grow like 2^{(beta - 1/2) n} while both
    the BMO(S_{2 eta}) norm (eta < 1) and the Orlicz norm of the full
    square function stay finite.
    """
    if not 0.0 < eta < 1.0:
        raise DomainError("eta must lie in (0, 1)")
    if not 0.0 <= alpha < 0.5 < beta < 1.0 / (2.0 * eta):
        raise DomainError("need 0 <= alpha < 1/2 < beta < 1/(2 eta)")
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    if 2.0 ** ((beta - alpha) * (n_max - 1)) > 700.0:
        raise DomainError("n_max too large: event probabilities underflow")

    nodes = [1.0 - 2.0 ** (-k) for k in range(n_max + 1)] + [1.0]
    grid = TimeGrid(np.array(nodes))
    n_scen = 1 << n_max
    scen = np.arange(n_scen)
    p_event = np.array([1.0 / math.expm1(2.0 ** ((beta - alpha) * k))
                        for k in range(n_max)])
    bits = np.stack([(scen >> k) & 1 for k in range(n_max)])  # (n_max, S)
    probs = np.prod(np.where(bits == 1, p_event[:, None],
                             1.0 - p_event[:, None]), axis=0)
    m = grid.n_cells  # n_max + 1 (trailing cell to the horizon, value 0)
    values = np.zeros((m, n_scen))
    levels = np.empty((m, n_scen), dtype=np.int64)
    for k in range(m):
        # at t_k the first k+1 events are known (general filtration, rich at 0)
        known = min(k + 1, n_max)
        levels[k] = scen & ((1 << known) - 1)
        if k < n_max:
            values[k] = 2.0 ** (beta * k) * bits[k]
    proc = StepProcess(grid, values, probs, levels)

    ns = np.arange(1, n_max + 1, dtype=float)
    series_i = 2.0 ** (beta * (ns - 1.0)) * 2.0 ** (-ns / 2.0)
    computed = np.array([bmo_slice_norm(proc, 1.0, float(grid.nodes[n - 1]),
                                        float(grid.nodes[n]))
                         for n in range(1, n_max + 1)])
    series_ii = np.cumsum(2.0 ** (beta * (ns - 1.0)) * 2.0 ** (-ns / (2.0 * eta)))
    series_iii = np.cumsum(2.0 ** (alpha * (ns - 1.0)) * 2.0 ** (-ns / 2.0))
    orl_num = np.array([
        orlicz_exp_norm(np.array([2.0 ** (beta * k), 0.0]),
                        weights=np.array([p_event[k], 1.0 - p_event[k]]))
        for k in range(n_max)
    ])
    orl_closed = 2.0 ** (alpha * np.arange(n_max))
    report = WeakerBmoReport(eta, alpha, beta, n_max, series_i, computed,
                             series_ii, series_iii, orl_num, orl_closed,
                             bmo_s2eta_norm(proc, eta))
    return proc, report


@dataclass(frozen=True)
class FeffermanReport:
    lhs: float        # || int_0^T |Z|^{1+eta} ds ||_p
    rhs: float        # sqrt(2) p ||S_2(Z)||_p ||Z||^eta_{BMO(S_{2 eta})}
    s2_norm: float
    bmo_norm: float
    holds: bool


def _tree_p_norm(z: StepProcess, per_scenario: np.ndarray, p: float) -> float:
    if z.is_deterministic:
        return float(per_scenario)
    return float(np.sum(z.probs * per_scenario ** p) ** (1.0 / p))


def fefferman_check(z: StepProcess, eta: float, p: float,
                    cfg=None) -> FeffermanReport:
    """Exact two-sided evaluation of the Fefferman-type bound on the tree.

    cfg is accepted for interface parity with the MC modules and unused:
    both sides are closed-form sums here.
    """
    if eta <= 0.0:
        raise DomainError("eta must be > 0")
    if p < 1.0:
        raise DomainError("p must be >= 1")
    w = z.grid.widths if z.is_deterministic else z.grid.widths[:, None]
    integ = np.sum(np.abs(z.values) ** (1.0 + eta) * w, axis=0)
    s2 = np.sqrt(np.sum(z.values ** 2 * w, axis=0))
    lhs = _tree_p_norm(z, integ, p)
    s2_norm = _tree_p_norm(z, s2, p)
    bmo = bmo_s2eta_norm(z, eta)
    rhs = math.sqrt(2.0) * p * s2_norm * bmo ** eta
    return FeffermanReport(lhs, rhs, s2_norm, bmo,
                           lhs <= rhs * (1.0 + 1e-12))
