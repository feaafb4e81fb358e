"""Admissible curve functionals and Besov-type (semi)norms.

Every seminorm here is of the form Phi(F) where F is the curve

    phi  |->  || xi - xi^phi ||_p

restricted to a finite profile family, and Phi is a positively homogeneous,
subadditive, monotone reduction of the tabulated values.  The split is
explicit in the code: profiles() names the family, Monte Carlo tabulates
F once per profile on shared coupled samples, and combine() is exact
deterministic arithmetic on the tabulated curve.  Stochastic error enters
only through the tabulated values, so admissibility checks run at machine
precision and error bars propagate through combine by linearization.

Implemented families:

  * DyadicSupFamily   sup over dyadic intervals of F(chi_{(s,t]})/(t-s)^{1/r}
                      (r = 2 is the square-root weighting tied to the
                      Malliavin-derivative seminorms)
  * WeightedSup       sup_i F(phi_i)/alpha_i over an explicit profile set
  * AnisotropicSup    max over bands (r_{l-1}, r_l] of the
                      L_{q_l}(dt/(r_l-t)) norm of (r_l-t)^{-theta_l/2}
                      F(chi_{(t,r_l]}), integrated in u = -ln(r_l-t)
  * IsotropicKernel   (int_0^1 K(r) |F(phi_r)|^q dr)^{1/q} over constant
                      profiles, with a log substitution for kernels that
                      blow up at r = 1 (Mehler-type preset included)

plus the full norm (E|xi|^p + Phi(F)^p)^(1/p), the two-rotation distance
D[eta_1, eta_2], and the seminorm of functional-valued step processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_paths import (RngStream, RotationProfile, TimeGrid, ProfileError,
                         rotate, sample_pair)
from .estimators import (Estimate, McConfig, p_norm, p_norm_diff_profiles,
                         _batch_stats, _require_finite, _root_estimate)
from .functionals import WienerFunctional, evaluate

_MIN_TAIL_DECAY = 0.02


class SeminormError(ValueError):
    """Seminorm parameters incompatible with the grid."""


class NonIntegrableKernelError(RuntimeError):
    """Partial sums of the kernel quadrature do not settle."""


def d_distance(eta1: float, eta2: float) -> float:
    """D[eta_1, eta_2] = 1 - sqrt(1-eta_1^2) sqrt(1-eta_2^2) - eta_1 eta_2.

    The squared L_2 gap rate between two constant rotations: the cell
    contribution of |phi - psi| to the rotated-path covariance.
    """
    for eta in (eta1, eta2):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"rotation level {eta!r} outside [0, 1]")
    return 1.0 - math.sqrt((1.0 - eta1 * eta1) * (1.0 - eta2 * eta2)) \
        - eta1 * eta2


class ProfileFunctional:
    """A reduction Phi over a fixed finite profile family.

    combine() must be deterministic arithmetic on a tabulated value curve
    (one nonnegative float per profile); combine_grad() is its a.e.
    gradient, used to push standard errors through the reduction.
    """

    label: str = "phi"

    def profiles(self) -> list[RotationProfile]:
        raise NotImplementedError

    def combine(self, values: np.ndarray) -> float:
        raise NotImplementedError

    def combine_grad(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def argmax_label(self, values: np.ndarray) -> str | None:
        return None


@dataclass(frozen=True)
class PhiReport:
    """Seminorm estimate plus attribution of where the value came from."""

    estimate: Estimate
    functional_label: str
    argmax: str | None = None
    extras: dict = field(default_factory=dict)


def tabulate(xi: WienerFunctional, phi: ProfileFunctional, p: float,
             cfg: McConfig, d: int = 1) -> list[Estimate]:
    """One coupled MC estimate of F(profile) per profile, shared samples."""
    return p_norm_diff_profiles(xi, phi.profiles(), p, cfg, d)


def estimate_seminorm(xi: WienerFunctional, phi: ProfileFunctional, p: float,
                      cfg: McConfig, d: int = 1) -> PhiReport:
    ests = tabulate(xi, phi, p, cfg, d)
    values = np.array([e.value for e in ests])
    errs = np.array([e.stderr for e in ests])
    value = phi.combine(values)
    grad = phi.combine_grad(values)
    # all profiles see the same coupled samples, so node errors are strongly
    # positively correlated: propagate linearly (exact at full correlation,
    # and identical to the quadratic rule for one-hot sup gradients)
    stderr = float(np.sum(np.abs(grad) * errs))
    extras = getattr(phi, "last_details", None)
    return PhiReport(Estimate(value, stderr, cfg.n_samples), phi.label,
                     phi.argmax_label(values), dict(extras) if extras else {})


def dyadic_intervals(grid: TimeGrid, depth: int,
                     restrict: tuple[float, float] | None = None
                     ) -> list[tuple[float, float]]:
    """All dyadic intervals of [0, T] down to width T/2^depth.

    Every dyadic endpoint must be a grid node; the full interval (level 0)
    is included.  `restrict` keeps only intervals inside [lo, hi].
    """
    if depth < 0:
        raise SeminormError("depth must be >= 0")
    horizon = grid.horizon
    out = []
    for level in range(depth + 1):
        step = horizon / 2 ** level
        for j in range(2 ** level):
            a, b = j * step, (j + 1) * step
            if restrict is not None and (a < restrict[0] or b > restrict[1]):
                continue
            out.append((a, b))
    if not out:
        raise SeminormError("empty interval family")
    return out


class DyadicSupFamily(ProfileFunctional):
    """sup over dyadic intervals of F(chi_{(s,t]}) / (t-s)^{1/r}."""

    def __init__(self, grid: TimeGrid, r: float = 2.0, depth: int = 6,
                 restrict: tuple[float, float] | None = None) -> None:
        if r < 2.0:
            raise SeminormError("interval weight exponent r must be >= 2")
        self.grid = grid
        self.r = float(r)
        self.depth = depth
        self.intervals = dyadic_intervals(grid, depth, restrict)
        try:
            self._profiles = [RotationProfile.indicator(grid, a, b)
                              for a, b in self.intervals]
        except ProfileError as exc:
            raise SeminormError(
                f"grid lacks dyadic nodes at depth {depth}: {exc}") from exc
        self.weights = np.array([(b - a) ** (1.0 / self.r)
                                 for a, b in self.intervals])
        self.label = f"sup-dyadic[r={r:g},depth={depth}]"

    def profiles(self) -> list[RotationProfile]:
        return self._profiles

    def combine(self, values: np.ndarray) -> float:
        return float(np.max(values / self.weights))

    def combine_grad(self, values: np.ndarray) -> np.ndarray:
        g = np.zeros_like(values, dtype=float)
        j = int(np.argmax(values / self.weights))
        g[j] = 1.0 / self.weights[j]
        return g

    def argmax_label(self, values: np.ndarray) -> str | None:
        a, b = self.intervals[int(np.argmax(values / self.weights))]
        return f"({a:g},{b:g}]"


class WeightedSup(ProfileFunctional):
    """sup_i F(phi_i) / alpha_i over an explicit profile family."""

    def __init__(self, profiles: Sequence[RotationProfile],
                 alphas: Sequence[float]) -> None:
        if len(profiles) == 0:
            raise SeminormError("empty profile family")
        if len(profiles) != len(alphas):
            raise SeminormError("need one weight per profile")
        self.alphas = np.asarray(alphas, dtype=float)
        if np.any(self.alphas <= 0.0):
            raise SeminormError("weights must be positive")
        self._profiles = list(profiles)
        self.label = f"weighted-sup[{len(profiles)}]"

    def profiles(self) -> list[RotationProfile]:
        return self._profiles

    def combine(self, values: np.ndarray) -> float:
        return float(np.max(values / self.alphas))

    def combine_grad(self, values: np.ndarray) -> np.ndarray:
        g = np.zeros_like(values, dtype=float)
        j = int(np.argmax(values / self.alphas))
        g[j] = 1.0 / self.alphas[j]
        return g

    def argmax_label(self, values: np.ndarray) -> str | None:
        j = int(np.argmax(values / self.alphas))
        return self._profiles[j].label


class AnisotropicSup(ProfileFunctional):
    """max over bands of || (r_l - t)^{-theta_l/2} F(chi_{(t, r_l]}) ||.

    Band l covers t in (r_{l-1}, r_l] with the measure dt/(r_l - t) and
    order q_l.  The substitution u = -ln(r_l - t) turns the measure into du
    and the integral into a trapezoid sum over u-nodes snapped to the grid,
    cut off one grid cell before the singular endpoint.  The cut tail is
    estimated from the local power-law decay of the integrand (fitted on
    the last nodes), added to the value, and reported per band; a fit that
    does not decay is floored and flagged instead of trusted.

    bands: list of (r_l, theta_l, q_l) with increasing r_l ending at the
    horizon; q_l = inf takes a sup over the quadrature nodes instead of an
    integral.  theta in (0,1).
    """

    def __init__(self, grid: TimeGrid,
                 bands: Sequence[tuple[float, float, float]],
                 n_quad: int = 24) -> None:
        if not bands:
            raise SeminormError("need at least one band")
        self.grid = grid
        self.bands = []
        self._profiles: list[RotationProfile] = []
        self._slices: list[slice] = []
        self._band_meta: list[dict] = []
        r_lo = 0.0
        for (r_hi, theta, q) in bands:
            if not r_lo < r_hi <= grid.horizon:
                raise SeminormError("band endpoints must increase within (0, T]")
            if not 0.0 < theta < 1.0:
                raise SeminormError("theta must lie in (0, 1)")
            if q < 1.0:
                raise SeminormError("q must be >= 1")
            self.bands.append((r_lo, float(r_hi), float(theta), float(q)))
            r_lo = float(r_hi)
        if abs(r_lo - grid.horizon) > 1e-12 * max(1.0, grid.horizon):
            raise SeminormError("last band must end at the horizon")

        for (lo, hi, theta, q) in self.bands:
            i_lo = grid.node_index(lo)
            i_hi = grid.node_index(hi)
            if i_hi - i_lo < 2:
                raise SeminormError("band too narrow: needs >= 2 grid cells")
            # candidate left endpoints: nodes in [lo, hi) excluding the last
            # cell, which is the quadrature cutoff
            cand = np.arange(i_lo, i_hi - 1 + 1)
            u_cand = -np.log(hi - grid.nodes[cand])
            if cand.size > n_quad:
                targets = np.linspace(u_cand[0], u_cand[-1], n_quad)
                pick = np.unique(np.searchsorted(u_cand, targets).clip(0, cand.size - 1))
            else:
                pick = np.arange(cand.size)
            idx = cand[pick]
            start = len(self._profiles)
            for i in idx:
                t = float(grid.nodes[i])
                self._profiles.append(RotationProfile.indicator(grid, t, hi))
            self._slices.append(slice(start, len(self._profiles)))
            u = u_cand[pick]
            self._band_meta.append({
                "u": u,
                "sing": (hi - grid.nodes[idx]).astype(float),
                "theta": theta, "q": q, "interval": (lo, hi),
            })
        self.label = f"anisotropic[{len(self.bands)} bands]"
        self.last_details: dict = {}

    def profiles(self) -> list[RotationProfile]:
        return self._profiles

    @staticmethod
    def _trap_weights(u: np.ndarray) -> np.ndarray:
        w = np.zeros_like(u)
        if u.size >= 2:
            du = np.diff(u)
            w[:-1] += du / 2.0
            w[1:] += du / 2.0
        return w

    def _band_value(self, meta: dict, f: np.ndarray) -> tuple[float, np.ndarray, dict]:
        theta, q = meta["theta"], meta["q"]
        g = meta["sing"] ** (-theta / 2.0) * f
        info: dict = {"interval": meta["interval"], "n_nodes": f.size,
                      "tail": 0.0, "tail_decay": np.nan, "tail_floored": False}
        if not np.isfinite(q):  # q = inf: sup over the nodes
            j = int(np.argmax(g))
            grad = np.zeros_like(f)
            grad[j] = meta["sing"][j] ** (-theta / 2.0)
            return float(g[j]), grad, info
        w = self._trap_weights(meta["u"])
        integral = float(np.sum(w * g ** q))
        # tail beyond the cutoff: fit g^q ~ A e^{-lam u} on the trailing nodes
        grad_tail = np.zeros_like(f)
        k = min(4, f.size)
        tail_g = g[-k:]
        if np.all(tail_g > 0.0) and g[-1] > 0.0:
            slope = np.polyfit(meta["u"][-k:], np.log(tail_g ** q), 1)[0]
            lam = -float(slope)
            floored = lam < _MIN_TAIL_DECAY
            lam = max(lam, _MIN_TAIL_DECAY)
            tail = float(g[-1] ** q / lam)
            integral += tail
            info.update(tail=tail, tail_decay=lam, tail_floored=floored)
            grad_tail[-1] = q * g[-1] ** (q - 1.0) \
                * meta["sing"][-1] ** (-theta / 2.0) / lam
        if integral <= 0.0:
            return 0.0, np.zeros_like(f), info
        value = integral ** (1.0 / q)
        dI = w * q * g ** (q - 1.0) * meta["sing"] ** (-theta / 2.0) + grad_tail
        grad = value ** (1.0 - q) / q * dI
        return value, grad, info

    def combine(self, values: np.ndarray) -> float:
        return self._combine_full(values)[0]

    def combine_grad(self, values: np.ndarray) -> np.ndarray:
        return self._combine_full(values)[1]

    def _combine_full(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        best, best_grad, details = -np.inf, None, []
        grad = np.zeros_like(values, dtype=float)
        for sl, meta in zip(self._slices, self._band_meta):
            v, g, info = self._band_value(meta, values[sl])
            info["value"] = v
            details.append(info)
            if v > best:
                best, best_grad, best_sl = v, g, sl
        grad[best_sl] = best_grad
        self.last_details = {"bands": details}
        return float(best), grad

    def argmax_label(self, values: np.ndarray) -> str | None:
        vals = [self._band_value(meta, values[sl])[0]
                for sl, meta in zip(self._slices, self._band_meta)]
        lo, hi = self.bands[int(np.argmax(vals))][:2]
        return f"band({lo:g},{hi:g}]"


def mehler_weight(w: np.ndarray, theta: float, q: float) -> np.ndarray:
    """Transformed kernel density in w = ln(1/(1-r^2)).

    The kernel 2r/(1-r^2) * (ln 1/(1-r^2))^(-1-theta*q/2) times dr/dw
    collapses to w^(-1-theta*q/2) exactly: the substitution removes the
    1/(1-r^2) blow-up, leaving only the logarithmic power.
    """
    return w ** (-1.0 - theta * q / 2.0)


class IsotropicKernel(ProfileFunctional):
    """(int_0^1 K(r) |F(phi_r)|^q dr)^{1/q} over constant profiles phi_r.

    Plain mode uses midpoint quadrature on (0,1).  Singular mode (for
    kernels concentrating at r = 1) substitutes w = ln(1/(1-r^2)) and then
    integrates on a log-spaced w-grid (uniform trapezoid in ln w); power-law
    factors w^a become smooth exponentials in ln w, so halving the step
    self-converges fast even though the w-integrand blows up at one end.
    Partial sums over dyadic sub-windows at both ends are checked for
    divergence: when an outermost window contributes as much as its
    neighbour, the kernel is declared non-integrable against |F|^q rather
    than silently truncated.
    """

    def __init__(self, grid: TimeGrid, q: float, kernel=None,
                 n_quad: int = 32, singular_weight=None,
                 w_window: tuple[float, float] = (1e-3, 60.0)) -> None:
        if q < 1.0:
            raise SeminormError("q must be >= 1")
        if (kernel is None) == (singular_weight is None):
            raise SeminormError("give exactly one of kernel / singular_weight")
        if n_quad < 2:
            raise SeminormError("need at least 2 quadrature nodes")
        self.grid = grid
        self.q = float(q)
        self.singular = singular_weight is not None
        if self.singular:
            w_lo, w_hi = w_window
            if not 0.0 < w_lo < w_hi:
                raise SeminormError("need 0 < w_lo < w_hi")
            u = np.linspace(np.log(w_lo), np.log(w_hi), n_quad)
            w = np.exp(u)
            r = np.sqrt(1.0 - np.exp(-w))
            # dw = w du: trapezoid in u picks up a factor w per node
            self._u_density = w * singular_weight(w)
            self.node_weights = AnisotropicSup._trap_weights(u) * self._u_density
            self._w = w
        else:
            r = (np.arange(n_quad) + 0.5) / n_quad
            self.node_weights = np.array([kernel(float(x)) for x in r]) / n_quad
        if np.any(self.node_weights < 0.0) or not np.all(np.isfinite(self.node_weights)):
            raise SeminormError("kernel must be nonnegative and finite on the nodes")
        self.r_nodes = r
        self._profiles = [RotationProfile.constant(grid, float(x)) for x in r]
        self.label = ("isotropic-singular" if self.singular else "isotropic") \
            + f"[q={q:g},n={n_quad}]"

    @classmethod
    def mehler(cls, grid: TimeGrid, q: float, theta: float,
               n_quad: int = 64,
               w_window: tuple[float, float] = (1e-3, 60.0)) -> "IsotropicKernel":
        if theta < 0.0:
            raise SeminormError("theta must be >= 0")
        obj = cls(grid, q, singular_weight=lambda w: mehler_weight(w, theta, q),
                  n_quad=n_quad, w_window=w_window)
        obj.label = f"mehler-kernel[theta={theta:g},q={q:g},n={n_quad}]"
        return obj

    def profiles(self) -> list[RotationProfile]:
        return self._profiles

    def _check_integrable(self, values: np.ndarray) -> None:
        """Require geometric decay of the substituted integrand at both ends.

        Works on the plain integrand in u = ln w (no trapezoid weights, so
        endpoint half-weights cannot mask a flat tail).  A mean over the
        outermost factor-2 window in w at >= 95% of its neighbour's mean
        means the u-integral diverges, or sits too close to divergence for
        this window to resolve; either way the truncated value is
        meaningless and the kernel is reported non-integrable.
        """
        if not self.singular:
            return
        dens = self._u_density * values ** self.q
        w_lo, w_hi = self._w[0], self._w[-1]

        def window_mean(lo: float, hi: float) -> float:
            mask = (self._w >= lo) & (self._w <= hi)
            return float(np.mean(dens[mask])) if np.any(mask) else 0.0

        outer_hi = [window_mean(w_hi / 2 ** (k + 1), w_hi / 2 ** k)
                    for k in range(2)]
        outer_lo = [window_mean(w_lo * 2 ** k, w_lo * 2 ** (k + 1))
                    for k in range(2)]
        for outer, end in ((outer_hi, "r=1"), (outer_lo, "r=0")):
            if outer[0] > 0.0 and outer[0] >= 0.95 * outer[1] > 0.0:
                raise NonIntegrableKernelError(
                    f"kernel quadrature does not decay toward {end} "
                    f"(outer window means {outer[0]:.3g} vs {outer[1]:.3g})")

    def combine(self, values: np.ndarray) -> float:
        self._check_integrable(values)
        total = float(np.sum(self.node_weights * values ** self.q))
        return total ** (1.0 / self.q) if total > 0.0 else 0.0

    def combine_grad(self, values: np.ndarray) -> np.ndarray:
        contrib = self.node_weights * values ** self.q
        total = float(np.sum(contrib))
        if total <= 0.0:
            return np.zeros_like(values, dtype=float)
        value = total ** (1.0 / self.q)
        return value ** (1.0 - self.q) * self.node_weights \
            * values ** (self.q - 1.0)


def sup_interval_seminorm(xi: WienerFunctional, p: float, cfg: McConfig,
                          r: float = 2.0, depth: int = 6, d: int = 1,
                          restrict: tuple[float, float] | None = None
                          ) -> PhiReport:
    """Phi_r seminorm over the dyadic interval family (r=2 square-root weight)."""
    fam = DyadicSupFamily(xi.grid, r=r, depth=depth, restrict=restrict)
    return estimate_seminorm(xi, fam, p, cfg, d)


def anisotropic_seminorm(xi: WienerFunctional, p: float,
                         bands: Sequence[tuple[float, float, float]],
                         cfg: McConfig, n_quad: int = 24,
                         d: int = 1) -> PhiReport:
    fam = AnisotropicSup(xi.grid, bands, n_quad=n_quad)
    return estimate_seminorm(xi, fam, p, cfg, d)


def isotropic_seminorm(xi: WienerFunctional, p: float, q: float,
                       cfg: McConfig, kernel=None, n_quad: int = 32,
                       singular_weight=None,
                       w_window: tuple[float, float] = (1e-3, 60.0),
                       d: int = 1) -> PhiReport:
    fam = IsotropicKernel(xi.grid, q, kernel=kernel, n_quad=n_quad,
                          singular_weight=singular_weight, w_window=w_window)
    return estimate_seminorm(xi, fam, p, cfg, d)


def besov_norm(xi: WienerFunctional, p: float, phi: ProfileFunctional,
               cfg: McConfig, d: int = 1) -> Estimate:
    """(E|xi|^p + Phi(F)^p)^(1/p), errors combined by linearization."""
    base = p_norm(xi, p, cfg, d)
    semi = estimate_seminorm(xi, phi, p, cfg, d)
    total = base.value ** p + semi.estimate.value ** p
    if total <= 0.0:
        return Estimate(0.0, 0.0, cfg.n_samples)
    value = total ** (1.0 / p)
    var = 0.0
    for part in (base, semi.estimate):
        if part.value > 0.0:
            var += ((part.value / value) ** (p - 1.0) * part.stderr) ** 2
    return Estimate(value, float(np.sqrt(var)), cfg.n_samples)


@dataclass(frozen=True)
class AdmissibilityReport:
    functional_label: str
    n_trials: int
    subadditive: bool
    homogeneous: bool
    monotone: bool
    fatou: bool
    violations: tuple = ()

    @property
    def admissible(self) -> bool:
        return self.subadditive and self.homogeneous and self.monotone and self.fatou


def admissibility_check(phi: ProfileFunctional, trials: int = 16,
                        seed: int = 0, scale: float = 1.0) -> AdmissibilityReport:
    """Check the four admissibility conditions on random tabulated curves.

    All arithmetic is exact on the tabulation (no MC noise): subadditivity,
    positive homogeneity at lambda in {0, 1/2, 2}, monotonicity, and a
    Fatou-type lower semicontinuity along uniformly increasing curves, the
    last certified through the functional's own modulus Phi(ones).
    """
    n = len(phi.profiles())
    gen = RngStream(seed, 0).generator()
    ok = {"sub": True, "hom": True, "mon": True, "fatou": True}
    violations = []

    def note(kind, **payload):
        ok[kind] = False
        if len(violations) < 8:
            violations.append({"condition": kind, **payload})

    try:
        ones_mod = phi.combine(np.ones(n))
    except Exception:  # a broken functional may fail even here
        ones_mod = np.inf
    for trial in range(trials):
        f = np.abs(gen.standard_normal(n)) * scale
        g = np.abs(gen.standard_normal(n)) * scale
        h = np.abs(gen.standard_normal(n)) * scale
        cf, cg = phi.combine(f), phi.combine(g)
        tol = 1e-12 * (1.0 + abs(cf) + abs(cg))
        if phi.combine(f + g) > cf + cg + tol:
            note("sub", trial=trial, lhs=phi.combine(f + g), rhs=cf + cg)
        for lam in (0.0, 0.5, 2.0):
            if abs(phi.combine(lam * f) - lam * cf) > tol * max(1.0, lam):
                note("hom", trial=trial, lam=lam,
                     lhs=phi.combine(lam * f), rhs=lam * cf)
        if cf > phi.combine(f + h) + tol:
            note("mon", trial=trial, lhs=cf, rhs=phi.combine(f + h))
        # F_k = (1 - 2^-k) F increases uniformly to F; lower semicontinuity
        # demands Phi(F) <= liminf Phi(F_k), certified via the modulus bound
        for k in (1, 2, 4, 8):
            fk = (1.0 - 2.0 ** (-k)) * f
            gap = float(np.max(np.abs(f - fk)))
            if cf > phi.combine(fk) + ones_mod * gap + tol:
                note("fatou", trial=trial, k=k,
                     lhs=cf, rhs=phi.combine(fk) + ones_mod * gap)
    return AdmissibilityReport(getattr(phi, "label", "phi"), trials,
                               ok["sub"], ok["hom"], ok["mon"], ok["fatou"],
                               tuple(violations))


class StepFunctionalProcess:
    """Process A_s piecewise constant on grid cells, each value a functional.

    components[k] is A on the cell (t_k, t_{k+1}]; path-based constructors
    sample the path at the right endpoint of the cell (the convention is
    fixed here once and used consistently by oracles and tests).
    """

    def __init__(self, grid: TimeGrid,
                 components: Sequence[WienerFunctional]) -> None:
        if len(components) != grid.n_cells:
            raise SeminormError("need one functional per grid cell")
        for c in components:
            if not c.grid.matches(grid):
                raise SeminormError("component grids must match")
        self.grid = grid
        self.components = list(components)

    @classmethod
    def brownian_path(cls, grid: TimeGrid, freeze_after: float | None = None
                      ) -> "StepFunctionalProcess":
        """A on cell k equals W at min(t_{k+1}, freeze_after)."""
        from .functionals import ConstantFunctional, PolyIncrements
        comps: list[WienerFunctional] = []
        for k in range(grid.n_cells):
            t = float(grid.nodes[k + 1])
            if freeze_after is not None:
                t = min(t, freeze_after)
            if t <= 0.0:
                comps.append(ConstantFunctional(grid, 0.0))
            else:
                comps.append(PolyIncrements(grid, [(0.0, t)], [(1.0, (1,))]))
        return cls(grid, comps)

    def evaluate_all(self, incr: np.ndarray) -> np.ndarray:
        """Matrix (n_samples, M) of component values."""
        return np.stack([c.evaluate(incr) for c in self.components], axis=1)


def process_seminorm(proc: StepFunctionalProcess, q: float, r: float,
                     t: float, phi: ProfileFunctional, cfg: McConfig,
                     d: int = 1) -> PhiReport:
    """Phi applied to psi -> || (int_t^T |A_s - A_s^psi|^r ds)^{1/r} ||_q."""
    if q < 1.0 or r < 1.0:
        raise SeminormError("q and r must be >= 1")
    grid = proc.grid
    k0 = grid.node_index(t)
    w_tail = grid.widths[k0:]
    profiles = phi.profiles()
    means = np.empty((cfg.n_batches, len(profiles)))
    for bt in range(cfg.n_batches):
        pair = sample_pair(grid, d, cfg.stream(bt), cfg.batch_size)
        base = proc.evaluate_all(pair.dW)[:, k0:]
        _require_finite(base, "step process")
        for j, profile in enumerate(profiles):
            rotated = proc.evaluate_all(rotate(pair, profile))[:, k0:]
            integ = np.sum(np.abs(base - rotated) ** r * w_tail, axis=1)
            means[bt, j] = np.mean(integ ** (q / r))
    values, errs = [], []
    for j in range(len(profiles)):
        m, se = _batch_stats(means[:, j])
        est = _root_estimate(m, se, q, cfg.n_samples)
        values.append(est.value)
        errs.append(est.stderr)
    values = np.asarray(values)
    errs = np.asarray(errs)
    value = phi.combine(values)
    grad = phi.combine_grad(values)
    # shared samples across profiles: propagate errors linearly (see
    # estimate_seminorm)
    stderr = float(np.sum(np.abs(grad) * errs))
    return PhiReport(Estimate(value, stderr, cfg.n_samples), phi.label,
                     phi.argmax_label(values))


@dataclass(frozen=True)
class BvEmbeddingRow:
    h: float
    norm: Estimate       # || g(xi) - g(xi^{(T-h,T]}) ||_q
    base_dist: Estimate  # || xi - xi^{(T-h,T]} ||_p
    bound: float


@dataclass(frozen=True)
class BvEmbeddingReport:
    q: float
    p: float
    rows: tuple
    slope: float
    target_slope: float
    all_bounded: bool


def bv_embedding_report(xi: WienerFunctional, g_of_xi: WienerFunctional,
                        q: float, p: float, hs: Sequence[float],
                        cfg: McConfig, density_sup: float,
                        d: int = 1) -> BvEmbeddingReport:
    """Decoupling rate of a bounded-variation function of xi.

    For each h: the swap interval is (T-h, T], the q-norm of the indicator
    difference is estimated, and compared against the embedding bound
    3^{(q+1)/q} (sup rho)^{p/(q(p+1))} ||xi - xi^phi||_p^{p/(q(p+1))}
    (total variation 1).  The report carries the log-log slope across hs,
    whose target is 1/(2q).
    """
    horizon = xi.grid.horizon
    rows = []
    expo = p / (q * (p + 1.0))
    factor = 3.0 ** ((q + 1.0) / q) * density_sup ** expo
    for h in hs:
        prof = RotationProfile.indicator(xi.grid, horizon - h, horizon)
        norm = p_norm_diff_profiles(g_of_xi, [prof], q, cfg, d)[0]
        base = p_norm_diff_profiles(xi, [prof], p, cfg, d)[0]
        bound = factor * base.value ** expo
        rows.append(BvEmbeddingRow(float(h), norm, base, bound))
    xs = np.log([row.h for row in rows])
    ys = np.log([max(row.norm.value, 1e-300) for row in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    bounded = all(row.norm.value <= row.bound * (1.0 + 1e-9) for row in rows)
    return BvEmbeddingReport(q, p, tuple(rows), slope, 1.0 / (2.0 * q), bounded)
