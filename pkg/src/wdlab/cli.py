"""Config-driven experiment runner.

Usage:
    wdlab run config.toml [--threads N] [--out DIR]
    wdlab list

A config is a TOML file with an [experiment] table (kind + seed, both
mandatory), optional [grid], [mc], [params], [expect] and [output] tables.
Unknown keys anywhere are an error that lists them.  Each run writes one
or more CSV files (fixed column order, schema-version comment on line 1)
and a JSON summary whose estimates all carry value/stderr/n.  Exit codes:
0 all asserted contracts pass, 1 config or usage error, 2 a contract
failed (the failing record is named on stderr).

Thread count is plumbing, not mathematics: all random draws are tied to
(seed, batch) counter streams, sub-jobs are independent, and results are
collected in submission order, so the CSV bytes cannot depend on
--threads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import besov, bmo, bsde, chaos, malliavin
from .core_paths import RotationProfile, TimeGrid
from .estimators import Estimate, McConfig, cond_exp_residual, p_norm, \
    sandwich_check
from .functionals import BVIndicator, CounterexampleSeries, \
    DiffusionTerminal, LinearTerminal, SquareTerminal


class ConfigError(Exception):
    """Bad config file or unresolvable names; exit code 1."""


FUNCTIONALS: dict[str, str] = {
    "linear-terminal": "terminal value of the driving motion; params: none",
    "square-terminal": "squared terminal value; params: none",
    "ou-diffusion": "g(X_T) for a mean-reverting Euler diffusion; "
                    "params: x0",
    "bv-indicator": "indicator of a nonnegative terminal value; "
                    "params: threshold",
    "counterexample-series": "lacunary cosine series with linear seminorm "
                             "growth; params: n_terms",
}

PHI_VARIANTS: dict[str, str] = {
    "dyadic-sup": "sup over dyadic intervals, width^{1/r} weight; "
                  "params: r, depth",
    "anisotropic": "banded windowed-mean seminorm; params: bands "
                   "[[r_hi, theta, q], ...], n_quad",
    "flat-kernel": "isotropic integral with constant kernel; params: q, "
                   "n_quad",
    "mehler-kernel": "isotropic integral with the singular logarithmic "
                     "weight; params: q, theta, n_quad",
}

EXPERIMENTS: dict[str, str] = {
    "besov-norm": "norm and seminorm of one functional under one Phi",
    "sandwich": "conditional residual vs swap distance ratio sweep",
    "phi2-equivalence": "interval seminorm vs derivative seminorms",
    "counterexample": "growth table of the cosine series family",
    "chaos-check": "exact chaos identities vs Monte Carlo",
    "bmo-sweep": "Phi/Psi tables and slice norms",
    "rh-bound": "reverse Holder bound vs lognormal oracle",
    "p0": "moment threshold from the gradient BMO size",
    "weaker-bmo": "exponential-but-not-BMO construction report",
    "bsde-oracle": "solver value at the origin vs closed form",
    "bsde-stability": "decoupling stability two-sided check",
    "bsde-variation": "terminal-window variation slope",
    "bv-embedding": "bounded-variation terminal decoupling rate",
}

_TABLE_KEYS = {
    "experiment": {"kind", "seed", "threads"},
    "grid": {"horizon", "n_cells"},
    "mc": {"n_samples", "n_batches", "n_inner"},
    "expect": {"estimate", "value", "tol"},
    "output": {"dir"},
}

_PARAM_KEYS = {
    "besov-norm": {"functional", "p", "phi", "r", "depth", "q", "theta",
                   "n_quad", "n_terms", "bands", "x0", "threshold"},
    "sandwich": {"functional", "p", "h", "x0", "threshold", "n_terms"},
    "phi2-equivalence": {"functional", "p", "depth", "n_terms", "x0"},
    "counterexample": {"n_terms_max", "p"},
    "chaos-check": {"functional", "a", "b"},
    "bmo-sweep": {"betas", "gammas", "kappa", "n_slices", "beta"},
    "rh-bound": {"kappa", "beta", "n_slices"},
    "p0": {"l_z", "s_inf"},
    "weaker-bmo": {"eta", "alpha", "beta", "n_max"},
    "bsde-oracle": {"preset", "n_x", "n_quad", "n_picard", "scheme", "tol",
                    "doubling"},
    "bsde-stability": {"preset", "p", "t_start", "hs", "max_over_min",
                       "n_x", "n_quad", "n_picard", "scheme"},
    "bsde-variation": {"preset", "p", "gaps", "slope_target", "slope_tol",
                       "n_x", "n_quad", "n_picard", "scheme"},
    "bv-embedding": {"q", "p", "hs", "slope_rtol"},
}

_GRIDLESS = {"counterexample", "p0", "weaker-bmo"}
_EXACT = {"bmo-sweep", "rh-bound", "p0", "weaker-bmo", "bsde-oracle"}


def _validate_config(cfg: dict) -> str:
    if "experiment" not in cfg:
        raise ConfigError("missing [experiment] table")
    kind = cfg["experiment"].get("kind")
    if kind not in EXPERIMENTS:
        known = ", ".join(EXPERIMENTS)
        raise ConfigError(f"unknown experiment kind {kind!r}; one of: {known}")
    if not isinstance(cfg["experiment"].get("seed"), int):
        raise ConfigError("experiment.seed is mandatory and must be an integer")
    unknown: list[str] = []
    for table, body in cfg.items():
        if table == "params":
            allowed = _PARAM_KEYS[kind]
        elif table in _TABLE_KEYS:
            allowed = _TABLE_KEYS[table]
        else:
            unknown.append(table)
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"[{table}] must be a table")
        unknown.extend(f"{table}.{k}" for k in body if k not in allowed)
    if unknown:
        raise ConfigError("unknown keys: " + ", ".join(sorted(unknown)))
    if kind in _GRIDLESS and "grid" in cfg:
        raise ConfigError(f"[grid] is not used by kind {kind!r}")
    if kind in _EXACT and "mc" in cfg:
        raise ConfigError(f"[mc] is not used by kind {kind!r} (exact arithmetic)")
    return kind


def _grid_from(cfg: dict, default_m: int = 64) -> TimeGrid:
    g = cfg.get("grid", {})
    return TimeGrid.uniform(float(g.get("horizon", 1.0)),
                            int(g.get("n_cells", default_m)))


def _mc_from(cfg: dict, default_n: int = 100_000) -> McConfig:
    m = cfg.get("mc", {})
    seed = cfg["experiment"]["seed"]
    return McConfig(n_samples=int(m.get("n_samples", default_n)),
                    n_batches=int(m.get("n_batches", 20)),
                    seed=seed,
                    n_inner=m.get("n_inner"))


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _build_functional(name: str, grid: TimeGrid, params: dict):
    if name == "linear-terminal":
        return LinearTerminal(grid)
    if name == "square-terminal":
        return SquareTerminal(grid)
    if name == "ou-diffusion":
        return DiffusionTerminal(
            grid,
            drift=lambda t, x: -x,
            sigma=lambda t, x: np.ones_like(x),
            g=lambda x: x,
            x0=float(params.get("x0", 0.0)),
            drift_dx=lambda t, x: -np.ones_like(x),
            sigma_dx=lambda t, x: np.zeros_like(x),
            g_prime=lambda x: np.ones_like(x),
            name="ou-diffusion")
    if name == "bv-indicator":
        return BVIndicator(LinearTerminal(grid),
                           threshold=float(params.get("threshold", 0.0)))
    if name == "counterexample-series":
        return CounterexampleSeries.build(int(params.get("n_terms", 8)),
                                          horizon=grid.horizon)
    known = ", ".join(FUNCTIONALS)
    raise ConfigError(f"unknown functional {name!r}; one of: {known}")


def _build_phi(kind: str, grid: TimeGrid, params: dict):
    if kind == "dyadic-sup":
        return besov.DyadicSupFamily(grid, r=float(params.get("r", 2.0)),
                                     depth=int(params.get("depth", 6)))
    if kind == "anisotropic":
        bands = [tuple(map(float, band)) for band in params["bands"]]
        return besov.AnisotropicSup(grid, bands,
                                    n_quad=int(params.get("n_quad", 24)))
    if kind == "flat-kernel":
        return besov.IsotropicKernel(grid, float(params.get("q", 2.0)),
                                     kernel=lambda r: 1.0,
                                     n_quad=int(params.get("n_quad", 32)))
    if kind == "mehler-kernel":
        return besov.IsotropicKernel.mehler(grid, float(params.get("q", 2.0)),
                                            float(params.get("theta", 0.5)),
                                            n_quad=int(params.get("n_quad", 64)))
    known = ", ".join(PHI_VARIANTS)
    raise ConfigError(f"unknown phi variant {kind!r}; one of: {known}")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(out_dir: str, stem: str, kind: str, columns: list[str],
               rows: list[tuple]) -> str:
    path = os.path.join(out_dir, stem + ".csv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema wdlab.{kind}.v1\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _safe(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def _est(e: Estimate) -> dict:
    return {"value": _safe(e.value), "stderr": _safe(e.stderr), "n": e.n_used}


def _exact(v: float) -> dict:
    return {"value": _safe(v), "stderr": 0.0, "n": 0}


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))  # order == submission order


# ---------------------------------------------------------------------------
# runners: each returns (estimates, checks, csv_paths)


def _run_besov_norm(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    xi = _build_functional(params.get("functional", "linear-terminal"),
                           grid, params)
    phi = _build_phi(params.get("phi", "dyadic-sup"), xi.grid, params)
    p = float(params.get("p", 2.0))
    mc = _mc_from(cfg)
    report = besov.estimate_seminorm(xi, phi, p, mc)
    total = besov.besov_norm(xi, p, phi, mc)
    ests = besov.tabulate(xi, phi, p, mc)
    rows = [(prof.label, e.value, e.stderr) for prof, e in
            zip(phi.profiles(), ests)]
    csv = _write_csv(out_dir, "besov-norm", "besov-norm",
                     ["profile", "value", "stderr"], rows)
    estimates = {"besov_norm": _est(total), "seminorm": _est(report.estimate)}
    checks = [{"name": "seminorm-argmax", "passed": True,
               "detail": {"label": report.argmax}}]
    return estimates, checks, [csv]


def _run_sandwich(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    xi = _build_functional(params.get("functional", "linear-terminal"),
                           grid, params)
    p = float(params.get("p", 2.0))
    hs = [float(h) for h in _as_list(params.get("h", 0.25))]
    mc = _mc_from(cfg)
    horizon = xi.grid.horizon

    def job(h):
        return sandwich_check(xi, horizon - h, horizon, p, mc)

    reports = _pmap(job, hs, threads)
    rows, checks, estimates = [], [], {}
    for h, rep in zip(hs, reports):
        rows.append((xi.name, p, h, rep.numerator.value, rep.numerator.stderr,
                     rep.denominator.value, rep.denominator.stderr,
                     rep.ratio, rep.ratio_stderr, rep.degenerate, rep.passes))
        checks.append({"name": f"sandwich[h={h:g}]", "passed": bool(rep.passes),
                       "detail": {"ratio": _safe(rep.ratio),
                                  "degenerate": rep.degenerate}})
        key = "ratio" if len(hs) == 1 else f"ratio[h={h:g}]"
        estimates[key] = {"value": _safe(rep.ratio),
                          "stderr": _safe(rep.ratio_stderr),
                          "n": mc.n_samples}
    csv = _write_csv(out_dir, "sandwich", "sandwich",
                     ["functional", "p", "h", "num", "num_stderr", "den",
                      "den_stderr", "ratio", "ratio_stderr", "degenerate",
                      "passed"], rows)
    return estimates, checks, [csv]


def _run_phi2_equivalence(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    xi = _build_functional(params.get("functional", "square-terminal"),
                           grid, params)
    ps = [float(p) for p in _as_list(params.get("p", [2.0, 4.0]))]
    depth = int(params.get("depth", 4))
    mc = _mc_from(cfg)

    reports = _pmap(lambda p: malliavin.malliavin_seminorms(
        xi, p, mc, depth=depth), ps, threads)
    rows, checks, estimates = [], [], {}
    for p, rep in zip(ps, reports):
        rows.append((p, rep.lip.value, rep.lip.stderr, rep.lips.value,
                     rep.lips.stderr, rep.phi2.value, rep.phi2.stderr,
                     rep.ratio, rep.ratio_stderr, rep.degenerate))
        ok = rep.degenerate or (0.1 <= rep.ratio <= 10.0)
        checks.append({"name": f"phi2-ratio[p={p:g}]", "passed": bool(ok),
                       "detail": {"ratio": _safe(rep.ratio),
                                  "degenerate": rep.degenerate}})
        estimates[f"lip[p={p:g}]"] = _est(rep.lip)
        estimates[f"lips[p={p:g}]"] = _est(rep.lips)
        estimates[f"phi2[p={p:g}]"] = _est(rep.phi2)
    csv = _write_csv(out_dir, "phi2-equivalence", "phi2-equivalence",
                     ["p", "lip", "lip_stderr", "lips", "lips_stderr",
                      "phi2", "phi2_stderr", "ratio", "ratio_stderr",
                      "degenerate"], rows)
    return estimates, checks, [csv]


def _run_counterexample(cfg, out_dir, threads):
    params = cfg.get("params", {})
    n_max = int(params.get("n_terms_max", 12))
    p = float(params.get("p", 2.0))
    mc = _mc_from(cfg)
    rep = malliavin.counterexample_growth(n_max, p, mc)
    rows = [(r.n_terms, r.value.value, r.value.stderr, r.series_norm.value,
             r.series_norm.stderr, r.deriv_s2.value, r.deriv_s2.stderr)
            for r in rep.rows]
    csv = _write_csv(out_dir, "counterexample", "counterexample",
                     ["n_terms", "value", "value_stderr", "series_norm",
                      "series_norm_stderr", "deriv_s2", "deriv_s2_stderr"],
                     rows)
    checks = [{"name": "slope-vs-kappa",
               "passed": bool(0.5 <= rep.slope_over_kappa <= 2.0),
               "detail": {"slope": _safe(rep.slope),
                          "slope_over_kappa": _safe(rep.slope_over_kappa)}}]
    by_n = {r.n_terms: r.series_norm.value for r in rep.rows}
    if n_max >= 4:
        bounded = max(by_n.values()) < 2.0 * by_n[4]
        checks.append({"name": "series-norm-bounded", "passed": bool(bounded),
                       "detail": {"max": max(by_n.values()),
                                  "reference": by_n[4]}})
    estimates = {"kappa_hat": _est(rep.kappa_hat),
                 "slope": _exact(rep.slope)}
    return estimates, checks, [csv]


def _run_chaos_check(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    xi = _build_functional(params.get("functional", "square-terminal"),
                           grid, params)
    try:
        expansion = chaos.expand_library(xi)
    except chaos.UnsupportedFunctionalError as exc:
        raise ConfigError(str(exc)) from None
    a = float(params.get("a", grid.horizon - 0.25))
    b = float(params.get("b", grid.horizon))
    exact = chaos.conditional_residual_exact(expansion, a, b)
    mc = _mc_from(cfg)
    mc_res = cond_exp_residual(xi, a, b, 2.0, mc)
    bdg = chaos.bdg_chaos_check(expansion, a, b)
    d12 = chaos.d12_norm(expansion)
    mc_ok = abs(mc_res.value - exact) <= 3.0 * mc_res.stderr
    rows = [
        ("mc-vs-exact", exact, mc_res.value, mc_res.stderr, None, mc_ok),
        ("bdg-identity", bdg.lhs, bdg.rhs, None, bdg.rel_error, bdg.passed),
    ]
    csv = _write_csv(out_dir, "chaos-check", "chaos-check",
                     ["record", "lhs", "rhs", "stderr", "rel_error",
                      "passed"], rows)
    checks = [
        {"name": "mc-vs-exact", "passed": bool(mc_ok),
         "detail": {"exact": exact, "mc": mc_res.value,
                    "stderr": mc_res.stderr}},
        {"name": "bdg-identity", "passed": bool(bdg.passed),
         "detail": {"rel_error": bdg.rel_error}},
    ]
    estimates = {"residual_exact": _exact(exact), "residual_mc": _est(mc_res),
                 "d12": _exact(d12.value)}
    return estimates, checks, [csv]


def _run_bmo_sweep(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    betas = [float(b) for b in _as_list(params.get("betas", [1.5, 2.0, 5.0]))]
    gammas = [float(g) for g in _as_list(params.get("gammas", [0.0]))]
    kappa = float(params.get("kappa", 0.02))
    slice_counts = [int(n) for n in _as_list(params.get("n_slices",
                                                        [1, 2, 4, 8]))]
    beta_rh = float(params.get("beta", betas[0]))
    phi_rows = [(b, bmo.kazamaki_phi(b)) for b in betas]
    psi_rows = []
    for b in betas:
        lim = bmo.kazamaki_phi(b)
        for g in gammas:
            valid = 0.0 <= g < lim
            psi_rows.append((g, b, bmo.kazamaki_psi(g, b) if valid else None,
                             valid))
    proc = bmo.StepProcess.deterministic(grid, np.full(grid.n_cells, kappa))

    def slice_job(n):
        sl = bmo.sliceable_upper(proc, 1.0, n)
        return n, sl, bmo.rh_bound(sl, n, beta_rh)

    slice_rows = _pmap(slice_job, slice_counts, threads)
    csvs = [
        _write_csv(out_dir, "kazamaki_phi", "bmo-sweep.phi",
                   ["beta", "phi"], phi_rows),
        _write_csv(out_dir, "kazamaki_psi", "bmo-sweep.psi",
                   ["gamma", "beta", "psi", "valid"], psi_rows),
        _write_csv(out_dir, "slices", "bmo-sweep.slices",
                   ["n_slices", "slice_norm", "rh_bound"], slice_rows),
    ]
    estimates = {f"phi[beta={b:g}]": _exact(v) for b, v in phi_rows}
    return estimates, [], csvs


def _run_rh_bound(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    kappa = float(params.get("kappa", 0.01))
    beta = float(params.get("beta", 2.0))
    slice_counts = [int(n) for n in _as_list(params.get("n_slices", [1, 4]))]
    oracle = bmo.deterministic_rh_constant(kappa, beta, grid.horizon)
    proc = bmo.StepProcess.deterministic(grid, np.full(grid.n_cells, kappa))

    def job(n):
        sl = bmo.sliceable_upper(proc, 1.0, n)
        return n, sl, bmo.rh_bound(sl, n, beta)

    rows, checks = [], []
    for n, sl, bound in _pmap(job, slice_counts, threads):
        ok = bound is not None and oracle <= bound * (1.0 + 1e-12)
        rows.append((n, sl, bound, oracle, ok))
        checks.append({"name": f"rh[N={n}]", "passed": bool(ok),
                       "detail": {"slice_norm": sl, "bound": bound,
                                  "oracle": oracle}})
    csv = _write_csv(out_dir, "rh-bound", "rh-bound",
                     ["n_slices", "slice_norm", "rh_bound", "oracle",
                      "passed"], rows)
    return {"oracle": _exact(oracle)}, checks, [csv]


def _run_p0(cfg, out_dir, threads):
    params = cfg.get("params", {})
    l_z = float(params.get("l_z", 1.0))
    s_inf = float(params.get("s_inf", 0.0))
    value = bmo.p0_threshold(l_z, s_inf)
    csv = _write_csv(out_dir, "p0", "p0", ["l_z", "s_inf", "p0"],
                     [(l_z, s_inf, value)])
    return {"p0": _exact(value)}, [], [csv]


def _run_weaker_bmo(cfg, out_dir, threads):
    params = cfg.get("params", {})
    eta = float(params.get("eta", 0.6))
    alpha = float(params.get("alpha", 0.25))
    beta = float(params.get("beta", 0.7))
    n_max = int(params.get("n_max", 12))
    _, rep = bmo.weaker_bmo_construction(eta, alpha, beta, n_max)
    rows = []
    for i in range(n_max):
        rows.append((i + 1, rep.series_i[i], rep.computed_slices[i],
                     rep.series_ii_partial[i], rep.series_iii_partial[i],
                     rep.orlicz_numeric[i], rep.orlicz_closed[i]))
    csv = _write_csv(out_dir, "weaker-bmo", "weaker-bmo",
                     ["n", "series_i", "computed_slice", "series_ii_partial",
                      "series_iii_partial", "orlicz_numeric",
                      "orlicz_closed"], rows)
    factor = rep.growth_factor
    growth_ok = all(rep.computed_slices[i + 1]
                    >= factor * rep.computed_slices[i] * (1.0 - 1e-9)
                    for i in range(n_max - 1))
    orl_rel = float(np.max(np.abs(rep.orlicz_numeric - rep.orlicz_closed)
                           / rep.orlicz_closed))
    checks = [
        {"name": "slice-growth", "passed": bool(growth_ok),
         "detail": {"factor": factor}},
        {"name": "series-ii-cauchy", "passed": bool(rep.tail_ii < 0.01),
         "detail": {"tail_fraction": rep.tail_ii}},
        {"name": "series-iii-cauchy", "passed": bool(rep.tail_iii < 0.01),
         "detail": {"tail_fraction": rep.tail_iii}},
        {"name": "orlicz-two-point", "passed": bool(orl_rel <= 1e-8),
         "detail": {"max_rel_error": orl_rel}},
    ]
    estimates = {"bmo_s2eta": _exact(rep.bmo_s2eta),
                 "series_ii_limit": _exact(rep.series_ii_partial[-1]),
                 "series_iii_limit": _exact(rep.series_iii_partial[-1])}
    return estimates, checks, [csv]


def _solver_config(params: dict) -> bsde.SolverConfig:
    kw = {k: params[k] for k in ("n_x", "n_quad", "n_picard", "scheme")
          if k in params}
    return bsde.SolverConfig(**kw)


def _preset_and_grid(cfg, params, default_m: int):
    preset = bsde.get_preset(params.get("preset", "heat-square"))
    g = cfg.get("grid", {})
    horizon = float(g.get("horizon", preset.horizon))
    if horizon != preset.horizon:
        raise ConfigError(f"grid.horizon {horizon} does not match preset "
                          f"horizon {preset.horizon}")
    return preset, int(g.get("n_cells", default_m))


def _run_bsde_oracle(cfg, out_dir, threads):
    params = cfg.get("params", {})
    preset, m = _preset_and_grid(cfg, params, default_m=100)
    scfg = _solver_config(params)
    sols = _pmap(lambda n: preset.solve(n, scfg), [m, 2 * m], threads)
    y0, y0_fine = sols[0].y0, sols[1].y0
    exact = preset.y0_exact
    err = None if exact is None else abs(y0 - exact)
    delta = abs(y0_fine - y0)
    rows = [(m, y0, exact, err), (2 * m, y0_fine, exact,
                                  None if exact is None
                                  else abs(y0_fine - exact))]
    csv = _write_csv(out_dir, "bsde-oracle", "bsde-oracle",
                     ["n_cells", "y0", "y0_exact", "abs_error"], rows)
    checks = []
    tol = params.get("tol")
    if tol is not None and exact is not None:
        checks.append({"name": "y0-vs-oracle",
                       "passed": bool(err <= float(tol)),
                       "detail": {"error": err, "tol": float(tol)}})
        if params.get("doubling", True):
            checks.append({"name": "self-convergence",
                           "passed": bool(delta <= float(tol)),
                           "detail": {"doubling_delta": delta,
                                      "tol": float(tol)}})
    estimates = {"y0": _exact(y0), "y0_refined": _exact(y0_fine)}
    if exact is not None:
        estimates["y0_exact"] = _exact(exact)
    return estimates, checks, [csv]


def _run_bsde_stability(cfg, out_dir, threads):
    params = cfg.get("params", {})
    preset, m = _preset_and_grid(cfg, params, default_m=64)
    sol = preset.solve(m, _solver_config(params))
    p = float(params.get("p", 2.0))
    t_start = float(params.get("t_start", 0.0))
    hs = [float(h) for h in _as_list(params.get("hs",
                                                [2.0 ** (-k)
                                                 for k in range(2, 7)]))]
    mc = _mc_from(cfg)
    horizon = sol.grid.horizon

    def job(h):
        profile = RotationProfile.indicator(sol.grid, horizon - h, horizon)
        return bsde.stability_check(sol, profile, p, mc, t_start)

    reports = _pmap(job, hs, threads)
    rows, checks, estimates = [], [], {}
    ratios = []
    for h, rep in zip(hs, reports):
        rows.append((h, rep.lhs_total, rep.lhs_stderr, rep.rhs_total,
                     rep.rhs_stderr, rep.ratio, rep.ratio_stderr))
        finite = math.isfinite(rep.ratio) and rep.rhs_total > 0.0
        checks.append({"name": f"stability-finite[h={h:g}]",
                       "passed": bool(finite),
                       "detail": {"ratio": _safe(rep.ratio)}})
        estimates[f"ratio[h={h:g}]"] = {"value": _safe(rep.ratio),
                                        "stderr": _safe(rep.ratio_stderr),
                                        "n": mc.n_samples}
        if finite and rep.ratio > 0.0:
            ratios.append(rep.ratio)
    band = params.get("max_over_min")
    if band is not None and ratios:
        spread = max(ratios) / min(ratios)
        checks.append({"name": "ratio-spread",
                       "passed": bool(spread <= float(band)),
                       "detail": {"max_over_min": spread,
                                  "allowed": float(band)}})
    csv = _write_csv(out_dir, "bsde-stability", "bsde-stability",
                     ["h", "lhs", "lhs_stderr", "rhs", "rhs_stderr",
                      "ratio", "ratio_stderr"], rows)
    return estimates, checks, [csv]


def _run_bsde_variation(cfg, out_dir, threads):
    params = cfg.get("params", {})
    preset, m = _preset_and_grid(cfg, params, default_m=64)
    sol = preset.solve(m, _solver_config(params))
    p = float(params.get("p", 2.0))
    gaps = params.get("gaps")
    if gaps is not None:
        gaps = [float(g) for g in _as_list(gaps)]
    mc = _mc_from(cfg)
    rep = bsde.variation_check(sol, p, mc, gaps)
    rows = [(r.s, r.gap, r.lhs.value, r.lhs.stderr, r.rhs_det,
             r.rhs_swap.value, r.rhs_swap.stderr, r.ratio) for r in rep.rows]
    csv = _write_csv(out_dir, "bsde-variation", "bsde-variation",
                     ["s", "gap", "lhs", "lhs_stderr", "rhs_det", "rhs_swap",
                      "rhs_swap_stderr", "ratio"], rows)
    checks = [{"name": "variation-bounded",
               "passed": bool(math.isfinite(rep.max_ratio)),
               "detail": {"max_ratio": _safe(rep.max_ratio)}}]
    target = params.get("slope_target")
    if target is not None:
        tol = float(params.get("slope_tol", 0.1))
        checks.append({"name": "variation-slope",
                       "passed": bool(abs(rep.slope - float(target)) <= tol),
                       "detail": {"slope": rep.slope,
                                  "target": float(target), "tol": tol}})
    estimates = {f"lhs[gap={r.gap:g}]": _est(r.lhs) for r in rep.rows}
    estimates["slope"] = _exact(rep.slope)
    return estimates, checks, [csv]


def _run_bv_embedding(cfg, out_dir, threads):
    params = cfg.get("params", {})
    grid = _grid_from(cfg)
    qs = [float(q) for q in _as_list(params.get("q", [2.0, 4.0]))]
    p = float(params.get("p", 2.0))
    hs = [float(h) for h in _as_list(params.get("hs",
                                                [2.0 ** (-k)
                                                 for k in range(2, 7)]))]
    mc = _mc_from(cfg)
    xi = LinearTerminal(grid)
    g_xi = BVIndicator(xi)
    density_sup = 1.0 / math.sqrt(2.0 * math.pi * grid.horizon)

    reports = _pmap(lambda q: besov.bv_embedding_report(
        xi, g_xi, q, p, hs, mc, density_sup), qs, threads)
    rows, checks, estimates = [], [], {}
    for q, rep in zip(qs, reports):
        for row in rep.rows:
            rows.append((q, row.h, row.norm.value, row.norm.stderr,
                         row.base_dist.value, row.base_dist.stderr,
                         row.bound, row.norm.value <= row.bound))
        checks.append({"name": f"bv-bounded[q={q:g}]",
                       "passed": bool(rep.all_bounded), "detail": {}})
        rtol = params.get("slope_rtol")
        if rtol is not None:
            ok = abs(rep.slope - rep.target_slope) \
                <= float(rtol) * rep.target_slope
            checks.append({"name": f"bv-slope[q={q:g}]", "passed": bool(ok),
                           "detail": {"slope": rep.slope,
                                      "target": rep.target_slope}})
        estimates[f"slope[q={q:g}]"] = _exact(rep.slope)
    csv = _write_csv(out_dir, "bv-embedding", "bv-embedding",
                     ["q", "h", "norm", "norm_stderr", "base", "base_stderr",
                      "bound", "bounded"], rows)
    return estimates, checks, [csv]


_RUNNERS = {
    "besov-norm": _run_besov_norm,
    "sandwich": _run_sandwich,
    "phi2-equivalence": _run_phi2_equivalence,
    "counterexample": _run_counterexample,
    "chaos-check": _run_chaos_check,
    "bmo-sweep": _run_bmo_sweep,
    "rh-bound": _run_rh_bound,
    "p0": _run_p0,
    "weaker-bmo": _run_weaker_bmo,
    "bsde-oracle": _run_bsde_oracle,
    "bsde-stability": _run_bsde_stability,
    "bsde-variation": _run_bsde_variation,
    "bv-embedding": _run_bv_embedding,
}


def _catalog_text() -> str:
    lines = ["Functionals:"]
    lines += [f"  {name:24s} {desc}" for name, desc in FUNCTIONALS.items()]
    lines.append("Phi variants:")
    lines += [f"  {name:24s} {desc}" for name, desc in PHI_VARIANTS.items()]
    lines.append("BSDE presets:")
    lines += [f"  {name:24s} {bsde.PRESETS[name].notes}"
              for name in bsde.preset_names()]
    lines.append("Experiments:")
    lines += [f"  {name:24s} {desc}" for name, desc in EXPERIMENTS.items()]
    return "\n".join(lines)


def _apply_expect(cfg: dict, estimates: dict, checks: list) -> None:
    exp = cfg.get("expect")
    if not exp:
        return
    name = exp.get("estimate")
    if name is None:
        if len(estimates) == 1:
            name = next(iter(estimates))
        else:
            candidates = [k for k in estimates if "[" not in k]
            if len(candidates) != 1:
                raise ConfigError("expect.estimate is required when the "
                                  "experiment emits several estimates")
            name = candidates[0]
    if name not in estimates:
        known = ", ".join(estimates)
        raise ConfigError(f"expect.estimate {name!r} not in: {known}")
    if "value" not in exp:
        raise ConfigError("expect.value is required")
    target = float(exp["value"])
    tol = float(exp.get("tol", 0.0))
    got = estimates[name]["value"]
    ok = got is not None and abs(got - target) <= tol
    checks.append({"name": f"expect[{name}]", "passed": bool(ok),
                   "detail": {"value": got, "target": target, "tol": tol}})


def run_config(path: str, threads: int | None = None,
               out_dir: str | None = None) -> int:
    """Load, validate and execute one experiment config; returns exit code."""
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    kind = _validate_config(cfg)
    if threads is None:
        threads = int(cfg["experiment"].get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    if out_dir is None:
        out_dir = os.environ.get("WDLAB_OUT") \
            or cfg.get("output", {}).get("dir") or "."
    os.makedirs(out_dir, exist_ok=True)

    t0 = time.perf_counter()
    estimates, checks, csvs = _RUNNERS[kind](cfg, out_dir, threads)
    _apply_expect(cfg, estimates, checks)
    wall = time.perf_counter() - t0
    passed = all(c["passed"] for c in checks)
    summary = {
        "experiment": kind,
        "inputs": {k: v for k, v in cfg.items() if k != "output"},
        "estimates": estimates,
        "checks": checks,
        "passed": passed,
        "wall_time_s": wall,
        "seed": cfg["experiment"]["seed"],
    }
    json_path = os.path.join(out_dir, kind + ".json")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for c in checks:
        if not c["passed"]:
            print(f"contract failed: {c['name']}", file=sys.stderr)
            return 2
    artifacts = ", ".join(os.path.basename(f) for f in csvs + [json_path])
    print(f"ok: {kind} ({artifacts})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wdlab",
        description="decoupling laboratory for Wiener functionals")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute one experiment config")
    runp.add_argument("config", help="TOML experiment file")
    runp.add_argument("--threads", type=int, default=None,
                      help="worker threads (never affects numbers)")
    runp.add_argument("--out", default=None,
                      help="output directory (beats WDLAB_OUT and config)")
    sub.add_parser("list", help="print the catalog of names")
    args = parser.parse_args(argv)
    if args.command == "list":
        print(_catalog_text())
        return 0
    try:
        return run_config(args.config, args.threads, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
