"""Backward-scheme oracles, stability both-sides check, variation slopes."""

import math

import numpy as np
import pytest

from wdlab import (GeneratorSpec, McConfig, ProfileError, RotationProfile,
                   SolverConfig, SolverError, TimeGrid, get_preset,
                   gradient_diagnostics, preset_names, solve_markovian,
                   stability_check, variation_check)

CFG = McConfig(n_samples=20_000, n_batches=20, seed=31)


# --------------------------------------------------------------- generators

def test_preset_drivers_probe_clean():
    for name in preset_names():
        assert get_preset(name).gen.probe() == []


def test_probe_catches_understated_constants():
    lying = GeneratorSpec(f=lambda t, x, y, z: 2.0 * y, lip_y=1.0)
    hits = lying.probe()
    assert hits and all(h["kind"] == "yz" for h in hits)
    # driver reads x without declaring it
    hidden = GeneratorSpec(f=lambda t, x, y, z: x + y, lip_y=1.0)
    assert any(h["kind"] == "hidden-x" for h in hidden.probe())


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_x=1)
    with pytest.raises(ValueError):
        SolverConfig(n_quad=1)
    with pytest.raises(ValueError):
        SolverConfig(n_picard=-1)
    with pytest.raises(ValueError):
        SolverConfig(scheme="explicit")


# ------------------------------------------------------------------- oracles

@pytest.mark.parametrize("name,tol", [
    ("linear-terminal", 1e-12),
    ("heat-square", 1e-3),
    ("linear-oracle", 1e-3),
    ("quadratic-cole-hopf", 1e-2),
    ("table1a-lipschitz", 2e-3),
    ("ou-lipschitz", 2e-3),
    ("bv-terminal", 5e-3),
])
def test_preset_y0_oracle(name, tol):
    preset = get_preset(name)
    sol = preset.solve(64)
    assert abs(sol.y0 - preset.y0_exact) < tol


def test_heat_square_gradient_and_terminal_row():
    sol = get_preset("heat-square").solve(64)
    # value function x^2 + (T - t): gradient 2x
    assert sol.z_at(0, np.array([0.7]))[0] == pytest.approx(1.4, abs=1e-2)
    # terminal row is exact at nodes; off-node reads carry interp error
    assert sol.y_at(64, np.array([0.3]))[0] == pytest.approx(0.09, abs=1e-5)
    assert 0.0 <= sol.diagnostics["quad_clamp_frac"] < 0.1


def test_doubling_stays_within_tolerance():
    preset = get_preset("linear-oracle")
    y0s = {m: preset.solve(m).y0 for m in (32, 64, 128)}
    for m in (32, 64, 128):
        assert abs(y0s[m] - preset.y0_exact) < 1e-3
    assert abs(y0s[128] - y0s[64]) < 1e-3


def test_backward_euler_first_order():
    preset = get_preset("linear-oracle")
    mid = preset.solve(64)
    eul = preset.solve(64, SolverConfig(scheme="backward-euler"))
    err_mid = abs(mid.y0 - preset.y0_exact)
    err_eul = abs(eul.y0 - preset.y0_exact)
    assert err_eul < 0.03
    assert err_eul > err_mid


def test_get_preset_unknown():
    with pytest.raises(ValueError, match="unknown preset"):
        get_preset("nonexistent")
    assert "quadratic-cole-hopf" in preset_names()


def test_non_finite_values_raise():
    preset = get_preset("heat-square")
    grid = TimeGrid.uniform(1.0, 8)
    bad_gen = GeneratorSpec(f=lambda t, x, y, z: np.full_like(y, np.nan))
    with pytest.raises(SolverError, match="non-finite"):
        solve_markovian(preset.model, bad_gen, preset.terminal, grid)
    with pytest.raises(SolverError, match="terminal"):
        solve_markovian(preset.model, preset.gen,
                        lambda x: np.where(x > 0, np.nan, x), grid)


# ----------------------------------------------------------------- stability

def test_stability_identity_profile_is_exact_zero():
    sol = get_preset("ou-lipschitz").solve(32)
    zero = RotationProfile.constant(sol.grid, 0.0)
    rep = stability_check(sol, zero, 2.0,
                          McConfig(n_samples=2000, n_batches=20, seed=3))
    assert rep.exact_zero
    assert rep.lhs_total == 0.0
    assert rep.ratio == 0.0


def test_stability_ratios_finite_and_comparable():
    sol = get_preset("ou-lipschitz").solve(64)
    ratios = []
    for h in (0.25, 0.125):
        prof = RotationProfile.indicator(sol.grid, 1.0 - h, 1.0)
        rep = stability_check(sol, prof, 2.0, CFG)
        assert math.isfinite(rep.ratio) and rep.ratio > 0.0
        assert rep.lhs_total > 0.0 and rep.rhs_total > 0.0
        # the x-dependence term only appears for drivers that read x
        assert rep.rhs_x_term is None
        ratios.append(rep.ratio)
    assert max(ratios) / min(ratios) < 5.0


def test_stability_validation():
    sol = get_preset("ou-lipschitz").solve(32)
    prof = RotationProfile.indicator(sol.grid, 0.5, 1.0)
    with pytest.raises(ValueError):
        stability_check(sol, prof, 0.5, CFG)
    with pytest.raises(ValueError):
        stability_check(sol, prof, 2.0, CFG, t_start=1.0)


# ----------------------------------------------------------------- variation

def test_variation_slope_half_for_martingale():
    # zero driver, identity terminal: Y is the driving motion itself and
    # || Y_T - Y_s ||_2 = sqrt(T - s)
    sol = get_preset("linear-terminal").solve(64)
    rep = variation_check(sol, 2.0, CFG)
    assert rep.slope == pytest.approx(0.5, abs=0.05)
    assert rep.max_ratio <= 1.0
    for row in rep.rows:
        assert row.lhs.value == pytest.approx(
            math.sqrt(row.gap), abs=3.0 * row.lhs.stderr + 0.01)


def test_variation_gap_must_hit_grid_node():
    sol = get_preset("linear-terminal").solve(64)
    with pytest.raises(ProfileError):
        variation_check(sol, 2.0, CFG, gaps=[0.3])


# ------------------------------------------------------------------ gradient

def test_gradient_diagnostics_constant_gradient():
    sol = get_preset("linear-terminal").solve(64)
    gd = gradient_diagnostics(sol, 1.0, n_slices=8)
    # z is identically 1, so each slice carries sqrt(T / N)
    assert gd.slice_upper == pytest.approx(math.sqrt(1.0 / 8.0), rel=1e-6)
    assert gd.p0 == 1.5  # lip_z = 0 driver
    assert gd.envelope[0] == pytest.approx(1.0, abs=1e-9)
    flat = gradient_diagnostics(sol, 0.0, n_slices=8)
    assert flat.slice_upper == pytest.approx(math.sqrt(1.0 / 8.0), rel=1e-12)
    with pytest.raises(ValueError):
        gradient_diagnostics(sol, 1.5)
