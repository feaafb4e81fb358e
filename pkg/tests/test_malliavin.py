"""Derivative seminorms, their interval-seminorm ratio, and the growth table."""

import math

import pytest
from scipy import integrate, stats

from wdlab import (BVIndicator, ConstantFunctional, DiffusionTerminal,
                   LinearTerminal, McConfig, NoMalliavinError, SquareTerminal,
                   TimeGrid, counterexample_growth, gaussian_p_norm,
                   malliavin_seminorms, s2_norm)

GRID = TimeGrid.uniform(1.0, 8)
CFG = McConfig(n_samples=40_000, n_batches=20, seed=17)


def _ou(grid: TimeGrid) -> DiffusionTerminal:
    return DiffusionTerminal(
        grid, lambda t, x: -x, lambda t, x: 1.0, lambda x: x, 0.0,
        drift_dx=lambda t, x: -1.0, sigma_dx=lambda t, x: 0.0,
        g_prime=lambda x: 1.0, name="ou")


# ------------------------------------------------------------ gaussian moments

def test_gaussian_p_norm_closed_forms():
    assert gaussian_p_norm(2.0) == pytest.approx(1.0, rel=1e-14)
    assert gaussian_p_norm(4.0) == pytest.approx(3.0 ** 0.25, rel=1e-14)
    # cross-check an odd order against direct quadrature
    m3, _ = integrate.quad(lambda x: abs(x) ** 3 * stats.norm.pdf(x),
                           -12, 12)
    assert gaussian_p_norm(3.0) == pytest.approx(m3 ** (1.0 / 3.0), rel=1e-9)
    with pytest.raises(ValueError):
        gaussian_p_norm(0.5)


# --------------------------------------------------------- derivative seminorms

def test_linear_terminal_unit_derivative():
    rep = malliavin_seminorms(LinearTerminal(GRID), 2.0, CFG, depth=3)
    # D is identically 1, so both derivative seminorms are exact
    assert rep.lip.value == pytest.approx(1.0, abs=1e-12)
    assert rep.lips.value == pytest.approx(1.0, abs=1e-12)
    assert not rep.degenerate
    # interval seminorm of W_T is sqrt(2) on every interval
    assert rep.ratio == pytest.approx(math.sqrt(2.0),
                                      abs=3.0 * rep.ratio_stderr)


def test_square_terminal_seminorms():
    rep = malliavin_seminorms(SquareTerminal(GRID), 2.0, CFG, depth=3)
    # D_s = 2 W_T on every cell: lip = lips = 2 ||N(0,1)||_2
    assert rep.lip.value == pytest.approx(2.0, abs=3.0 * rep.lip.stderr)
    assert rep.lips.value == pytest.approx(2.0, abs=3.0 * rep.lips.stderr)
    # interval seminorm peaks at the narrowest interval: sqrt(8 - 4/8)
    want_ratio = math.sqrt(7.5) / 2.0
    assert rep.ratio == pytest.approx(want_ratio, rel=0.05)


def test_degenerate_functional_flagged():
    rep = malliavin_seminorms(ConstantFunctional(GRID, 2.0), 2.0,
                              McConfig(n_samples=4000, n_batches=20, seed=1),
                              depth=2)
    assert rep.degenerate
    assert math.isnan(rep.ratio)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_ratio_bracket_across_library(p):
    cfg = McConfig(n_samples=20_000, n_batches=20, seed=23)
    for xi in (LinearTerminal(GRID), SquareTerminal(GRID), _ou(GRID)):
        rep = malliavin_seminorms(xi, p, cfg, depth=3)
        assert not rep.degenerate
        assert 0.1 <= rep.ratio <= 10.0


def test_no_derivative_raises():
    cfg = McConfig(n_samples=2000, n_batches=20, seed=1)
    with pytest.raises(NoMalliavinError):
        malliavin_seminorms(BVIndicator(LinearTerminal(GRID)), 2.0, cfg,
                            depth=3)


def test_s2_norm_oracles():
    # |D W_T|^2 integrates to T exactly, sample by sample
    est = s2_norm(LinearTerminal(GRID), 2.0, CFG)
    assert est.value == pytest.approx(1.0, abs=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)
    # for W_T^2 the square function is 2|W_T| sqrt(T)
    est = s2_norm(SquareTerminal(GRID), 2.0, CFG)
    assert est.value == pytest.approx(2.0, abs=3.0 * est.stderr)


# ------------------------------------------------------------- lacunary series

def test_growth_table_first_row_closed_form():
    from wdlab import series_layout

    rep = counterexample_growth(4, 2.0, CFG)
    row = rep.rows[0]
    # one term, swap on its own interval: sqrt(2) ||cos(W_s)||_2 with
    # E cos^2(W_s) = (1 + e^{-2s}) / 2 at the interval's left endpoint
    _, intervals = series_layout(4)
    s = intervals[0][0]
    want = math.sqrt(2.0) * math.sqrt((1.0 + math.exp(-2.0 * s)) / 2.0)
    assert row.value.value == pytest.approx(want,
                                            abs=3.0 * row.value.stderr)


def test_growth_table_linear_slope_and_bounded_companions():
    rep = counterexample_growth(8, 2.0, CFG)
    assert 0.5 <= rep.slope_over_kappa <= 2.0
    # the distance grows with the term count...
    values = [r.value.value for r in rep.rows]
    assert values[-1] > 3.0 * values[0]
    # ...while the series norm and derivative square function stay bounded
    norms = [r.series_norm.value for r in rep.rows]
    s2s = [r.deriv_s2.value for r in rep.rows]
    assert max(norms) < 2.0 * norms[3]
    assert max(s2s) < 2.0 * s2s[3]


def test_growth_table_depth_limit():
    with pytest.raises(ValueError):
        counterexample_growth(16, 2.0, CFG)
