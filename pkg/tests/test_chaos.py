"""Exact chaos algebra: kernels, residuals, D_{1,2}, BDG identity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdlab import (
    BVIndicator,
    ChaosExpansion,
    CounterexampleSeries,
    LinearTerminal,
    McConfig,
    PolyIncrements,
    RngStream,
    ScaledFunctional,
    ShiftedFunctional,
    SquareTerminal,
    SumFunctional,
    TimeGrid,
    UnsupportedFunctionalError,
    bdg_chaos_check,
    conditional_residual_exact,
    d12_norm,
    evaluate,
    expand_library,
    sample_increments,
)
from wdlab.chaos import symmetrize

GRID = TimeGrid.uniform(1.0, 8)


def test_expand_linear():
    exp = expand_library(LinearTerminal(GRID))
    assert exp.f0 == 0.0
    assert exp.max_order == 1
    np.testing.assert_allclose(exp.kernels[1], 1.0)
    assert exp.second_moment() == pytest.approx(1.0, abs=1e-14)


def test_expand_square():
    # W_T^2 = I_2(1) + T
    exp = expand_library(SquareTerminal(GRID))
    assert exp.f0 == pytest.approx(1.0)
    np.testing.assert_allclose(exp.kernels[2], 1.0)
    assert exp.second_moment() == pytest.approx(3.0, abs=1e-13)  # E W^4 = 3


def test_expand_wrappers():
    base = SquareTerminal(GRID)
    exp = expand_library(ScaledFunctional(base, 2.0))
    assert exp.f0 == pytest.approx(2.0)
    exp = expand_library(ShiftedFunctional(base, -1.0))
    assert exp.f0 == pytest.approx(0.0)
    exp = expand_library(SumFunctional(base, LinearTerminal(GRID)))
    assert set(exp.kernels) == {1, 2}


def test_expand_unsupported():
    with pytest.raises(UnsupportedFunctionalError):
        expand_library(BVIndicator(LinearTerminal(GRID)))
    with pytest.raises(UnsupportedFunctionalError):
        expand_library(CounterexampleSeries.build(2))
    overlapping = PolyIncrements(GRID, [(0.0, 0.5), (0.25, 0.75)],
                                 [(1.0, (1, 1))])
    with pytest.raises(UnsupportedFunctionalError):
        expand_library(overlapping)


def test_second_moment_matches_mc():
    xi = PolyIncrements(GRID, [(0.0, 0.5), (0.5, 1.0)],
                        [(1.0, (2, 1)), (0.5, (0, 3))])
    exp = expand_library(xi)
    incr = sample_increments(GRID, 1, RngStream(1, 0), 400_000)
    vals = evaluate(xi, incr)
    m2 = np.mean(vals ** 2)
    se = np.std(vals ** 2) / np.sqrt(vals.size)
    assert abs(m2 - exp.second_moment()) < 3.0 * se


def test_kernel_shape_validation():
    with pytest.raises(ValueError):
        ChaosExpansion(GRID, 0.0, {1: np.ones(4)})
    with pytest.raises(ValueError):
        ChaosExpansion(GRID, 0.0, {5: np.ones((8,) * 5)})


@given(st.integers(0, 2 ** 27 - 1))
@settings(max_examples=50, deadline=None)
def test_symmetrize_idempotent_and_symmetric(bits):
    rng = np.random.default_rng(bits)
    arr = rng.standard_normal((3, 3, 3))
    sym = symmetrize(arr)
    np.testing.assert_allclose(sym, sym.transpose(1, 0, 2), atol=1e-12)
    np.testing.assert_allclose(sym, sym.transpose(0, 2, 1), atol=1e-12)
    np.testing.assert_allclose(symmetrize(sym), sym, atol=1e-12)


def test_conditional_residual_square():
    exp = expand_library(SquareTerminal(GRID))
    got = conditional_residual_exact(exp, 0.75, 1.0)
    assert got == pytest.approx(np.sqrt(0.875), abs=1e-14)
    # position independence of the squared residual: 4Th - 2h^2
    assert conditional_residual_exact(exp, 0.25, 0.5) == pytest.approx(
        np.sqrt(0.875), abs=1e-14)


def test_conditional_residual_linear():
    exp = expand_library(LinearTerminal(GRID))
    assert conditional_residual_exact(exp, 0.5, 1.0) == pytest.approx(
        np.sqrt(0.5), abs=1e-14)


def test_region_measure_via_flat_kernels():
    # pure I_n with f_n = 1: residual^2 = n! (T^n - (T-h)^n) / ... for the
    # symmetrized flat kernel the kept mass is (T-h)^n
    h = 0.25
    for n in (1, 2, 3):
        exp = ChaosExpansion(GRID, 0.0, {n: np.ones((8,) * n)})
        got = conditional_residual_exact(exp, 1.0 - h, 1.0) ** 2
        want = math.factorial(n) * (1.0 - (1.0 - h) ** n)
        assert got == pytest.approx(want, rel=1e-12)


def test_d12_norm_values():
    lin = d12_norm(expand_library(LinearTerminal(GRID)))
    assert lin.value == pytest.approx(np.sqrt(2.0), abs=1e-14)
    sq = d12_norm(expand_library(SquareTerminal(GRID)))
    assert sq.value == pytest.approx(np.sqrt(7.0), abs=1e-13)
    assert sq.membership == pytest.approx(4.0, abs=1e-13)


def test_bdg_identity():
    for xi in (LinearTerminal(GRID), SquareTerminal(GRID),
               PolyIncrements(GRID, [(0.0, 0.5), (0.5, 1.0)],
                              [(1.0, (2, 1)), (-0.3, (1, 0))])):
        rep = bdg_chaos_check(expand_library(xi), 0.75, 1.0)
        assert rep.passed, rep
        assert rep.rel_error <= 1e-10
        assert rep.lhs == pytest.approx(rep.rhs, rel=1e-9)


def test_bdg_interior_interval():
    rep = bdg_chaos_check(expand_library(SquareTerminal(GRID)), 0.25, 0.625)
    assert rep.passed


def test_bdg_p_not_two():
    exp = expand_library(SquareTerminal(GRID))
    with pytest.raises(NotImplementedError):
        bdg_chaos_check(exp, 0.75, 1.0, p=4.0)
