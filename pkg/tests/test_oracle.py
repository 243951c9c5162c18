import math

import numpy as np
import pytest
from scipy.special import ellipk

from blochgreen import AdditiveFunction
from blochgreen.continuation import solve_beta_s
from blochgreen.errors import Budget, ConfigError, DimensionTooLow, Indefinite, OnSpectrum
from blochgreen.oracle import (
    GreenComparison,
    QuadratureSpec,
    _Integrand,
    auto_shift,
    green_edge_limit,
    green_quadrature,
    green_quadrature_full,
    green_truncated,
    plateau_bump,
    reduced_green_quadrature,
)

from conftest import pt

# G_{-1}(0,0) of the square lattice: (2 / (5 pi)) K(m = 16/25)
FREE2_ONSITE = 2.0 / (5 * math.pi) * float(ellipk(0.64))


def zero(m):
    return AdditiveFunction.zero(m)


def test_spec_invariants():
    with pytest.raises(ConfigError):
        QuadratureSpec(m=30)
    with pytest.raises(ConfigError):
        QuadratureSpec(m=33)
    with pytest.raises(ConfigError):
        QuadratureSpec(m=64, max_m=32)


def test_free2_onsite_closed_form(free2):
    g = green_quadrature(free2, zero(free2), -1.0, pt("v", 0, 0), pt("v", 0, 0))
    assert abs(g - FREE2_ONSITE) < 1e-12
    assert FREE2_ONSITE == pytest.approx(0.2540498400242646, abs=1e-15)


def test_spectral_convergence(free2):
    ig = _Integrand(free2, zero(free2), -1.0, 0, 0, np.zeros(2), np.zeros(2))
    err = [abs(ig.evaluate(m)[0] - FREE2_ONSITE) for m in (8, 16)]
    assert err[1] < err[0] / 2 ** 6


def test_hermitian_symmetry(stripe2):
    h = AdditiveFunction.from_mapping(stripe2, {"a": [0.2, 0.1]})
    x, y = pt("a", 2, 3), pt("b", -1, 1)
    gxy = green_quadrature(stripe2, h, 4.5, x, y)
    gyx = green_quadrature(stripe2, h, 4.5, y, x)
    assert abs(gxy - np.conj(gyx)) < 1e-12


def test_b_pair_decays_faster(stripe2):
    h = zero(stripe2)
    ratios = []
    for n in (4, 8, 16, 32):
        ga = green_quadrature(stripe2, h, 4.5, pt("a", 0, n), pt("a", 0, 0), shift="auto")
        gb = green_quadrature(stripe2, h, 4.5, pt("b", 0, n), pt("a", 0, 0), shift="auto")
        ratios.append(abs(gb / ga))
    # the leading term of the b-a pair vanishes, so the ratio falls like 1/n
    assert all(r1 < 0.6 * r0 for r0, r1 in zip(ratios, ratios[1:]))


def test_shift_does_not_change_value(stripe2):
    h = zero(stripe2)
    x, y = pt("a", 0, 12), pt("a", 0, 0)
    g0 = green_quadrature(stripe2, h, 4.5, x, y)
    b = auto_shift(stripe2, h, 4.5, [0, 12])
    assert np.linalg.norm(b) > 0
    g1 = green_quadrature(stripe2, h, 4.5, x, y, shift=b)
    assert abs(g1 - g0) < 1e-9 * abs(g0)


def test_phase_pattern(stripe2):
    h = zero(stripe2)
    signs = [np.sign(green_quadrature(stripe2, h, 4.5, pt("a", n, 0), pt("a", 0, 0), shift="auto").real)
             for n in range(1, 9)]
    assert signs == [(-1) ** n for n in range(1, 9)]


def test_positivity_below_spectrum(free2, stripe2, rng):
    for model, lam in ((free2, -1.0), (stripe2, -2.0)):
        h = zero(model)
        for _ in range(5):
            g = rng.integers(-4, 5, 2)
            x = pt(model.vertices[int(rng.integers(model.n))], *g)
            assert green_quadrature(model, h, lam, x, pt(model.vertices[0], 0, 0)).real > 0


def test_truncated_matches_quadrature(free2, stripe2):
    h = zero(free2)
    g = green_quadrature(free2, h, -1.0, pt("v", 5, 0), pt("v", 0, 0))
    t = green_truncated(free2, -1.0, pt("v", 5, 0), pt("v", 0, 0), 40, h=h)
    assert abs(g - t) < 1e-6
    hs = zero(stripe2)
    for x in (pt("a", 1, 2), pt("b", -2, 0)):
        g = green_quadrature(stripe2, hs, -2.0, x, pt("a", 0, 0))
        t = green_truncated(stripe2, -2.0, x, pt("a", 0, 0), 30, h=hs)
        assert abs(g - t) < 1e-6


def test_truncated_small_box(free2):
    # R = 0: the single vertex with all neighbors removed
    assert green_truncated(free2, -1.0, pt("v", 0, 0), pt("v", 0, 0), 0) == pytest.approx(1 / 5)


def test_truncated_indefinite(free2):
    with pytest.raises(Indefinite):
        green_truncated(free2, 1.0, pt("v", 0, 0), pt("v", 0, 0), 5)


def test_on_spectrum(stripe2, free2):
    with pytest.raises(OnSpectrum):
        green_quadrature(stripe2, zero(stripe2), 5.5, pt("a", 0, 0), pt("a", 0, 0))
    with pytest.raises(OnSpectrum):
        green_quadrature(free2, zero(free2), 3.0, pt("v", 0, 0), pt("v", 0, 0))


def test_budget(stripe2):
    spec = QuadratureSpec(m=32, tol=1e-30, max_m=64)
    with pytest.raises(Budget):
        green_quadrature(stripe2, zero(stripe2), 4.5, pt("a", 0, 3), pt("a", 0, 0), spec)


def test_edge_limit_guard(free2, free2_edge):
    with pytest.raises(DimensionTooLow):
        green_edge_limit(free2, zero(free2), free2_edge, pt("v", 0, 0), pt("v", 0, 0))


def test_edge_limit_offset_pair(free3, free3_edge):
    r = green_edge_limit(free3, zero(free3), free3_edge, pt("v", 3, 0, 0), pt("v", 0, 0, 0), full=True)
    assert r.residual < 1e-3 * abs(r.value)
    assert r.value == pytest.approx(1 / (12 * math.pi), rel=0.05)


def test_full_diagnostics(free2):
    r = green_quadrature_full(free2, zero(free2), -1.0, pt("v", 2, 1), pt("v", 0, 0))
    assert r.change < 1e-9 and r.m >= 32 and r.history


def test_comparison_row():
    c = GreenComparison(pt("a", 0, 10), pt("a", 0, 0), 4.5, 2.0 + 0j, 1.5 + 0j, 10.0)
    row = c.row()
    assert row["relError"] == pytest.approx(0.25)
    assert list(row)[:4] == ["x", "y", "n", "lambda"]
    assert row["oracle"] == 2.0 and row["asymptotic"] == 1.5


def test_bump_profiles():
    r = np.linspace(0, 1.2, 13)
    p = plateau_bump(r, 1.0, 0.75)
    assert np.all(p[r <= 0.75] == 1) and np.all(p[r >= 1] == 0) and np.all(np.diff(p) <= 0)
    b = plateau_bump(r, 1.0, None)
    assert b[0] == pytest.approx(1) and np.all(b[r >= 1] == 0)


def test_reduced_green_trivial_cases(stripe2, stripe2_edge):
    h = zero(stripe2)
    sol = solve_beta_s(stripe2, h, stripe2_edge, 4.5, [0, 1])
    assert reduced_green_quadrature(stripe2, h, stripe2_edge, 4.5, [0, 1], pt("a", 0, 1), pt("a", 0, 0),
                                    cut_radius=0.0, solve=sol) == 0
    g0 = reduced_green_quadrature(stripe2, h, stripe2_edge, 4.5, [0, 1], pt("a", 0, 0), pt("a", 0, 0),
                                  cut_radius=0.5, solve=sol, n_rho=24, n_psi=16, max_refine=1)
    assert np.isfinite(g0) and abs(g0) > 0
