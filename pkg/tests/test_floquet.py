import numpy as np
import pytest

from blochgreen import AdditiveFunction, load_fixture
from blochgreen.crystal import build_floquet_matrix
from blochgreen.errors import AssumptionViolated, ConfigError, DegenerateEdge, NoGap
from blochgreen.floquet import (
    BrillouinGrid,
    band_gradient,
    band_rows,
    detect_gaps,
    edge_for_lambda,
    locate_edge,
    sample_bands,
    verify_assumptions,
)

SQ13 = np.sqrt(13.0)


def zero(m):
    return AdditiveFunction.zero(m)


def test_grid_invariants():
    g = BrillouinGrid(2, 16)
    k = g.nodes()
    assert k.shape == (256, 2)
    assert np.allclose(np.diff(np.unique(k[:, 0])), 2 * np.pi / 16)
    with pytest.raises(ConfigError):
        BrillouinGrid(2, 6)


def test_free2_bands(free2):
    b = sample_bands(free2, zero(free2), BrillouinGrid(2, 64))
    r = b.ranges()
    assert r[0, 0] == pytest.approx(0, abs=1e-12) and r[0, 1] == pytest.approx(8, abs=1e-12)
    assert len(band_rows(b)) == 4096


def test_stripe2_bands(stripe2):
    b = sample_bands(stripe2, zero(stripe2), BrillouinGrid(2, 64))
    r = b.ranges()
    assert abs(r[0, 0] - (2 - SQ13)) < 1e-3 and abs(r[0, 1] - 3) < 1e-3
    assert abs(r[1, 0] - 5) < 1e-3 and abs(r[1, 1] - (6 + SQ13)) < 1e-3
    assert np.all(np.diff(b.values, axis=1) >= 0)


def test_refinement_tightens(stripe2):
    h = zero(stripe2)
    r8 = sample_bands(stripe2, h, BrillouinGrid(2, 8)).ranges()
    r16 = sample_bands(stripe2, h, BrillouinGrid(2, 16)).ranges()
    assert np.all(r16[:, 0] <= r8[:, 0] + 1e-14) and np.all(r16[:, 1] >= r8[:, 1] - 1e-14)


def test_gaps(free2, stripe2):
    g = detect_gaps(sample_bands(free2, zero(free2), BrillouinGrid(2, 32)))
    assert len(g) == 1 and g[0].kind == "semi-infinite" and g[0].hi == pytest.approx(0, abs=1e-12)
    g = detect_gaps(sample_bands(stripe2, zero(stripe2), BrillouinGrid(2, 64)))
    fin = [x for x in g if x.kind == "finite"]
    assert len(fin) == 1 and abs(fin[0].lo - 3) < 1e-3 and abs(fin[0].hi - 5) < 1e-3
    semi = [x for x in g if x.kind == "semi-infinite"]
    assert abs(semi[0].hi - (2 - SQ13)) < 1e-3


def test_touching_stripe_has_no_finite_gap():
    m = load_fixture("stripe2").with_potential({"a": 6, "b": 2})
    g = detect_gaps(sample_bands(m, zero(m), BrillouinGrid(2, 64)))
    assert not [x for x in g if x.kind == "finite"]


def test_locate_edges(free2, stripe2, free3):
    e = locate_edge(free2, zero(free2), 1)
    assert np.allclose(e.k0, 0, atol=1e-10) and e.lam_edge == pytest.approx(0, abs=1e-12)
    assert np.allclose(e.hessian, 2 * np.eye(2), atol=1e-8)
    e = locate_edge(stripe2, zero(stripe2), 2)
    assert np.allclose(np.abs(e.k0), [np.pi, 0], atol=1e-10) and e.lam_edge == pytest.approx(5, abs=1e-12)
    assert np.allclose(e.hessian, np.diag([1 / 3, 2]), atol=1e-8)
    e = locate_edge(free3, zero(free3), 1)
    assert np.allclose(e.hessian, 2 * np.eye(3), atol=1e-8)


def test_grid_independent_refinement(stripe2):
    h = zero(stripe2)
    e1 = locate_edge(stripe2, h, 2, grid=BrillouinGrid(2, 32))
    e2 = locate_edge(stripe2, h, 2, grid=BrillouinGrid(2, 64))
    d = np.mod(e1.k0 - e2.k0 + np.pi, 2 * np.pi) - np.pi
    assert np.max(np.abs(d)) < 1e-10


def test_upper_edge_negation(stripe2):
    h = zero(stripe2)
    up = locate_edge(stripe2, h, 1, "upper")
    lo = locate_edge(stripe2.negated(), h, 2)
    assert up.lam_edge == pytest.approx(-lo.lam_edge, abs=1e-12)
    assert np.allclose(up.hessian, lo.hessian, atol=1e-8)
    assert up.lam_edge == pytest.approx(3, abs=1e-12)


def test_degenerate_edge():
    m = load_fixture("degen2")
    with pytest.raises(DegenerateEdge):
        locate_edge(m, zero(m), 1)


def test_verify_stripe2(stripe2, stripe2_edge):
    h = zero(stripe2)
    gap, edge = edge_for_lambda(stripe2, h, 4.5, BrillouinGrid(2, 64))
    rep = verify_assumptions(stripe2, h, edge, gap, 4.5, BrillouinGrid(2, 64))
    for k in ("A1", "A2", "A3", "A4", "A5", "singularity"):
        assert rep.ok(k), k
    assert rep.margin("A2") == pytest.approx(2, abs=1e-3)


def test_verify_free2(free2, free2_edge):
    h = zero(free2)
    rep = verify_assumptions(free2, h, free2_edge, None, -1.0)
    for k in ("A1", "A2", "A3", "A4", "A5"):
        assert rep.ok(k)
    assert "vacuous" in rep.items["A2"]["note"]


def test_a5_violation():
    m = load_fixture("twist2")
    h = zero(m)
    edge = locate_edge(m, h, 1)
    with pytest.raises(AssumptionViolated) as ei:
        verify_assumptions(m, h, edge, None, edge.lam_edge - 0.1)
    assert ei.value.item == "A5"


def test_no_gap(stripe2):
    with pytest.raises(NoGap):
        edge_for_lambda(stripe2, zero(stripe2), -1.0)
    with pytest.raises(NoGap):
        edge_for_lambda(stripe2, zero(stripe2), 2.5)


def test_band_continuity(stripe2):
    h = zero(stripe2)
    m = 64
    b = sample_bands(stripe2, h, BrillouinGrid(2, m)).values.reshape(m, m, 2)
    # |dL/dk| is bounded by the sum of |weight * tau|
    gmax = float(np.sum(np.abs(stripe2.weights) * np.linalg.norm(stripe2.shifts, axis=1)))
    for ax in (0, 1):
        jump = np.max(np.abs(np.diff(b, axis=ax)))
        assert jump <= gmax * (2 * np.pi / m) * 1.5


def test_band_gradient_hf(stripe2, rng):
    h = zero(stripe2)
    for _ in range(5):
        k = rng.uniform(-np.pi, np.pi, 2)
        lam, g, *_ = band_gradient(stripe2, h, k, 2)
        for mm in range(2):
            e = np.zeros(2)
            e[mm] = 1e-6
            fp = np.linalg.eigvalsh(build_floquet_matrix(stripe2, h, k + e))[1]
            fm = np.linalg.eigvalsh(build_floquet_matrix(stripe2, h, k - e))[1]
            assert g[mm] == pytest.approx((fp - fm) / 2e-6, abs=1e-6)
