import numpy as np
import pytest

from blochgreen import AdditiveFunction
from blochgreen.continuation import (
    continuation_radius,
    gamma_fan_rows,
    solve_beta_s,
    track_eigenpair,
)
from blochgreen.crystal import build_floquet_matrix
from blochgreen.errors import OutOfRegion


def zero(m):
    return AdditiveFunction.zero(m)


def test_free2_track_closed_form(free2, free2_edge):
    b1, b2 = 0.5, 0.3
    st = track_eigenpair(free2, zero(free2), free2_edge, [b1, b2])
    assert st.E == pytest.approx(4 - 2 * np.cosh(b1) - 2 * np.cosh(b2), abs=1e-13)
    assert np.allclose(st.gradE, [-2 * np.sinh(b1), -2 * np.sinh(b2)], atol=1e-12)
    assert np.allclose(st.hessE, np.diag([-2 * np.cosh(b1), -2 * np.cosh(b2)]), atol=1e-7)


def test_stripe2_track(stripe2, stripe2_edge):
    st = track_eigenpair(stripe2, zero(stripe2), stripe2_edge, [0, np.log(2)])
    assert st.E == pytest.approx(4.5, abs=1e-12)
    a = stripe2.index["a"]
    ratio = st.phi_plus * np.conj(st.phi_minus) / st.F
    assert abs(ratio[a]) == pytest.approx(1, abs=1e-12)
    assert abs(ratio[1 - a]) < 1e-12
    assert abs(st.F.imag) < 1e-12 and abs(st.F) > 0


def test_track_at_origin(stripe2, stripe2_edge):
    st = track_eigenpair(stripe2, zero(stripe2), stripe2_edge, [0, 0])
    assert st.E == pytest.approx(5, abs=1e-12)
    assert np.allclose(st.gradE, 0, atol=1e-12)
    assert np.allclose(st.hessE, -stripe2_edge.hessian, atol=1e-7)


def test_free2_beta_s(free2, free2_edge):
    sol = solve_beta_s(free2, zero(free2), free2_edge, -1.0, [1, 0])
    assert np.allclose(sol.beta, [np.arccosh(1.5), 0], atol=1e-12)
    assert sol.grad_norm == pytest.approx(2 * np.sqrt(1.25), abs=1e-11)
    assert sol.proj_det == pytest.approx(2, abs=1e-7)
    assert sol.residual < 1e-12


def test_stripe2_beta_s(stripe2, stripe2_edge):
    sol = solve_beta_s(stripe2, zero(stripe2), stripe2_edge, 4.5, [0, 1])
    assert np.allclose(sol.beta, [0, np.log(2)], atol=1e-12)
    assert sol.grad_norm == pytest.approx(1.5, abs=1e-11)
    assert sol.proj_det == pytest.approx(1 / 3, abs=1e-7)


def test_diagonal_direction(free2, free2_edge):
    s = np.array([1, 1]) / np.sqrt(2)
    sol = solve_beta_s(free2, zero(free2), free2_edge, -1.0, s)
    assert np.allclose(sol.beta, [np.arccosh(1.25)] * 2, atol=1e-12)


def test_paraboloid_limit_isotropic(free2, free2_edge, rng):
    for _ in range(3):
        s = rng.normal(size=2)
        s /= np.linalg.norm(s)
        sol = solve_beta_s(free2, zero(free2), free2_edge, -1e-6, s)
        assert np.linalg.norm(sol.beta) < 2e-3
        assert np.linalg.norm(sol.beta / np.linalg.norm(sol.beta) - s) < 1e-2


def test_paraboloid_limit_anisotropic(stripe2, stripe2_edge, rng):
    H = stripe2_edge.hessian
    eps = 1e-6
    # on the paraboloid |beta| <= sqrt(2 eps / min eig H)
    bound = np.sqrt(2 * eps / np.linalg.eigvalsh(H)[0]) * 1.01
    for _ in range(3):
        s = rng.normal(size=2)
        s /= np.linalg.norm(s)
        sol = solve_beta_s(stripe2, zero(stripe2), stripe2_edge, 5 - eps, s)
        assert np.linalg.norm(sol.beta) < bound
        want = np.linalg.solve(H, s)
        assert np.linalg.norm(sol.beta / np.linalg.norm(sol.beta) - want / np.linalg.norm(want)) < 1e-2


def test_solve_invariants(stripe2, stripe2_edge, rng):
    for _ in range(5):
        s = rng.normal(size=2)
        s /= np.linalg.norm(s)
        sol = solve_beta_s(stripe2, zero(stripe2), stripe2_edge, 4.5, s)
        st = sol.state
        assert abs(st.E - 4.5) < 1e-11
        assert np.linalg.norm(st.gradE / np.linalg.norm(st.gradE) + s) < 1e-9
        assert sol.proj_det > 0


def test_flip_symmetry(free2, free2_edge, rng):
    for _ in range(3):
        s = rng.normal(size=2)
        s /= np.linalg.norm(s)
        b = solve_beta_s(free2, zero(free2), free2_edge, -1.0, s).beta
        bf = solve_beta_s(free2, zero(free2), free2_edge, -1.0, s * [-1, 1]).beta
        assert np.allclose(bf, b * [-1, 1], atol=1e-10)


def test_singularity_consistency(stripe2, stripe2_edge):
    h = zero(stripe2)
    sol = solve_beta_s(stripe2, h, stripe2_edge, 4.5, [0, 1])
    k = np.stack(np.meshgrid(*[np.linspace(-np.pi, np.pi, 41)] * 2, indexing="ij"), -1).reshape(-1, 2)
    for t in np.linspace(0, 0.99, 12):
        m = build_floquet_matrix(stripe2, h, k + 1j * t * sol.beta) - 4.5 * np.eye(2)
        assert np.min(np.linalg.svd(m, compute_uv=False)[:, -1]) > 1e-4
    m1 = build_floquet_matrix(stripe2, h, stripe2_edge.k0 + 1j * sol.beta) - 4.5 * np.eye(2)
    assert np.linalg.svd(m1, compute_uv=False)[-1] < 1e-8


def test_out_of_region(stripe2, stripe2_edge):
    with pytest.raises(OutOfRegion):
        solve_beta_s(stripe2, zero(stripe2), stripe2_edge, -50.0, [1, 0])


def test_radius_and_fan(stripe2, stripe2_edge):
    r = continuation_radius(stripe2, zero(stripe2), stripe2_edge, [1, 0], rho_cap=5.0)
    assert 0 < r <= 5.0
    rows = gamma_fan_rows(stripe2, zero(stripe2), stripe2_edge, 4.5, [[0, 1], [1, 0]])
    assert list(rows[0]) == ["s_1", "s_2", "beta_1", "beta_2", "E", "grad_norm", "proj_det"]
    assert rows[0]["E"] == pytest.approx(4.5, abs=1e-11)
