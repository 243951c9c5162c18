"""Randomized invariant suites; every suite runs at least 100 seed-fixed cases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochgreen import AdditiveFunction, CoverPoint, load_fixture
from blochgreen.asymptotics import eval_gap_interior, gap_interior_from_solve
from blochgreen.continuation import solve_beta_s, track_eigenpair
from blochgreen.crystal import build_floquet_matrix
from blochgreen.floquet import locate_edge, singularity_margin
from blochgreen.martin import minimal_solution_residual, perron_dispersion, solve_gamma_level

N_CASES = 100
SEED = 12345


def zero(m):
    return AdditiveFunction.zero(m)


def random_offsets(model, rng, scale=0.5):
    return AdditiveFunction.from_mapping(model, {v: rng.uniform(-scale, scale, model.d) for v in model.vertices})


def unit(rng, d):
    s = rng.normal(size=d)
    return s / np.linalg.norm(s)


SYMMETRIC = ("free2", "free3", "stripe2", "twist2", "degen2")


@pytest.mark.parametrize("name", SYMMETRIC)
def test_hermiticity(name):
    m = load_fixture(name)
    rng = np.random.default_rng(SEED)
    h = random_offsets(m, rng)
    k = rng.uniform(-np.pi, np.pi, (1000, m.d))
    L = build_floquet_matrix(m, h, k)
    assert np.max(np.abs(L - np.conj(np.swapaxes(L, -1, -2)))) < 1e-13


@pytest.mark.parametrize("name", SYMMETRIC)
def test_periodicity_of_spectra(name):
    m = load_fixture(name)
    rng = np.random.default_rng(SEED)
    h = random_offsets(m, rng)
    k = rng.uniform(-np.pi, np.pi, (N_CASES, m.d))
    base = np.linalg.eigvalsh(build_floquet_matrix(m, h, k))
    for ax in range(m.d):
        e = np.zeros(m.d)
        e[ax] = 2 * np.pi
        shifted = np.linalg.eigvalsh(build_floquet_matrix(m, h, k + e))
        assert np.max(np.abs(shifted - base)) < 1e-10


@pytest.mark.parametrize("name", ("free2", "free3", "stripe2"))
def test_transpose_identity(name):
    m = load_fixture(name)
    h = zero(m)
    edge = locate_edge(m, h, m.n)
    rng = np.random.default_rng(SEED)
    for _ in range(N_CASES):
        b = rng.uniform(-1.5, 1.5, m.d)
        Lp = build_floquet_matrix(m, h, edge.k0 + 1j * b)
        Lm = build_floquet_matrix(m, h, edge.k0 - 1j * b)
        assert np.max(np.abs(Lp.T - Lm)) < 1e-13


def make_stripe_setup():
    m = load_fixture("stripe2")
    h = zero(m)
    return m, h, locate_edge(m, h, 2)


@pytest.fixture(scope="module")
def stripe_setup():
    return make_stripe_setup()


def _inner_betas(m, h, edge, lam, rng, n):
    """Points ``t beta_s`` inside ``K_lam`` with random ``s`` and ``t in [0.2, 1]``."""
    out = []
    for _ in range(n):
        sol = solve_beta_s(m, h, edge, lam, unit(rng, m.d))
        out.append(rng.uniform(0.2, 1.0) * sol.beta)
    return out


def test_E_real_and_concave(stripe_setup):
    m, h, edge = stripe_setup
    rng = np.random.default_rng(SEED)
    betas = _inner_betas(m, h, edge, 4.5, rng, 2 * N_CASES)
    for b1, b2 in zip(betas[::2], betas[1::2]):
        s1 = track_eigenpair(m, h, edge, b1, with_hess=True)
        s2 = track_eigenpair(m, h, edge, b2, with_hess=False)
        mid = track_eigenpair(m, h, edge, 0.5 * (b1 + b2), with_hess=False)
        assert abs(s1.imag_E) < 1e-10 and abs(mid.imag_E) < 1e-10
        assert mid.E >= 0.5 * (s1.E + s2.E) - 1e-10
        assert np.max(np.linalg.eigvalsh(s1.hessE)) < 0


def test_gradient_vs_finite_differences(stripe_setup):
    m, h, edge = stripe_setup
    rng = np.random.default_rng(SEED + 1)
    step = 1e-5
    for b in _inner_betas(m, h, edge, 4.5, rng, N_CASES):
        st_ = track_eigenpair(m, h, edge, b, with_hess=False)
        fd = np.zeros(2)
        for ax in range(2):
            e = np.zeros(2)
            e[ax] = step
            fp = track_eigenpair(m, h, edge, b + e, start=st_, with_hess=False).E
            fm = track_eigenpair(m, h, edge, b - e, start=st_, with_hess=False).E
            fd[ax] = (fp - fm) / (2 * step)
        assert np.linalg.norm(st_.gradE - fd) <= 1e-7 * np.linalg.norm(st_.gradE)


def test_beta_s_residuals(stripe_setup):
    m, h, edge = stripe_setup
    rng = np.random.default_rng(SEED + 2)
    for _ in range(N_CASES):
        s = unit(rng, 2)
        lam = rng.uniform(4.2, 4.95)
        sol = solve_beta_s(m, h, edge, lam, s)
        assert sol.residual < 1e-11
        assert abs(sol.state.E - lam) < 1e-11
        assert np.linalg.norm(sol.state.gradE / sol.grad_norm + s) < 1e-9
        assert sol.proj_det > 0


def test_singularity_margin_positive(stripe_setup):
    m, h, edge = stripe_setup
    rng = np.random.default_rng(SEED + 3)
    for _ in range(N_CASES):
        sol = solve_beta_s(m, h, edge, 4.5, unit(rng, 2))
        assert singularity_margin(m, h, edge.k0, sol.beta, 4.5, t_max=0.99, nt=6, m=12) > 0


def test_gauge_invariance(stripe_setup):
    m, h, edge = stripe_setup
    rng = np.random.default_rng(SEED + 4)
    for _ in range(N_CASES):
        g = rng.integers(-8, 9, 2)
        if not g.any():
            g = np.array([0, 1])
        sol = solve_beta_s(m, h, edge, 4.5, g / np.linalg.norm(g))
        st_ = sol.state
        vx, vy = int(rng.integers(2)), int(rng.integers(2))
        v0, _ = gap_interior_from_solve(edge, sol, g.astype(float), vx, vy)
        c1, c2 = rng.normal(size=2) + 1j * rng.normal(size=2)
        phi_p, phi_m = c1 * st_.phi_plus, c2 * st_.phi_minus
        st2 = type(st_)(**{**st_.__dict__, "phi_plus": phi_p, "phi_minus": phi_m, "F": np.vdot(phi_m, phi_p)})
        sol2 = type(sol)(**{**sol.__dict__, "state": st2})
        v1, _ = gap_interior_from_solve(edge, sol2, g.astype(float), vx, vy)
        assert abs(v1 - v0) <= 1e-12 * max(abs(v0), 1e-300)


def test_offset_invariance(stripe_setup):
    m, h0, edge0 = stripe_setup
    rng = np.random.default_rng(SEED + 5)
    for _ in range(N_CASES):
        h = random_offsets(m, rng)
        edge = locate_edge(m, h, 2)
        g = rng.integers(-6, 7, 2)
        if not g.any():
            g = np.array([1, 3])
        v = str(rng.choice(["a", "b"]))
        x, y = CoverPoint.of(v, g), CoverPoint.of(v, (0, 0))
        s = g / np.linalg.norm(g)
        a = eval_gap_interior(m, h0, edge0, solve_beta_s(m, h0, edge0, 4.5, s), x, y).value
        b = eval_gap_interior(m, h, edge, solve_beta_s(m, h, edge, 4.5, s), x, y).value
        assert abs(a - b) <= 1e-12 * abs(a)


# -- Perron-mode invariants ------------------------------------------------
@pytest.fixture(scope="module")
def drift2():
    return load_fixture("drift2")


def test_perron_positivity_and_concavity(drift2):
    h = zero(drift2)
    rng = np.random.default_rng(SEED + 6)
    for _ in range(N_CASES):
        b1, b2 = rng.uniform(-2, 2, (2, 2))
        s1 = perron_dispersion(drift2, h, b1)
        s2 = perron_dispersion(drift2, h, b2, with_hess=False)
        mid = perron_dispersion(drift2, h, 0.5 * (b1 + b2), with_hess=False)
        assert np.all(s1.right > 0) and np.all(s1.left > 0)
        assert mid.Lam >= 0.5 * (s1.Lam + s2.Lam) - 1e-10
        assert np.max(np.linalg.eigvalsh(s1.hessLam)) < 0


def test_perron_multi_vertex_positivity():
    m = load_fixture("stripe2").as_nonsymmetric()
    h = random_offsets(m, np.random.default_rng(SEED))
    rng = np.random.default_rng(SEED + 7)
    for _ in range(N_CASES):
        st_ = perron_dispersion(m, h, rng.uniform(-2, 2, 2), with_hess=False)
        assert np.all(st_.right > 0) and np.all(st_.left > 0)


def test_perron_duality(drift2):
    h = zero(drift2)
    adj = drift2.adjoint()
    rng = np.random.default_rng(SEED + 8)
    for _ in range(N_CASES):
        b = rng.uniform(-3, 3, 2)
        assert abs(perron_dispersion(adj, h, b, with_hess=False).Lam
                   - perron_dispersion(drift2, h, -b, with_hess=False).Lam) < 1e-12


def test_minimal_solution_identity(drift2):
    rng = np.random.default_rng(SEED + 9)
    h = random_offsets(drift2, rng)
    for _ in range(N_CASES):
        sol = solve_gamma_level(drift2, h, rng.uniform(0.0, 1.9), unit(rng, 2))
        pts = [CoverPoint.of("v", rng.integers(-30, 31, 2)) for _ in range(3)]
        assert minimal_solution_residual(drift2, h, sol.state, pts) < 1e-12


# -- hypothesis-driven structural checks -----------------------------------
@settings(max_examples=N_CASES, derandomize=True, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=2), st.lists(st.integers(-50, 50), min_size=2, max_size=2),
       st.sampled_from(["a", "b"]))
def test_additivity_hypothesis(x, g, v):
    m = load_fixture("stripe2")
    h = AdditiveFunction.from_mapping(m, {"a": [0.25, -0.5], "b": [0.125, 0.0]})
    p = CoverPoint.of(v, x)
    assert np.allclose(h(p.translate(g)), h(p) + np.asarray(g))


@settings(max_examples=N_CASES, derandomize=True, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_stripe_band_closed_form_hypothesis(k1, k2):
    m = load_fixture("stripe2")
    ev = np.linalg.eigvalsh(build_floquet_matrix(m, zero(m), [k1, k2]))
    r = np.sqrt(11 + 2 * np.cos(k1))
    assert np.allclose(ev, [4 - 2 * np.cos(k2) - r, 4 - 2 * np.cos(k2) + r], atol=1e-12)
