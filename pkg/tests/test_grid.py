import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from crossdiff.grid import (Field, Grid1D, cell_divergence, discrete_entropy,
                            dissipation_functionals, face_average, face_gradient,
                            fisher_information, gajewski_distance, hminus1_seminorm,
                            neumann_laplacian)
from crossdiff.entropy import entropy_density
from crossdiff.models import get_model


def test_grid_validation():
    g = Grid1D(2.0, 4)
    assert g.dx == 0.5 and np.allclose(g.x, [0.25, 0.75, 1.25, 1.75])
    with pytest.raises(ValueError):
        Grid1D(1.0, 1)
    with pytest.raises(ValueError):
        Grid1D(0.0, 4)


def test_field_validation():
    g = Grid1D(1.0, 3)
    with pytest.raises(ValueError):
        Field(np.array([[0.5, 0.5, 1.2]]), g)
    with pytest.raises(ValueError):
        Field(np.ones((1, 4)) * 0.1, g)
    f = Field(np.array([[0.2, 0.2, 0.2], [0.1, 0.1, 0.1]]), g)
    assert np.allclose(f.u_last, 0.7) and np.allclose(f.masses(), [0.2, 0.1])


def test_face_gradient_examples():
    g = Grid1D(1.0, 4)
    assert np.all(face_gradient(np.full(4, 3.0), g) == 0)
    grad = face_gradient(g.x, g)
    assert np.allclose(grad[1:-1], 1.0) and grad[0] == 0 and grad[-1] == 0
    lap = cell_divergence(face_gradient(np.arange(4.0), g), g)
    assert np.allclose(lap[1:-1], 0.0)


def test_divergence_telescopes():
    g = Grid1D(1.0, 10)
    F = np.r_[0.0, np.random.default_rng(0).normal(size=9), 0.0]
    assert abs(np.sum(cell_divergence(F, g)) * g.dx) < 1e-14
    assert np.allclose(cell_divergence(np.full(11, 2.0), g), 0.0)


def test_summation_by_parts():
    g = Grid1D(1.0, 37)
    r = np.random.default_rng(1)
    F = np.r_[0.0, r.normal(size=36), 0.0]
    f = r.normal(size=37)
    lhs = np.sum(cell_divergence(F, g) * f) * g.dx
    rhs = -np.sum(F * face_gradient(f, g)) * g.dx
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_neumann_laplacian_structure():
    L = neumann_laplacian(Grid1D(1.0, 12))
    assert np.allclose(L, L.T)
    ev = np.linalg.eigvalsh(L)
    assert np.max(ev) < 1e-9 and np.sum(np.abs(ev) < 1e-9) == 1
    assert np.allclose(L @ np.ones(12), 0.0)
    f = np.random.default_rng(2).normal(size=12)
    g = Grid1D(1.0, 12)
    assert np.allclose(L @ f, cell_divergence(face_gradient(f, g), g))


def test_face_average():
    assert np.allclose(face_average(np.array([1.0, 3.0])), [1.0, 2.0, 3.0])


def test_discrete_entropy():
    skt = get_model("skt-volume")
    g = Grid1D(1.0, 8)
    f = Field(np.full((2, 8), 0.25), g)
    assert discrete_entropy(f, skt) == pytest.approx(1.1137056388801092, abs=1e-12)
    g2 = Grid1D(3.0, 8)
    f2 = Field(np.full((2, 8), 0.25), g2)
    assert discrete_entropy(f2, skt) == pytest.approx(3 * entropy_density(np.full(2, 0.25), skt))


def test_discrete_entropy_midpoint_order():
    ion = get_model("ion-transport", n=1)
    # a non-periodic profile; cosines make the midpoint rule spectrally accurate
    prof = lambda x: 0.3 + 0.2 * x ** 2
    exact = quad(lambda x: float(entropy_density(np.array([prof(x)]), ion)), 0, 1,
                 epsabs=1e-14)[0]
    errs = []
    for N in (20, 40, 80):
        g = Grid1D(1.0, N)
        errs.append(abs(discrete_entropy(Field(prof(g.x)[None], g), ion) - exact))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.9)


def test_dissipation_uniform_and_oracle():
    ion = get_model("ion-transport", n=1)
    g = Grid1D(1.0, 50)
    rep = dissipation_functionals(Field(np.full((1, 50), 0.4), g), ion)
    assert rep.grad_sqrt_u_term == 0.0 and rep.grad_sqrt_q_term == 0.0
    # vacancy 0.5 - 0.1 cos(pi x): int |d/dx sqrt(s)|^2 by adaptive quadrature
    oracle = quad(lambda x: (0.1 * np.pi * np.sin(np.pi * x)) ** 2
                  / (4 * (0.5 - 0.1 * np.cos(np.pi * x))), 0, 1, epsabs=1e-14)[0]
    errs = []
    for N in (50, 100, 200, 400):
        g = Grid1D(1.0, N)
        r = dissipation_functionals(Field(0.5 + 0.1 * np.cos(np.pi * g.x), g), ion)
        errs.append(abs(r.grad_sqrt_q_term - oracle))
        assert r.grad_sqrt_u_term >= 0 and r.grad_sqrt_q_term >= 0
    assert errs[-1] < 1e-5 and errs[-1] < errs[0] / 16 * 1.5


def test_fisher_examples():
    g = Grid1D(1.0, 30)
    r = np.random.default_rng(3)
    mu = r.uniform(0, 2, 30)
    assert fisher_information(np.full(30, 0.7), mu, g) == 0.0
    f = r.uniform(0, 1, 30)
    assert fisher_information(2 * f, np.ones(30), g) == pytest.approx(
        2 * fisher_information(f, np.ones(30), g), rel=1e-14)
    with pytest.raises(ValueError):
        fisher_information(-f, mu, g)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 20, elements=st.floats(0, 1)), arrays(float, 20, elements=st.floats(0, 1)),
       arrays(float, 20, elements=st.floats(0, 5)))
def test_fisher_subadditive_property(f, g, mu):
    grid = Grid1D(1.0, 20)
    fi = fisher_information
    assert fi(f + g, mu, grid) <= fi(f, mu, grid) + fi(g, mu, grid) + 1e-12 * (
        1 + fi(f, mu, grid) + fi(g, mu, grid))


def test_hminus1():
    g = Grid1D(1.0, 400)
    assert hminus1_seminorm(np.zeros(400), g) == 0.0
    val = hminus1_seminorm(np.cos(np.pi * g.x), g)
    assert val == pytest.approx(1 / (np.pi * np.sqrt(2)), rel=1e-4)
    with pytest.raises(ValueError):
        hminus1_seminorm(np.ones(400), g)
    r = np.random.default_rng(4)
    a, b = r.normal(size=400), r.normal(size=400)
    a -= a.mean()
    b -= b.mean()
    # the squared seminorm is a quadratic form: parallelogram law
    n = lambda f: hminus1_seminorm(f, g) ** 2
    assert n(a + b) + n(a - b) == pytest.approx(2 * n(a) + 2 * n(b), rel=1e-10)
    assert hminus1_seminorm(3 * a, g) == pytest.approx(3 * hminus1_seminorm(a, g), rel=1e-12)


def test_hminus1_matches_dense_solve():
    g = Grid1D(1.0, 16)
    f = np.random.default_rng(5).normal(size=16)
    f -= f.mean()
    L = neumann_laplacian(g)
    zeta = np.linalg.lstsq(-L, f, rcond=None)[0]
    ref = np.sqrt(np.sum(face_gradient(zeta, g) ** 2) * g.dx)
    assert hminus1_seminorm(f, g) == pytest.approx(ref, rel=1e-10)


def test_gajewski():
    g = Grid1D(1.0, 40)
    r = np.random.default_rng(6)
    a = Field(r.uniform(0, 0.5, (2, 40)), g)
    b = Field(r.uniform(0, 0.5, (2, 40)), g)
    assert gajewski_distance(a, a, 1e-6) == pytest.approx(0.0, abs=1e-15)
    d = gajewski_distance(a, b, 1e-6)
    assert d >= 0.125 * np.sum((a.values - b.values) ** 2) * g.dx - 1e-9
    with pytest.raises(ValueError):
        gajewski_distance(a, Field(b.values[:, :20], Grid1D(1.0, 20)), 1e-6)
