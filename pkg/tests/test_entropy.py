import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossdiff.entropy import (BoundaryError, InversionError, StatePoint, entropy_density,
                               entropy_gradient, entropy_hessian, invert_gradient,
                               relative_entropy)
from crossdiff.models import get_model, sample_interior

SKT = get_model("skt-volume")
ION = get_model("ion-transport")
ION1 = get_model("ion-transport", n=1)
U = np.array([0.25, 0.25])


def test_statepoint():
    p = StatePoint([0.2, 0.3])
    assert p.u_last == pytest.approx(0.5)
    assert p.interior and np.allclose(p.full, [0.2, 0.3, 0.5])
    assert not StatePoint([0.0, 0.3]).interior
    with pytest.raises(ValueError):
        StatePoint([0.7, 0.4])


def test_density_oracles():
    # skt-volume: 2(0.25 ln 0.25 + 0.75) + (0.5 ln 0.5 + 0.5) + (0.5 ln 0.5 + 0.5)
    assert entropy_density(U, SKT) == pytest.approx(1.1137056388801092, abs=1e-12)
    # n = 1: 0.5 ln 0.5 + 0.5 from the species plus int_1^0.5 ln s ds
    assert entropy_density(np.array([0.5]), ION1) == pytest.approx(1 + np.log(0.5), abs=1e-12)


def test_density_vanishing_q_diverges_on_boundary():
    model = get_model("vanishing-q:1")
    assert entropy_density(np.array([0.5, 0.5]), model) == np.inf
    assert np.isfinite(entropy_density(U, model))


def test_gradient_oracles():
    assert entropy_gradient(U, SKT) == pytest.approx([np.log(0.25)] * 2, abs=1e-12)
    assert entropy_gradient(U, ION) == pytest.approx([np.log(0.5)] * 2, abs=1e-12)
    assert entropy_gradient(np.array([0.5]), ION1) == pytest.approx([0.0], abs=1e-15)


def test_gradient_rejects_boundary():
    with pytest.raises(BoundaryError):
        entropy_gradient(np.array([0.5, 0.5]), ION)
    with pytest.raises(BoundaryError):
        entropy_hessian(np.array([0.0, 0.5]), ION)


def test_hessian_oracles():
    assert np.allclose(entropy_hessian(U, SKT), [[8, 4], [4, 8]], atol=1e-12)
    assert np.allclose(entropy_hessian(U, ION), [[6, 2], [2, 6]], atol=1e-12)


def test_gradient_matches_finite_difference():
    u = np.array([0.2, 0.35])
    eps = 1e-6
    for model in (ION, SKT, get_model("power-q:2")):
        fd = [(entropy_density(u + eps * e, model) - entropy_density(u - eps * e, model)) / (2 * eps)
              for e in np.eye(2)]
        assert np.allclose(fd, entropy_gradient(u, model), atol=1e-8)


def test_inversion_examples():
    assert np.allclose(invert_gradient(np.full(2, np.log(0.25)), SKT), U, atol=1e-8)
    assert np.allclose(invert_gradient(np.zeros(1), ION1), [0.5], atol=1e-12)


def test_inversion_failure_reports_iterate():
    with pytest.raises(InversionError) as info:
        invert_gradient(np.array([np.nan, -2.0]), ION, max_iter=5)
    assert info.value.last_iterate is not None and not np.isfinite(info.value.residual)


@pytest.mark.parametrize("name", ["ion-transport", "power-q:2", "skt-volume", "exp-q:1",
                                  "vanishing-q:1"])
def test_vectorized_round_trip(name):
    model = get_model(name)
    u = sample_interior(2, 300, seed=7, margin=1e-4)
    back = invert_gradient(entropy_gradient(u, model), model, polish=1)
    assert np.max(np.abs(back - u)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 0.98), st.floats(0.0, 1.0))
def test_round_trip_property(a, frac):
    b = (1.0 - a) * (1e-3 + 0.99 * frac) * 0.999
    u = np.array([a, b])
    if 1 - u.sum() <= 1e-6:
        return
    for model in (ION, SKT):
        assert np.allclose(invert_gradient(entropy_gradient(u, model), model, polish=1), u,
                           atol=1e-10)


def test_relative_entropy_oracle():
    split = relative_entropy(np.array([0.6]), np.array([0.5]), ION1)
    assert float(split.h1) == pytest.approx(0.6 * np.log(1.2) - 0.1, abs=1e-12)
    # int_{0.5}^{0.4} ln(s / 0.5) ds in closed form
    h2 = (0.4 * np.log(0.4) - 0.4) - (0.5 * np.log(0.5) - 0.5) + 0.1 * np.log(0.5)
    assert float(split.h2) == pytest.approx(h2, abs=1e-12)
    assert float(split.h3) == 0.0


def test_relative_entropy_parts_nonnegative():
    for model in (ION, SKT, get_model("power-q:2")):
        u = sample_interior(2, 1000, seed=2)
        uinf = np.array([0.3, 0.2])
        split = relative_entropy(u, uinf, model)
        for part in (split.h1, split.h2, split.h3):
            assert np.all(part >= -1e-13)
        zero = relative_entropy(uinf, uinf, model)
        assert abs(float(zero.total)) < 1e-14


def test_relative_entropy_quadratic_lower_bound():
    # Hessian of the mixing part is diag(1/u_i) >= I, hence h1 >= |u - uinf|^2 / 2
    u = sample_interior(2, 1000, seed=5)
    uinf = np.array([0.3, 0.2])
    h1 = relative_entropy(u, uinf, ION).h1
    assert np.all(h1 >= 0.5 * np.sum((u - uinf[:, None]) ** 2, axis=0) - 1e-14)
    # with q' >= q1 > 0 the vacancy part is bounded below by (gamma/2)(s - s_inf)^2
    h2 = relative_entropy(u, uinf, ION).h2
    gamma = ION.qspec.gamma
    assert np.all(h2 >= 0.5 * gamma * (1 - u.sum(axis=0) - 0.5) ** 2 - 1e-14)
