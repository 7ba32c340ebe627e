import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svrgpdfp.prox import L1, Huber, SqL2, Zero


def _kinds(dim):
    return [Zero(dim), L1(dim, 0.7), Huber(dim, 1.3, 0.4), SqL2(dim, 0.6)]


def test_values():
    assert L1(2, 2.0).value([1, -3]) == 8.0
    assert Huber(1, 1.0, 1.0).value([0.5]) == 0.125
    assert Huber(1, 1.0, 1.0).value([2.0]) == 1.5
    assert SqL2(2, 0.5).value([1, 2]) == 2.5
    assert Zero(3).value([1, 2, 3]) == 0.0


@pytest.mark.parametrize("g", _kinds(3), ids=lambda g: g.kind)
def test_value_at_zero(g):
    assert g.value(np.zeros(3)) == 0.0


def test_prox_examples():
    assert L1(1, 1.0).prox([1.2], 0.5)[0] == pytest.approx(0.7, abs=1e-15)
    assert L1(1, 1.0).prox([0.3], 0.5)[0] == 0.0
    # grid-search oracle for the Huber example
    grid = np.arange(-2, 2 + 1e-12, 1e-5)
    h = np.where(np.abs(grid) <= 1, grid**2 / 2, np.abs(grid) - 0.5)
    oracle = grid[np.argmin(h + 0.5 * (grid - 1) ** 2)]
    got = Huber(1, 1.0, 1.0).prox([1.0], 1.0)[0]
    assert got == 0.5 and abs(got - oracle) <= 1e-5
    assert SqL2(1, 0.5).prox([3.0], 1.0)[0] == 1.5
    assert Zero(2).prox([1.0, -2.0], 3.0).tolist() == [1.0, -2.0]


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_prox_rejects_nonpositive_scale(tau):
    for g in _kinds(2):
        with pytest.raises(ValueError):
            g.prox(np.ones(2), tau)
        with pytest.raises(ValueError):
            g.conj_prox(np.ones(2), tau)


def test_conj_prox_examples():
    assert L1(2, 1.0).conj_prox([2.0, -0.5], 1.0).tolist() == [1.0, -0.5]
    assert Zero(1).conj_prox([3.0], 0.7).tolist() == [0.0]
    # g*(v) = v^2/2 for nu = 0.5, so the prox is u / (1 + tau)
    assert SqL2(1, 0.5).conj_prox([2.0], 1.0)[0] == pytest.approx(1.0, abs=1e-15)


def test_l1_conj_prox_is_clamping(rng):
    g = L1(50, 0.8)
    for _ in range(20):
        u = 3 * rng.standard_normal(50)
        tau = float(rng.uniform(0.01, 5))
        np.testing.assert_allclose(g.conj_prox(u, tau), np.clip(u, -0.8, 0.8), atol=1e-12)


def test_huber_conj_prox_closed_form(rng):
    # g* = alpha/(2 nu) |v|^2 + indicator(|v|_inf <= nu): prox = clip(u / (1 + tau alpha/nu))
    nu, alpha = 1.3, 0.4
    g = Huber(40, nu, alpha)
    for _ in range(20):
        u = 3 * rng.standard_normal(40)
        tau = float(rng.uniform(0.01, 5))
        expect = np.clip(u / (1 + tau * alpha / nu), -nu, nu)
        np.testing.assert_allclose(g.conj_prox(u, tau), expect, atol=1e-12)


def test_conj_values():
    assert L1(2, 1.0).conj_value([0.5, -1.0], 0.0) == 0.0
    assert L1(1, 1.0).conj_value([1.5], 0.0) == np.inf
    assert Huber(1, 1.0, 2.0).conj_value([1.0]) == 1.0
    assert SqL2(1, 0.5).conj_value([2.0]) == 2.0
    assert Zero(2).conj_value([0.0, 0.0]) == 0.0
    assert Zero(2).conj_value([0.0, 1.0]) == np.inf
    assert L1(1, 1.0).conj_value([1.0 + 1e-10]) == 0.0  # default tolerance 1e-9


def test_huber_conjugate_matches_sup_oracle():
    # g*(v) = sup_y v y - g(y), maximized on a fine grid
    g = Huber(1, 1.0, 2.0)
    y = np.linspace(-20, 20, 400001)
    h = np.where(np.abs(y) <= 2, y**2 / 4, np.abs(y) - 1)
    for v in [0.0, 0.3, -0.7, 1.0]:
        assert g.conj_value([v]) == pytest.approx(np.max(v * y - h), abs=1e-6)


def test_conjugate_info():
    assert Huber(3, 2.0, 0.5).conj_strong_convexity == 0.25
    assert SqL2(3, 2.0).conj_strong_convexity == 0.25
    assert L1(3, 2.0).conj_strong_convexity == 0.0
    assert L1(3, 2.0).domain_radius == 2.0 and SqL2(3, 1.0).domain_radius == np.inf


def test_moreau_identity_500_samples(rng):
    for g in _kinds(6):
        for _ in range(500):
            u = 4 * rng.standard_normal(6)
            tau = float(np.exp(rng.uniform(-4, 4)))
            resid = g.conj_prox(u, tau) + tau * g.prox(u / tau, 1 / tau) - u
            assert np.linalg.norm(resid) <= 1e-10 * max(1.0, tau)


@given(st.integers(0, 2**32 - 1))
def test_prox_optimality_by_perturbation(seed):
    rng = np.random.default_rng(seed)
    for g in _kinds(4):
        y = 2 * rng.standard_normal(4)
        tau = float(rng.uniform(0.05, 3))
        x = g.prox(y, tau)

        def phi(z):
            return tau * g.value(z) + 0.5 * float((z - y) @ (z - y))

        base = phi(x)
        for _ in range(100):
            d = rng.standard_normal(4)
            d *= rng.uniform(0, 1e-3) / np.linalg.norm(d)
            assert base <= phi(x + d) + 1e-12


@given(st.integers(0, 2**32 - 1))
def test_prox_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    for g in _kinds(5):
        y1, y2 = 3 * rng.standard_normal((2, 5))
        tau = float(rng.uniform(0.01, 4))
        gap = np.linalg.norm(g.prox(y1, tau) - g.prox(y2, tau))
        assert gap <= np.linalg.norm(y1 - y2) + 1e-12


def test_huber_tends_to_soft_threshold(rng):
    h, l1 = Huber(100, 0.9, 1e-8), L1(100, 0.9)
    for _ in range(10):
        y = 2 * rng.standard_normal(100)
        tau = float(rng.uniform(0.1, 2))
        assert np.max(np.abs(h.prox(y, tau) - l1.prox(y, tau))) <= 1e-6


def test_constructor_validation():
    with pytest.raises(ValueError):
        L1(2, 0.0)
    with pytest.raises(ValueError):
        Huber(2, 1.0, 0.0)
    with pytest.raises(ValueError):
        SqL2(0, 1.0)
    with pytest.raises(ValueError, match="expected vector of length 2"):
        L1(2, 1.0).value(np.ones(3))
