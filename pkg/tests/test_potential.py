"""Trigonometric potential: evaluation, derivatives, extrema location."""

import numpy as np
import pytest

from toric_flow import FourierPotential, find_extrema

TWO_PI = 2.0 * np.pi


def test_cosine_values_match_closed_form():
    V = FourierPotential(0.0, [1.0])
    assert V(0.0) == pytest.approx(1.0, abs=1e-15)
    assert V(0.5) == pytest.approx(-1.0, abs=1e-15)
    # V'(s) = -2 pi sin(2 pi s)
    assert V(0.25, order=1) == pytest.approx(-TWO_PI, abs=1e-13)
    # V''(0) = -(2 pi)^2
    assert V(0.0, order=2) == pytest.approx(-TWO_PI**2, abs=1e-11)


def test_sine_term_and_offset():
    V = FourierPotential(2.0, [], [0.5])
    assert V(0.25) == pytest.approx(2.5, abs=1e-15)
    assert V(0.0, order=1) == pytest.approx(0.5 * TWO_PI, abs=1e-13)


def test_array_evaluation_matches_scalar():
    V = FourierPotential(0.3, [1.0, -0.2], [0.0, 0.4])
    s = np.linspace(-1.3, 2.7, 57)
    for order in (0, 1, 2):
        arr = V(s, order=order)
        pointwise = np.array([V(float(si), order=order) for si in s])
        scale = max(1.0, np.abs(pointwise).max())
        assert np.abs(arr - pointwise).max() < 1e-14 * scale


def test_derivatives_against_finite_differences():
    eps = 1e-6
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        K = int(rng.integers(1, 6))
        V = FourierPotential(
            rng.normal(), rng.normal(size=K) / np.arange(1, K + 1) ** 2,
            rng.normal(size=K) / np.arange(1, K + 1) ** 2,
        )
        for s in rng.uniform(-2, 2, size=5):
            fd1 = (V(s + eps) - V(s - eps)) / (2 * eps)
            fd2 = (V(s + eps) - 2 * V(s) + V(s - eps)) / eps**2
            assert abs(V(s, order=1) - fd1) < 1e-6 * max(1.0, abs(fd1))
            assert abs(V(s, order=2) - fd2) < 1e-3 * max(1.0, abs(fd2))


def test_periodicity():
    rng = np.random.default_rng(7)
    V = FourierPotential(0.1, rng.normal(size=3), rng.normal(size=3))
    s = rng.uniform(-3, 3, size=40)
    for order in (0, 1, 2):
        assert np.abs(V(s + 1.0, order=order) - V(s, order=order)).max() < 1e-10


def test_extrema_plain_cosine():
    ext = find_extrema(FourierPotential(0.0, [1.0]))
    assert not ext.constant
    assert ext.v_min == pytest.approx(-1.0, abs=1e-12)
    assert ext.v_max == pytest.approx(1.0, abs=1e-12)
    assert len(ext.argmin) == 1 and ext.argmin[0] == pytest.approx(0.5, abs=1e-10)
    assert len(ext.argmax) == 1 and ext.argmax[0] == pytest.approx(0.0, abs=1e-10)


def test_extrema_two_harmonics():
    # V = cos(2 pi s) + 0.5 cos(4 pi s).  Stationary points solve
    # sin(2 pi s) (1 + 2 cos(2 pi s)) = 0, i.e. s in {0, 1/2, 1/3, 2/3} with
    # values {1.5, -0.5, -0.75, -0.75}.  Global min -0.75 is attained twice.
    V = FourierPotential(0.0, [1.0, 0.5])
    ext = find_extrema(V)
    assert ext.v_max == pytest.approx(1.5, abs=1e-12)
    assert ext.v_min == pytest.approx(-0.75, abs=1e-12)
    assert len(ext.argmax) == 1 and ext.argmax[0] == pytest.approx(0.0, abs=1e-10)
    assert len(ext.argmin) == 2
    assert ext.argmin[0] == pytest.approx(1.0 / 3.0, abs=1e-10)
    assert ext.argmin[1] == pytest.approx(2.0 / 3.0, abs=1e-10)
    for s in ext.argmin + ext.argmax:
        assert abs(V(s, order=1)) < 1e-10


def test_extrema_random_potentials_first_order_condition():
    for trial in range(15):
        rng = np.random.default_rng(4000 + trial)
        K = int(rng.integers(1, 5))
        V = FourierPotential(0.0, rng.normal(size=K), rng.normal(size=K))
        ext = find_extrema(V)
        grid = np.arange(20000) / 20000.0
        vals = V(grid)
        assert ext.v_min <= vals.min() + 1e-9
        assert ext.v_max >= vals.max() - 1e-9
        for s in ext.argmin:
            assert abs(V(s) - ext.v_min) < 1e-12 * max(1.0, abs(ext.v_min))
        for s in ext.argmax:
            assert abs(V(s, order=1)) < 1e-10


def test_constant_potential():
    V = FourierPotential(0.7)
    assert V.is_constant()
    ext = find_extrema(V)
    assert ext.constant
    assert ext.v_min == ext.v_max == 0.7
    assert ext.argmin == () and ext.argmax == ()
    # explicit zero coefficients count as constant too
    assert FourierPotential(0.0, [0.0, 0.0]).is_constant()


def test_validation():
    with pytest.raises(ValueError):
        FourierPotential(np.nan, [1.0])
    with pytest.raises(ValueError):
        FourierPotential(0.0, np.ones(513))
    with pytest.raises(ValueError):
        FourierPotential(0.0, [[1.0, 2.0]])
    V = FourierPotential(0.0, [1.0])
    with pytest.raises(ValueError):
        V(0.3, order=3)
