"""Coupling matrices, the fibre-dependent metric and deck transforms."""

import numpy as np
import pytest
import scipy.linalg

from toric_flow import (
    CouplingMatrix,
    MetricRangeError,
    NotAnAutomorphismError,
    PhasePoint,
    FourierPotential,
    check_integer_automorphism,
    deck_transform,
    hamiltonian,
    matrix_exp,
    metric_at,
    riemannian_norm,
    wrap_to_fundamental,
)
from toric_flow.geometry import (
    KIND_DIAG,
    KIND_GENERAL,
    KIND_NILPOTENT,
    KIND_SYM,
    KIND_ZERO,
)

CAT_SCALE = np.log((3 + np.sqrt(5)) / 2) / np.sqrt(5)
A_CAT = CAT_SCALE * np.array([[1.0, 2.0], [2.0, -1.0]])


def test_matrix_exp_against_scipy():
    for trial in range(30):
        rng = np.random.default_rng(200 + trial)
        n = int(rng.integers(1, 5))
        M = rng.normal(size=(n, n))
        E = matrix_exp(M)
        ref = scipy.linalg.expm(M)
        assert np.abs(E - ref).max() < 1e-12 * max(1.0, np.abs(ref).max())


def test_cat_coupling_exponentiates_to_integer_matrix():
    A = CouplingMatrix(A_CAT)
    R = A.exp_at(1.0)
    assert np.abs(R - np.array([[2.0, 1.0], [1.0, 1.0]])).max() < 1e-12


def test_spectral_kind_classification():
    assert CouplingMatrix(np.zeros((2, 2))).kind == KIND_ZERO
    assert CouplingMatrix(A_CAT).kind == KIND_SYM
    assert CouplingMatrix([[0.0, 1.0], [0.0, 0.0]]).kind == KIND_NILPOTENT
    assert CouplingMatrix([[1.0, 1.0], [0.0, 2.0]]).kind == KIND_DIAG
    # Jordan block: not diagonalizable, not nilpotent
    assert CouplingMatrix([[1.0, 1.0], [0.0, 1.0]]).kind == KIND_GENERAL


def test_metric_closed_form_one_dimensional():
    # For A = [[a]] the metric is scalar: Q(s) = exp(2 a s).
    A = CouplingMatrix([[0.5]])
    m = metric_at(A, 0.5)
    assert m.Q[0, 0] == pytest.approx(1.6487212707001282, rel=1e-14)
    assert m.Qinv[0, 0] == pytest.approx(0.60653065971263342, rel=1e-14)
    assert m.dQinv_ds[0, 0] == pytest.approx(-0.60653065971263342, rel=1e-13)


def test_metric_cat_unit_shift():
    m = metric_at(CouplingMatrix(A_CAT), 1.0)
    assert np.abs(m.Q - np.array([[5.0, 3.0], [3.0, 2.0]])).max() < 1e-12


def test_metric_nilpotent_closed_form():
    # exp(sA) = [[1, s], [0, 1]] gives Q = [[1, s], [s, 1 + s^2]].
    A = CouplingMatrix([[0.0, 1.0], [0.0, 0.0]])
    s = 0.7
    m = metric_at(A, s)
    Q_ref = np.array([[1.0, s], [s, 1.0 + s * s]])
    assert np.abs(m.Q - Q_ref).max() < 1e-14
    assert np.abs(m.Q @ m.Qinv - np.eye(2)).max() < 1e-13


def _random_coupling(rng):
    # Mixed spectral types with spectral norm kept near one; the identities
    # hold for any A but huge exp(sA) condition numbers would only test
    # floating point, not the formulas.
    kind = int(rng.integers(0, 5))
    n = int(rng.integers(1, 4))
    if kind == 0:
        return CouplingMatrix(np.zeros((n, n)))
    if kind == 1:
        M = rng.normal(size=(n, n))
        M = M + M.T
    elif kind == 2:
        M = np.triu(rng.normal(size=(n, n)), 1)
    else:
        M = rng.normal(size=(n, n))
    norm = np.linalg.norm(M, 2)
    if norm > 1.2:
        M = M * (1.2 / norm)
    return CouplingMatrix(M)


def test_determinant_law():
    # det Q(s) = exp(2 s tr A) for every A, the clean global check that the
    # exponential factors are consistent.
    for trial in range(200):
        rng = np.random.default_rng(300 + trial)
        A = _random_coupling(rng)
        s = float(rng.uniform(-3, 3))
        det = np.linalg.det(metric_at(A, s).Q)
        expect = np.exp(2.0 * s * np.trace(A.entries))
        assert abs(det - expect) <= 1e-10 * abs(expect), (
            f"det law violated for kind {A.kind}: {det} vs {expect}"
        )


def test_qinv_derivative_matches_finite_differences():
    eps = 1e-5
    for trial in range(60):
        rng = np.random.default_rng(500 + trial)
        A = _random_coupling(rng)
        s = float(rng.uniform(-2, 2))
        fd = (metric_at(A, s + eps).Qinv - metric_at(A, s - eps).Qinv) / (2 * eps)
        got = metric_at(A, s).dQinv_ds
        assert np.abs(got - fd).max() < 1e-6 * max(1.0, np.abs(fd).max())


def test_metric_deck_invariance_any_coupling():
    # R(A)^T Q(s - 1) R(A) = Q(s) holds for every real A, integer or not.
    for trial in range(60):
        rng = np.random.default_rng(700 + trial)
        A = _random_coupling(rng)
        R = A.exp_at(1.0)
        s = float(rng.uniform(-2, 2))
        lhs = R.T @ metric_at(A, s - 1.0).Q @ R
        rhs = metric_at(A, s).Q
        assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


def test_metric_range_guard():
    A = CouplingMatrix([[1.0]])
    with pytest.raises(MetricRangeError):
        metric_at(A, 351.0)
    metric_at(A, 349.0)  # inside the guard this must still work


def test_hamiltonian_frozen_value():
    A = CouplingMatrix(np.zeros((2, 2)))
    V = FourierPotential(0.0, [1.0])
    z = PhasePoint([0.1, 0.2], 0.3, [0.4, -0.1], 0.5)
    # 0.5 (0.16 + 0.01) + 0.125 + cos(0.6 pi)
    assert hamiltonian(A, V, z) == pytest.approx(-0.09901699437494732, abs=1e-15)


def test_riemannian_norm():
    A0 = CouplingMatrix(np.zeros((2, 2)))
    m = metric_at(A0, 1.3)
    ones = np.ones(2)
    assert riemannian_norm(m, ones, 1.0, ones, 1.0) == pytest.approx(
        np.sqrt(6.0), rel=1e-15
    )
    A = CouplingMatrix([[0.5]])
    m = metric_at(A, 1.0)
    e = np.exp(1.0)
    expect = np.sqrt(e + 2.0 + 1.0 / e)
    one = np.ones(1)
    assert riemannian_norm(m, one, 1.0, one, 1.0) == pytest.approx(expect, rel=1e-13)


def test_automorphism_check():
    assert check_integer_automorphism(CouplingMatrix(A_CAT))
    chk = check_integer_automorphism(CouplingMatrix(A_CAT))
    assert np.array_equal(chk.rounded, np.array([[2, 1], [1, 1]]))
    assert check_integer_automorphism(CouplingMatrix(np.zeros((3, 3))))
    assert check_integer_automorphism(CouplingMatrix([[0.0, 1.0], [0.0, 0.0]]))
    assert not check_integer_automorphism(CouplingMatrix([[0.3, 0.0], [0.0, 0.3]]))


def test_deck_transform_cat():
    A = CouplingMatrix(A_CAT)
    z = PhasePoint([0.3, 0.7], 0.2, [1.0, 0.0], 0.4)
    w = deck_transform(A, z, 1)
    R = np.array([[2.0, 1.0], [1.0, 1.0]])
    assert np.abs(w.x - (R @ z.x) % (2 * np.pi)).max() < 1e-14
    assert w.s == pytest.approx(-0.8, abs=1e-15)
    # momenta transform by the inverse transpose: (1, 0) -> (1, -1)
    assert np.abs(w.p - np.array([1.0, -1.0])).max() < 1e-14
    assert w.p_s == z.p_s


def test_deck_transform_composition_and_inverse():
    A = CouplingMatrix(A_CAT)
    rng = np.random.default_rng(11)
    for _ in range(10):
        z = PhasePoint(
            rng.uniform(0, 2 * np.pi, 2), rng.uniform(-2, 2),
            rng.normal(size=2), rng.normal(),
        )
        twice = deck_transform(A, deck_transform(A, z, 1), 1)
        direct = deck_transform(A, z, 2)
        assert np.abs(twice.flat() - direct.flat()).max() < 1e-12
        back = deck_transform(A, deck_transform(A, z, 1), -1)
        assert np.abs(back.flat() - z.normalize().flat()).max() < 1e-12


def test_deck_transform_preserves_energy():
    V = FourierPotential(0.2, [1.0], [0.3])
    for A in (CouplingMatrix(A_CAT), CouplingMatrix([[0.0, 1.0], [0.0, 0.0]])):
        rng = np.random.default_rng(13)
        for _ in range(25):
            z = PhasePoint(
                rng.uniform(0, 2 * np.pi, 2), rng.uniform(-1.5, 1.5),
                rng.uniform(-1, 1, 2), rng.uniform(-2, 2),
            )
            H0 = hamiltonian(A, V, z)
            for k in (-2, -1, 1, 2):
                Hk = hamiltonian(A, V, deck_transform(A, z, k))
                assert abs(Hk - H0) < 1e-12 * max(1.0, abs(H0))


def test_deck_transform_rejects_non_automorphism():
    A = CouplingMatrix([[0.3, 0.0], [0.0, 0.3]])
    z = PhasePoint([0.0, 0.0], 0.0, [0.0, 0.0], 0.0)
    with pytest.raises(NotAnAutomorphismError):
        deck_transform(A, z, 1)


def test_wrap_to_fundamental():
    A = CouplingMatrix(A_CAT)
    V = FourierPotential(0.0, [1.0])
    z = PhasePoint([0.3, 0.7], 2.3, [1.0, 0.0], 0.4)
    w = wrap_to_fundamental(A, z)
    assert 0.0 <= w.s < 1.0
    assert w.s == pytest.approx(0.3, abs=1e-12)
    assert abs(hamiltonian(A, V, w) - hamiltonian(A, V, z)) < 1e-12
    w2 = wrap_to_fundamental(A, PhasePoint([0.3, 0.7], -0.2, [1.0, 0.0], 0.4))
    assert w2.s == pytest.approx(0.8, abs=1e-12)


def test_phase_point_basics():
    z = PhasePoint([0.1, 0.2], 0.3, [0.4, -0.1], 0.5)
    assert z.n == 2
    back = PhasePoint.from_flat(z.flat(), 2)
    assert np.abs(back.flat() - z.flat()).max() == 0.0
    with pytest.raises(ValueError):
        z.x[0] = 9.0  # arrays are frozen
    with pytest.raises(ValueError):
        PhasePoint([0.1], 0.0, [0.1, 0.2], 0.0)  # mismatched lengths
    with pytest.raises(ValueError):
        PhasePoint([0.1], np.nan, [0.1], 0.0)
