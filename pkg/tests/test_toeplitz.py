import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from eveneta.toeplitz import (QuadratureError, ToeplitzMismatchError, ToeplitzProblem,
                              fredholm_index, hardy_projection, odd_chern_pairing,
                              toeplitz_operator, verify_toeplitz)
from eveneta.torus import UnitaryMapSpec

from oracles import wilson_degree, wilson_map


def char(k):
    return UnitaryMapSpec.from_character((k,))


def split_loop(k, slot):
    """``e^{ikx}`` on one coordinate line of ``C^2``, identity on the other."""
    P = np.diag([1.0, 0.0]) if slot == 0 else np.diag([0.0, 1.0])
    coeffs = {(k,): P.astype(complex)}
    coeffs[(0,)] = coeffs.get((0,), 0) + np.eye(2) - P
    return UnitaryMapSpec.from_coefficients(coeffs)


def test_hardy_projection():
    hp = hardy_projection(0.0, 3)
    assert hp.rank == 4 and list(hp.retained_modes) == [0, 1, 2, 3]
    hp = hardy_projection(0.4, 3)
    assert list(hp.retained_modes) == [0, 1, 2, 3]
    assert np.allclose(hp.matrix @ hp.matrix, hp.matrix)
    assert np.allclose(hp.eigenvalues, 2 * np.pi * (np.arange(-3, 4) + 0.4))


def test_shift_is_the_unilateral_shift():
    T = toeplitz_operator(ToeplitzProblem(char(1), cutoff=6))
    assert np.allclose(T, np.eye(7, k=-1))


@pytest.mark.parametrize("k", range(-3, 4))
def test_character_index(k):
    index, info = fredholm_index(ToeplitzProblem(char(k), cutoff=16))
    assert index == -k
    assert info["stability_delta"] == 0
    assert (info["kernel"], info["cokernel"]) == (max(-k, 0), max(k, 0))


@pytest.mark.parametrize("theta", [0.0, 0.25, 0.9])
def test_index_is_independent_of_the_twist(theta):
    assert fredholm_index(ToeplitzProblem(char(2), cutoff=12, theta=theta))[0] == -2


def test_matrix_loop():
    g = UnitaryMapSpec.from_coefficients({(1,): np.diag([1, 0]), (-2,): np.diag([0, 1])})
    U = unitary_group.rvs(2, random_state=3)
    for h in (g, g.conjugate_by(U)):
        report = verify_toeplitz(ToeplitzProblem(h, cutoff=16))
        assert report.spectral_index == 1
        assert report.pairing_value == pytest.approx(1.0, abs=1e-10)


def test_non_polynomial_loop():
    # a Blaschke-like loop with a full Fourier tail, truncated where coefficients vanish
    r = 0.3
    n = np.arange(0, 40)
    coeffs = {(0,): [[-r]]}
    coeffs.update({(int(j + 1),): [[(1 - r * r) * r ** j]] for j in n})
    g = UnitaryMapSpec.from_coefficients(coeffs)
    assert odd_chern_pairing(g, resolution=256)[0] == pytest.approx(-1.0, abs=1e-6)
    assert fredholm_index(ToeplitzProblem(g, cutoff=48))[0] == -1


@settings(max_examples=15, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 1000))
def test_pairing_is_additive(a, b, seed):
    U = unitary_group.rvs(2, random_state=seed)
    g = split_loop(a, 0).conjugate_by(U)
    h = split_loop(b, 1)
    pg, ph, pgh = (odd_chern_pairing(x)[0] for x in (g, h, g.product(h)))
    assert pg == pytest.approx(-a, abs=1e-9) and ph == pytest.approx(-b, abs=1e-9)
    assert pgh == pytest.approx(pg + ph, abs=1e-9)


@pytest.mark.parametrize("mass", [2.0, -2.0, 0.5, 4.0])
def test_three_torus_pairing_against_preimage_count(mass):
    value, err = odd_chern_pairing(wilson_map(mass), dim=3, resolution=32, tol=1e-6)
    assert err < 1e-6
    assert value == pytest.approx(wilson_degree(mass), abs=1e-6)


def test_quadrature_error_is_reported():
    with pytest.raises(QuadratureError):
        odd_chern_pairing(wilson_map(1.05), dim=3, resolution=6, tol=1e-8)


def test_three_torus_spectral_index_is_not_available():
    g = UnitaryMapSpec.from_coefficients({(1, 0, 0): [[1.0]]})
    with pytest.raises(NotImplementedError):
        fredholm_index(ToeplitzProblem(g, cutoff=4, base="T3"))


def test_problem_validation():
    with pytest.raises(ValueError):
        ToeplitzProblem(char(5), cutoff=5)
    with pytest.raises(ValueError):
        ToeplitzProblem(char(1), theta=1.0)
    with pytest.raises(ValueError):
        ToeplitzProblem(char(1), base="T3")


def test_mismatch_is_raised(monkeypatch):
    import eveneta.toeplitz as tp
    monkeypatch.setattr(tp, "odd_chern_pairing", lambda g: (5.0, 0.0))
    with pytest.raises(ToeplitzMismatchError):
        verify_toeplitz(ToeplitzProblem(char(1), cutoff=8))
