import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eveneta.clifford import (NORMAL_SIGN, build_clifford, clifford_mult, normal_clifford,
                              product_generators, relation_residual, supertrace)

finite = st.floats(-10, 10, allow_nan=False)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_relations_hold_to_machine_precision(dim):
    assert relation_residual(build_clifford(dim)) < 1e-14


def test_unsupported_dimension():
    with pytest.raises(ValueError, match="supported range"):
        build_clifford(4)


def test_odd_dimension_volume_element():
    c = build_clifford(3).generators
    assert np.allclose(c[0] @ c[1] @ c[2], np.eye(2))


def test_supertrace_of_volume_element():
    rep = build_clifford(2)
    assert supertrace(rep, rep.generators[0] @ rep.generators[1]) == pytest.approx(-2j)
    assert supertrace(rep, np.eye(2)) == 0


def test_supertrace_needs_grading():
    with pytest.raises(ValueError):
        supertrace(build_clifford(3), np.eye(2))


def test_supertrace_shape_check():
    with pytest.raises(ValueError):
        supertrace(build_clifford(2), np.eye(3))


def test_covector_length_checked():
    with pytest.raises(ValueError):
        clifford_mult(build_clifford(2), [1.0, 2.0, 3.0])


@given(st.integers(1, 3).flatmap(lambda d: st.lists(finite, min_size=d, max_size=d)))
def test_clifford_square_is_minus_norm(v):
    rep = build_clifford(len(v))
    c = clifford_mult(rep, np.array(v))
    assert np.allclose(c @ c, -np.dot(v, v) * np.eye(rep.size), atol=1e-10)
    assert np.allclose(c.conj().T, -c)


@settings(max_examples=50)
@given(st.lists(finite, min_size=2, max_size=2))
def test_chirality_anticommutes(v):
    rep = build_clifford(2)
    c = clifford_mult(rep, np.array(v))
    assert np.allclose(rep.chirality @ c, -c @ rep.chirality)


def test_normal_direction_convention():
    rep = build_clifford(2)
    cx = normal_clifford(rep.chirality)
    assert NORMAL_SIGN == -1
    assert np.allclose(cx, -1j * rep.chirality)


def test_product_generators_form_a_clifford_module():
    gens = product_generators()
    for i, a in enumerate(gens):
        assert np.allclose(a.conj().T, -a)
        for j, b in enumerate(gens):
            target = -2 * np.eye(2) if i == j else np.zeros((2, 2))
            assert np.allclose(a @ b + b @ a, target)
    c3 = build_clifford(3).generators
    assert np.allclose(gens[0], -c3[2])
    assert np.allclose(gens[1], c3[1])
    assert np.allclose(gens[2], -c3[0])
