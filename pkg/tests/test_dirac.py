import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eveneta.clifford import build_clifford
from eveneta.dirac import (KERNEL_TOL, FamilyHandle, SpectralData, dirac_block, family_spectrum,
                           galerkin_family, galerkin_family_matrix, invertibility_scan,
                           multiplication_matrix)
from eveneta.torus import TorusSpec, UnitaryMapSpec, maurer_cartan, mode_set

from conftest import rotated_product


def test_single_mode_block():
    spec = TorusSpec(2, (0.5, 0.5))
    h = FamilyHandle(spec, UnitaryMapSpec.from_character((0, 0)), cutoff=0)
    sd = family_spectrum(h, 0.0)
    assert np.allclose(sd.values, [-np.pi * np.sqrt(2), np.pi * np.sqrt(2)])


def test_dirac_block_squares_to_laplacian():
    rep = build_clifford(2)
    v = np.array([0.3, -1.2])
    B = dirac_block(rep, v)
    assert np.allclose(B, B.conj().T)
    assert np.allclose(B @ B, (2 * np.pi) ** 2 * (v @ v) * np.eye(2))


def test_minimum_gap_of_the_shift_family(symmetric_spec, shift_map):
    scan = invertibility_scan(FamilyHandle(symmetric_spec, shift_map, cutoff=4))
    assert scan.invertible
    assert scan.min_gap == pytest.approx(np.pi, abs=1e-8)
    assert scan.s_min == pytest.approx(0.5, abs=1e-5)


def test_scan_detects_a_kernel(shift_map):
    spec = TorusSpec(2, (0.0, 0.0))
    scan = invertibility_scan(FamilyHandle(spec, shift_map, cutoff=3))
    assert not scan.invertible and scan.min_gap < 1e-9


def test_scan_grid_must_cover_interval(twisted_handle):
    with pytest.raises(ValueError):
        invertibility_scan(twisted_handle, s_grid=[0.2, 0.8])


@pytest.mark.parametrize("s", [0.0, 0.31, 0.77, 1.0])
def test_galerkin_matches_exact_character_spectrum(twisted_spec, shift_map, s):
    h = FamilyHandle(twisted_spec, shift_map, cutoff=4)
    exact = family_spectrum(h, s)
    gal = family_spectrum(h.with_method("galerkin"), s)
    assert np.abs(exact.values - gal.values).max() < 1e-8


def test_galerkin_family_is_hermitian(symmetric_spec, product_map):
    fam = galerkin_family(FamilyHandle(symmetric_spec, product_map, method="galerkin", cutoff=3))
    for s in (0.0, 0.4, 1.0):
        assert fam.hermiticity(s) < 1e-12 * np.linalg.norm(fam.matrix(s))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1))
def test_even_dimensional_spectra_are_symmetric(s):
    g = rotated_product()
    h = FamilyHandle(TorusSpec(2, (0.5, 0.0), (0.0, 0.2)), g, method="galerkin", cutoff=2)
    ev = family_spectrum(h, s).values
    assert np.allclose(np.sort(ev), np.sort(-ev), atol=1e-9)


@pytest.mark.parametrize("name", ["su2_map", "product_map"])
def test_endpoint_operators_are_gauge_equivalent(symmetric_spec, name, request):
    # D_1 = g^{-1} D_0 g, so low eigenvalues agree away from the box edge
    g = request.getfixturevalue(name)
    h = FamilyHandle(symmetric_spec, g, method="galerkin", cutoff=6)
    a = np.sort(np.abs(family_spectrum(h, 0.0).values))[:16]
    b = np.sort(np.abs(family_spectrum(h, 1.0).values))[:16]
    assert np.allclose(a, b, atol=1e-8)


def test_character_multiplication_is_the_index_shift(twisted_spec):
    g = UnitaryMapSpec.from_character((1, -1))
    M = multiplication_matrix(g, twisted_spec, 2, target_cutoff=3)
    src, dst = mode_set(twisted_spec, 2), mode_set(twisted_spec, 3).index()
    for j, n in enumerate(src.integers):
        i = dst[(int(n[0]) + 1, int(n[1]) - 1)]
        assert M[i, j] == 1
    assert np.allclose(M.conj().T @ M, np.eye(M.shape[1]))


def test_galerkin_matrix_entry_point(twisted_spec, shift_map):
    h = FamilyHandle(twisted_spec, shift_map, method="galerkin", cutoff=2)
    A = galerkin_family_matrix(h, 0.5)
    assert A.shape == (2 * 25, 2 * 25)


def test_handle_validation(twisted_spec, su2_map):
    with pytest.raises(ValueError):
        FamilyHandle(twisted_spec, su2_map)  # exact method needs a character
    with pytest.raises(ValueError):
        FamilyHandle(twisted_spec, UnitaryMapSpec.from_character((1, 0, 0)))
    with pytest.raises(ValueError):
        FamilyHandle(twisted_spec, su2_map, method="fft")


def test_low_cutoff_warns(symmetric_spec):
    g = rotated_product(3)
    with pytest.warns(UserWarning):
        galerkin_family(FamilyHandle(symmetric_spec, g, method="galerkin", cutoff=2))


class TestSpectralData:
    def test_sorting_and_kernel(self):
        sd = SpectralData.from_eigenvalues([3.0, -1.0, 0.0, 2.0], [1, 2, 3, 1])
        assert list(sd.values) == [-1.0, 0.0, 2.0, 3.0]
        assert sd.kernel_dimension == 3
        assert sd.kernel_tol == KERNEL_TOL
        assert list(sd.expanded()) == [-1.0, -1.0, 0.0, 0.0, 0.0, 2.0, 3.0]

    def test_smallest_and_negation(self):
        sd = SpectralData.from_eigenvalues([5.0, -0.5, 2.0])
        assert list(sd.smallest(2)) == [-0.5, 2.0]
        assert list(sd.negated().values) == [-5.0, -2.0, 0.5]

    def test_concatenate(self):
        a = SpectralData.from_eigenvalues([1.0])
        b = SpectralData.from_eigenvalues([-1.0], [2])
        c = SpectralData.concatenate([a, b], cutoff=3)
        assert list(c.expanded()) == [-1.0, -1.0, 1.0] and c.metadata["cutoff"] == 3

    def test_bad_multiplicity(self):
        with pytest.raises(ValueError):
            SpectralData.from_eigenvalues([1.0], [0])


def test_product_map_has_varying_maurer_cartan_form(product_map):
    assert maurer_cartan(product_map).max_frequency >= 1
