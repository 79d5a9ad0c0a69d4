import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eveneta.dirac import FamilyHandle, SpectralData
from eveneta.eta import (DEFAULT_WINDOW, EtaConvergenceError, EtaResult, InvertibilityError,
                         default_regulator,
                         SpectralFlowError, eta_form_degree_one, eta_invariant, smoothed_eta,
                         spectral_flow, synthetic_family, thm34_eta, thm34_integrand)
from eveneta.torus import TorusSpec, UnitaryMapSpec

from oracles import dense_sampling_flow, row_integral_eta_bar, shifted_lattice_eta


def lattice(theta, cutoff=2000):
    n = np.arange(-cutoff, cutoff + 1)
    return SpectralData.from_eigenvalues(2 * np.pi * (n + theta), cutoff=cutoff)


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.7])
def test_shifted_lattice_against_hurwitz(theta):
    res = eta_invariant(lattice(theta))
    expected = shifted_lattice_eta(theta)
    assert expected == pytest.approx(1 - 2 * theta, abs=1e-12)
    assert abs(res.eta - expected) < 1e-3
    assert res.error_estimate < 1e-3


def test_single_eigenvalue_with_kernel():
    sd = SpectralData.from_eigenvalues([0.0, 1.0])
    res = eta_invariant(sd)
    assert res.kernel_dimension == 1
    assert res.reduced_eta == pytest.approx(1.0, abs=1e-5)
    assert res.reduced_eta == (res.kernel_dimension + res.eta) / 2


@settings(max_examples=40)
@given(st.lists(st.floats(0.5, 500), min_size=1, max_size=30), st.integers(0, 3))
def test_symmetric_spectra_give_zero(pos, kernel):
    vals = np.concatenate([pos, -np.array(pos), np.zeros(kernel)])
    res = eta_invariant(SpectralData.from_eigenvalues(vals))
    assert res.eta == 0.0
    assert res.reduced_eta == kernel / 2


@settings(max_examples=40)
@given(st.lists(st.floats(-300, 300).filter(lambda x: abs(x) > 0.1), min_size=1, max_size=20),
       st.integers(0, 4))
def test_reduced_relation(vals, kernel):
    res = eta_invariant(SpectralData.from_eigenvalues(np.concatenate([vals, np.zeros(kernel)])),
                        error_ceiling=np.inf)
    assert res.reduced_eta == (res.kernel_dimension + res.eta) / 2
    assert res.kernel_dimension == kernel


@settings(max_examples=30)
@given(st.lists(st.floats(-50, 50).filter(lambda x: abs(x) > 1e-3), min_size=1, max_size=20),
       st.floats(1e-4, 1.0))
def test_smoothed_eta_is_odd_and_bounded(vals, tau):
    sd = SpectralData.from_eigenvalues(vals)
    a = smoothed_eta(sd, tau)
    assert a == pytest.approx(-smoothed_eta(sd.negated(), tau), abs=1e-9)
    assert abs(a) <= len(vals) + 1e-12


def test_window_validation():
    with pytest.raises(ValueError):
        eta_invariant(lattice(0.3, 10), window=(0.01, 0.02))
    with pytest.raises(ValueError):
        smoothed_eta(lattice(0.3, 10), 0.0)


def test_truncated_spectrum_is_refused():
    sd = SpectralData.from_eigenvalues([1.0, 2.0], truncation_scale=5.0)
    with pytest.raises(EtaConvergenceError, match="complete only below"):
        eta_invariant(sd, window=DEFAULT_WINDOW)


def test_from_reduced_round_trip():
    r = EtaResult.from_reduced(0.3, 1e-6, note="x")
    assert r.reduced_eta == pytest.approx(0.3)
    assert r.as_dict()["regularization"] == {"note": "x"}


# spectral flow

def test_single_upward_crossing():
    r = spectral_flow(lambda s: np.array([[s - 0.5]]))
    assert (r.value, r.upward, r.downward) == (1, 1, 0)


def test_opposite_crossings_cancel():
    r = spectral_flow(lambda s: np.diag([s - 0.5, 0.5 - s]))
    assert (r.value, r.upward, r.downward) == (0, 1, 1)


def test_endpoint_zeros_use_one_sided_limits():
    assert spectral_flow(lambda s: np.array([[s]])).value == 0
    assert spectral_flow(lambda s: np.array([[s - 1.0]])).value == 0
    assert spectral_flow(lambda s: np.array([[-s]])).value == 0


def test_persistent_kernel_is_ignored():
    assert spectral_flow(lambda s: np.diag([0.0, s - 0.3])).value == 1


def test_sampled_family_uses_endpoint_counts():
    pts = [(0.0, np.diag([-1.0, 2.0])), (1.0, np.diag([1.0, 2.0]))]
    assert spectral_flow(pts).value == 1
    with pytest.raises(ValueError):
        spectral_flow([(1.0, np.eye(1)), (0.0, np.eye(1))])


def test_avoided_crossing_is_not_counted():
    def fam(s):
        return np.array([[s - 0.5, 0.05], [0.05, 0.5 - s]])
    assert spectral_flow(fam).value == 0


def test_crossing_on_a_grid_node():
    r = spectral_flow(lambda s: np.diag([s - 0.5, 0.3 - s, 1.0]), s_grid=np.linspace(0, 1, 11))
    assert (r.value, r.upward, r.downward) == (0, 1, 1)


def test_tangency_is_not_a_crossing():
    r = spectral_flow(lambda s: np.array([[(s - 0.5) ** 2]]), s_grid=[0.0, 0.5, 1.0], margin=1e-3)
    assert r.value == 0


def test_eigenvalue_hugging_zero_raises():
    with pytest.raises(SpectralFlowError):
        spectral_flow(lambda s: np.array([[1e-7]]), max_depth=6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_synthetic_families_match_dense_sampling(seed):
    fam = synthetic_family(seed)
    r = spectral_flow(fam)
    net, up, down = dense_sampling_flow(fam, 801)
    assert r.value == net == fam.expected_flow
    assert abs(fam.expected_flow) == 1


# double-integral formula

@pytest.mark.parametrize("m,twist", [((1, 0), (0.0, 0.3)), ((1, 0), (0.0, 0.1)), ((-1, 0), (0.0, 0.3)),
                                     ((2, 0), (0.0, 0.3)), ((0, 1), (0.2, 0.0))])
def test_thm34_against_row_integral_oracle(m, twist):
    spec = TorusSpec(2, (0.5, 0.5), twist)
    h = FamilyHandle(spec, UnitaryMapSpec.from_character(m), cutoff=16)
    res = thm34_eta(h)
    expected = row_integral_eta_bar(m, spec.shift)
    assert abs(res.reduced_eta - expected) < 1e-4
    assert res.error_estimate < 1e-4


def test_integrand_vanishes_for_symmetric_lattice(symmetric_spec, shift_map):
    h = FamilyHandle(symmetric_spec, shift_map, cutoff=16)
    t0 = default_regulator(h, 16)
    for s in np.linspace(0, 1, 7):
        for t in (t0, 10 * t0, 0.1):
            assert abs(thm34_integrand(h, s, t)) < 1e-8


def test_thm34_galerkin_path_agrees(twisted_spec, shift_map):
    h = FamilyHandle(twisted_spec, shift_map, cutoff=3)
    a = thm34_eta(h).reduced_eta
    b = thm34_eta(h.with_method("galerkin")).reduced_eta
    assert abs(a - b) < 1e-8


def test_eta_form_integrates_to_thm34(twisted_handle):
    res = thm34_eta(twisted_handle)
    s = np.array(res.regularization["density_nodes"])
    d = np.array(res.regularization["density"])
    sample = eta_form_degree_one(twisted_handle, float(s[3]))
    assert sample.value == pytest.approx(d[3], abs=1e-10)


def test_thm34_refuses_singular_family(shift_map):
    h = FamilyHandle(TorusSpec(2, (0.0, 0.0)), shift_map, cutoff=4)
    with pytest.raises(InvertibilityError):
        thm34_eta(h)
    with pytest.raises(InvertibilityError):
        eta_form_degree_one(h, 0.0)
