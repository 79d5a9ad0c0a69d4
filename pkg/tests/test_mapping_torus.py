import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from eveneta.dirac import (END_FRACTION, MappingTorusProblem, _gluing_gauge, _orbit_chains,
                           mapping_torus_self_convergence, mapping_torus_spectrum)
from eveneta.torus import TorusSpec, UnitaryMapSpec, mode_set


def product_spectrum(spec, cutoff, circle_shift, bound):
    j = np.arange(-12, 13) + circle_shift
    k = mode_set(spec, cutoff).momenta
    r = 2 * np.pi * np.sqrt(j[:, None] ** 2 + (k ** 2).sum(axis=1)[None, :]).ravel()
    r = r[r < bound]
    return np.sort(np.concatenate([r, -r]))


@pytest.mark.parametrize("spin,shift", [("periodic", 0.0), ("antiperiodic", 0.5)])
@pytest.mark.parametrize("degree", [20, 21])
def test_trivial_bundle_is_a_product(twisted_spec, spin, shift, degree):
    p = MappingTorusProblem(twisted_spec, UnitaryMapSpec.from_character((0, 0)),
                            circle_points=degree, cutoff=3, circle_spin=spin)
    ev = np.sort(mapping_torus_spectrum(p, lambda_cut=12.0).expanded())
    exact = product_spectrum(twisted_spec, 3, shift, 12.0)
    assert len(ev) == len(exact)
    assert np.abs(ev - exact).max() < 1e-8


@pytest.mark.slow
def test_constant_map_through_the_general_path(symmetric_spec):
    beta = 0.25
    g = UnitaryMapSpec.constant([[np.exp(2j * np.pi * beta)]], 2)
    p = MappingTorusProblem(symmetric_spec, g, circle_points=20, cutoff=2)
    sd = mapping_torus_spectrum(p, lambda_cut=10.0)
    ev = np.sort(sd.expanded())
    exact = product_spectrum(symmetric_spec, 2, -beta, 10.0)
    assert len(ev) == len(exact)
    assert np.abs(ev - exact).max() < 1e-8
    assert sd.metadata["gluing_unitarity_defect"] < 1e-12


def test_orbits_partition_the_mode_box(twisted_spec):
    chains, truncated = _orbit_chains(twisted_spec, (1, 0), 4)
    flat = [n for c in chains for n in c]
    assert len(flat) == len(set(flat)) == 81
    assert truncated == len(chains) == 9
    for c in chains:
        assert all(b[0] - a[0] == 1 and b[1] == a[1] for a, b in zip(c, c[1:]))


def test_shift_bundle_spectrum_bookkeeping(twisted_spec, shift_map):
    p = MappingTorusProblem(twisted_spec, shift_map, circle_points=20, cutoff=4)
    sd = mapping_torus_spectrum(p, lambda_cut=15.0)
    md = sd.metadata
    assert md["truncation_scale"] <= 15.0
    assert np.all(np.abs(sd.values) < 15.0)
    assert sum(len(b) for b in md["blocks"]) == len(sd.expanded())
    # |lambda| >= 2 pi |k_2| on every orbit, and the lowest Landau-type level sits at 2 pi k_2
    assert np.abs(sd.values).min() == pytest.approx(2 * np.pi * 0.2, abs=1e-6)


def test_end_states_are_one_per_orbit(twisted_spec, shift_map):
    p = MappingTorusProblem(twisted_spec, shift_map, circle_points=24, cutoff=5)
    sd = mapping_torus_spectrum(p, lambda_cut=12.0)
    active = len(sd.metadata["blocks"])
    assert sd.metadata["end_states_removed"] == active
    assert 0 < END_FRACTION < 1


def test_self_convergence_certificate(twisted_spec, shift_map):
    p = MappingTorusProblem(twisted_spec, shift_map, circle_points=24, cutoff=5)
    cert = mapping_torus_self_convergence(p, lambda_cut=12.0, count=10)
    assert cert.passed and cert.refined_points == 48 and cert.max_change < 1e-6


@pytest.mark.parametrize("kwargs", [dict(circle_spin="twisted"), dict(gauge="step")])
def test_problem_validation(twisted_spec, shift_map, kwargs):
    with pytest.raises(ValueError):
        MappingTorusProblem(twisted_spec, shift_map, **kwargs)


def test_only_two_dimensional_fibres(shift_map):
    with pytest.raises(ValueError):
        MappingTorusProblem(TorusSpec(1, (0.0,)), UnitaryMapSpec.from_character((1,)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_gluing_gauge_avoids_real_axis(n, seed):
    U = unitary_group.rvs(n, random_state=seed) if n > 1 else np.array([[np.exp(1j * seed)]])
    alpha = _gluing_gauge(U)
    mu = np.linalg.eigvals(np.exp(-1j * alpha) * U)
    # n phases leave a gap of at least pi/n between consecutive doubled angles
    assert np.abs(np.angle(mu ** 2)).min() > np.pi / (2 * n) - 0.2
