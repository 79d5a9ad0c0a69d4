import numpy as np
import pytest

from eveneta.dirac import FamilyHandle
from eveneta.torus import TorusSpec, UnitaryMapSpec


@pytest.fixture
def twisted_spec():
    return TorusSpec(2, (0.5, 0.5), (0.0, 0.3))


@pytest.fixture
def symmetric_spec():
    return TorusSpec(2, (0.5, 0.5))


@pytest.fixture
def shift_map():
    return UnitaryMapSpec.from_character((1, 0))


@pytest.fixture
def su2_map():
    """A non-abelian loop ``exp(2 pi i x_1 sigma_3)`` conjugated by a fixed rotation."""
    c, s = np.cos(0.4), np.sin(0.4)
    R = np.array([[c, -s], [s, c]], dtype=complex)
    return UnitaryMapSpec.from_coefficients(
        {(1, 0): R @ np.diag([1, 0]) @ R.T, (-1, 0): R @ np.diag([0, 1]) @ R.T})


@pytest.fixture
def twisted_handle(twisted_spec, shift_map):
    return FamilyHandle(twisted_spec, shift_map, cutoff=16)


def rotated_product(freq: int = 1) -> UnitaryMapSpec:
    """``R_1 diag(e(f x), 1) R_1^T R_2 diag(1, e(f y)) R_2^T``; its Maurer-Cartan form is not constant."""
    def rot(t):
        return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]], dtype=complex)
    R1, R2 = rot(0.4), rot(1.1)
    P, Q = np.diag([1, 0]), np.diag([0, 1])
    a = UnitaryMapSpec.from_coefficients({(freq, 0): R1 @ P @ R1.T, (0, 0): R1 @ Q @ R1.T})
    b = UnitaryMapSpec.from_coefficients({(0, 0): R2 @ P @ R2.T, (0, freq): R2 @ Q @ R2.T})
    return a.product(b)


@pytest.fixture
def product_map():
    return rotated_product()


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import RESULTS, line
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(line(n))
