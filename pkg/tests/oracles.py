"""Reference values computed independently of the package."""

import itertools

import mpmath
import numpy as np


def signed_lattice_sum(a: float) -> float:
    """Zeta-regularized ``sum_{n in Z} sign(n + a)`` for ``0 < a < 1``, via Hurwitz zeta."""
    return float(mpmath.zeta(0, a) - mpmath.zeta(0, 1 - a))


def shifted_lattice_eta(theta: float) -> float:
    """``eta`` of ``{2 pi (n + theta)}``: the signed sum with all eigenvalues nonzero."""
    return signed_lattice_sum(theta)


def row_integral_eta_bar(m, shift) -> float:
    """Reduced eta of the torus family for an axis character, by summing rows first.

    For ``m = (m1, 0)`` the integrand ``-(1/2pi) (m x v)/|v|^2`` summed over a row of
    fixed ``k_2`` and integrated over ``s`` is ``-(m1/2) sign(k_2)`` exactly; the
    remaining sum over ``k_2`` is the regularized signed lattice sum.
    """
    m1, m2 = m
    if m1 and m2:
        raise ValueError("oracle covers axis characters only")
    if m1:
        return -0.5 * m1 * signed_lattice_sum(shift[1] % 1.0)
    return 0.5 * m2 * signed_lattice_sum(shift[0] % 1.0)


def wilson_map(mass: float):
    """``T^3 -> SU(2)``, ``(a_0 + i sum_j sin(2 pi x_j) sigma_j)/|a|`` with ``a_0 = mass - sum cos``."""
    sig = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]])]

    def g(pts):
        a0 = mass - np.cos(2 * np.pi * pts).sum(axis=-1)
        s = np.sin(2 * np.pi * pts)
        norm = np.sqrt(a0 ** 2 + (s ** 2).sum(axis=-1))
        out = a0[..., None, None] * np.eye(2)
        for j in range(3):
            out = out + 1j * s[..., j, None, None] * sig[j]
        return out / norm[..., None, None]
    return g


def wilson_degree(mass: float) -> int:
    """Signed count of preimages of the identity under the Wilson map.

    ``g = 1`` needs every ``sin(2 pi x_j) = 0`` and ``a_0 > 0``; at such a corner the
    differential is ``diag(2 pi cos(2 pi x_j))`` up to a positive factor.
    """
    total = 0
    for corner in itertools.product((0.0, 0.5), repeat=3):
        c = np.cos(2 * np.pi * np.array(corner))
        if mass - c.sum() > 0:
            total += int(np.prod(np.sign(c)))
    return total


def dense_sampling_flow(family, samples: int = 4001) -> tuple[int, int, int]:
    """Net, upward and downward zero crossings from eigenvalue counts on a dense grid."""
    s = np.linspace(0.0, 1.0, samples)
    neg = np.array([np.sum(np.linalg.eigvalsh(family(x)) < 0) for x in s])
    steps = -np.diff(neg)
    return int(steps.sum()), int(steps[steps > 0].sum()), int(-steps[steps < 0].sum())
