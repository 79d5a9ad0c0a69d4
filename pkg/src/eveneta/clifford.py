"""Concrete Clifford representations in dimensions 1-3.

All sign conventions used elsewhere in the package are fixed here:

* dim 1: ``c1 = i``
* dim 2: ``c1 = i*sigma_x``, ``c2 = i*sigma_y``, chirality ``Gamma = sigma_z``
* dim 3: ``cj = i*sigma_j``

Generators are skew-adjoint and square to ``-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True)
class CliffordRep:
    dim: int
    generators: tuple[np.ndarray, ...]
    chirality: np.ndarray | None = field(default=None)

    @property
    def size(self) -> int:
        return self.generators[0].shape[0]


def build_clifford(dim: int) -> CliffordRep:
    if dim == 1:
        return CliffordRep(1, (np.array([[1j]]),))
    if dim == 2:
        return CliffordRep(2, (1j * SIGMA_X, 1j * SIGMA_Y), SIGMA_Z.copy())
    if dim == 3:
        return CliffordRep(3, tuple(1j * s for s in PAULI))
    raise ValueError(f"unsupported Clifford dimension {dim}; supported range is 1..3")


def clifford_mult(rep: CliffordRep, v) -> np.ndarray:
    """Return ``sum_j v_j c_j``."""
    v = np.asarray(v)
    if v.shape != (rep.dim,):
        raise ValueError(f"covector has {v.shape} components, representation has dim {rep.dim}")
    out = np.zeros((rep.size, rep.size), dtype=complex)
    for vj, cj in zip(v, rep.generators):
        out += vj * cj
    return out


def supertrace(rep: CliffordRep, M) -> complex:
    if rep.chirality is None:
        raise ValueError(f"supertrace needs a chirality grading; dim {rep.dim} is odd")
    M = np.asarray(M)
    if M.shape != (rep.size, rep.size):
        raise ValueError(f"matrix shape {M.shape} does not match representation size {rep.size}")
    return complex(np.trace(rep.chirality @ M))


def relation_residual(rep: CliffordRep) -> float:
    """Max deviation from ``c_j c_k + c_k c_j = -2 delta_jk`` and skew-adjointness."""
    eye = np.eye(rep.size)
    worst = 0.0
    for j, cj in enumerate(rep.generators):
        worst = max(worst, np.abs(cj.conj().T + cj).max())
        for k, ck in enumerate(rep.generators):
            target = -2.0 * eye if j == k else 0.0 * eye
            worst = max(worst, np.abs(cj @ ck + ck @ cj - target).max())
    if rep.chirality is not None:
        G = rep.chirality
        worst = max(worst, np.abs(G - G.conj().T).max(), np.abs(G @ G - eye).max())
        for cj in rep.generators:
            worst = max(worst, np.abs(G @ cj + cj @ G).max())
    return float(worst)


# Normal direction of a product ``I x T^2`` (interval or circle coordinate first):
# c(d/dx) = NORMAL_SIGN * i * Gamma.  With this orientation the cylinder, mapping-torus
# and superconnection routes produce the same sign of the eta invariant.
NORMAL_SIGN = -1


def normal_clifford(gamma: np.ndarray) -> np.ndarray:
    return NORMAL_SIGN * 1j * gamma


def product_generators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generators ``(c(d/dx), c(d/dx_1), c(d/dx_2))`` on ``I x T^2``.

    Built as ``c(d/dx_j) = c(d/dx) e_j`` from the dim-2 representation; in terms of
    the dim-3 representation they are ``(-c_3, c_2, -c_1)``.
    """
    rep = build_clifford(2)
    cx = normal_clifford(rep.chirality)
    return (cx, cx @ rep.generators[0], cx @ rep.generators[1])
