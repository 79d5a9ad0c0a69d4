"""Piecewise Legendre-Galerkin discretisation of ``c_n (d/du + H(u))``.

The operator acts on ``C^n``-valued functions on a chain of intervals, with
``c_n = -i Gamma`` (see :data:`eveneta.clifford.NORMAL_SIGN`).  Each segment carries an
affine transverse operator ``H(u) = sum_k f_k(u) H_k``.  Continuity between
segments, the boundary subspaces at the two ends and an optional twisted gluing
``phi(end) = G phi(start)`` are built into a hierarchical C0 basis, so the
reduced pencil ``(Z^* A Z, Z^* Z)`` is Hermitian / positive definite by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.polynomial import legendre as leg

from .clifford import normal_clifford


@dataclass
class Segment:
    length: float
    degree: int
    terms: Sequence[tuple[np.ndarray, Callable | None]] = field(default_factory=list)


@lru_cache(maxsize=64)
def _legendre_data(length: float, degree: int, nquad: int):
    xi, w = leg.leggauss(nquad)
    x = length * (xi + 1) / 2
    w = w * length / 2
    norm = np.sqrt((2 * np.arange(degree + 1) + 1) / length)
    V = leg.legvander(xi, degree) * norm
    if degree:
        dV = leg.legvander(xi, degree - 1) @ leg.legder(np.eye(degree + 1)) * (2 / length) * norm
    else:
        dV = np.zeros_like(V)
    D = (V * w[:, None]).T @ dV
    # hierarchical shape functions in orthonormal-Legendre coordinates
    P = np.sqrt(length / (2 * np.arange(degree + 1) + 1))
    shapes = np.zeros((degree + 1, degree + 1))
    shapes[0, 0], shapes[1, 0] = P[0] / 2, -P[1] / 2
    shapes[0, 1], shapes[1, 1] = P[0] / 2, P[1] / 2
    for i in range(2, degree + 1):
        col = np.zeros(degree + 1)
        col[i], col[i - 2] = P[i], -P[i - 2]
        shapes[:, i] = col / np.linalg.norm(col)
    return x, w, V, D, shapes


# dense pencils beyond this many unknowns need tens of GiB and hours of eigh
MAX_DENSE_DOF = 12000


def _nquad(degree: int) -> int:
    return degree + 8


def segment_matrix(seg: Segment, gamma: np.ndarray) -> np.ndarray:
    cn = normal_clifford(gamma)
    x, w, V, D, _ = _legendre_data(float(seg.length), seg.degree, _nquad(seg.degree))
    A = np.kron(cn, D).astype(complex)
    Vw = V * w[:, None]
    for Hk, f in seg.terms:
        R = Vw.T @ V if f is None else (Vw * np.asarray(f(x), dtype=float)[:, None]).T @ V
        A += np.kron(cn @ Hk, R)
    return A


def _basis_map(segments, n, left, right, gluing):
    """Sparse map from global hierarchical DOFs to stacked Legendre coefficients."""
    rows, cols, vals = [], [], []
    offsets = np.cumsum([0] + [n * (s.degree + 1) for s in segments])
    ndof = 0

    def node(basis):
        nonlocal ndof
        start = ndof
        ndof += basis.shape[1]
        return start, basis

    periodic = gluing is not None
    first = node(np.eye(n) if periodic else left)
    nodes = [first]
    bubble_starts = []
    for j, seg in enumerate(segments):
        bubble_starts.append(ndof)
        ndof += n * (seg.degree - 1)
        if j < len(segments) - 1:
            nodes.append(node(np.eye(n)))
    if periodic:
        nodes.append((first[0], gluing @ first[1]))
    else:
        nodes.append(node(right))

    for j, seg in enumerate(segments):
        p = seg.degree
        _, _, _, _, shapes = _legendre_data(float(seg.length), p, _nquad(p))
        base = offsets[j]
        for side, (start, basis) in ((0, nodes[j]), (1, nodes[j + 1])):
            for a in range(n):
                for d in range(basis.shape[1]):
                    coef = basis[a, d]
                    if coef == 0:
                        continue
                    for i in (0, 1):
                        rows.append(base + a * (p + 1) + i)
                        cols.append(start + d)
                        vals.append(coef * shapes[i, side])
        for a in range(n):
            for b in range(p - 1):
                col = bubble_starts[j] + a * (p - 1) + b
                shp = shapes[:, b + 2]
                nz = np.nonzero(shp)[0]
                rows.extend(base + a * (p + 1) + nz)
                cols.extend([col] * len(nz))
                vals.extend(shp[nz])
    return sp.csr_matrix((vals, (rows, cols)), shape=(offsets[-1], ndof), dtype=complex)


@dataclass
class ReducedOperator:
    H: np.ndarray
    M: np.ndarray
    hermiticity: float
    chain: tuple | None = None

    def eigenvalues(self) -> np.ndarray:
        H = (self.H + self.H.conj().T) / 2
        return sla.eigh(H, self.M, eigvals_only=True)

    def eigh(self):
        H = (self.H + self.H.conj().T) / 2
        return sla.eigh(H, self.M)

    def filtered_eigenvalues(self, tol: float) -> tuple[np.ndarray, int]:
        """Eigenvalues with index-defect zeros removed; also returns how many were dropped."""
        eigs = self.eigenvalues()
        if self.chain is None or not np.any(np.abs(eigs) < tol):
            return eigs, 0
        segments, n, left, right, gluing = self.chain
        k = exact_kernel_dimension(segments, n, left=left, right=right, gluing=gluing)
        return drop_spurious_zeros(eigs, k, tol)


def reduce_chain(segments: Sequence[Segment], gamma: np.ndarray, *, left=None, right=None,
                 gluing=None) -> ReducedOperator:
    """Assemble the boundary-reduced pencil for a chain of segments.

    ``left``/``right`` are ``n x r`` matrices whose orthonormal columns span the
    allowed boundary values; ``gluing`` replaces both with ``phi(end) = G phi(0)``.
    """
    n = gamma.shape[0]
    if gluing is None and (left is None or right is None):
        raise ValueError("need boundary subspaces at both ends or a gluing map")
    size = sum(n * (seg.degree + 1) for seg in segments)
    if size > MAX_DENSE_DOF:
        raise ValueError(
            f"discretisation has {size} unknowns ({n} transverse x {size // n} normal), above the "
            f"dense limit {MAX_DENSE_DOF}; lower the cutoff or the normal resolution")
    blocks = [segment_matrix(s, gamma) for s in segments]
    A = sp.block_diag(blocks, format="csr")
    Z = _basis_map(segments, n, left, right, gluing)
    ZH = Z.conj().T.tocsr()
    H = (ZH @ A @ Z).toarray()
    M = (ZH @ Z).toarray()
    scale = np.linalg.norm(H)
    herm = float(np.linalg.norm(H - H.conj().T) / scale) if scale else 0.0
    return ReducedOperator(H, M, herm, (list(segments), n, left, right, gluing))


def constraint_residual(segments, gamma, left, right, gluing, coeffs) -> float:
    """Largest violation of continuity / boundary conditions by a coefficient vector."""
    n = gamma.shape[0]
    vals = []
    off = 0
    for seg in segments:
        p = seg.degree
        norm = np.sqrt((2 * np.arange(p + 1) + 1) / seg.length)
        c = coeffs[off:off + n * (p + 1)].reshape(n, p + 1)
        ends = (c * norm) @ np.stack([(-1.0) ** np.arange(p + 1), np.ones(p + 1)], axis=1)
        vals.append(ends)
        off += n * (p + 1)
    worst = 0.0
    for a, b in zip(vals[:-1], vals[1:]):
        worst = max(worst, np.abs(a[:, 1] - b[:, 0]).max())
    if gluing is not None:
        worst = max(worst, np.abs(vals[-1][:, 1] - gluing @ vals[0][:, 0]).max())
    else:
        for Q, v in ((left, vals[0][:, 0]), (right, vals[-1][:, 1])):
            worst = max(worst, np.abs(v - Q @ (Q.conj().T @ v)).max())
    return float(worst)


def expand(segments, gamma, left, right, gluing, dof_vectors):
    """Map reduced eigenvectors back to stacked Legendre coefficients."""
    Z = _basis_map(segments, gamma.shape[0], left, right, gluing)
    return Z @ dof_vectors


def propagator(segments: Sequence[Segment], n: int) -> np.ndarray:
    """Fundamental matrix of ``phi' = -H(u) phi`` across the whole chain."""
    from scipy.integrate import solve_ivp

    U = np.eye(n, dtype=complex)
    for seg in segments:
        def rhs(u, y, seg=seg):
            H = sum((Hk if f is None else float(f(np.array([u]))[0]) * Hk) for Hk, f in seg.terms)
            Y = y[: n * n].reshape(n, n) + 1j * y[n * n:].reshape(n, n)
            dY = -H @ Y
            return np.concatenate([dY.real.ravel(), dY.imag.ravel()])
        y0 = np.concatenate([U.real.ravel(), U.imag.ravel()])
        sol = solve_ivp(rhs, (0.0, float(seg.length)), y0, method="DOP853", rtol=1e-11, atol=1e-13)
        y = sol.y[:, -1]
        U = y[: n * n].reshape(n, n) + 1j * y[n * n:].reshape(n, n)
    return U


def exact_kernel_dimension(segments, n, *, left=None, right=None, gluing=None, tol: float = 1e-7) -> int:
    """Dimension of the kernel of the continuous chain problem, from the propagator."""
    U = propagator(segments, n)
    if gluing is not None:
        sv = np.linalg.svd(U - gluing, compute_uv=False)
        return int(np.sum(sv < tol * max(1.0, sv.max())))
    UL = U @ left
    UL = UL / np.linalg.norm(UL, axis=0)
    Rperp = sla.null_space(right.conj().T)
    if Rperp.shape[1] == 0:
        return left.shape[1]
    sv = np.linalg.svd(Rperp.conj().T @ UL, compute_uv=False)
    sv = np.concatenate([sv, np.zeros(max(0, UL.shape[1] - len(sv)))])
    return int(np.sum(sv < tol))


def drop_spurious_zeros(eigs: np.ndarray, exact_kernel: int, tol: float) -> tuple[np.ndarray, int]:
    """Remove discrete zero eigenvalues in excess of the continuous kernel dimension.

    A symmetric Galerkin pencil with a chiral block structure can carry an index
    defect that shows up as exact extra zeros; they have no continuum partner.
    """
    zero = np.flatnonzero(np.abs(eigs) < tol)
    excess = len(zero) - exact_kernel
    if excess <= 0:
        return eigs, 0
    drop = zero[np.argsort(np.abs(eigs[zero]))][:excess]
    return np.delete(eigs, drop), int(excess)


def eigh_window(op: ReducedOperator, bound: float | None):
    """Eigenpairs of the pencil, restricted to ``|lambda| < bound`` when given."""
    H, M = (op.H + op.H.conj().T) / 2, op.M
    if np.abs(H.imag).max() <= 1e-14 * np.abs(H).max() and np.abs(M.imag).max() <= 1e-14:
        H, M = H.real, M.real
    if bound is None:
        return sla.eigh(H, M)
    return sla.eigh(H, M, subset_by_value=(-bound, bound))


def end_fraction(op: ReducedOperator, vectors: np.ndarray, width: float) -> np.ndarray:
    """Share of each eigenvector's L2 mass within ``width`` of either end of a one-segment chain."""
    segments, n, left, right, gluing = op.chain
    if len(segments) != 1:
        raise ValueError("end_fraction expects a single-segment chain")
    seg = segments[0]
    x, w, V, _, _ = _legendre_data(seg.length, seg.degree, _nquad(seg.degree))
    C = _basis_map(segments, n, left, right, gluing) @ vectors
    C = C.reshape(n, seg.degree + 1, -1)
    dens = sum(np.abs(V @ C[i]) ** 2 for i in range(n)) * w[:, None]
    near = (x < width) | (x > seg.length - width)
    return dens[near].sum(axis=0) / dens.sum(axis=0)
