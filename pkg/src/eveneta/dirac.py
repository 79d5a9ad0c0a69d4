"""Spectral problems on flat tori: per-mode Dirac blocks, the family
``D_s = D_X + s c(g^{-1} dg)`` and the Dirac operator of the mapping torus."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from ._galerkin import (Segment, drop_spurious_zeros, eigh_window, end_fraction,
                        exact_kernel_dimension, reduce_chain)
from .clifford import CliffordRep, build_clifford, clifford_mult
from .torus import TorusSpec, UnitaryMapSpec, maurer_cartan, mode_set

TWO_PI = 2 * np.pi
KERNEL_TOL = 1e-6 * TWO_PI


@dataclass(frozen=True)
class SpectralData:
    """Sorted eigenvalues with multiplicities.

    ``metadata`` carries at least ``cutoff``, ``method``, ``kernel_tol`` and
    ``truncation_scale``: every eigenvalue of modulus below ``truncation_scale``
    is present.
    """

    values: np.ndarray
    multiplicities: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, multiplicities=None, **metadata) -> "SpectralData":
        vals = np.asarray(eigenvalues, dtype=float).ravel()
        mult = (np.ones(len(vals), dtype=int) if multiplicities is None
                else np.asarray(multiplicities, dtype=int).ravel())
        if np.any(mult < 1):
            raise ValueError("multiplicities must be >= 1")
        order = np.argsort(vals, kind="stable")
        metadata.setdefault("kernel_tol", KERNEL_TOL)
        metadata.setdefault("truncation_scale", np.inf)
        return cls(vals[order], mult[order], metadata)

    @property
    def kernel_tol(self) -> float:
        return self.metadata.get("kernel_tol", KERNEL_TOL)

    @property
    def kernel_dimension(self) -> int:
        return int(self.multiplicities[np.abs(self.values) < self.kernel_tol].sum())

    def expanded(self) -> np.ndarray:
        return np.repeat(self.values, self.multiplicities)

    def smallest(self, count: int) -> np.ndarray:
        """The ``count`` eigenvalues of smallest modulus, sorted by modulus."""
        ev = self.expanded()
        return ev[np.argsort(np.abs(ev), kind="stable")[:count]]

    def negated(self) -> "SpectralData":
        return SpectralData.from_eigenvalues(-self.values, self.multiplicities, **dict(self.metadata))

    @classmethod
    def concatenate(cls, parts, **metadata) -> "SpectralData":
        vals = np.concatenate([p.values for p in parts]) if parts else np.zeros(0)
        mult = np.concatenate([p.multiplicities for p in parts]) if parts else np.zeros(0, int)
        return cls.from_eigenvalues(vals, mult, **metadata)


def dirac_block(rep: CliffordRep, v) -> np.ndarray:
    """Symbol of the flat Dirac operator on the Fourier mode with momentum ``v``."""
    return TWO_PI * 1j * clifford_mult(rep, np.asarray(v, dtype=float))


@dataclass(frozen=True)
class FamilyHandle:
    spec: TorusSpec
    g: UnitaryMapSpec
    rep: CliffordRep = None
    method: str = "character"
    cutoff: int = 12

    def __post_init__(self):
        if self.rep is None:
            object.__setattr__(self, "rep", build_clifford(self.spec.dim))
        if self.method not in ("character", "galerkin"):
            raise ValueError(f"unknown evaluation method {self.method!r}")
        if self.method == "character" and self.g.character is None:
            raise ValueError("the exact-character method needs a character map")
        if self.g.dim != self.spec.dim:
            raise ValueError("map and torus dimensions differ")

    def with_cutoff(self, cutoff: int) -> "FamilyHandle":
        return FamilyHandle(self.spec, self.g, self.rep, self.method, cutoff)

    def with_method(self, method: str) -> "FamilyHandle":
        return FamilyHandle(self.spec, self.g, self.rep, method, self.cutoff)


def _character_momenta(handle: FamilyHandle, s: float, cutoff: int) -> np.ndarray:
    ms = mode_set(handle.spec, cutoff)
    return ms.momenta + s * np.array(handle.g.character, dtype=float)


def family_spectrum_character(handle: FamilyHandle, s: float, cutoff: int | None = None) -> SpectralData:
    if handle.g.character is None:
        raise ValueError("family_spectrum_character needs a character map")
    cutoff = handle.cutoff if cutoff is None else cutoff
    v = _character_momenta(handle, s, cutoff)
    r = TWO_PI * np.linalg.norm(v, axis=1)
    dist = cutoff + 0.5 - np.abs(np.array(handle.g.character) * s).max()
    return SpectralData.from_eigenvalues(
        np.concatenate([-r, r]), cutoff=cutoff, method="character",
        truncation_scale=TWO_PI * max(dist, 0.0))


class GalerkinFamily:
    """``D_s = D0 + s C`` on the truncated mode box, basis ordered (mode, spinor, colour)."""

    def __init__(self, handle: FamilyHandle, cutoff: int):
        spec, g, rep = handle.spec, handle.g, handle.rep
        self.modes = mode_set(spec, cutoff)
        self.cutoff = cutoff
        N, S = g.N, rep.size
        nm = len(self.modes)
        self.size = nm * S * N
        self.warnings: list[str] = []
        mc = maurer_cartan(g)
        if mc.max_frequency > cutoff:
            self.warnings.append(
                f"cutoff {cutoff} smaller than Maurer-Cartan frequency support {mc.max_frequency}")
            warnings.warn(self.warnings[-1])
        eyeN = np.eye(N)
        D0 = np.zeros((self.size, self.size), dtype=complex)
        blk = S * N
        for i, k in enumerate(self.modes.momenta):
            D0[i * blk:(i + 1) * blk, i * blk:(i + 1) * blk] = np.kron(dirac_block(rep, k), eyeN)
        C = np.zeros_like(D0)
        index = self.modes.index()
        for w, coeff in mc.coefficients.items():
            cw = sum(np.kron(rep.generators[j], coeff[j]) for j in range(spec.dim))
            for i, n in enumerate(self.modes.integers):
                jdx = index.get(tuple(int(a - b) for a, b in zip(n, w)))
                if jdx is not None:
                    C[i * blk:(i + 1) * blk, jdx * blk:(jdx + 1) * blk] += cw
        self.D0, self.C = D0, C
        G = rep.chirality if rep.chirality is not None else np.eye(S)
        self.gamma = np.kron(np.eye(nm), np.kron(G, eyeN))

    def matrix(self, s: float) -> np.ndarray:
        return self.D0 + s * self.C

    @cached_property
    def gamma_c(self) -> np.ndarray:
        return self.gamma @ self.C

    def hermiticity(self, s: float) -> float:
        A = self.matrix(s)
        return float(np.linalg.norm(A - A.conj().T))


def galerkin_family(handle: FamilyHandle, cutoff: int | None = None) -> GalerkinFamily:
    return GalerkinFamily(handle, handle.cutoff if cutoff is None else cutoff)


def galerkin_family_matrix(handle: FamilyHandle, s: float, cutoff: int | None = None) -> np.ndarray:
    return galerkin_family(handle, cutoff).matrix(s)


def family_spectrum(handle: FamilyHandle, s: float, cutoff: int | None = None) -> SpectralData:
    cutoff = handle.cutoff if cutoff is None else cutoff
    if handle.method == "character":
        return family_spectrum_character(handle, s, cutoff)
    fam = galerkin_family(handle, cutoff)
    return SpectralData.from_eigenvalues(np.linalg.eigvalsh(fam.matrix(s)), cutoff=cutoff,
                                         method="galerkin", warnings=fam.warnings)


@dataclass(frozen=True)
class ScanResult:
    min_gap: float
    s_min: float
    invertible: bool
    threshold: float


def invertibility_scan(handle: FamilyHandle, s_grid=None, cutoff: int | None = None,
                       gap_threshold: float = 1e-3) -> ScanResult:
    """Minimum over ``s`` of the smallest ``|lambda|`` of ``D_s``."""
    s_grid = np.linspace(0.0, 1.0, 41) if s_grid is None else np.asarray(s_grid, dtype=float)
    if s_grid.min() > 0 or s_grid.max() < 1:
        raise ValueError("s grid must cover [0, 1]")
    cutoff = handle.cutoff if cutoff is None else cutoff
    if handle.method == "character":
        def gap(s):
            return TWO_PI * np.linalg.norm(_character_momenta(handle, s, cutoff), axis=1).min()
    else:
        fam = galerkin_family(handle, cutoff)

        def gap(s):
            return np.abs(np.linalg.eigvalsh(fam.matrix(s))).min()
    gaps = np.array([gap(s) for s in s_grid])
    i = int(np.argmin(gaps))
    best_s, best = float(s_grid[i]), float(gaps[i])
    lo, hi = s_grid[max(i - 1, 0)], s_grid[min(i + 1, len(s_grid) - 1)]
    if hi > lo:
        res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if res.fun < best:
            best_s, best = float(res.x), float(res.fun)
    return ScanResult(best, best_s, bool(best > gap_threshold), gap_threshold)


# ----------------------------------------------------------------------------
# mapping torus S^1 x T^2 with bundle glued by g


@dataclass(frozen=True)
class MappingTorusProblem:
    """Dirac operator on ``S^1 x X`` twisted by ``E_g``.

    ``circle_points`` is the Legendre degree per unit circle length.
    ``gauge`` fixes the connection inside one fundamental domain:
    ``linear`` (uniform field) or ``profile`` (the cutoff-function interpolation
    of the cylinder).
    Sections satisfy ``phi(1) = sign * g^{-1} phi(0)``, ``sign = -1`` for the
    antiperiodic circle spin structure.
    """

    spec: TorusSpec
    g: UnitaryMapSpec
    circle_points: int = 38
    cutoff: int = 9
    circle_spin: str = "periodic"
    gauge: str = "linear"
    profile_eps: float = 0.1

    def __post_init__(self):
        if self.spec.dim != 2:
            raise ValueError("mapping torus is built for two-dimensional X")
        if self.circle_spin not in ("periodic", "antiperiodic"):
            raise ValueError("circle_spin must be 'periodic' or 'antiperiodic'")
        if self.gauge not in ("linear", "profile"):
            raise ValueError("gauge must be 'linear' or 'profile'")

    def refined(self, factor: int = 2) -> "MappingTorusProblem":
        return MappingTorusProblem(self.spec, self.g, self.circle_points * factor, self.cutoff,
                                   self.circle_spin, self.gauge, self.profile_eps)


def _gauge_profile(problem: MappingTorusProblem):
    if problem.gauge == "linear":
        return lambda u: u
    from .cylinder import CutoffProfile
    prof = CutoffProfile(problem.profile_eps)
    return lambda u: 1.0 - prof(u, 1.0)


def _bmat(v) -> np.ndarray:
    rep = build_clifford(2)
    return dirac_block(rep, v)


def aps_subspace(H: np.ndarray, sign: int, kernel_basis=None, tol: float = KERNEL_TOL) -> np.ndarray:
    """Orthonormal basis of the ``sign``-eigenspace of ``H`` plus ``kernel_basis``."""
    w, V = np.linalg.eigh(H)
    pick = V[:, w > tol] if sign > 0 else V[:, w < -tol]
    if kernel_basis is not None and kernel_basis.shape[1]:
        pick = np.hstack([pick, kernel_basis])
    elif np.any(np.abs(w) <= tol):
        raise ValueError("boundary operator has a kernel; a Lagrangian subspace is required")
    return pick


def _orbit_chains(spec: TorusSpec, m, cutoff: int):
    ms = mode_set(spec, cutoff)
    index = ms.index()
    m = tuple(int(v) for v in m)
    seen = set()
    chains = []
    truncated = 0
    for n in ms.integers:
        n = tuple(int(v) for v in n)
        if n in seen:
            continue
        start = n
        while tuple(a - b for a, b in zip(start, m)) in index:
            start = tuple(a - b for a, b in zip(start, m))
        chain = [start]
        while tuple(a + b for a, b in zip(chain[-1], m)) in index:
            chain.append(tuple(a + b for a, b in zip(chain[-1], m)))
        seen.update(chain)
        chains.append(chain)
        truncated += 1
    return chains, truncated


# measured: Legendre degree p per unit length resolves |lambda| < 1.4 p to 1e-10
RESOLUTION_PER_DEGREE = 1.4
END_WIDTH = 1.5
END_FRACTION = 0.4


# sigma_1 K commutes with every orbit operator; this spinor frame makes it real
_REAL_FRAME = np.array([[1, 1j], [1, -1j]]) / np.sqrt(2)


def _real_block(H: np.ndarray) -> np.ndarray:
    return (_REAL_FRAME.conj().T @ H @ _REAL_FRAME).real


def _chain_operator(problem: MappingTorusProblem, chain, degree_per_unit: int):
    m = np.array(problem.g.character, dtype=float)
    k0 = np.array(chain[0], dtype=float) + problem.spec.shift
    J = len(chain)
    if problem.gauge == "linear":
        def pot(u):
            return u
    else:
        from .cylinder import CutoffProfile
        prof = CutoffProfile(problem.profile_eps)

        def pot(u):
            cell = np.minimum(np.floor(u), J - 1)
            return cell + 1.0 - prof(u - cell, 1.0)
    Bk, Bm = _real_block(_bmat(k0)), _real_block(_bmat(m))
    terms = [(Bk, None), (Bm, pot)]
    if problem.circle_spin == "antiperiodic":
        # the sign picked up at every gluing is the gauge exp(i pi u) on the unrolled orbit
        terms.append((1j * np.pi * np.eye(2), None))
    seg = Segment(float(J), degree_per_unit * J, terms)
    left = aps_subspace(Bk, -1)
    right = aps_subspace(_real_block(_bmat(k0 + J * m)), +1)
    gamma = _REAL_FRAME.conj().T @ build_clifford(2).chirality @ _REAL_FRAME
    return reduce_chain([seg], gamma, left=left, right=right)


def _gluing_gauge(U: np.ndarray) -> float:
    """Phase ``alpha`` keeping the spectrum of ``exp(-i alpha) U`` away from ``+-1``.

    A one-segment C0 Legendre space with gluing eigenvalue ``+1`` (``-1``) carries a
    spurious copy of the constant mode at even (odd) degree.  The constant gauge
    ``phi = exp(i alpha u) psi`` moves the gluing off both points and adds
    ``i alpha`` to the transverse operator.
    """
    phases = np.angle(np.linalg.eigvals(U))
    grid = np.linspace(0.0, np.pi, 33)[1:-1]
    dist = [np.abs(np.angle(np.exp(2j * (phases - a)))).min() for a in grid]
    return float(grid[int(np.argmax(dist))])


def _chain_spectrum(op, bound):
    """Eigenvalues below ``bound`` after removing end-localized truncation states."""
    w, X = eigh_window(op, bound)
    frac = end_fraction(op, X, END_WIDTH) if len(w) else np.zeros(0)
    ends = frac > END_FRACTION
    ev = w[~ends]
    dropped = 0
    if np.any(np.abs(ev) < KERNEL_TOL):
        segments, n, left, right, gluing = op.chain
        k = exact_kernel_dimension(segments, n, left=left, right=right)
        ev, dropped = drop_spurious_zeros(ev, k, KERNEL_TOL)
    return ev, int(ends.sum()), dropped


def _active_chains(problem: MappingTorusProblem, lambda_cut: float | None):
    spec = problem.spec
    m = np.array(problem.g.character, dtype=float)
    mhat = m / np.linalg.norm(m)
    chains, truncated = _orbit_chains(spec, problem.g.character, problem.cutoff)
    active, skipped = [], np.inf
    for chain in chains:
        k0 = np.array(chain[0], dtype=float) + spec.shift
        scale = TWO_PI * abs(k0[0] * mhat[1] - k0[1] * mhat[0])
        if lambda_cut is not None and scale > lambda_cut:
            skipped = min(skipped, scale)
        else:
            active.append(chain)
    return active, truncated, skipped


def _active_modes(problem: MappingTorusProblem, lambda_cut: float | None):
    ms = mode_set(problem.spec, problem.cutoff)
    active, skipped = [], np.inf
    for n, k in zip(ms.integers, ms.momenta):
        scale = TWO_PI * np.linalg.norm(k)
        if lambda_cut is not None and scale > lambda_cut:
            skipped = min(skipped, scale)
        else:
            active.append((tuple(int(v) for v in n),))
    return active, skipped


def _block_spectrum(problem: MappingTorusProblem, block, lambda_cut):
    """Spectrum of one invariant block: a single mode (``m = 0``) or one unrolled orbit."""
    p = max(problem.circle_points, 2)
    if np.any(problem.g.character):
        return _chain_spectrum(_chain_operator(problem, block, p), lambda_cut)
    k = np.array(block[0], dtype=float) + problem.spec.shift
    sign = -1.0 if problem.circle_spin == "antiperiodic" else 1.0
    alpha = _gluing_gauge(sign * np.eye(2))
    op = reduce_chain([Segment(1.0, p, [(_bmat(k), None), (1j * alpha * np.eye(2), None)])],
                      build_clifford(2).chirality, gluing=np.exp(-1j * alpha) * sign * np.eye(2))
    ev, d = op.filtered_eigenvalues(KERNEL_TOL)
    if lambda_cut is not None:
        ev = ev[np.abs(ev) < lambda_cut]
    return ev, 0, d


def _character_blocks(problem: MappingTorusProblem, lambda_cut):
    m = np.array(problem.g.character, dtype=float)
    if np.any(m):
        blocks, truncated, skipped = _active_chains(problem, lambda_cut)
        box = TWO_PI * (problem.cutoff + 0.5 - np.abs(m).max())
    else:
        (blocks, skipped), truncated = _active_modes(problem, lambda_cut), 0
        box = TWO_PI * (problem.cutoff + 0.5)
    return blocks, truncated, min(skipped, box)


def mapping_torus_spectrum(problem: MappingTorusProblem, lambda_cut: float | None = None) -> SpectralData:
    """Spectrum of ``D_{E_g}``.

    For a character every orbit ``k, k+m, k+2m, ...`` of the gluing shift is unrolled
    into one interval of length equal to the orbit size, on which the gluing rows
    become continuity.  Orbits leave the mode box, so both ends carry APS conditions
    at high momentum.  Any finite truncation of such an orbit has zero net spectral
    flow, unlike the continuum zero Landau level, so the discrete problem carries
    one compensating state pinned at the chain ends; states with more than
    ``END_FRACTION`` of their mass within ``END_WIDTH`` of an end are removed and
    counted.  With ``lambda_cut`` set only ``|lambda| < lambda_cut`` is computed and
    orbits whose spectrum provably lies above it are skipped.
    """
    g = problem.g
    if g.character is None:
        sign = -1.0 if problem.circle_spin == "antiperiodic" else 1.0
        return _mapping_torus_galerkin(problem, _gauge_profile(problem), sign, lambda_cut)
    blocks, truncated, scale = _character_blocks(problem, lambda_cut)
    parts = []
    dropped = end_states = 0
    for block in blocks:
        ev, e, d = _block_spectrum(problem, block, lambda_cut)
        parts.append(ev)
        end_states += e
        dropped += d
    vals = np.concatenate(parts) if parts else np.zeros(0)
    trunc = min(scale, RESOLUTION_PER_DEGREE * max(problem.circle_points, 2))
    if lambda_cut is not None:
        trunc = min(trunc, lambda_cut)
    meta = dict(cutoff=problem.cutoff, method=f"mapping-torus/{problem.gauge}",
                circle_points=problem.circle_points, circle_spin=problem.circle_spin,
                truncation_scale=trunc, orbits_truncated=truncated,
                end_states_removed=end_states, spurious_zeros_dropped=dropped,
                blocks=[np.sort(ev) for ev in parts])
    if truncated:
        meta["warnings"] = [f"{truncated} gluing orbits truncated at the mode box"]
    return SpectralData.from_eigenvalues(vals, **meta)


@dataclass
class SelfConvergence:
    max_change: float
    count: int
    tolerance: float
    refined_points: int

    @property
    def passed(self) -> bool:
        return self.max_change < self.tolerance


def mapping_torus_self_convergence(problem: MappingTorusProblem, spectrum: SpectralData | None = None,
                                   count: int = 20, tol: float = 1e-3,
                                   lambda_cut: float | None = None) -> SelfConvergence:
    """Change of the ``count`` smallest ``|lambda|`` when the circle grid is doubled.

    Only the invariant blocks holding those eigenvalues are recomputed.
    """
    if problem.g.character is None:
        fine = mapping_torus_spectrum(problem.refined(2), lambda_cut)
        coarse = spectrum or mapping_torus_spectrum(problem, lambda_cut)
        a, b = coarse.smallest(count), fine.smallest(count)
        return SelfConvergence(float(np.abs(np.sort(a) - np.sort(b)).max()), count, tol,
                               2 * problem.circle_points)
    spectrum = spectrum or mapping_torus_spectrum(problem, lambda_cut)
    blocks, _, _ = _character_blocks(problem, lambda_cut)
    coarse = spectrum.metadata["blocks"]
    tagged = sorted((abs(v), i, v) for i, ev in enumerate(coarse) for v in ev)[:count]
    finer = problem.refined(2)
    worst = 0.0
    for i in sorted({t[1] for t in tagged}):
        ref, _, _ = _block_spectrum(finer, blocks[i], lambda_cut)
        for _, _, v in (t for t in tagged if t[1] == i):
            worst = max(worst, float(np.abs(ref - v).min()) if len(ref) else np.inf)
    return SelfConvergence(worst, len(tagged), tol, finer.circle_points)


def _mapping_torus_galerkin(problem, prof, sign, lambda_cut):
    handle = FamilyHandle(problem.spec, problem.g, method="galerkin", cutoff=problem.cutoff)
    fam = galerkin_family(handle)
    G = multiplication_matrix(problem.g.adjoint(), problem.spec, problem.cutoff, spinor=2)
    U, _ = sla.polar(G)
    p = max(problem.circle_points, 2)
    alpha = _gluing_gauge(sign * U)
    seg = Segment(1.0, p, [(fam.D0, None), (fam.C, prof), (1j * alpha * np.eye(fam.size), None)])
    op = reduce_chain([seg], fam.gamma, gluing=np.exp(-1j * alpha) * sign * U)
    meta = dict(cutoff=problem.cutoff, method=f"mapping-torus-galerkin/{problem.gauge}",
                circle_points=problem.circle_points,
                truncation_scale=min(TWO_PI * (problem.cutoff + 0.5 - problem.g.max_frequency),
                                     RESOLUTION_PER_DEGREE * p),
                gluing_unitarity_defect=float(np.linalg.norm(G - U, 2)),
                warnings=fam.warnings)
    ev, d = op.filtered_eigenvalues(KERNEL_TOL)
    if lambda_cut is not None:
        ev = ev[np.abs(ev) < lambda_cut]
        meta["truncation_scale"] = min(meta["truncation_scale"], lambda_cut)
    return SpectralData.from_eigenvalues(ev, spurious_zeros_dropped=d, **meta)


def multiplication_matrix(g: UnitaryMapSpec, spec: TorusSpec, cutoff: int, spinor: int = 1,
                          target_cutoff: int | None = None) -> np.ndarray:
    """Matrix of ``phi -> g phi`` from the box ``cutoff`` into the box ``target_cutoff``.

    Basis ordering (mode, spinor, colour), as in :class:`GalerkinFamily`.
    """
    src = mode_set(spec, cutoff)
    dst = mode_set(spec, cutoff if target_cutoff is None else target_cutoff)
    index = dst.index()
    N = g.N
    blk = spinor * N
    out = np.zeros((len(dst) * blk, len(src) * blk), dtype=complex)
    eyeS = np.eye(spinor)
    for j, n in enumerate(src.integers):
        for w, c in g.coefficients.items():
            i = index.get(tuple(int(a + b) for a, b in zip(n, w)))
            if i is not None:
                out[i * blk:(i + 1) * blk, j * blk:(j + 1) * blk] += np.kron(eyeS, c)
    return out
