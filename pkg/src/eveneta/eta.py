"""Regularised eta invariants, spectral flow, and the double-integral formula
for the reduced eta invariant of an invertible family ``D_s``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linear_sum_assignment
from scipy.special import erfc

from .dirac import (TWO_PI, FamilyHandle, SpectralData, _character_momenta, family_spectrum,
                    galerkin_family, invertibility_scan)

# default smoothing window, in units of (2 pi)^-2
DEFAULT_WINDOW = tuple(t / (2 * np.pi) ** 2 for t in (0.05, 0.04, 0.03, 0.02, 0.01))
# window used for discretised operators (cylinder, mapping torus), absolute units
ROUTE_WINDOW = (0.02, 0.0175, 0.015, 0.0125, 0.01)
# the smoothed eta of these operators plateaus exponentially fast in 1/tau, so
# polynomial extrapolation only amplifies the residual; average the plateau instead
ROUTE_ORDER = 0
TRUNCATION_TOL = 1e-12


class EtaConvergenceError(RuntimeError):
    pass


class SpectralFlowError(RuntimeError):
    pass


class InvertibilityError(ValueError):
    pass


@dataclass(frozen=True)
class EtaResult:
    eta: float
    kernel_dimension: int
    error_estimate: float
    regularization: dict = field(default_factory=dict)

    @property
    def reduced_eta(self) -> float:
        return (self.kernel_dimension + self.eta) / 2

    @classmethod
    def from_reduced(cls, reduced: float, error: float, **regularization) -> "EtaResult":
        return cls(2 * reduced, 0, error, regularization)

    def as_dict(self) -> dict:
        return dict(eta=self.eta, reduced_eta=self.reduced_eta,
                    kernel_dimension=self.kernel_dimension,
                    error_estimate=self.error_estimate, regularization=self.regularization)


def smoothed_eta(spectrum: SpectralData, tau: float) -> float:
    """``sum_{lambda != 0} sign(lambda) erfc(sqrt(tau) |lambda|)``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    v, mult = spectrum.values, spectrum.multiplicities

    def side(mask):
        a = np.abs(v[mask])
        order = np.argsort(a, kind="stable")[::-1]
        return float(np.sum((mult[mask] * erfc(np.sqrt(tau) * a))[order]))
    # summing each sign separately makes symmetric spectra cancel exactly
    tol = spectrum.kernel_tol
    return side(v >= tol) - side(v <= -tol)


def _extrapolate(sq: np.ndarray, vals: np.ndarray, order: int) -> tuple[float, float]:
    order = min(order, len(sq) - 1)
    coef = np.polynomial.polynomial.polyfit(sq, vals, order)
    resid = vals - np.polynomial.polynomial.polyval(sq, coef)
    return float(coef[0]), float(np.abs(resid).max()) if len(resid) else 0.0


def eta_invariant(spectrum: SpectralData, window: Sequence[float] = DEFAULT_WINDOW,
                  order: int = 2, error_ceiling: float = 1e-2,
                  check_truncation: bool = True) -> EtaResult:
    """Extrapolate the smoothed eta to ``tau -> 0`` with a polynomial in ``sqrt(tau)``."""
    window = np.asarray(window, dtype=float)
    if np.any(window <= 0) or np.any(np.diff(window) >= 0):
        raise ValueError("window must be positive and strictly descending")
    trunc = spectrum.metadata.get("truncation_scale", np.inf)
    if check_truncation and np.isfinite(trunc) and erfc(np.sqrt(window[-1]) * trunc) > TRUNCATION_TOL:
        raise EtaConvergenceError(
            f"spectrum is complete only below |lambda| = {trunc:.4g}; the smallest window value "
            f"{window[-1]:.4g} needs a larger cutoff or a larger tau")
    vals = np.array([smoothed_eta(spectrum, t) for t in window])
    sq = np.sqrt(window)
    eta, fit_res = _extrapolate(sq, vals, order)
    half = (len(window) + 1) // 2
    e_hi, _ = _extrapolate(sq[:half], vals[:half], order)
    e_lo, _ = _extrapolate(sq[-half:], vals[-half:], order)
    err = max(fit_res, abs(e_hi - e_lo))
    if np.allclose(vals, 0.0, atol=0.0):
        eta, err = 0.0, 0.0
    if err > error_ceiling:
        raise EtaConvergenceError(
            f"eta extrapolation error {err:.3g} exceeds {error_ceiling:.3g}; "
            "increase the cutoff or widen the smoothing window")
    reg = dict(window=[float(t) for t in window], order=int(order),
               smoothed=[float(v) for v in vals], cutoff=spectrum.metadata.get("cutoff"),
               truncation_scale=float(trunc))
    return EtaResult(float(eta), spectrum.kernel_dimension, float(err), reg)


# ----------------------------------------------------------------------------
# spectral flow


@dataclass(frozen=True)
class SpectralFlowResult:
    value: int
    upward: int
    downward: int
    certificate: list

    def __int__(self) -> int:
        return self.value


def _eigh(family, s, persistent=0):
    A = family(s)
    w, V = np.linalg.eigh((A + A.conj().T) / 2)
    if persistent:
        keep = np.sort(np.argsort(np.abs(w), kind="stable")[persistent:])
        w, V = w[keep], V[:, keep]
    return w, V


def _endpoint(family, s, inward, tol, max_depth, persistent):
    """Eigen-decomposition at an endpoint, moved inward while it has a transient kernel."""
    w, V = _eigh(family, s, persistent)
    step = 1e-3 * inward
    depth = 0
    while np.any(np.abs(w) <= tol):
        if depth > max_depth:
            raise SpectralFlowError(f"kernel persists near endpoint s={s}")
        s = s + step
        w, V = _eigh(family, s, persistent)
        step /= 2
        depth += 1
    return s, w, V


def _match(Va, Vb):
    ov = Va.conj().T @ Vb
    cost = -np.abs(ov) ** 2
    r, c = linear_sum_assignment(cost)
    return c[np.argsort(r)], float(np.min(-cost[r, c])) if len(r) else 1.0


def spectral_flow(family, s_grid: Sequence[float] | None = None, margin: float = 1e-6,
                  max_depth: int = 30, kernel_tol: float = 1e-9) -> SpectralFlowResult:
    """Net number of eigenvalues crossing zero upward along a Hermitian family.

    ``family`` is a callable ``s -> matrix`` of fixed size, or an ordered list of
    ``(s, SpectralData | matrix)`` pairs; for the latter only endpoint counts are
    available.  Eigenvalues vanishing at an endpoint are classified by their sign
    just inside the interval, and a kernel present at every grid node is treated
    as persistent (it never changes sign).  Adjacent samples are matched by
    eigenvector overlap and cells are bisected while the matching is ambiguous or
    a sample sits within ``margin`` of zero, so the upward/downward counts certify
    the result.
    """
    if not callable(family):
        pts = list(family)
        if len(pts) < 2:
            raise ValueError("family needs at least two samples")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("family must be ordered in s")

        def neg(x):
            if isinstance(x, SpectralData):
                return int(x.multiplicities[x.values < -x.kernel_tol].sum())
            return int(np.sum(np.linalg.eigvalsh(x) < -kernel_tol))
        val = neg(pts[0][1]) - neg(pts[-1][1])
        return SpectralFlowResult(val, max(val, 0), max(-val, 0), [])

    s_grid = np.linspace(0.0, 1.0, 11) if s_grid is None else np.asarray(s_grid, dtype=float)
    raw = [np.linalg.eigvalsh(family(float(s))) for s in s_grid]
    persistent = min(int(np.sum(np.abs(w) <= kernel_tol)) for w in raw)
    s0, w0, V0 = _endpoint(family, float(s_grid[0]), +1, kernel_tol, max_depth, persistent)
    s1, w1, V1 = _endpoint(family, float(s_grid[-1]), -1, kernel_tol, max_depth, persistent)
    nodes = [(s0, w0, V0)]
    spacing = float(np.min(np.diff(s_grid)))
    for s in s_grid[1:-1]:
        # keep interior nodes off a crossing; bisection cannot resolve a zero at a node
        for frac in (0.0, 0.3141, -0.2718, 0.1618, -0.1414):
            w, V = _eigh(family, float(s) + frac * spacing, persistent)
            if not len(w) or np.abs(w).min() >= margin:
                break
        nodes.append((float(s) + frac * spacing, w, V))
    nodes.append((s1, w1, V1))

    up = down = 0
    cert = []
    stack = list(zip(nodes[:-1], nodes[1:]))[::-1]
    while stack:
        (sa, wa, Va), (sb, wb, Vb) = stack.pop()
        perm, quality = _match(Va, Vb)
        small = min(np.abs(wa).min(initial=np.inf), np.abs(wb).min(initial=np.inf))
        if quality < 0.5 or small < margin:
            if sb - sa < 2.0 ** -max_depth:
                raise SpectralFlowError(
                    f"unresolved crossing near s={sa:.6g}; refine the s grid")
            sm = (sa + sb) / 2
            wm, Vm = _eigh(family, sm, persistent)
            if len(wm) and np.abs(wm).min() < margin:
                sm = sa + (sb - sa) * 0.5 * (1 + 2 ** -0.5)
                wm, Vm = _eigh(family, sm, persistent)
            stack.append(((sm, wm, Vm), (sb, wb, Vb)))
            stack.append(((sa, wa, Va), (sm, wm, Vm)))
            continue
        sa_sign, sb_sign = np.sign(wa), np.sign(wb[perm])
        up += int(np.sum((sa_sign < 0) & (sb_sign > 0)))
        down += int(np.sum((sa_sign > 0) & (sb_sign < 0)))
        cert.append((float(sa), float(sb), float(small), float(quality)))
    total = int(np.sum(w0 < 0) - np.sum(w1 < 0))
    if up - down != total:
        raise SpectralFlowError("branch matching disagrees with the endpoint signature")
    return SpectralFlowResult(total, up, down, cert)


@dataclass(frozen=True)
class SyntheticFamily:
    """``H(s) = U(s) diag(a + b s) U(s)^*`` with ``U(s) = exp(i s K)``."""

    offsets: np.ndarray
    slopes: np.ndarray
    generator: np.ndarray

    def __call__(self, s: float) -> np.ndarray:
        U = expm(1j * s * self.generator)
        return (U * (self.offsets + self.slopes * s)) @ U.conj().T

    @property
    def expected_flow(self) -> int:
        a, b = self.offsets, self.slopes
        return int(np.sum((a < 0) & (a + b > 0)) - np.sum((a > 0) & (a + b < 0)))


def synthetic_family(seed: int, size: int = 6) -> SyntheticFamily:
    """Random Hermitian path with one transversal zero crossing of random direction."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.1, 1.0, size) * rng.choice([-1.0, 1.0], size)
    end = np.abs(rng.uniform(0.1, 1.0, size)) * np.sign(start)
    end[0] = -np.sign(start[0]) * rng.uniform(0.1, 1.0)
    K = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    return SyntheticFamily(start, end - start, (K + K.conj().T) / 2)


# ----------------------------------------------------------------------------
# double-integral formula


def _cross(m, v):
    return m[0] * v[..., 1] - m[1] * v[..., 0]


def thm34_integrand(handle: FamilyHandle, s: float, t: float, cutoff: int | None = None) -> float:
    """``(i/4pi) tr_s[c(g^{-1}dg) D_s exp(-t D_s^2)]``, real for a self-adjoint family."""
    cutoff = handle.cutoff if cutoff is None else cutoff
    if handle.method == "character":
        if handle.spec.dim != 2:
            raise ValueError("the closed-form integrand is two-dimensional")
        m = np.array(handle.g.character, dtype=float)
        v = _character_momenta(handle, s, cutoff)
        # per mode: tr_s = 8 pi^2 i (m x v) exp(-4 pi^2 t |v|^2)
        return float(np.sum(-2 * np.pi * _cross(m, v) * np.exp(-4 * np.pi ** 2 * t * np.sum(v * v, 1))))
    fam = galerkin_family(handle, cutoff)
    w, U = np.linalg.eigh(fam.matrix(s))
    val = _galerkin_trace(fam, U, w * np.exp(-t * w ** 2))
    return _real(1j / (4 * np.pi) * val)


def _galerkin_trace(fam, U, weights):
    return np.einsum("ij,ji->", fam.gamma_c @ (U * weights), U.conj().T)


def _real(z: complex, tol: float = 1e-10) -> float:
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ArithmeticError(f"eta-form density has imaginary part {z.imag:.3g}")
    return float(z.real)


def _density(handle: FamilyHandle, s: float, t0, cutoff: int, fam=None) -> np.ndarray:
    """Analytic ``t``-integral from each ``t0`` of the integrand at fixed ``s``."""
    t0 = np.atleast_1d(np.asarray(t0, dtype=float))
    if handle.method == "character":
        m = np.array(handle.g.character, dtype=float)
        v = _character_momenta(handle, s, cutoff)
        r2 = np.sum(v * v, 1)
        if r2.min() == 0:
            raise InvertibilityError(f"D_s has a kernel at s={s}")
        heat = np.exp(-4 * np.pi ** 2 * np.outer(t0, r2))
        return -(heat @ (_cross(m, v) / r2)) / TWO_PI
    fam = galerkin_family(handle, cutoff) if fam is None else fam
    w, U = np.linalg.eigh(fam.matrix(s))
    if np.abs(w).min() == 0:
        raise InvertibilityError(f"D_s has a kernel at s={s}")
    diag = np.einsum("ij,ji->i", U.conj().T, fam.gamma_c @ U)
    vals = (np.exp(-np.outer(t0, w ** 2)) / w) @ diag
    return np.array([_real(1j / (4 * np.pi) * z) for z in vals])


def default_regulator(handle: FamilyHandle, cutoff: int) -> float:
    """Smallest ``t0`` for which the heat factor suppresses the box edge below 1e-14."""
    reach = cutoff + 0.5 - np.abs(np.asarray(handle.g.character or [0])).max()
    if handle.method == "galerkin":
        reach = cutoff + 0.5 - handle.g.max_frequency
    if reach <= 1:
        raise ValueError("cutoff too small for the map's frequency support")
    return float(32.0 / (4 * np.pi ** 2 * reach ** 2))


def _s_integral(f: Callable[[float], np.ndarray], tol: float, n: int = 16, max_nodes: int = 256,
                fixed: bool = False):
    """Gauss-Legendre on [0,1] with node doubling; ``f`` may return an array."""
    prev = None
    while True:
        x, w = np.polynomial.legendre.leggauss(n)
        nodes = (x + 1) / 2
        vals = np.array([f(s) for s in nodes])
        val = np.tensordot(w / 2, vals, axes=1)
        if fixed:
            return val, 0.0, n, nodes, vals
        if prev is not None:
            delta = float(np.max(np.abs(val - prev)))
            if delta < tol or 2 * n > max_nodes:
                return val, delta, n, nodes, vals
        prev, n = val, 2 * n


@dataclass(frozen=True)
class EtaFormSample:
    s: float
    value: float
    metadata: dict = field(default_factory=dict)


def eta_form_degree_one(handle: FamilyHandle, s: float, cutoff: int | None = None,
                        regulator: float | None = None, gap_threshold: float = 1e-3) -> EtaFormSample:
    """Degree-one eta-form density at ``s``: its integral over ``[0,1]`` is ``thm34_eta``."""
    cutoff = handle.cutoff if cutoff is None else cutoff
    t0 = default_regulator(handle, cutoff) if regulator is None else regulator
    if np.abs(family_spectrum(handle, s, cutoff).values).min() <= gap_threshold:
        raise InvertibilityError(f"D_s is nearly singular at s={s}")
    return EtaFormSample(float(s), float(_density(handle, s, t0, cutoff)[0]),
                         dict(regulator=t0, cutoff=cutoff, method=handle.method))


def thm34_eta(handle: FamilyHandle, cutoff: int | None = None, tol: float = 1e-10,
              regulator: float | None = None, gap_threshold: float = 1e-3,
              convergence_step: int = 4) -> EtaResult:
    """``(i/4pi) int_0^1 int_0^infty tr_s[c(g^{-1}dg) D_s e^{-t D_s^2}] dt ds``.

    The ``t``-integral is done analytically from a small ``t0``: on a flat torus
    the supertrace over ``[0, t0]`` is exponentially small, while the heat factor
    makes the truncated mode sum absolutely convergent.
    """
    cutoff = handle.cutoff if cutoff is None else cutoff
    scan = invertibility_scan(handle, None, cutoff, gap_threshold)
    if not scan.invertible:
        raise InvertibilityError(
            f"family is not invertible: gap {scan.min_gap:.3g} near s={scan.s_min:.6f}")
    t0 = default_regulator(handle, cutoff) if regulator is None else regulator

    fams = {}

    def density(lam):
        if handle.method == "galerkin" and lam not in fams:
            fams[lam] = galerkin_family(handle, lam)
        return lambda s: _density(handle, s, (t0, 1.5 * t0), lam, fams.get(lam))

    (val, val_reg), qerr, nodes, s_nodes, dens = _s_integral(density(cutoff), tol)
    # the cutoff check compares both boxes on one coarse rule, so quadrature error cancels
    (base, _), _, _, _, _ = _s_integral(density(cutoff), tol, 16, fixed=True)
    (big, _), _, _, _, _ = _s_integral(density(cutoff + convergence_step), tol, 16, fixed=True)
    val, val_reg = float(val), float(val_reg)
    cutoff_delta = float(abs(big - base))
    err = max(qerr, cutoff_delta, abs(val_reg - val))
    reg = dict(cutoff=cutoff, regulator=t0, quadrature_nodes=nodes,
               cutoff_delta=cutoff_delta, regulator_delta=abs(val_reg - val),
               quadrature_delta=qerr, min_gap=scan.min_gap,
               density_nodes=[float(x) for x in s_nodes], density=[float(x) for x in dens[:, 0]])
    return EtaResult.from_reduced(val, err, **reg)
