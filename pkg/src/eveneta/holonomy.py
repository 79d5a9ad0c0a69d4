"""Holonomy of the determinant line, read off from eta invariants.

Every route produces an :class:`EtaResult`; its holonomy is ``exp(2 pi i eta-bar)``,
so integer jumps from spectral flow drop out.  Phases are compared on the circle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcinv

from .cylinder import CylinderBVP, LagrangianSpec, eta_bar_X, kernel_grading
from .dirac import (RESOLUTION_PER_DEGREE, FamilyHandle, MappingTorusProblem,
                    galerkin_family, mapping_torus_self_convergence, mapping_torus_spectrum,
                    multiplication_matrix)
from .eta import (ROUTE_ORDER, ROUTE_WINDOW, TRUNCATION_TOL, EtaConvergenceError, EtaResult,
                  eta_invariant, thm34_eta)

ISOMETRY_TOL = 1e-8
MODULUS_TOL = 1e-6
PHASE_TOL = 1e-2


class HolonomyMismatchError(AssertionError):
    pass


class SelfConvergenceError(RuntimeError):
    pass


def phase_difference(a: complex, b: complex) -> float:
    """Distance of ``arg a`` and ``arg b`` on the circle, in radians."""
    return float(abs(np.angle(a * np.conj(b))))


def tau_from_eta(result: EtaResult) -> complex:
    return complex(np.exp(2j * np.pi * result.reduced_eta))


# ----------------------------------------------------------------------------
# kernel determinant factor


@dataclass
class DetLineData:
    """Graded kernels of ``D_0`` and ``D_1`` with the map ``g^{-1}`` between them.

    Kernel bases are column matrices in a common ambient space; ``g_inverse`` acts
    on that space.  ``T`` is a Lagrangian isometry ``K_0^+ -> K_0^-`` in the given bases.
    """

    k0_plus: np.ndarray
    k0_minus: np.ndarray
    k1_plus: np.ndarray
    k1_minus: np.ndarray
    g_inverse: np.ndarray
    T: np.ndarray | None = None

    def __post_init__(self):
        for G in self.transfer():
            if G.size and np.abs(G.conj().T @ G - np.eye(G.shape[1])).max() > ISOMETRY_TOL:
                raise ValueError("g^{-1} does not map ker D_0 isometrically onto ker D_1")

    def transfer(self) -> tuple[np.ndarray, np.ndarray]:
        """Matrices of ``g^{-1}: K_0^pm -> K_1^pm`` in the kernel bases."""
        gp = self.k1_plus.conj().T @ self.g_inverse @ self.k0_plus
        gm = self.k1_minus.conj().T @ self.g_inverse @ self.k0_minus
        return gp, gm


def det_factor(data: DetLineData) -> complex:
    """``(det T)^{-1} det(g^{-1} T g)`` with ``g^{-1} T g: K_1^+ -> K_1^-``."""
    if data.k0_plus.shape[1] == 0:
        return 1.0 + 0j
    T = np.eye(data.k0_plus.shape[1]) if data.T is None else np.atleast_2d(data.T)
    if np.abs(T.conj().T @ T - np.eye(T.shape[0])).max() > ISOMETRY_TOL:
        raise ValueError("T is not unitary")
    gp, gm = data.transfer()
    conj = gm @ T @ gp.conj().T
    return complex(np.linalg.det(conj) / np.linalg.det(T))


def det_line_data(handle: FamilyHandle, lagrangian: LagrangianSpec | None = None,
                  cutoff: int | None = None) -> DetLineData:
    """Kernels of ``D_0 = D_X`` and of ``D_1`` computed independently in the mode box."""
    cutoff = handle.cutoff if cutoff is None else cutoff
    fam = galerkin_family(handle.with_method("galerkin"), cutoff)
    kp, km = kernel_grading(handle.spec, cutoff, handle.g.N)
    w, V = np.linalg.eigh(fam.matrix(1.0))
    K1 = V[:, np.abs(w) < 1e-8]
    gw, gv = np.linalg.eigh(K1.conj().T @ fam.gamma @ K1)
    k1p, k1m = K1 @ gv[:, gw > 0], K1 @ gv[:, gw < 0]
    ginv = multiplication_matrix(handle.g.adjoint(), handle.spec, cutoff, spinor=2)
    T = None if lagrangian is None else lagrangian.T
    return DetLineData(kp, km, k1p, k1m, ginv, T)


# ----------------------------------------------------------------------------
# routes


def route_eta(source, **options) -> EtaResult:
    """``eta-bar(X,E,g)`` from a finished result, a family handle or a cylinder problem."""
    if isinstance(source, EtaResult):
        return source
    if isinstance(source, FamilyHandle):
        return thm34_eta(source, **options)
    if isinstance(source, CylinderBVP):
        return eta_bar_X(source, **options)
    raise TypeError(f"cannot compute an eta invariant from {type(source).__name__}")


def tau_via_eta(source, det_data: DetLineData | None = None, **options) -> complex:
    tau = tau_from_eta(route_eta(source, **options))
    if det_data is not None:
        tau *= det_factor(det_data)
    return tau


def mapping_torus_eta(problem: MappingTorusProblem, window=ROUTE_WINDOW, order: int = ROUTE_ORDER,
                      certify: bool = True, cutoff_step: int | None = None) -> EtaResult:
    """``eta-bar(D_{E_g})`` with a grid self-convergence certificate.

    ``cutoff_step`` additionally recomputes at ``cutoff + cutoff_step`` and folds
    the phase drift into the error estimate.
    """
    lambda_cut = 1.02 * float(erfcinv(TRUNCATION_TOL) / np.sqrt(min(window)))
    if RESOLUTION_PER_DEGREE * problem.circle_points < lambda_cut:
        raise ValueError(
            f"circle grid resolves |lambda| <= {RESOLUTION_PER_DEGREE * problem.circle_points:.3g} "
            f"but the window needs {lambda_cut:.3g}; raise circle_points")
    if problem.g.character is None:
        edge = 2 * np.pi * (problem.cutoff + 0.5 - problem.g.max_frequency)
        if edge < lambda_cut:
            raise EtaConvergenceError(
                f"mode box resolves |lambda| <= {edge:.3g} but the window needs {lambda_cut:.3g}; "
                "raise the cutoff")
    spectrum = mapping_torus_spectrum(problem, lambda_cut)
    result = eta_invariant(spectrum, window, order=order)
    reg = dict(result.regularization, end_states_removed=spectrum.metadata.get("end_states_removed", 0),
               orbits_truncated=spectrum.metadata.get("orbits_truncated", 0),
               smallest=[float(v) for v in np.sort(spectrum.smallest(40))])
    err = result.error_estimate
    if certify:
        cert = mapping_torus_self_convergence(problem, spectrum, lambda_cut=lambda_cut)
        reg["self_convergence"] = cert.max_change
        if not cert.passed:
            raise SelfConvergenceError(
                f"{cert.count} smallest eigenvalues move by {cert.max_change:.2e} "
                f"under grid doubling (tolerance {cert.tolerance:.0e})")
    if cutoff_step:
        finer = MappingTorusProblem(problem.spec, problem.g, problem.circle_points,
                                    problem.cutoff + cutoff_step, problem.circle_spin,
                                    problem.gauge, problem.profile_eps)
        other = eta_invariant(mapping_torus_spectrum(finer, lambda_cut), window, order=order)
        drift = phase_difference(tau_from_eta(result), tau_from_eta(other)) / (2 * np.pi)
        reg["cutoff_drift"] = drift
        err = max(err, drift)
    return EtaResult(result.eta, result.kernel_dimension, err, reg)


def tau_via_mapping_torus(problem: MappingTorusProblem, **options) -> complex:
    return tau_from_eta(mapping_torus_eta(problem, **options))


@dataclass
class HolonomyResult:
    tau: complex
    routes: dict
    phase_errors: dict
    modulus_residual: float
    discrepancies: dict = field(default_factory=dict)
    tolerance: float = PHASE_TOL

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies.values(), default=0.0)

    @property
    def agree(self) -> bool:
        return self.max_discrepancy < self.tolerance

    def as_dict(self) -> dict:
        def c(z):
            return dict(re=float(np.real(z)), im=float(np.imag(z)), phase=float(np.angle(z)))
        return dict(tau=c(self.tau), routes={k: c(v) for k, v in self.routes.items()},
                    phase_errors=dict(self.phase_errors), modulus_residual=self.modulus_residual,
                    discrepancies={"/".join(k): v for k, v in self.discrepancies.items()},
                    tolerance=self.tolerance, agree=self.agree)


def compare_holonomy(routes: dict, tol: float = PHASE_TOL, det_factors: dict | None = None) -> HolonomyResult:
    """Join per-route results into one holonomy report.

    ``routes`` maps a name to an :class:`EtaResult` or to ``(tau, phase_error)``.
    Pairs must agree within ``tol`` or within their summed error budgets,
    whichever is larger.
    """
    if len(routes) < 2:
        raise ValueError("need at least two routes to compare")
    taus, errs = {}, {}
    for name, r in routes.items():
        if isinstance(r, EtaResult):
            taus[name], errs[name] = tau_from_eta(r), 2 * np.pi * r.error_estimate
        else:
            taus[name], errs[name] = complex(r[0]), float(r[1])
        if det_factors and name in det_factors:
            taus[name] *= det_factors[name]
    modulus = max(abs(abs(t) - 1) for t in taus.values())
    if modulus > MODULUS_TOL:
        raise HolonomyMismatchError(f"|tau| deviates from 1 by {modulus:.2e}")
    disc = {}
    failures = []
    for a, b in itertools.combinations(taus, 2):
        d = phase_difference(taus[a], taus[b])
        disc[(a, b)] = d
        allowed = max(tol, errs[a] + errs[b])
        if d > allowed:
            failures.append(f"{a} vs {b}: phase gap {d:.3e} > {allowed:.3e} "
                            f"(budgets {errs[a]:.2e}, {errs[b]:.2e})")
    best = min(errs, key=errs.get)
    result = HolonomyResult(taus[best], taus, errs, float(modulus), disc, tol)
    if failures:
        raise HolonomyMismatchError("; ".join(failures))
    return result
