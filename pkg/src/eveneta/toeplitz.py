"""Hardy projections, Toeplitz compressions and the odd index pairing.

On the circle ``D = -i d/dx`` acts on ``exp(2 pi i (n + theta) x)`` with eigenvalue
``2 pi (n + theta)``.  The Hardy space keeps ``lambda >= 0``.  A Toeplitz operator
``T_g = P g P`` is compressed rectangularly: a truncated Hardy box of input modes
is mapped exactly into a box large enough to hold its image, so no rows are cut.
Then ``ker T`` and ``ker T*`` are both computed from compressions that lose
nothing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .torus import UnitaryMapSpec

SVD_THRESHOLD = 1e-8
SVD_GAP = 100.0
STABILITY_STEP = 4
PAIRING_TOL = 1e-6


class SVDGapError(RuntimeError):
    pass


class IndexStabilityError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


class ToeplitzMismatchError(AssertionError):
    pass


@dataclass(frozen=True)
class ToeplitzProblem:
    g: UnitaryMapSpec
    cutoff: int = 32
    theta: float = 0.0
    base: str = "S1"

    def __post_init__(self):
        if self.base not in ("S1", "T3"):
            raise ValueError("base must be 'S1' or 'T3'")
        if self.g.dim != (1 if self.base == "S1" else 3):
            raise ValueError(f"map dimension {self.g.dim} does not match base {self.base}")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if self.cutoff < self.g.max_frequency + 2:
            raise ValueError(
                f"cutoff {self.cutoff} must exceed the frequency support {self.g.max_frequency} by 2")

    def with_cutoff(self, cutoff: int) -> "ToeplitzProblem":
        return ToeplitzProblem(self.g, cutoff, self.theta, self.base)


@dataclass
class IndexReport:
    spectral_index: int | None
    pairing_value: float
    residuals: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(spectral_index=self.spectral_index, pairing_value=self.pairing_value,
                    residuals=dict(self.residuals), details=dict(self.details))


@dataclass(frozen=True)
class HardyProjection:
    """Diagonal projection on the mode box ``-cutoff..cutoff`` of the twisted circle."""

    modes: np.ndarray
    eigenvalues: np.ndarray
    retained: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.retained.sum())

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.retained.astype(float))

    @property
    def retained_modes(self) -> np.ndarray:
        return self.modes[self.retained]


def hardy_projection(theta: float, cutoff: int) -> HardyProjection:
    modes = np.arange(-cutoff, cutoff + 1)
    lam = 2 * np.pi * (modes + theta)
    return HardyProjection(modes, lam, lam >= 0)


def _hardy_modes(theta: float, top: int) -> np.ndarray:
    n = np.arange(-top, top + 1)
    return n[(n + theta >= 0) & (n <= top)]


def _compression(g: UnitaryMapSpec, theta: float, cutoff: int, target: int) -> np.ndarray:
    src = _hardy_modes(theta, cutoff)
    dst = _hardy_modes(theta, target)
    N = g.N
    T = np.zeros((len(dst) * N, len(src) * N), dtype=complex)
    for j, n in enumerate(src):
        for (w,), c in g.coefficients.items():
            hit = np.flatnonzero(dst == n + w)
            if hit.size:
                i = hit[0]
                T[i * N:(i + 1) * N, j * N:(j + 1) * N] += c
    return T


def toeplitz_operator(problem: ToeplitzProblem, target_cutoff: int | None = None) -> np.ndarray:
    """``P g P`` from the Hardy modes ``0..cutoff`` into ``0..target_cutoff``.

    The default target equals the input box, giving the square compression; the
    index computation uses ``cutoff + max_frequency`` so that no image is lost.
    """
    if problem.base != "S1":
        raise NotImplementedError("Toeplitz compression is implemented on the circle only")
    target = problem.cutoff if target_cutoff is None else target_cutoff
    return _compression(problem.g, problem.theta, problem.cutoff, target)


def _kernel_dimension(T: np.ndarray) -> tuple[int, float]:
    sv = np.linalg.svd(T, compute_uv=False)
    sv = np.concatenate([sv, np.zeros(max(T.shape[1] - len(sv), 0))])
    small = sv < SVD_THRESHOLD
    k = int(small.sum())
    above = sv[~small]
    below = sv[small]
    lo = above.min() if len(above) else np.inf
    hi = below.max() if len(below) else 0.0
    gap = lo / max(hi, np.finfo(float).tiny) if len(below) else lo / SVD_THRESHOLD
    if gap < SVD_GAP:
        raise SVDGapError(
            f"singular values do not separate at {SVD_THRESHOLD:g}: "
            f"smallest kept {lo:.3e}, largest dropped {hi:.3e}")
    return k, float(gap)


def _index_at(g: UnitaryMapSpec, theta: float, cutoff: int) -> tuple[int, float, int, int]:
    f = g.max_frequency
    T = _compression(g, theta, cutoff, cutoff + f)
    Ts = _compression(g.adjoint(), theta, cutoff, cutoff + f)
    kt, gap1 = _kernel_dimension(T)
    kc, gap2 = _kernel_dimension(Ts)
    return kt - kc, min(gap1, gap2), kt, kc


def fredholm_index(problem: ToeplitzProblem) -> tuple[int, dict]:
    """``dim ker T - dim ker T*``, certified by agreement at ``cutoff`` and ``cutoff + 4``."""
    if problem.base != "S1":
        raise NotImplementedError("spectral index is implemented on the circle only")
    a, gap_a, ka, ca = _index_at(problem.g, problem.theta, problem.cutoff)
    b, gap_b, _, _ = _index_at(problem.g, problem.theta, problem.cutoff + STABILITY_STEP)
    if a != b:
        raise IndexStabilityError(f"index changes from {a} to {b} under cutoff refinement")
    return a, dict(svd_gap=min(gap_a, gap_b), stability_delta=abs(a - b),
                   kernel=ka, cokernel=ca)


# ----------------------------------------------------------------------------
# odd Chern character pairing


def _spec_sampler(g: UnitaryMapSpec) -> Callable[[np.ndarray], np.ndarray]:
    ws = [np.array(w, dtype=float) for w in g.coefficients]
    cs = list(g.coefficients.values())

    def sample(pts):
        out = np.zeros(pts.shape[:-1] + (g.N, g.N), dtype=complex)
        for w, c in zip(ws, cs):
            out += np.exp(2j * np.pi * (pts @ w))[..., None, None] * c
        return out
    return sample


def _fft_derivatives(vals: np.ndarray, dim: int) -> list[np.ndarray]:
    R = vals.shape[0]
    freq = np.fft.fftfreq(R, d=1.0 / R)
    if R % 2 == 0:
        freq[R // 2] = 0.0
    out = []
    for j in range(dim):
        shape = [1] * dim + [1, 1]
        shape[j] = R
        F = np.fft.fft(vals, axis=j)
        out.append(np.fft.ifft(F * (2j * np.pi * freq).reshape(shape), axis=j))
    return out


def _pairing_on_grid(sample: Callable, dim: int, R: int) -> float:
    x = np.arange(R) / R
    pts = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1)
    g = sample(pts)
    ginv = np.linalg.inv(g)
    omega = [ginv @ d for d in _fft_derivatives(g, dim)]
    if dim == 1:
        total = np.trace(omega[0], axis1=-2, axis2=-1).mean()
        return float(np.real(-total / (2j * np.pi)))
    dens = 0
    for perm in itertools.permutations(range(3)):
        sgn = np.linalg.det(np.eye(3)[list(perm)])
        dens = dens + sgn * np.trace(omega[perm[0]] @ omega[perm[1]] @ omega[perm[2]],
                                     axis1=-2, axis2=-1)
    total = dens.mean() / 6
    return float(np.real(-total / (2j * np.pi) ** 2))


def odd_chern_pairing(g: UnitaryMapSpec | Callable, dim: int | None = None,
                      resolution: int | None = None, tol: float = PAIRING_TOL) -> tuple[float, float]:
    """Top-degree odd Chern pairing ``-(1/2 pi i)^((d+1)/2) int ch(g)`` on ``T^d``, ``d`` in {1, 3}.

    ``g`` is a :class:`UnitaryMapSpec` or a vectorized callable sending points of
    shape ``(..., d)`` in ``[0,1)^d`` to ``(..., N, N)`` unitaries.  Derivatives are
    spectral, the integral is the trapezoid rule, and the error estimate is the
    change under grid doubling.  Returns ``(value, error)``.
    """
    if isinstance(g, UnitaryMapSpec):
        dim = g.dim
        sample = _spec_sampler(g)
        R = resolution or max(8, 6 * g.max_frequency + 4)
    else:
        if dim is None:
            raise ValueError("dim is required for a callable map")
        sample = g
        R = resolution or (256 if dim == 1 else 24)
    if dim not in (1, 3):
        raise ValueError("pairing is implemented for d = 1 and d = 3")
    coarse = _pairing_on_grid(sample, dim, R)
    fine = _pairing_on_grid(sample, dim, 2 * R)
    err = abs(fine - coarse)
    if err > tol:
        raise QuadratureError(
            f"pairing quadrature error {err:.2e} exceeds {tol:.0e}; increase the resolution beyond {R}")
    return fine, err


def verify_toeplitz(problem: ToeplitzProblem) -> IndexReport:
    """Spectral index against the pairing; raises on disagreement."""
    pairing, perr = odd_chern_pairing(problem.g)
    index, info = fredholm_index(problem)
    report = IndexReport(index, pairing,
                         dict(svd_gap=info["svd_gap"], stability_delta=info["stability_delta"],
                              pairing_error=perr),
                         dict(kernel=info["kernel"], cokernel=info["cokernel"],
                              cutoff=problem.cutoff, theta=problem.theta))
    if index != int(round(pairing)) or abs(pairing - round(pairing)) > 1e-6:
        raise ToeplitzMismatchError(
            f"index {index} (ker {info['kernel']}, coker {info['cokernel']}) "
            f"does not match pairing {pairing:.8f} (quadrature error {perr:.1e})")
    return report
