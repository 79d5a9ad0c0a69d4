"""Flat tori, truncated mode sets and unitary maps given as Fourier series."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNITARITY_TOL = 1e-10


class UnitarityError(ValueError):
    pass


@dataclass(frozen=True)
class TorusSpec:
    """Flat unit torus ``R^d / Z^d`` with spin structure and flat twist.

    A Fourier mode ``n`` carries momentum ``n + spin + twist``.
    """

    dim: int
    spin: tuple[float, ...]
    twist: tuple[float, ...] = None

    def __post_init__(self):
        twist = self.twist if self.twist is not None else (0.0,) * self.dim
        object.__setattr__(self, "spin", tuple(float(e) for e in self.spin))
        object.__setattr__(self, "twist", tuple(float(t) for t in twist))
        if len(self.spin) != self.dim or len(self.twist) != self.dim:
            raise ValueError("spin structure and twist need one entry per torus direction")
        for e in self.spin:
            if e not in (0.0, 0.5):
                raise ValueError(f"spin structure entries must be 0 or 1/2, got {e}")
        for t in self.twist:
            if not 0.0 <= t < 1.0:
                raise ValueError(f"flat twist entries must lie in [0, 1), got {t}")

    @property
    def shift(self) -> np.ndarray:
        return np.array(self.spin) + np.array(self.twist)


@dataclass(frozen=True)
class ModeSet:
    cutoff: int
    integers: np.ndarray
    momenta: np.ndarray

    def __len__(self):
        return len(self.integers)

    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in n): i for i, n in enumerate(self.integers)}


def mode_set(spec: TorusSpec, cutoff: int) -> ModeSet:
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    rng = range(-cutoff, cutoff + 1)
    ints = np.array(list(itertools.product(rng, repeat=spec.dim)), dtype=int).reshape(-1, spec.dim)
    return ModeSet(cutoff, ints, ints + spec.shift)


@dataclass(frozen=True)
class UnitaryMapSpec:
    """``g(x) = sum_w ghat_w exp(2 pi i w.x)`` with ``N x N`` coefficients.

    ``character`` marks ``g = exp(2 pi i m.x)`` (``N = 1``), which downstream code
    treats in closed form.
    """

    N: int
    dim: int
    coefficients: dict = field(default_factory=dict)
    character: tuple[int, ...] | None = None

    @classmethod
    def from_character(cls, m) -> "UnitaryMapSpec":
        m = tuple(int(v) for v in m)
        return cls(1, len(m), {m: np.ones((1, 1), dtype=complex)}, character=m)

    @classmethod
    def constant(cls, U, dim: int) -> "UnitaryMapSpec":
        U = np.atleast_2d(np.asarray(U, dtype=complex))
        return cls(U.shape[0], dim, {(0,) * dim: U})

    @classmethod
    def from_coefficients(cls, coefficients, dim: int | None = None) -> "UnitaryMapSpec":
        coeffs = {tuple(int(v) for v in w): np.atleast_2d(np.asarray(c, dtype=complex))
                  for w, c in coefficients.items()}
        if not coeffs:
            raise ValueError("a unitary map needs at least one Fourier coefficient")
        shapes = {c.shape for c in coeffs.values()}
        dims = {len(w) for w in coeffs}
        if len(shapes) != 1 or len(dims) != 1:
            raise ValueError("inconsistent coefficient shapes or frequency dimensions")
        (shape,), (d,) = shapes, dims
        if shape[0] != shape[1]:
            raise ValueError("coefficients must be square matrices")
        if dim is not None and dim != d:
            raise ValueError(f"frequency vectors have {d} entries, expected {dim}")
        return cls(shape[0], d, coeffs)

    @property
    def max_frequency(self) -> int:
        return max(max((abs(v) for v in w), default=0) for w in self.coefficients)

    def adjoint(self) -> "UnitaryMapSpec":
        coeffs = {tuple(-v for v in w): c.conj().T for w, c in self.coefficients.items()}
        char = None if self.character is None else tuple(-v for v in self.character)
        return UnitaryMapSpec(self.N, self.dim, coeffs, char)

    def product(self, other: "UnitaryMapSpec") -> "UnitaryMapSpec":
        """Pointwise product ``self(x) @ other(x)``."""
        if (self.N, self.dim) != (other.N, other.dim):
            raise ValueError("maps must share N and dimension")
        out: dict = {}
        for w1, c1 in self.coefficients.items():
            for w2, c2 in other.coefficients.items():
                w = tuple(a + b for a, b in zip(w1, w2))
                out[w] = out.get(w, 0) + c1 @ c2
        char = None
        if self.character is not None and other.character is not None:
            char = tuple(a + b for a, b in zip(self.character, other.character))
        return UnitaryMapSpec(self.N, self.dim, out, char)

    def conjugate_by(self, U) -> "UnitaryMapSpec":
        U = np.asarray(U, dtype=complex)
        coeffs = {w: U @ c @ U.conj().T for w, c in self.coefficients.items()}
        return UnitaryMapSpec(self.N, self.dim, coeffs)


def _grid(dim: int, resolution: int) -> np.ndarray:
    x = np.arange(resolution) / resolution
    return np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1)


def _sample(coeffs: dict, N: int, dim: int, resolution: int) -> np.ndarray:
    pts = _grid(dim, resolution)
    out = np.zeros(pts.shape[:-1] + (N, N), dtype=complex)
    for w, c in coeffs.items():
        phase = np.exp(2j * np.pi * (pts @ np.array(w, dtype=float)))
        out += phase[..., None, None] * c
    return out


def evaluate_map(g: UnitaryMapSpec, resolution: int) -> tuple[np.ndarray, float]:
    """Sample ``g`` on the uniform grid and return ``(values, max ||g^* g - 1||)``."""
    if resolution < 2 * g.max_frequency + 1:
        raise ValueError(
            f"grid resolution {resolution} too coarse for frequency {g.max_frequency}; "
            f"need at least {2 * g.max_frequency + 1}")
    vals = _sample(g.coefficients, g.N, g.dim, resolution)
    gram = np.einsum("...ji,...jk->...ik", vals.conj(), vals)
    resid = np.abs(gram - np.eye(g.N)).max()
    return vals, float(resid)


def _check_unitary(g: UnitaryMapSpec, resolution: int, tol: float):
    _, resid = evaluate_map(g, resolution)
    if resid > tol:
        raise UnitarityError(f"map is not unitary: residual {resid:.3e} exceeds {tol:.1e}")


@dataclass(frozen=True)
class MaurerCartan:
    """Fourier coefficients of ``omega_j = g^{-1} d_j g``.

    ``coefficients[w]`` has shape ``(dim, N, N)``.
    """

    dim: int
    N: int
    coefficients: dict

    def component(self, j: int) -> dict:
        return {w: c[j] for w, c in self.coefficients.items()}

    def sample(self, resolution: int) -> np.ndarray:
        pts = _grid(self.dim, resolution)
        out = np.zeros(pts.shape[:-1] + (self.dim, self.N, self.N), dtype=complex)
        for w, c in self.coefficients.items():
            phase = np.exp(2j * np.pi * (pts @ np.array(w, dtype=float)))
            out += phase[..., None, None, None] * c
        return out

    @property
    def max_frequency(self) -> int:
        return max(max((abs(v) for v in w), default=0) for w in self.coefficients)


def maurer_cartan(g: UnitaryMapSpec, resolution: int | None = None,
                  tol: float = UNITARITY_TOL) -> MaurerCartan:
    res = resolution or 4 * g.max_frequency + 3
    if g.character is not None:
        m = np.array(g.character, dtype=float)
        coeff = (2j * np.pi * m)[:, None, None] * np.ones((1, 1, 1))
        return MaurerCartan(g.dim, 1, {(0,) * g.dim: coeff.astype(complex)})
    _check_unitary(g, res, tol)
    ginv = g.adjoint()
    out: dict = {}
    for u, a in ginv.coefficients.items():
        for w, b in g.coefficients.items():
            if not any(w):
                continue
            f = tuple(x + y for x, y in zip(u, w))
            term = (2j * np.pi * np.array(w, dtype=float))[:, None, None] * (a @ b)[None]
            out[f] = out.get(f, 0) + term
    out = {w: c for w, c in out.items() if np.abs(c).max() > 1e-15}
    if not out:
        out = {(0,) * g.dim: np.zeros((g.dim, g.N, g.N), dtype=complex)}
    mc = MaurerCartan(g.dim, g.N, out)
    vals = mc.sample(res)
    skew = np.abs(vals + np.swapaxes(vals, -1, -2).conj()).max()
    if skew > 1e3 * tol:
        raise UnitarityError(f"Maurer-Cartan form not skew-Hermitian: residual {skew:.3e}")
    return mc


def winding(g: UnitaryMapSpec, resolution: int | None = None) -> tuple[np.ndarray, float]:
    """Winding numbers of a scalar map along each coordinate direction.

    Returns the rounded integers and the worst pre-rounding deviation.
    """
    if g.N != 1:
        raise ValueError("winding is defined here for N = 1 maps only")
    res = resolution or max(4 * g.max_frequency + 3, 8)
    vals, _ = evaluate_map(g, res)
    vals = vals[..., 0, 0]
    pts = _grid(g.dim, res)
    raw = np.empty(g.dim)
    for j in range(g.dim):
        dg = np.zeros_like(vals)
        for w, c in g.coefficients.items():
            phase = np.exp(2j * np.pi * (pts @ np.array(w, dtype=float)))
            dg += 2j * np.pi * w[j] * c[0, 0] * phase
        raw[j] = np.real(np.mean(dg / vals) / (2j * np.pi))
    m = np.rint(raw).astype(int)
    resid = float(np.abs(raw - m).max()) if g.dim else 0.0
    if resid > 0.01:
        raise ValueError(f"non-integer winding {raw}; map is not a loop or grid is too coarse")
    return m, resid


def parse_map_text(text: str) -> UnitaryMapSpec:
    """Parse the coefficient-file format.

    Header lines ``N <int>`` and ``dim <int>``; then one line per matrix entry:
    ``w_1 ... w_dim  a  b  re  im`` with 0-based row ``a`` and column ``b``.
    For ``N = 1`` the ``a b`` columns may be omitted. ``#`` starts a comment.
    """
    N = dim = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head in ("N", "dim"):
            if len(rest) != 1:
                raise ValueError(f"line {lineno}: expected '{head} <int>'")
            if head == "N":
                N = int(rest[0])
            else:
                dim = int(rest[0])
            continue
        if N is None or dim is None:
            raise ValueError(f"line {lineno}: 'N' and 'dim' headers must precede coefficients")
        fields = line.split()
        if len(fields) == dim + 4:
            w, (a, b), (re, im) = fields[:dim], fields[dim:dim + 2], fields[dim + 2:]
        elif N == 1 and len(fields) == dim + 2:
            w, (a, b), (re, im) = fields[:dim], ("0", "0"), fields[dim:]
        else:
            raise ValueError(f"line {lineno}: expected {dim} frequencies, 'a b' and 're im'")
        entries.append((tuple(int(v) for v in w), int(a), int(b), complex(float(re), float(im))))
    if N is None or dim is None:
        raise ValueError("missing 'N' or 'dim' header")
    coeffs: dict = {}
    for w, a, b, z in entries:
        if not (0 <= a < N and 0 <= b < N):
            raise ValueError(f"matrix index ({a}, {b}) outside N = {N}")
        coeffs.setdefault(w, np.zeros((N, N), dtype=complex))[a, b] += z
    return UnitaryMapSpec.from_coefficients(coeffs, dim)


def read_map_file(path) -> UnitaryMapSpec:
    return parse_map_text(Path(path).read_text())


def format_map_text(g: UnitaryMapSpec) -> str:
    lines = [f"N {g.N}", f"dim {g.dim}"]
    for w, c in sorted(g.coefficients.items()):
        for a in range(g.N):
            for b in range(g.N):
                if c[a, b] != 0:
                    ws = " ".join(str(v) for v in w)
                    lines.append(f"{ws} {a} {b} {float(c[a, b].real)!r} {float(c[a, b].imag)!r}")
    return "\n".join(lines) + "\n"
