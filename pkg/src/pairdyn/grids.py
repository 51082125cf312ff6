"""Uniform 1D grids and the fields, two-point kernels and interaction
potentials that live on them.

Conventions used throughout the package:

* integrals carry the flat quadrature weight ``dx``,
* kernels compose like matrices with the same weight,
  ``(a o b)_{ij} = sum_m a_{im} b_{mj} dx``,
* the Dirac delta is the matrix ``I/dx`` so that it composes as an exact
  two-sided identity.

Internally most algebra is done on "operator matrices" ``A_hat = entries*dx``;
with that scaling composition is a plain matrix product and the
Hilbert-Schmidt norm of a kernel is the Frobenius norm of its operator
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SYMMETRIC = "symmetric"
HERMITIAN = "hermitian"
GENERAL = "general"

# relative tolerance for validating / detecting symmetry tags
SYMMETRY_RTOL = 1e-12


class GridMismatchError(ValueError):
    """Operands that must share a grid do not."""


class NumericalBlowupError(RuntimeError):
    """A time integration left its configured stability envelope."""


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("operands live on different grids")


@dataclass(frozen=True)
class Grid:
    """Uniform 1D grid with points x_i = x_min + i*dx, i = 0..n-1.

    If ``x_min`` is omitted the grid is centered around the origin, which is
    what the x-weighted (pseudoconformal) diagnostics expect.
    """

    n: int
    dx: float
    x_min: float | None = None
    periodic: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a grid needs at least two points")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if self.x_min is None:
            object.__setattr__(self, "x_min", -0.5 * self.n * self.dx)

    @property
    def length(self) -> float:
        return self.n * self.dx

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        """Spectral wavenumbers in FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    def separations(self) -> np.ndarray:
        """Pairwise distances |x_i - x_j| (minimum image when periodic)."""
        d = np.abs(self.x[:, None] - self.x[None, :])
        if self.periodic:
            d = np.minimum(d, self.length - d)
        return d


@lru_cache(maxsize=32)
def minus_laplacian_op(grid: Grid) -> np.ndarray:
    """Dense operator matrix of -d^2/dx^2 (spectral, periodic).

    Positive semidefinite and Hermitian; acting on the sampled values of a
    grid-resolved plane wave e^{i xi x} it returns xi^2 times them exactly.
    """
    if not grid.periodic:
        raise ValueError("the spectral Laplacian needs a periodic grid")
    xi2 = grid.wavenumbers() ** 2
    cols = np.fft.fft(np.eye(grid.n), axis=0)
    mat = np.fft.ifft(xi2[:, None] * cols, axis=0)
    return 0.5 * (mat + mat.conj().T)


@dataclass
class Field:
    """Complex one-particle wave function sampled on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} samples, got {v.shape}")
        self.values = v.copy()

    def norm(self) -> float:
        """L2 norm with quadrature weight dx."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.dx))

    def lp_norm(self, p: float) -> float:
        return float((np.sum(np.abs(self.values) ** p) * self.grid.dx) ** (1.0 / p))

    def density(self) -> np.ndarray:
        """|phi|^2 as a real array."""
        return np.abs(self.values) ** 2

    def copy(self) -> "Field":
        return Field(self.grid, self.values)


def inner_product(f: Field, g: Field) -> complex:
    """Discrete L2 pairing sum_i f_i conj(g_i) dx."""
    _require_same_grid(f, g)
    return complex(np.sum(f.values * np.conj(g.values)) * f.grid.dx)


def detect_symmetry(entries: np.ndarray, rtol: float = SYMMETRY_RTOL) -> str:
    scale = float(np.max(np.abs(entries)))
    if scale == 0.0:
        return SYMMETRIC
    if np.max(np.abs(entries - entries.T)) <= rtol * scale:
        return SYMMETRIC
    if np.max(np.abs(entries - entries.conj().T)) <= rtol * scale:
        return HERMITIAN
    return GENERAL


@dataclass
class Kernel:
    """Dense two-point kernel k(x_i, x_j) with a symmetry tag.

    The tag is validated on construction: a kernel claiming ``symmetric`` or
    ``hermitian`` must satisfy the corresponding entrywise identity to
    relative 1e-12.
    """

    grid: Grid
    entries: np.ndarray
    symmetry: str = GENERAL

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.complex128)
        if e.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"expected {(self.grid.n,) * 2} entries, got {e.shape}")
        self.entries = e.copy()
        scale = float(np.max(np.abs(e)))
        if self.symmetry == SYMMETRIC and scale > 0:
            if np.max(np.abs(e - e.T)) > SYMMETRY_RTOL * scale:
                raise ValueError("kernel tagged symmetric is not")
        elif self.symmetry == HERMITIAN and scale > 0:
            if np.max(np.abs(e - e.conj().T)) > SYMMETRY_RTOL * scale:
                raise ValueError("kernel tagged hermitian is not")
        elif self.symmetry not in (SYMMETRIC, HERMITIAN, GENERAL):
            raise ValueError(f"unknown symmetry tag {self.symmetry!r}")

    def op(self) -> np.ndarray:
        """Operator matrix entries*dx (composition becomes matmul)."""
        return self.entries * self.grid.dx

    @classmethod
    def from_op(cls, grid: Grid, mat: np.ndarray, symmetry: str | None = None) -> "Kernel":
        entries = np.asarray(mat, dtype=np.complex128) / grid.dx
        if symmetry is None:
            symmetry = detect_symmetry(entries)
        return cls(grid, entries, symmetry)

    def copy(self) -> "Kernel":
        return Kernel(self.grid, self.entries, self.symmetry)


def zero_kernel(grid: Grid) -> Kernel:
    return Kernel(grid, np.zeros((grid.n, grid.n)), SYMMETRIC)


def identity_kernel(grid: Grid) -> Kernel:
    """The Dirac delta: I/dx, a two-sided unit for composition."""
    return Kernel(grid, np.eye(grid.n) / grid.dx, SYMMETRIC)


def kernel_compose(a: Kernel, b: Kernel) -> Kernel:
    """Spatial composition (a o b)(x, y) = int a(x, z) b(z, y) dz."""
    _require_same_grid(a, b)
    entries = a.entries @ b.entries * a.grid.dx
    return Kernel(a.grid, entries, detect_symmetry(entries))


def kernel_apply(a: Kernel, f: Field) -> Field:
    """Apply a kernel to a field: (a f)(x) = int a(x, y) f(y) dy."""
    _require_same_grid(a, f)
    return Field(a.grid, a.op() @ f.values)


def hs_norm(a: Kernel) -> float:
    """Hilbert-Schmidt norm sqrt(sum |a_ij|^2 dx^2)."""
    return float(np.linalg.norm(a.entries) * a.grid.dx)


def operator_norm(a: Kernel) -> float:
    """Largest singular value of the operator matrix."""
    return float(np.linalg.norm(a.op(), 2))


def kernel_trace(a: Kernel) -> complex:
    """Operator trace int a(x, x) dx."""
    return complex(np.trace(a.entries) * a.grid.dx)


def adjoint(a: Kernel) -> Kernel:
    e = a.entries.conj().T
    return Kernel(a.grid, e, detect_symmetry(e))


def transpose(a: Kernel) -> Kernel:
    e = a.entries.T
    return Kernel(a.grid, e, detect_symmetry(e))


def conjugate(a: Kernel) -> Kernel:
    e = a.entries.conj()
    return Kernel(a.grid, e, detect_symmetry(e))


class Potential:
    """Even two-body interaction v(x - y) sampled as a real symmetric matrix.

    Kinds:

    ``coulomb``
        strength * exp(-(r/cutoff)^2) / sqrt(r^2 + epsilon^2); a soft-core
        1/r with a smooth decreasing cutoff.  The soft core keeps the
        profile smooth across r = 0 (a |r|-type kink would put a spatial
        discretization floor under the conformal balance); the radial
        derivative is analytic.
    ``gaussian``
        strength * exp(-r^2 / (2 width^2)); smooth, for convergence tests.
    ``delta``
        strength * I/dx; contact interaction, radial derivative zero.

    With ``defocusing=True`` (repulsive interaction) the samples must be
    nonnegative entrywise.
    """

    def __init__(self, grid: Grid, kind: str = "coulomb", strength: float = 1.0,
                 epsilon: float = 0.2, cutoff: float = 4.0, width: float = 1.0,
                 defocusing: bool = True):
        self.grid = grid
        self.kind = kind
        self.strength = float(strength)
        self.epsilon = float(epsilon)
        self.cutoff = float(cutoff)
        self.width = float(width)
        self.defocusing = bool(defocusing)

        r = grid.separations()
        if kind == "coulomb":
            if self.epsilon <= 0:
                raise ValueError("coulomb kind needs epsilon > 0")
            chi = np.exp(-((r / self.cutoff) ** 2))
            dchi = -2.0 * r / self.cutoff**2 * chi
            soft = np.sqrt(r**2 + self.epsilon**2)
            self._matrix = self.strength * chi / soft
            self._vprime = self.strength * (dchi / soft - chi * r / soft**3)
        elif kind == "gaussian":
            self._matrix = self.strength * np.exp(-(r**2) / (2.0 * self.width**2))
            self._vprime = -r / self.width**2 * self._matrix
        elif kind == "delta":
            self._matrix = self.strength * np.eye(grid.n) / grid.dx
            self._vprime = np.zeros_like(r)
        else:
            raise ValueError(f"unknown potential kind {kind!r}")

        if np.max(np.abs(self._matrix - self._matrix.T)) > 1e-12 * max(
            1.0, np.max(np.abs(self._matrix))
        ):
            raise ValueError("potential samples are not even")
        if self.defocusing and np.min(self._matrix) < 0:
            raise ValueError("defocusing potential must be nonnegative entrywise")

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def vprime(self) -> np.ndarray:
        """Radial derivative v'(|x_i - x_j|), analytic."""
        return self._vprime

    def conformal_coefficient(self) -> np.ndarray:
        """The combination v + r v' entering the scaled conformal balance."""
        return self._matrix + self.grid.separations() * self._vprime

    def convolve(self, density: np.ndarray) -> np.ndarray:
        """(v * rho)_i = sum_j v(x_i - x_j) rho_j dx."""
        return self._matrix @ np.asarray(density) * self.grid.dx

    def convolve_squared(self, density: np.ndarray) -> np.ndarray:
        """(v^2 * rho), used by the pair-source norm identity."""
        return (self._matrix**2) @ np.asarray(density) * self.grid.dx

    def as_kernel(self) -> Kernel:
        return Kernel(self.grid, self._matrix, SYMMETRIC)
