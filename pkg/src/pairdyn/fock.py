"""Truncated Fock-space oracle.

Occupation-number bases over M discrete modes with a total-particle cutoff,
second-quantized ladder operators, coherent states, quadratic (pair)
exponentials, the symplectic block-matrix algebra with its quadrature-basis
change, the cubic error vectors of the corrected mean-field ansatz, and the
desk-scale comparison of exact N-body evolution against the ansatz.

Mode dictionary: modes are grid delta functions scaled by sqrt(dx), so a
field phi has mode coefficients sqrt(dx) phi(x_i) and a kernel's quadratic-
form coefficients in mode space are exactly its operator matrix entries*dx.
With that scaling the two-body interaction (1/2) \\iint v a* a* a a carries
no residual dx factor: it is (1/2) sum_ij v_ij n_i (n_j - delta_ij),
diagonal in the occupation basis.

Sign conventions are tied together by TIME_EVOLUTION_SIGN: the exact state
is exp(+i t H) psi0 with H = sum dGamma(Lap) - V/N, which in the coherent
mean-field limit reproduces i phi_t = -Lap phi + (v*|phi|^2) phi exactly
(checked by a small-time agreement test).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .grids import (
    GENERAL,
    HERMITIAN,
    SYMMETRIC,
    Field,
    Grid,
    Kernel,
    Potential,
    hs_norm,
    minus_laplacian_op,
)
from .kernelcalc import ch_series, inverse_sh, sh_series

# exact evolution is exp(+1j * TIME_EVOLUTION_SIGN * t * H); shared so the
# Hamiltonian, the mean-field equation and the ansatz stay consistent
TIME_EVOLUTION_SIGN = +1.0


def _binomial(n, k):
    return math.comb(n, k)


def _compositions(total: int, parts: int):
    """All occupation tuples with given total, lexicographically ascending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class FockBasis:
    """Occupation basis (n_1..n_M) with sum n_i <= cutoff, graded lex order.

    The grading makes truncation projectors prefixes: all states with total
    occupation <= L come first, so restricting an operator to the
    truncation-safe subspace is a column slice.
    """

    def __init__(self, modes: int, cutoff: int):
        if modes < 1 or cutoff < 0:
            raise ValueError("need modes >= 1 and cutoff >= 0")
        self.modes = modes
        self.cutoff = cutoff
        states = []
        offsets = [0]
        for total in range(cutoff + 1):
            states.extend(_compositions(total, modes))
            offsets.append(len(states))
        self.states = states
        self.level_offsets = offsets
        self.index = {s: i for i, s in enumerate(states)}
        self.occupations = np.array(states, dtype=np.int64)
        self.totals = self.occupations.sum(axis=1)
        assert len(states) == _binomial(cutoff + modes, modes)

    @property
    def dim(self) -> int:
        return len(self.states)

    def prefix_dim(self, max_total: int) -> int:
        """Dimension of the subspace with total occupation <= max_total."""
        max_total = min(max_total, self.cutoff)
        if max_total < 0:
            return 0
        return self.level_offsets[max_total + 1]

    def slot_slice(self, total: int) -> slice:
        if total > self.cutoff:
            return slice(0, 0)
        return slice(self.level_offsets[total], self.level_offsets[total + 1])

    def vacuum(self) -> "FockVector":
        c = np.zeros(self.dim, dtype=np.complex128)
        c[0] = 1.0
        return FockVector(self, c)


@dataclass
class FockVector:
    basis: FockBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.basis.dim,):
            raise ValueError("coefficient length does not match the basis")
        self.coeffs = c.copy()

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def slot(self, total: int) -> np.ndarray:
        return self.coeffs[self.basis.slot_slice(total)]


def fock_inner(a: FockVector, b: FockVector) -> complex:
    return complex(np.sum(a.coeffs * np.conj(b.coeffs)))


@dataclass
class FockOperator:
    """Thin wrapper over a (sparse or dense) matrix on a FockBasis."""

    basis: FockBasis
    matrix: object

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)

    def adjoint(self) -> "FockOperator":
        return FockOperator(self.basis, self.matrix.conj().T)

    def apply(self, vec: FockVector) -> FockVector:
        return FockVector(vec.basis, self.matrix @ vec.coeffs)

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            return FockOperator(self.basis, self.matrix @ other.matrix)
        return NotImplemented

    def __add__(self, other):
        return FockOperator(self.basis, self.matrix + other.matrix)

    def __sub__(self, other):
        return FockOperator(self.basis, self.matrix - other.matrix)

    def __rmul__(self, scalar):
        return FockOperator(self.basis, scalar * self.matrix)


def build_ladder(basis: FockBasis):
    """Mode-wise annihilation and creation matrices (a, a_star).

    a_i lowers mode i with amplitude sqrt(n_i); a*_i is its transpose.  The
    canonical commutator [a_i, a*_j] = delta_ij holds exactly on states with
    total occupation < cutoff.
    """
    dim = basis.dim
    lowering = []
    for mode in range(basis.modes):
        rows, cols, vals = [], [], []
        for idx, state in enumerate(basis.states):
            n = state[mode]
            if n > 0:
                target = list(state)
                target[mode] = n - 1
                rows.append(basis.index[tuple(target)])
                cols.append(idx)
                vals.append(math.sqrt(n))
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=np.complex128)
        lowering.append(FockOperator(basis, mat))
    raising = [FockOperator(basis, op.matrix.T.tocsr()) for op in lowering]
    return lowering, raising


def number_operator(basis: FockBasis) -> FockOperator:
    return FockOperator(basis, sp.diags(basis.totals.astype(np.float64)).tocsr())


def poisson_tail(mean: float, cutoff: int) -> float:
    """P(X > cutoff) for X ~ Poisson(mean), summed termwise (no cancellation)."""
    if mean <= 0:
        return 0.0
    log_term = -mean + (cutoff + 1) * math.log(mean) - math.lgamma(cutoff + 2)
    term = math.exp(log_term)
    total = 0.0
    n = cutoff + 1
    while term > 1e-30 and n < cutoff + 10000:
        total += term
        n += 1
        term *= mean / n
    return total


def required_cutoff(mean: float, tol: float) -> int:
    """Smallest cutoff whose Poisson tail mass is below tol."""
    p = max(1, int(mean))
    while poisson_tail(mean, p) >= tol:
        p += 1
    return p


def mode_coefficients(phi: Field) -> np.ndarray:
    """Field -> mode coefficient dictionary (isometric: sqrt(dx) phi)."""
    return np.sqrt(phi.grid.dx) * phi.values


def field_from_modes(grid: Grid, coeffs: np.ndarray) -> Field:
    return Field(grid, np.asarray(coeffs) / np.sqrt(grid.dx))


def displacement_generator(mode_coeffs: np.ndarray, basis: FockBasis) -> FockOperator:
    """A = sum_i (c_i a*_i - conj(c_i) a_i); anti-Hermitian."""
    a, astar = build_ladder(basis)
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for i, c in enumerate(mode_coeffs):
        mat = mat + c * astar[i].matrix - np.conj(c) * a[i].matrix
    return FockOperator(basis, mat.tocsr())


def coherent_state(mode_coeffs: np.ndarray, n_particles: float, basis: FockBasis,
                   loss_tol: float = 1e-8, cross_check: bool = True) -> FockVector:
    """exp(-sqrt(N) A(phi)) applied to the vacuum.

    Built from the closed-form Poisson amplitudes (displacement by
    alpha = -sqrt(N) c) and, when ``cross_check`` is on, verified against the
    matrix exponential of the generator to 1e-8.  Raises if the truncation
    loses more than ``loss_tol`` of the mass.
    """
    c = np.asarray(mode_coeffs, dtype=np.complex128)
    norm_sq = float(np.sum(np.abs(c) ** 2))
    tail = poisson_tail(n_particles * norm_sq, basis.cutoff)
    if tail > loss_tol:
        raise ValueError(
            f"cutoff {basis.cutoff} keeps only 1 - {tail:.2e} of the coherent mass "
            f"(Poisson tail estimate for mean {n_particles * norm_sq:.3f}); "
            f"tolerance is {loss_tol:.1e}"
        )
    alpha = -math.sqrt(n_particles) * c
    occ = basis.occupations
    mag = np.abs(alpha)
    with np.errstate(divide="ignore"):
        log_mag = np.where(mag > 0, np.log(np.where(mag > 0, mag, 1.0)), -np.inf)
    log_amp = np.where(occ > 0, occ * log_mag[None, :], 0.0).sum(axis=1)
    log_amp -= 0.5 * np.array([sum(math.lgamma(n + 1) for n in s) for s in basis.states])
    log_amp -= 0.5 * n_particles * norm_sq
    phase = np.exp(1j * occ @ np.angle(alpha))
    coeffs = np.exp(log_amp) * phase
    direct = FockVector(basis, coeffs)

    if cross_check:
        gen = displacement_generator(c, basis)
        via_exp = expm_multiply(-math.sqrt(n_particles) * gen.matrix.tocsc(),
                                basis.vacuum().coeffs)
        agree = float(np.linalg.norm(direct.coeffs - via_exp))
        if agree > 1e-8:
            raise RuntimeError(
                f"coherent-state constructions disagree by {agree:.3e}")
    return direct


def build_quadratic(k: Kernel, basis: FockBasis) -> FockOperator:
    """Pair generator B = (1/2) sum_ij (kappa_ij a_i a_j - conj a*_i a*_j)
    with kappa the operator matrix of the symmetric kernel k.  Anti-Hermitian
    by construction."""
    kappa = k.op()
    scale = float(np.max(np.abs(kappa)))
    if scale > 0 and np.max(np.abs(kappa - kappa.T)) > 1e-10 * scale:
        raise ValueError("pair generator needs a symmetric kernel")
    a, astar = build_ladder(basis)
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for i in range(basis.modes):
        for j in range(basis.modes):
            if kappa[i, j] == 0:
                continue
            mat = mat + 0.5 * kappa[i, j] * (a[i].matrix @ a[j].matrix)
            mat = mat - 0.5 * np.conj(kappa[i, j]) * (astar[i].matrix @ astar[j].matrix)
    return FockOperator(basis, mat.tocsr())


def exp_B(b: FockOperator, n_split: int = 1) -> FockOperator:
    """Dense matrix exponential (scaling and squaring), optionally evaluated
    as (exp(B/n))^n; the result is independent of n and unitary for
    anti-Hermitian B."""
    if n_split < 1:
        raise ValueError("n_split must be >= 1")
    step = scipy.linalg.expm(b.dense() / n_split)
    return FockOperator(b.basis, np.linalg.matrix_power(step, n_split))


# -- symplectic block-matrix algebra -------------------------------------

_C2 = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / math.sqrt(2.0)


@dataclass
class BlockMatrix:
    """Element [[d, k], [l, -d^T]] of the complex symplectic Lie algebra,
    with symmetric k and l, blocks stored as kernels."""

    d: Kernel
    k: Kernel
    l: Kernel

    def __post_init__(self):
        grid = self.d.grid
        if self.k.grid != grid or self.l.grid != grid:
            raise ValueError("blocks live on different grids")
        for name, blk in (("k", self.k), ("l", self.l)):
            scale = float(np.max(np.abs(blk.entries)))
            if scale > 0 and np.max(np.abs(blk.entries - blk.entries.T)) > 1e-10 * scale:
                raise ValueError(f"block {name} must be symmetric")

    @property
    def grid(self) -> Grid:
        return self.d.grid

    def as_matrix(self) -> np.ndarray:
        """2n x 2n operator-unit matrix."""
        n = self.grid.n
        mat = np.zeros((2 * n, 2 * n), dtype=np.complex128)
        mat[:n, :n] = self.d.op()
        mat[:n, n:] = self.k.op()
        mat[n:, :n] = self.l.op()
        mat[n:, n:] = -self.d.op().T
        return mat

    @classmethod
    def from_matrix(cls, grid: Grid, mat: np.ndarray, tol: float = 1e-9) -> "BlockMatrix":
        n = grid.n
        d_op, k_op = mat[:n, :n], mat[:n, n:]
        l_op, neg_dt = mat[n:, :n], mat[n:, n:]
        scale = max(1.0, float(np.max(np.abs(mat))))
        if np.max(np.abs(neg_dt + d_op.T)) > tol * scale:
            raise ValueError("matrix is not in the symplectic block form")
        k_op = 0.5 * (k_op + k_op.T)
        l_op = 0.5 * (l_op + l_op.T)
        return cls(
            d=Kernel.from_op(grid, d_op),
            k=Kernel.from_op(grid, k_op, SYMMETRIC),
            l=Kernel.from_op(grid, l_op, SYMMETRIC),
        )

    def bracket(self, other: "BlockMatrix") -> "BlockMatrix":
        s, r = self.as_matrix(), other.as_matrix()
        return BlockMatrix.from_matrix(self.grid, s @ r - r @ s)

    def exp(self) -> np.ndarray:
        return scipy.linalg.expm(self.as_matrix())


def pair_block(k: Kernel) -> BlockMatrix:
    """The block matrix [[0, k], [kbar, 0]] of a symmetric pair kernel."""
    grid = k.grid
    zero = Kernel(grid, np.zeros((grid.n, grid.n)), SYMMETRIC)
    return BlockMatrix(d=zero, k=k.copy(),
                       l=Kernel(grid, k.entries.conj(), SYMMETRIC))


def _c_full(n: int) -> np.ndarray:
    return np.kron(_C2, np.eye(n))


def quadrature_basis_change(s: BlockMatrix):
    """Map to the real (momentum/position) quadrature basis: C^T S Cbar.

    Returns the transformed block matrix and its realness defect; elements
    whose image is entrywise real generate anti-Hermitian quadratics.
    """
    c = _c_full(s.grid.n)
    mat = c.T @ s.as_matrix() @ c.conj()
    defect = float(np.max(np.abs(mat.imag)))
    return BlockMatrix.from_matrix(s.grid, mat), defect


def quadrature_basis_inverse(s: BlockMatrix) -> BlockMatrix:
    """Inverse of :func:`quadrature_basis_change`: Cbar S C^T."""
    c = _c_full(s.grid.n)
    mat = c.conj() @ s.as_matrix() @ c.T
    return BlockMatrix.from_matrix(s.grid, mat)


def sp_real_defect(s: BlockMatrix) -> float:
    return quadrature_basis_change(s)[1]


def random_sp_c_real(grid: Grid, rng: np.random.Generator, scale: float = 0.1) -> BlockMatrix:
    """Random element whose quadrature image is real: Cbar [real sp] C^T."""
    n = grid.n
    a = scale * rng.standard_normal((n, n))
    b = scale * rng.standard_normal((n, n))
    b = 0.5 * (b + b.T)
    c = scale * rng.standard_normal((n, n))
    c = 0.5 * (c + c.T)
    d_op = 0.5 * ((a - a.T) + 1j * (c - b))
    k_op = 0.5 * ((a + a.T) + 1j * (b + c))
    return BlockMatrix(
        d=Kernel.from_op(grid, d_op),
        k=Kernel.from_op(grid, k_op, SYMMETRIC),
        l=Kernel.from_op(grid, k_op.conj(), SYMMETRIC),
    )


def metaplectic(s: BlockMatrix, basis: FockBasis) -> FockOperator:
    """Quadratic image of a symplectic block matrix:

    -(1/2) sum d_ij (a_i a*_j + a*_j a_i) + (1/2) sum k_ij a_i a_j
    - (1/2) sum l_ij a*_i a*_j,

    a Lie algebra homomorphism into quadratics; anti-Hermitian exactly when
    the quadrature image of the block matrix is real.
    """
    if basis.modes != s.grid.n:
        raise ValueError("basis mode count must match the block dimension")
    a, astar = build_ladder(basis)
    d_op, k_op, l_op = s.d.op(), s.k.op(), s.l.op()
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for i in range(basis.modes):
        for j in range(basis.modes):
            if d_op[i, j] != 0:
                sym = a[i].matrix @ astar[j].matrix + astar[j].matrix @ a[i].matrix
                mat = mat - 0.5 * d_op[i, j] * sym
            if k_op[i, j] != 0:
                mat = mat + 0.5 * k_op[i, j] * (a[i].matrix @ a[j].matrix)
            if l_op[i, j] != 0:
                mat = mat - 0.5 * l_op[i, j] * (astar[i].matrix @ astar[j].matrix)
    return FockOperator(basis, mat.tocsr())


def pair_generator_matches_metaplectic(k: Kernel, basis: FockBasis) -> float:
    """Entrywise defect between B(k) and the metaplectic image of its block."""
    b = build_quadratic(k, basis).dense()
    i_of = metaplectic(pair_block(k), basis).dense()
    return float(np.max(np.abs(b - i_of)))


def _column_restricted_norm(mat: np.ndarray, cols: int) -> float:
    return float(np.linalg.norm(mat[:, :cols], 2))


def conjugation_check(b: FockOperator, k: Kernel, basis: FockBasis,
                      n_safe: int = 2) -> float:
    """Defect of e^B a_i e^{-B} = sum_j (ch_ji a_j + conj(sh)_ji a*_j).

    Measured as the worst spectral norm of the difference restricted to
    columns in the truncation-safe subspace (total occupation <= n_safe);
    states near the cutoff are excluded because the exponential mixes them
    with the truncated levels.
    """
    a, astar = build_ladder(basis)
    e_b = scipy.linalg.expm(b.dense())
    e_b_inv = e_b.conj().T  # B is anti-Hermitian, so e^B is unitary
    ch_op = ch_series(k).op()
    sh_op = sh_series(k).op()
    cols = basis.prefix_dim(n_safe)
    worst = 0.0
    for i in range(basis.modes):
        lhs = e_b @ a[i].dense() @ e_b_inv
        rhs = np.zeros_like(lhs)
        for j in range(basis.modes):
            rhs += ch_op[j, i] * a[j].dense() + np.conj(sh_op[j, i]) * astar[j].dense()
        worst = max(worst, _column_restricted_norm(lhs - rhs, cols))
    return worst


def afg_operator(f_modes: np.ndarray, g_modes: np.ndarray, basis: FockBasis) -> FockOperator:
    """A(f, g) = a(f) + a*(g) from mode coefficient vectors."""
    a, astar = build_ladder(basis)
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for i in range(basis.modes):
        if f_modes[i] != 0:
            mat = mat + f_modes[i] * a[i].matrix
        if g_modes[i] != 0:
            mat = mat + g_modes[i] * astar[i].matrix
    return FockOperator(basis, mat.tocsr())


def lie_checks(s: BlockMatrix, r: BlockMatrix, phi_modes: np.ndarray,
               basis: FockBasis, n_safe: int = 2, fd_step: float = 1e-4) -> dict:
    """Residuals of the quadratic-algebra identities.

    lie1 / lie2 are polynomial commutator identities, measured on columns
    with total occupation <= cutoff - 2; the group identities (grp1-grp3)
    involve exponentials and are measured on the conservative safe subspace.
    phi enters through the pair (conj(phi), -phi) the generators act on.
    """
    i_s = metaplectic(s, basis).dense()
    i_r = metaplectic(r, basis).dense()
    phi_modes = np.asarray(phi_modes, dtype=np.complex128)
    pair = np.concatenate([phi_modes.conj(), -phi_modes])
    n = s.grid.n

    a_phi = afg_operator(pair[:n], pair[n:], basis).dense()
    cols_poly = basis.prefix_dim(basis.cutoff - 2)
    cols_exp = basis.prefix_dim(n_safe)
    out = {}

    s_mat = s.as_matrix()
    s_pair = s_mat @ pair
    a_s_phi = afg_operator(s_pair[:n], s_pair[n:], basis).dense()
    out["lie1"] = _column_restricted_norm(i_s @ a_phi - a_phi @ i_s - a_s_phi, cols_poly)

    i_bracket = metaplectic(s.bracket(r), basis).dense()
    out["lie2"] = _column_restricted_norm(i_s @ i_r - i_r @ i_s - i_bracket, cols_poly)

    e_is = scipy.linalg.expm(i_s)
    e_is_inv = np.linalg.inv(e_is)
    e_s = s.exp()
    e_pair = e_s @ pair
    a_e_phi = afg_operator(e_pair[:n], e_pair[n:], basis).dense()
    out["grp1"] = _column_restricted_norm(e_is @ a_phi @ e_is_inv - a_e_phi, cols_exp)

    conj_r = BlockMatrix.from_matrix(s.grid, e_s @ r.as_matrix() @ np.linalg.inv(e_s))
    i_conj = metaplectic(conj_r, basis).dense()
    out["grp2"] = _column_restricted_norm(e_is @ i_r @ e_is_inv - i_conj, cols_exp)

    h = fd_step
    e_plus = scipy.linalg.expm((1.0 + h) * i_s)
    e_minus = scipy.linalg.expm((1.0 - h) * i_s)
    fd = (e_plus - e_minus) / (2.0 * h) @ e_is_inv
    out["grp3"] = _column_restricted_norm(fd - i_s, cols_exp)
    return out


# -- interaction, Hamiltonian, exact evolution ----------------------------


def interaction_operator(v: Potential, basis: FockBasis) -> FockOperator:
    """(1/2) \\iint v(x-y) a*_x a*_y a_x a_y dx dy; diagonal in occupations,
    value (1/2) sum_ij v_ij n_i (n_j - delta_ij)."""
    occ = basis.occupations.astype(np.float64)
    vm = v.matrix
    diag = 0.5 * (np.einsum("si,ij,sj->s", occ, vm, occ) - occ @ np.diag(vm))
    return FockOperator(basis, sp.diags(diag).tocsr())


def hamiltonian(v: Potential, basis: FockBasis, n_particles: float) -> FockOperator:
    """H = sum_ij Lap_ij a*_i a_j - V / N with the spectral Laplacian
    (negative semidefinite) shared with the mean-field solver."""
    grid = v.grid
    if basis.modes != grid.n:
        raise ValueError("basis mode count must match the grid")
    lap = -minus_laplacian_op(grid)
    a, astar = build_ladder(basis)
    mat = sp.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    for i in range(grid.n):
        for j in range(grid.n):
            if abs(lap[i, j]) > 1e-15:
                mat = mat + lap[i, j] * (astar[i].matrix @ a[j].matrix)
    mat = mat - interaction_operator(v, basis).matrix / n_particles
    mat = 0.5 * (mat + mat.conj().T)
    return FockOperator(basis, mat.tocsr())


class ExactEvolver:
    """psi(t) = exp(+i t H) psi0, by eigendecomposition when the basis is
    small and by Krylov action of the exponential otherwise."""

    def __init__(self, h: FockOperator, dense_limit: int = 1500):
        self.basis = h.basis
        dim = h.basis.dim
        if dim <= dense_limit:
            w, v = np.linalg.eigh(h.dense())
            self._eig = (w, v)
            self._sparse = None
        else:
            self._eig = None
            self._sparse = h.matrix.tocsc()

    def advance(self, psi: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0:
            return psi.copy()
        phase = 1j * TIME_EVOLUTION_SIGN * dt
        if self._eig is not None:
            w, v = self._eig
            return v @ (np.exp(phase * w) * (v.conj().T @ psi))
        return expm_multiply(phase * self._sparse, psi)


def phase_min_distance(a: FockVector, b: FockVector) -> float:
    """min over a global phase of |e^{i theta} a - b|."""
    gap = a.norm() ** 2 + b.norm() ** 2 - 2.0 * abs(fock_inner(a, b))
    return float(math.sqrt(max(gap, 0.0)))


def pair_ansatz_state(phi: Field, k: Kernel | None, n_particles: float,
                      basis: FockBasis, loss_tol: float = 1e-6) -> FockVector:
    """exp(-sqrt(N) A(phi)) exp(-B(k)) applied to the vacuum; k = None (or a
    zero kernel) degrades the ansatz to the bare coherent state."""
    tail = poisson_tail(n_particles * phi.norm() ** 2, basis.cutoff)
    if tail > loss_tol:
        raise ValueError(
            f"cutoff {basis.cutoff} too small for N = {n_particles} "
            f"(Poisson tail {tail:.2e} > {loss_tol:.1e})")
    vec = basis.vacuum().coeffs
    if k is not None and hs_norm(k) > 0:
        b = build_quadratic(k, basis)
        vec = expm_multiply(-b.matrix.tocsc(), vec)
    gen = displacement_generator(mode_coefficients(phi), basis)
    vec = expm_multiply(-math.sqrt(n_particles) * gen.matrix.tocsc(), vec)
    return FockVector(basis, vec)


# -- cubic error vectors ---------------------------------------------------


def cubic_error_closed_form(phi: Field, k: Kernel, v: Potential):
    """Slot entries of the conjugated cubic commutator acting on the vacuum.

    Returns (slot3, slot1): the symmetric three-particle tensor (including
    the sqrt(3!) slot normalization) and the one-particle function, both by
    direct quadrature over the ch/sh kernels.  The delta part of ch is the
    I/dx matrix, so composition against it is exact.
    """
    grid = phi.grid
    dx = grid.dx
    ph = phi.values
    c = ch_series(k).entries
    s = sh_series(k).entries
    cb, sb = c.conj(), s.conj()
    vm = v.matrix

    w_3 = np.einsum("ax,bx,cy,xy,y->abc", cb, sb, sb, vm, ph.conj(), optimize=True)
    w_3 = w_3 + np.einsum("ax,by,cx,xy,y->abc", cb, cb, sb, vm, ph, optimize=True)
    w_3 *= dx**2
    sym = np.zeros_like(w_3)
    for perm in permutations(range(3)):
        sym += np.transpose(w_3, perm)
    slot3 = math.sqrt(6.0) * sym / 6.0

    slot1 = np.einsum("px,zx,py,xy,y->z", s, sb, sb, vm, ph.conj(), optimize=True)
    slot1 = slot1 + np.einsum("px,px,zy,xy,y->z", s, sb, sb, vm, ph.conj(), optimize=True)
    slot1 = slot1 + np.einsum("zx,px,py,xy,y->z", cb, c, sb, vm, ph.conj(), optimize=True)
    slot1 = slot1 + np.einsum("px,px,zy,xy,y->z", s, sb, cb, vm, ph, optimize=True)
    slot1 = slot1 + np.einsum("px,py,zx,xy,y->z", s, cb, sb, vm, ph, optimize=True)
    slot1 = slot1 + np.einsum("zx,py,px,xy,y->z", cb, s, sb, vm, ph, optimize=True)
    slot1 *= dx**3
    return slot3, slot1


def cubic_error_oracle(phi: Field, k: Kernel, v: Potential,
                       basis: FockBasis) -> FockVector:
    """Brute-force e^B [A, V] e^{-B} |vacuum> with explicit operators."""
    grid = phi.grid
    if basis.modes != grid.n:
        raise ValueError("basis mode count must match the grid")
    a_gen = displacement_generator(mode_coefficients(phi), basis)
    v_op = interaction_operator(v, basis)
    comm = a_gen.matrix @ v_op.matrix - v_op.matrix @ a_gen.matrix
    b = build_quadratic(k, basis)
    vec = basis.vacuum().coeffs
    vec = expm_multiply(-b.matrix.tocsc(), vec)
    vec = comm @ vec
    vec = expm_multiply(b.matrix.tocsc(), vec)
    return FockVector(basis, vec)


def quartic_error_oracle(phi: Field, k: Kernel, v: Potential,
                         basis: FockBasis) -> FockVector:
    """e^B V e^{-B} |vacuum>; only available through the Fock oracle."""
    v_op = interaction_operator(v, basis)
    b = build_quadratic(k, basis)
    vec = basis.vacuum().coeffs
    vec = expm_multiply(-b.matrix.tocsc(), vec)
    vec = v_op.matrix @ vec
    vec = expm_multiply(b.matrix.tocsc(), vec)
    return FockVector(basis, vec)


def slot1_function(vec: FockVector, grid: Grid) -> np.ndarray:
    """One-particle slot as a grid function."""
    basis = vec.basis
    out = np.zeros(grid.n, dtype=np.complex128)
    for idx in range(*_slice_bounds(basis, 1)):
        state = basis.states[idx]
        mode = state.index(1)
        out[mode] = vec.coeffs[idx] / math.sqrt(grid.dx)
    return out


def slot3_tensor(vec: FockVector, grid: Grid) -> np.ndarray:
    """Three-particle slot as the symmetric tensor psi_3(x_a, x_b, x_c)."""
    basis = vec.basis
    out = np.zeros((grid.n,) * 3, dtype=np.complex128)
    for idx in range(*_slice_bounds(basis, 3)):
        state = basis.states[idx]
        modes = []
        for mode, n in enumerate(state):
            modes.extend([mode] * n)
        fact = 1.0
        for n in state:
            fact *= math.factorial(n)
        value = vec.coeffs[idx] * math.sqrt(fact / 6.0) / grid.dx**1.5
        for perm in set(permutations(modes)):
            out[perm] = value
    return out


def _slice_bounds(basis: FockBasis, total: int):
    sl = basis.slot_slice(total)
    return sl.start, sl.stop


def error_functionals(phi: Field, k: Kernel, v: Potential,
                      basis: FockBasis | None = None):
    """(f, g): Fock norms of the cubic and quartic error vectors.

    f comes from the closed-form slot entries (grid quadrature, any size);
    g needs the Fock oracle and is None when no basis is supplied.
    """
    dx = phi.grid.dx
    slot3, slot1 = cubic_error_closed_form(phi, k, v)
    f = math.sqrt(
        float(np.sum(np.abs(slot1) ** 2) * dx
              + np.sum(np.abs(slot3) ** 2) * dx**3)
    )
    g = None
    if basis is not None:
        g = quartic_error_oracle(phi, k, v, basis).norm()
    return f, g


# -- desk-scale N-body comparison ------------------------------------------


def _trajectory_snapshots(phi0: Field, u0: Kernel, v: Potential, dt: float,
                          t_list, n_quad: int):
    """Co-evolved (phi(t), u(t)) at the requested times (t must sit on the
    step grid)."""
    from .hartree import HartreeState, hartree_step
    from .pairexc import build_coefficients, pair_step, PairState

    snaps = {}
    hstate = HartreeState(phi0.copy(), 0.0)
    pstate = PairState(u0.copy(), 0.0)
    targets = sorted(t_list)
    for t in targets:
        steps = round((t - pstate.t) / dt)
        if abs(steps * dt + pstate.t - t) > 1e-9:
            raise ValueError(f"time {t} is not a multiple of dt = {dt}")
        for _ in range(steps):
            h_mid = hartree_step(hstate, v, 0.5 * dt)
            coef = build_coefficients(h_mid.phi, v)
            pstate = pair_step(pstate, coef, dt, n_quad=n_quad)
            hstate = hartree_step(h_mid, v, 0.5 * dt)
        snaps[t] = (hstate.phi.copy(), pstate.u.copy())
    return snaps


def n_scaling_study(phi0: Field, k0: Kernel, v: Potential, n_list, t_list,
                    dt: float = 0.005, loss_tol: float = 1e-6,
                    dense_limit: int = 1500, n_quad: int = 64,
                    cutoff_margin: int = 2, compute_fg: bool = True,
                    serial: bool = True) -> list[dict]:
    """Phase-minimized distance between exact and corrected evolution.

    For each particle number N the exact state exp(i t H_N) psi0 is compared
    against the pair-corrected ansatz assembled from the co-evolved mean
    field and pair kernel, and against the bare coherent control.  psi0 is
    the ansatz at t = 0, so distances start at zero.  Returns one row per
    (N, t) with distances, truncation losses and the cubic/quartic error
    norms.
    """
    grid = phi0.grid
    u0 = sh_series(k0)
    snaps = _trajectory_snapshots(phi0, u0, v, dt, t_list, n_quad)

    def run_one(n_particles):
        cutoff = required_cutoff(n_particles, loss_tol) + cutoff_margin
        basis = FockBasis(grid.n, cutoff)
        h = hamiltonian(v, basis, n_particles)
        evolver = ExactEvolver(h, dense_limit=dense_limit)
        psi0 = pair_ansatz_state(phi0, k0, n_particles, basis, loss_tol)
        psi = psi0.coeffs.copy()
        t_prev = 0.0
        rows = []
        for t in sorted(t_list):
            psi = evolver.advance(psi, t - t_prev)
            t_prev = t
            phi_t, u_t = snaps[t]
            k_t = inverse_sh(u_t) if hs_norm(u_t) > 1e-13 else None
            appr = pair_ansatz_state(phi_t, k_t, n_particles, basis, loss_tol)
            ctrl = pair_ansatz_state(phi_t, None, n_particles, basis, loss_tol)
            exact = FockVector(basis, psi)
            f_t, g_t = (np.nan, np.nan)
            if compute_fg:
                k_for_err = k_t if k_t is not None else Kernel(
                    grid, np.zeros((grid.n, grid.n)), SYMMETRIC)
                f_t, g_t = error_functionals(phi_t, k_for_err, v, basis)
            rows.append({
                "N": n_particles,
                "t": t,
                "cutoff": cutoff,
                "basis_dim": basis.dim,
                "distance": phase_min_distance(appr, exact),
                "control_distance": phase_min_distance(ctrl, exact),
                "trunc_loss_exact": abs(1.0 - exact.norm() ** 2),
                "trunc_loss_ansatz": abs(1.0 - appr.norm() ** 2),
                "f_t": f_t,
                "g_t": g_t,
            })
        return rows

    results = []
    if serial:
        for n_particles in n_list:
            results.extend(run_one(n_particles))
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(4, len(n_list))) as pool:
            for rows in pool.map(run_one, list(n_list)):
                results.extend(rows)
    results.sort(key=lambda row: (row["N"], row["t"]))
    return results


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = (x > 0) & (y > 0)
    return float(np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)[0])
