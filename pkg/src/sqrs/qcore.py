"""Exact complex linear algebra for one- and two-qubit states and operators.

Everything is dense numpy over the polarization basis |H> = |0>, |V> = |1>.
Two-qubit indices are ordered Alice (x) Bob throughout: the row index of a
4x4 matrix is 2*a + b for Alice level a and Bob level b.
"""

import numpy as np

# Validation tolerances for stored states and operators.
NORM_ATOL = 1e-12
HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
EIGENVALUE_FLOOR = -1e-9


class NormalizationError(ValueError):
    """A state vector is not normalized to within NORM_ATOL."""


class DimensionMismatchError(ValueError):
    """Operands have incompatible or unsupported dimensions."""


class InvalidDensityMatrixError(ValueError):
    """A matrix fails the Hermitian / unit-trace / positivity checks."""


_SQRT2 = np.sqrt(2.0)

KET_H = np.array([1.0, 0.0], dtype=complex)
KET_V = np.array([0.0, 1.0], dtype=complex)
KET_D = np.array([1.0, 1.0], dtype=complex) / _SQRT2
KET_J = np.array([1.0, -1.0], dtype=complex) / _SQRT2
KET_R = np.array([1.0, 1.0j], dtype=complex) / _SQRT2
KET_L = np.array([1.0, -1.0j], dtype=complex) / _SQRT2

#: Named single-qubit kets, keyed by polarization label.
KETS = {"H": KET_H, "V": KET_V, "D": KET_D, "J": KET_J, "R": KET_R, "L": KET_L}

ID2 = np.eye(2, dtype=complex)
ID4 = np.eye(4, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

for _arr in (KET_H, KET_V, KET_D, KET_J, KET_R, KET_L, ID2, ID4,
             SIGMA_X, SIGMA_Y, SIGMA_Z):
    _arr.flags.writeable = False


def pure_state(amplitudes) -> np.ndarray:
    """Validate and return a normalized state vector (length 2 or 4).

    Raises NormalizationError when the squared norm deviates from 1 by more
    than NORM_ATOL, and DimensionMismatchError for unsupported lengths.
    """
    vec = np.asarray(amplitudes, dtype=complex)
    if vec.shape not in ((2,), (4,)):
        raise DimensionMismatchError(f"state vector must have length 2 or 4, got shape {vec.shape}")
    if not np.all(np.isfinite(vec.view(float))):
        raise NormalizationError("state vector contains NaN or Inf")
    norm_sq = float(np.vdot(vec, vec).real)
    if abs(norm_sq - 1.0) > NORM_ATOL:
        raise NormalizationError(f"state vector has squared norm {norm_sq!r}, expected 1")
    return vec


class DensityMatrix:
    """Physical density matrix of dimension 2 or 4.

    Construction validates Hermiticity, unit trace, and positivity
    (eigenvalues >= EIGENVALUE_FLOOR, which absorbs floating-point noise
    from channel compositions). The stored array is read-only.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        if m.shape not in ((2, 2), (4, 4)):
            raise DimensionMismatchError(f"density matrix must be 2x2 or 4x4, got shape {m.shape}")
        if not np.all(np.isfinite(m.view(float))):
            raise InvalidDensityMatrixError("density matrix contains NaN or Inf")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_ATOL:
            raise InvalidDensityMatrixError("density matrix is not Hermitian")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > TRACE_ATOL:
            raise InvalidDensityMatrixError(f"density matrix has trace {tr!r}, expected 1")
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < EIGENVALUE_FLOOR:
            raise InvalidDensityMatrixError(f"density matrix has negative eigenvalue {min_eig!r}")
        m.flags.writeable = False
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_pure(cls, amplitudes) -> "DensityMatrix":
        """Rank-one density matrix |s><s| of a normalized state vector."""
        vec = pure_state(amplitudes)
        return cls(np.outer(vec, vec.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        if dim not in (2, 4):
            raise DimensionMismatchError(f"dimension must be 2 or 4, got {dim}")
        return cls(np.eye(dim, dtype=complex) / dim)

    def isclose(self, other: "DensityMatrix", atol: float = 1e-10) -> bool:
        return self.dim == other.dim and bool(
            np.max(np.abs(self.matrix - other.matrix)) <= atol)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def bloch_vector(self) -> np.ndarray:
        """Bloch components (x, y, z) of a single-qubit state."""
        if self.dim != 2:
            raise DimensionMismatchError("bloch_vector is defined for 2x2 states only")
        return np.array([
            np.trace(self.matrix @ SIGMA_X).real,
            np.trace(self.matrix @ SIGMA_Y).real,
            np.trace(self.matrix @ SIGMA_Z).real,
        ])

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim})"


def projector(state) -> np.ndarray:
    """Rank-one projector |s><s| onto a normalized state vector.

    Output is idempotent, Hermitian, and has unit trace.
    """
    vec = pure_state(state)
    return np.outer(vec, vec.conj())


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with Alice's factor first."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def tensor_state(rho_a: DensityMatrix, rho_b: DensityMatrix) -> DensityMatrix:
    """Product state rho_a (x) rho_b as a validated density matrix."""
    return DensityMatrix(tensor(rho_a.matrix, rho_b.matrix))


def _partial_trace_alice_raw(m: np.ndarray) -> np.ndarray:
    # index layout: m[(a, b), (a', b')] -> reshape to [a, b, a', b'], trace over a = a'
    return np.einsum("abad->bd", m.reshape(2, 2, 2, 2))


def partial_trace_alice(rho: DensityMatrix) -> DensityMatrix:
    """Bob's reduced state: trace out Alice's qubit from a two-qubit state."""
    if rho.dim != 4:
        raise DimensionMismatchError(f"partial trace needs a 4x4 state, got dim {rho.dim}")
    return DensityMatrix(_partial_trace_alice_raw(rho.matrix))


def expectation(rho: DensityMatrix, observable: np.ndarray) -> float:
    """Real expectation value Tr[rho M] of a Hermitian observable."""
    m = np.asarray(observable, dtype=complex)
    if m.shape != rho.matrix.shape:
        raise DimensionMismatchError(
            f"observable shape {m.shape} does not match state dim {rho.dim}")
    if np.max(np.abs(m - m.conj().T)) > HERMITIAN_ATOL:
        raise ValueError("observable is not Hermitian")
    value = complex(np.trace(rho.matrix @ m))
    if abs(value.imag) > HERMITIAN_ATOL:
        raise ValueError(f"expectation has imaginary residue {value.imag!r}")
    return float(value.real)


def _principal_pure_vector(rho: DensityMatrix):
    """Eigenvector of eigenvalue ~1 when rho is pure, else None."""
    if abs(rho.purity() - 1.0) > 1e-10:
        return None
    vals, vecs = np.linalg.eigh(rho.matrix)
    return vecs[:, -1]


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity F(rho, sigma) = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.

    When either argument is pure, F reduces to <psi| other |psi> and is
    evaluated on that fast path. The result is clipped to [0, 1].
    """
    if rho.dim != sigma.dim:
        raise DimensionMismatchError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    for pure, other in ((sigma, rho), (rho, sigma)):
        vec = _principal_pure_vector(pure)
        if vec is not None:
            val = float(np.vdot(vec, other.matrix @ vec).real)
            return float(np.clip(val, 0.0, 1.0))
    vals, vecs = np.linalg.eigh(rho.matrix)
    sqrt_rho = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
    inner = sqrt_rho @ sigma.matrix @ sqrt_rho
    inner_vals = np.linalg.eigvalsh(inner)
    root_sum = float(np.sum(np.sqrt(np.clip(inner_vals, 0.0, None))))
    return float(np.clip(root_sum**2, 0.0, 1.0))
