"""
Dense Linear Algebra Kernel

Hermitian spectral decompositions with eigenvalue clustering, matrix
exponentials, Kronecker products, weighted partial traces and the
column-stacking vectorization shared by every superoperator in the package.
"""
import logging
import math
from functools import reduce
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg
from pydantic import BaseModel, ConfigDict
from scipy.sparse.csgraph import connected_components

from .constants import CLUSTER_TOL, HERMITIAN_TOL

logger = logging.getLogger(__name__)

ComplexMatrix = npt.NDArray[np.complex128]


class LinearAlgebraError(ValueError):
    """Raised for malformed matrix inputs (shape, Hermiticity, vector length)."""


class SpectralDecomposition(BaseModel):
    """Eigenvalues with their orthogonal eigenprojectors.

    Eigenvalues are real for Hermitian matrices and unit-modulus complex numbers
    for unitaries diagonalized through a Hermitian generator.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    projectors: Tuple[np.ndarray, ...]
    cluster_tolerance: float = CLUSTER_TOL

    def __len__(self) -> int:
        return len(self.projectors)

    @property
    def dimension(self) -> int:
        return self.projectors[0].shape[0]

    def reconstruct(self) -> ComplexMatrix:
        """Return sum_j E_j P_j."""
        return sum(e * p for e, p in zip(self.eigenvalues, self.projectors))

    def ranks(self) -> np.ndarray:
        return np.array([int(round(np.trace(p).real)) for p in self.projectors])

    def completeness_residual(self) -> float:
        identity = np.eye(self.dimension)
        return float(np.linalg.norm(sum(self.projectors) - identity))

    def orthogonality_residual(self) -> float:
        worst = 0.0
        for j, pj in enumerate(self.projectors):
            for k, pk in enumerate(self.projectors):
                target = pj if j == k else 0.0
                worst = max(worst, float(np.linalg.norm(pj @ pk - target)))
        return worst


def as_matrix(M, name: str = "matrix") -> ComplexMatrix:
    """Coerce to a 2-d complex array, refusing anything else."""
    arr = np.asarray(M, dtype=complex)
    if arr.ndim != 2:
        logger.error(f"{name} has {arr.ndim} dimensions, expected 2")
        raise LinearAlgebraError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    return arr


def require_square(M, name: str = "matrix") -> ComplexMatrix:
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        logger.error(f"{name} is not square: {arr.shape}")
        raise LinearAlgebraError(f"{name} must be square, got shape {arr.shape}")
    return arr


def dagger(M) -> ComplexMatrix:
    return np.asarray(M).conj().T


def is_hermitian(M, tol: float = HERMITIAN_TOL) -> bool:
    """Check ||M - M^dagger||_F <= tol * ||M||_F."""
    arr = np.asarray(M, dtype=complex)
    scale = np.linalg.norm(arr)
    return bool(np.linalg.norm(arr - dagger(arr)) <= tol * scale)


def _family(
    basis: np.ndarray, values: np.ndarray, labels: np.ndarray, cluster_tol: float
) -> SpectralDecomposition:
    eigenvalues = []
    projectors = []
    for label in range(labels.max() + 1):
        idx = np.flatnonzero(labels == label)
        cols = basis[:, idx]
        eigenvalues.append(values[idx].mean())
        projectors.append(cols @ dagger(cols))
    return SpectralDecomposition(
        eigenvalues=np.array(eigenvalues),
        projectors=tuple(projectors),
        cluster_tolerance=cluster_tol,
    )


def _proximity_labels(values: np.ndarray, cluster_tol: float) -> np.ndarray:
    """Connected components of the graph |v_i - v_j| < cluster_tol."""
    adjacency = np.abs(values[:, None] - values[None, :]) < cluster_tol
    _, labels = connected_components(adjacency, directed=False)
    return labels


def spectral_family(
    basis, values, cluster_tol: float = CLUSTER_TOL
) -> SpectralDecomposition:
    """Group orthonormal columns of ``basis`` by (complex) eigenvalue proximity."""
    values = np.asarray(values)
    return _family(np.asarray(basis), values, _proximity_labels(values, cluster_tol), cluster_tol)


def hermitian_eig(M, cluster_tol: float = CLUSTER_TOL) -> SpectralDecomposition:
    """Spectral decomposition of a Hermitian matrix.

    Eigenvalues come back in ascending order. Neighbouring eigenvalues closer
    than ``cluster_tol`` share one projector; the merged eigenvalue is the mean
    of its members.
    """
    M = require_square(M)
    if not is_hermitian(M):
        logger.error("hermitian_eig received a non-Hermitian matrix")
        raise LinearAlgebraError("matrix is not Hermitian within tolerance")
    if cluster_tol < 0:
        raise LinearAlgebraError(f"cluster_tol must be >= 0, got {cluster_tol}")

    evals, evecs = np.linalg.eigh((M + dagger(M)) / 2)
    breaks = np.diff(evals) >= cluster_tol
    labels = np.concatenate([[0], np.cumsum(breaks)])
    return _family(evecs, evals, labels, cluster_tol)


def unitary_spectrum(h, tau: float, cluster_tol: float = CLUSTER_TOL) -> SpectralDecomposition:
    """Spectral family of exp(-i tau h), clustered on the unit circle."""
    h = require_square(h, "h")
    energies, evecs = np.linalg.eigh((h + dagger(h)) / 2)
    phases = np.exp(-1j * tau * energies)
    family = spectral_family(evecs, phases, cluster_tol)
    energy_clusters = 1 + int(np.sum(np.diff(energies) >= cluster_tol))
    if len(family) < energy_clusters:
        logger.warning(
            f"exp(-i tau h) at tau={tau} merges distinct energies into {len(family)} clusters"
        )
    return family


def superop_spectrum(
    h, tau: Optional[float] = None, cluster_tol: float = CLUSTER_TOL
) -> SpectralDecomposition:
    """Spectral family of B -> exp(i tau h) B exp(-i tau h) on vectorized observables.

    With ``tau=None`` the family of the commutator B -> [h, B] is returned
    instead, clustered on the real line.
    """
    h = require_square(h, "h")
    energies, evecs = np.linalg.eigh((h + dagger(h)) / 2)
    # Column k*D + j of kron(conj(X), X) is vec(|x_j><x_k|).
    basis = np.kron(evecs.conj(), evecs)
    gaps = (energies[None, :] - energies[:, None]).ravel()
    values = gaps if tau is None else np.exp(1j * tau * gaps)
    return spectral_family(basis, values, cluster_tol)


def expm(
    M, structure: Literal["general", "hermitian", "antihermitian"] = "general"
) -> ComplexMatrix:
    """Matrix exponential.

    General inputs use scipy's scaling-and-squaring Pade routine. Inputs flagged
    Hermitian or anti-Hermitian go through the Hermitian eigendecomposition.
    """
    M = require_square(M)
    if structure == "hermitian":
        w, X = np.linalg.eigh((M + dagger(M)) / 2)
        return (X * np.exp(w)) @ dagger(X)
    if structure == "antihermitian":
        K = 1j * M
        w, X = np.linalg.eigh((K + dagger(K)) / 2)
        return (X * np.exp(-1j * w)) @ dagger(X)
    return scipy.linalg.expm(M)


def kron(*ops) -> ComplexMatrix:
    """Kronecker product of one or more matrices, left factor most significant."""
    return reduce(np.kron, [np.asarray(op) for op in ops])


def partial_trace_last(M, weights: Sequence[float]) -> ComplexMatrix:
    """Weighted trace over the last tensor factor of C^p (x) C^q."""
    M = require_square(M)
    weights = np.asarray(weights, dtype=float)
    q = len(weights)
    if q == 0 or M.shape[0] % q:
        logger.error(f"partial_trace_last: dimension {M.shape[0]} not divisible by {q}")
        raise LinearAlgebraError(
            f"matrix dimension {M.shape[0]} is not a multiple of len(weights)={q}"
        )
    p = M.shape[0] // q
    return np.einsum("isjs,s->ij", M.reshape(p, q, p, q), weights)


def op_norm(M) -> float:
    """Largest singular value."""
    arr = np.asarray(M)
    if arr.size == 0:
        return 0.0
    return float(np.linalg.norm(arr, 2))


def vec(M) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v) -> ComplexMatrix:
    v = np.asarray(v)
    n = math.isqrt(v.size)
    if v.ndim != 1 or n * n != v.size:
        logger.error(f"unvec received length {v.size}, not a perfect square")
        raise LinearAlgebraError(f"vector length {v.size} is not a perfect square")
    return v.reshape((n, n), order="F")


def left_right(X, Y) -> ComplexMatrix:
    """Superoperator matrix of B -> X B Y."""
    return np.kron(np.asarray(Y).T, np.asarray(X))


def commutator_superop(h) -> ComplexMatrix:
    """Superoperator matrix of B -> [h, B]."""
    identity = np.eye(np.asarray(h).shape[0])
    return left_right(h, identity) - left_right(identity, h)


def family_residual(projectors: Sequence[np.ndarray]) -> float:
    """Completeness residual ||sum P_j - I||."""
    total = sum(projectors)
    return float(np.linalg.norm(total - np.eye(total.shape[0])))
