"""
Reduced Dynamics

Exact discrete dynamics of the small system in two equivalent forms: the
reduced Markov operators (the (0,0) block A of the one-site unitary in the
Schrodinger picture, the thermal map U_beta on observables in the Heisenberg
picture) and a full tensor-chain oracle that never uses the Markov reduction.
"""
import logging
from functools import reduce
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .constants import ORACLE_MAX_DIM
from .densela import (
    ComplexMatrix,
    LinearAlgebraError,
    dagger,
    expm,
    left_right,
    op_norm,
    partial_trace_last,
    unvec,
    vec,
)
from .model import (
    GibbsWeights,
    InteractionModel,
    model_weights,
    one_step_unitary,
    site_unit,
)

logger = logging.getLogger(__name__)


class OracleSizeError(ValueError):
    """Raised when the full chain would exceed the dimension guard."""


class SuperOperator(BaseModel):
    """Linear map on (d+1)x(d+1) matrices stored in the column-stacking convention."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray
    dim: int

    @model_validator(mode="after")
    def _check_shape(self):
        size = self.dim * self.dim
        if self.matrix.shape != (size, size):
            raise ValueError(f"matrix has shape {self.matrix.shape}, expected ({size}, {size})")
        return self

    @classmethod
    def from_matrix(cls, matrix) -> "SuperOperator":
        matrix = np.asarray(matrix, dtype=complex)
        dim = int(round(np.sqrt(matrix.shape[0])))
        return cls(matrix=matrix, dim=dim)

    @classmethod
    def identity(cls, dim: int) -> "SuperOperator":
        return cls(matrix=np.eye(dim * dim, dtype=complex), dim=dim)

    def apply(self, B) -> ComplexMatrix:
        return unvec(self.matrix @ vec(B))

    def __matmul__(self, other: "SuperOperator") -> "SuperOperator":
        return SuperOperator(matrix=self.matrix @ other.matrix, dim=self.dim)

    def __add__(self, other: "SuperOperator") -> "SuperOperator":
        return SuperOperator(matrix=self.matrix + other.matrix, dim=self.dim)

    def __sub__(self, other: "SuperOperator") -> "SuperOperator":
        return SuperOperator(matrix=self.matrix - other.matrix, dim=self.dim)

    def scaled(self, factor: complex) -> "SuperOperator":
        return SuperOperator(matrix=factor * self.matrix, dim=self.dim)

    def power(self, k: int) -> "SuperOperator":
        """k-th power by repeated squaring."""
        return SuperOperator(matrix=np.linalg.matrix_power(self.matrix, k), dim=self.dim)

    def norm(self) -> float:
        return op_norm(self.matrix)

    def unitality_residual(self) -> float:
        identity = np.eye(self.dim)
        return op_norm(self.apply(identity) - identity)


class BlockDecomposition(BaseModel):
    """Blocks U_{m,m'} of a one-site operator in the m*(d+1)+i layout."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    blocks: np.ndarray  # shape (n+1, n+1, d+1, d+1)

    @classmethod
    def from_matrix(cls, M, system_dim: int) -> "BlockDecomposition":
        M = np.asarray(M)
        if M.shape[0] % system_dim:
            raise LinearAlgebraError(
                f"operator dimension {M.shape[0]} is not a multiple of {system_dim}"
            )
        n1 = M.shape[0] // system_dim
        blocks = M.reshape(n1, system_dim, n1, system_dim).transpose(0, 2, 1, 3)
        return cls(blocks=blocks)

    def __getitem__(self, key: Tuple[int, int]) -> ComplexMatrix:
        return self.blocks[key]

    @property
    def site_dim(self) -> int:
        return self.blocks.shape[0]

    def reassemble(self) -> ComplexMatrix:
        n1, _, d1, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(n1 * d1, n1 * d1)


def schrodinger_block(U, system_dim: int) -> ComplexMatrix:
    """A = U_{0,0}, the reduced Schrodinger step P U P."""
    return np.asarray(U)[:system_dim, :system_dim]


def heisenberg_map(U, weights: GibbsWeights, system_dim: int) -> SuperOperator:
    """U_beta(B) = sum_{l,m} p_m U_{l,m}^dagger B U_{l,m}."""
    blocks = BlockDecomposition.from_matrix(U, system_dim)
    if blocks.site_dim != len(weights.p):
        logger.error(f"heisenberg_map: {blocks.site_dim} chain levels but {len(weights.p)} weights")
        raise LinearAlgebraError(
            f"unitary has {blocks.site_dim} chain levels, weights have {len(weights.p)}"
        )
    matrix = np.zeros((system_dim ** 2, system_dim ** 2), dtype=complex)
    for m, p_m in enumerate(weights.p):
        if p_m == 0:
            continue
        for l in range(blocks.site_dim):
            block = blocks[l, m]
            matrix += p_m * left_right(dagger(block), block)
    return SuperOperator(matrix=matrix, dim=system_dim)


def model_heisenberg_map(model: InteractionModel, lam: float, tau: float) -> SuperOperator:
    U = one_step_unitary(model, lam, tau)
    return heisenberg_map(U, model_weights(model), model.system_dim)


def free_heisenberg(model: InteractionModel, tau: float) -> SuperOperator:
    """U_{0,0}(0): B -> exp(i tau h0) B exp(-i tau h0)."""
    step = expm(-1j * tau * model.h0, structure="antihermitian")
    return SuperOperator(matrix=left_right(dagger(step), step), dim=model.system_dim)


def heisenberg_power(superop: SuperOperator, k: int) -> SuperOperator:
    return superop.power(k)


def dual(superop: SuperOperator) -> SuperOperator:
    """Adjoint with respect to <A, B> = tr(A^dagger B)."""
    return SuperOperator(matrix=dagger(superop.matrix), dim=superop.dim)


def contraction_check(superop: SuperOperator, samples: int = 20, seed: int = 0) -> float:
    """Largest sampled ratio ||U(B)|| / ||B||; at most 1 for a contraction."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        B = rng.normal(size=(superop.dim,) * 2) + 1j * rng.normal(size=(superop.dim,) * 2)
        worst = max(worst, op_norm(superop.apply(B)) / op_norm(B))
    return worst


def reduced_state_trajectory(
    model: InteractionModel, lam: float, tau: float, rho0, steps: int
) -> List[ComplexMatrix]:
    """Reduced density matrices rho_0 ... rho_steps after successive interactions."""
    state_map = dual(model_heisenberg_map(model, lam, tau))
    states = [np.asarray(rho0, dtype=complex)]
    for _ in range(steps):
        states.append(state_map.apply(states[-1]))
    return states


class _Chain:
    """Full tensor space H0 (x) site_1 (x) ... (x) site_k, system factor first."""

    def __init__(self, model: InteractionModel, k: int):
        self.model = model
        self.k = k
        self.d1 = model.system_dim
        self.n1 = model.site_dim
        self.q = self.n1 ** k
        if self.d1 * self.q > ORACLE_MAX_DIM:
            logger.error(f"full chain dimension {self.d1 * self.q} exceeds {ORACLE_MAX_DIM}")
            raise OracleSizeError(
                f"(d+1)(n+1)^k = {self.d1 * self.q} exceeds the guard {ORACLE_MAX_DIM}"
            )

    def site_operator(self, op: np.ndarray, site: int) -> np.ndarray:
        before = np.eye(self.n1 ** site)
        after = np.eye(self.n1 ** (self.k - site - 1))
        return np.kron(np.kron(before, op), after)

    def propagator(self, lam: float, tau: float) -> np.ndarray:
        """U(k,0) = U_k ... U_1 with the free chain energies on every site."""
        model = self.model
        H_free = np.kron(model.h0, np.eye(self.q))
        level_energies = np.diag(model.delta_full)
        for site in range(self.k):
            H_free = H_free + np.kron(np.eye(self.d1), self.site_operator(level_energies, site))

        U = np.eye(self.d1 * self.q, dtype=complex)
        for site in range(self.k):
            interaction = np.zeros_like(U)
            for m, v in enumerate(model.V, start=1):
                lower = self.site_operator(site_unit(self.n1, 0, m), site)
                interaction += np.kron(dagger(v), lower) + np.kron(v, lower.T)
            step = expm(-1j * tau * (H_free + lam * interaction), structure="antihermitian")
            U = step @ U
        return U

    def thermal_weights(self) -> np.ndarray:
        p = model_weights(self.model).p
        return reduce(np.kron, [p] * self.k, np.ones(1))


def full_chain_oracle(
    model: InteractionModel, lam: float, tau: float, k: int, B
) -> ComplexMatrix:
    """Tr_chain((I (x) r(beta)^{(x)k}) U(k,0)^dagger (B (x) I) U(k,0))."""
    chain = _Chain(model, k)
    U = chain.propagator(lam, tau)
    lifted = np.kron(np.asarray(B, dtype=complex), np.eye(chain.q))
    return partial_trace_last(dagger(U) @ lifted @ U, chain.thermal_weights())


def full_chain_schrodinger(model: InteractionModel, lam: float, tau: float, k: int) -> ComplexMatrix:
    """P U(k,0) P restricted to H0, all chain sites in the ground level."""
    chain = _Chain(model, k)
    U = chain.propagator(lam, tau)
    return U[::chain.q, ::chain.q]


def full_chain_state(
    model: InteractionModel, lam: float, tau: float, k: int, rho
) -> ComplexMatrix:
    """Reduced state Tr_chain(U(k,0) (rho (x) r(beta)^{(x)k}) U(k,0)^dagger)."""
    chain = _Chain(model, k)
    U = chain.propagator(lam, tau)
    joint = np.kron(np.asarray(rho, dtype=complex), np.diag(chain.thermal_weights()))
    return partial_trace_last(U @ joint @ dagger(U), np.ones(chain.q))


def markov_residuals(
    model: InteractionModel,
    lam: float,
    tau: float,
    k_max: int,
    B: Optional[np.ndarray] = None,
    seed: int = 0,
) -> Tuple[float, float]:
    """Worst ||P U(k,0) P - A^k|| and ||U_beta^k(B) - oracle|| over k = 1..k_max."""
    if B is None:
        rng = np.random.default_rng(seed)
        shape = (model.system_dim,) * 2
        B = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    U = one_step_unitary(model, lam, tau)
    A = schrodinger_block(U, model.system_dim)
    heis = heisenberg_map(U, model_weights(model), model.system_dim)
    worst_s = worst_h = 0.0
    for k in range(1, k_max + 1):
        schr = full_chain_schrodinger(model, lam, tau, k)
        worst_s = max(worst_s, op_norm(schr - np.linalg.matrix_power(A, k)))
        oracle = full_chain_oracle(model, lam, tau, k, B)
        worst_h = max(worst_h, op_norm(heis.power(k).apply(B) - oracle))
    logger.info(f"Markov residuals up to k={k_max}: {worst_s:.2e} (A^k), {worst_h:.2e} (U_beta^k)")
    return worst_s, worst_h


def max_oracle_steps(model: InteractionModel, cap: int = 6) -> int:
    """Largest k <= cap allowed by the full-chain dimension guard."""
    k = 0
    while k < cap and model.system_dim * model.site_dim ** (k + 1) <= ORACLE_MAX_DIM:
        k += 1
    return k
