"""
Two-Level Closed Forms

The d = n = 1 case with h0 = eps * sigma_z, sigma_z = diag(-1, 1) in the basis
{omega, x}, and a single 2x2 coupling V = [[a, b], [c, d]]. Gives explicit F
and G blocks, the restriction of T_beta to span{I, sigma_z}, the spectrum of
U_00(0), the perturbed eigenvalues of U_beta(lambda) and the spectral form of
Gamma^w_beta, each of which can be checked against the generic modules.
"""
import logging
import math
from functools import partial
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.optimize import linear_sum_assignment

from .constants import CLUSTER_TOL, DEGENERATE_COUPLING_TOL
from .densela import SpectralDecomposition, dagger, left_right, spectral_family, vec
from .model import InteractionModel, gibbs_weights
from .perturb import oscillatory_integral, oscillatory_integral2, t_beta
from .reduced import SuperOperator, model_heisenberg_map

logger = logging.getLogger(__name__)

SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)

V_I = vec(np.eye(2, dtype=complex)) / np.sqrt(2)
V_Z = vec(SIGMA_Z) / np.sqrt(2)
V_PLUS = vec(SIGMA_PLUS)
V_MINUS = vec(SIGMA_MINUS)

BRANCH_OVERLAP_MIN = 0.5
# Smallest splitting of the sigma_+- block that still separates coinciding branches.
BRANCH_SPLITTING_MIN = 1e-6


class QubitDegeneracyError(ValueError):
    """Raised when eps * tau hits a value where the sigma_+- eigenvalues coincide."""


class DegenerateCouplingError(ValueError):
    """Raised when nu vanishes and Pi_1, Pi_2 are undefined."""


class BranchTrackingError(ValueError):
    """Raised when a perturbed eigenvalue cannot be matched to its unperturbed branch."""


class QubitModel(BaseModel):
    """h0 = eps * sigma_z coupled through V = [[a, b], [c, d]] to a two-level chain element.

    ``frame`` is the unitary whose columns are the eigenvectors of the h0 the
    model was read from; every closed form lives in that eigenbasis with the
    trace of h0 removed.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    epsilon: float
    delta: float
    V: np.ndarray
    beta: float = Field(default=1.0, ge=0)
    frame: np.ndarray = Field(default_factory=lambda: np.eye(2, dtype=complex))

    @field_validator("V", "frame", mode="before")
    @classmethod
    def _parse_coupling(cls, value, info):
        arr = np.array(value, dtype=complex)
        if arr.shape != (2, 2):
            raise ValueError(f"{info.field_name} must be 2x2, got shape {arr.shape}")
        arr.setflags(write=False)
        return arr

    @property
    def a(self) -> complex:
        return self.V[0, 0]

    @property
    def b(self) -> complex:
        return self.V[0, 1]

    @property
    def c(self) -> complex:
        return self.V[1, 0]

    @property
    def d(self) -> complex:
        return self.V[1, 1]

    @property
    def energies(self) -> np.ndarray:
        return np.array([-self.epsilon, self.epsilon])

    @property
    def w(self) -> float:
        """e^{-beta delta}, zero at beta = inf."""
        return 0.0 if math.isinf(self.beta) else math.exp(-self.beta * self.delta)

    @property
    def Z(self) -> float:
        return gibbs_weights(self.beta, [self.delta]).Z

    def to_model(self) -> InteractionModel:
        """The model in the eigenbasis of h0, without its trace."""
        return InteractionModel(
            d=1, n=1, h0=self.epsilon * SIGMA_Z, delta=[self.delta], V=[self.V], beta=self.beta
        )

    def in_model_frame(self, superop: SuperOperator) -> SuperOperator:
        """Carry a superoperator from the h0 eigenbasis back to the basis of the source model."""
        U = self.frame
        forward, back = left_right(U, dagger(U)), left_right(dagger(U), U)
        return SuperOperator(matrix=forward @ superop.matrix @ back, dim=2)

    @classmethod
    def from_model(cls, model: InteractionModel) -> "QubitModel":
        """Rotate a d = n = 1 model into the eigenbasis of h0 and drop the trace of h0.

        The trace only adds a global phase to the one-step unitary, so the
        Heisenberg picture is unchanged.
        """
        if model.d != 1 or model.n != 1:
            raise ValueError(f"qubit closed forms need d = n = 1, got d={model.d}, n={model.n}")
        energies, U = np.linalg.eigh(model.h0)
        # fix the eigenvector phases so that a diagonal h0 keeps the identity frame
        pivots = U[np.argmax(np.abs(U), axis=0), np.arange(2)]
        U = U * (np.abs(pivots) / pivots)[None, :]
        eps = float(energies[1] - energies[0]) / 2
        if eps < CLUSTER_TOL:
            logger.warning(f"h0 is proportional to the identity (eps = {eps:.3e})")
        V = dagger(U) @ model.V[0] @ U
        return cls(epsilon=eps, delta=float(model.delta[0]), V=V, beta=model.beta, frame=U)


def random_qubit_model(seed: int = 0, beta: Optional[float] = None) -> QubitModel:
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return QubitModel(
        epsilon=float(rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])),
        delta=float(rng.uniform(0.5, 1.5)),
        V=0.5 * G / np.linalg.norm(G, 2),
        beta=float(rng.uniform(0.1, 2.0)) if beta is None else beta,
    )


def f10_closed(qm: QubitModel, tau: float) -> np.ndarray:
    """Block F_{1,0}(tau), chain excited on output."""
    I = partial(oscillatory_integral, tau=tau)
    eps, delta = qm.epsilon, qm.delta
    upper = np.exp(1j * tau * (eps - delta))
    lower = np.exp(-1j * tau * (eps + delta))
    return -1j * np.array(
        [
            [upper * I(delta) * qm.a, upper * I(delta - 2 * eps) * qm.b],
            [lower * I(delta + 2 * eps) * qm.c, lower * I(delta) * qm.d],
        ]
    )


def f01_closed(qm: QubitModel, tau: float) -> np.ndarray:
    """Block F_{0,1}(tau), chain excited on input."""
    I = partial(oscillatory_integral, tau=tau)
    eps, delta = qm.epsilon, qm.delta
    upper, lower = np.exp(1j * tau * eps), np.exp(-1j * tau * eps)
    a, b, c, d = np.conj([qm.a, qm.b, qm.c, qm.d])
    return -1j * np.array(
        [
            [upper * I(-delta) * a, upper * I(-2 * eps - delta) * c],
            [lower * I(2 * eps - delta) * b, lower * I(-delta) * d],
        ]
    )


def g00_diagonal(qm: QubitModel, tau: float) -> np.ndarray:
    """Diagonal of G_{0,0}(tau): one excursion of the chain element through level 1."""
    E, V = qm.energies, qm.V
    out = np.zeros(2, dtype=complex)
    for p in range(2):
        for r in range(2):
            gap = E[p] - E[r] - qm.delta
            out[p] -= np.exp(-1j * tau * E[p]) * abs(V[r, p]) ** 2 * oscillatory_integral2(gap, -gap, tau)
    return out


def g11_diagonal(qm: QubitModel, tau: float) -> np.ndarray:
    """Diagonal of G_{1,1}(tau): one excursion of the chain element through level 0."""
    E, V = qm.energies, qm.V
    out = np.zeros(2, dtype=complex)
    for p in range(2):
        for r in range(2):
            gap = E[p] + qm.delta - E[r]
            out[p] -= (
                np.exp(-1j * tau * (E[p] + qm.delta))
                * abs(V[p, r]) ** 2
                * oscillatory_integral2(gap, -gap, tau)
            )
    return out


def trace_sigma_t_sigma(qm: QubitModel, tau: float) -> Tuple[complex, complex]:
    """Tr(sigma_- T_beta(sigma_+)) and Tr(sigma_+ T_beta(sigma_-)); complex conjugates."""
    F10, F01 = f10_closed(qm, tau), f01_closed(qm, tau)
    G00, G11 = g00_diagonal(qm, tau), g11_diagonal(qm, tau)
    eps, delta, w = qm.epsilon, qm.delta, qm.w
    e_plus, e_minus = np.exp(1j * tau * eps), np.exp(-1j * tau * eps)

    s_mp = F10[0, 0] * np.conj(F10[1, 1]) + e_plus * (G00[0] + np.conj(G00[1]))
    s_mp += w * (
        F01[0, 0] * np.conj(F01[1, 1])
        + e_plus * (np.exp(1j * tau * delta) * G11[0] + np.exp(-1j * tau * delta) * np.conj(G11[1]))
    )
    s_pm = np.conj(F10[0, 0]) * F10[1, 1] + e_minus * (np.conj(G00[0]) + G00[1])
    s_pm += w * (
        np.conj(F01[0, 0]) * F01[1, 1]
        + e_minus * (np.exp(-1j * tau * delta) * np.conj(G11[0]) + np.exp(1j * tau * delta) * G11[1])
    )
    return complex(s_mp), complex(s_pm)


def _mu_nu(qm: QubitModel, tau: float) -> Tuple[float, float]:
    F10 = f10_closed(qm, tau)
    lower, upper = abs(F10[1, 0]) ** 2, abs(F10[0, 1]) ** 2
    return (lower - upper) * (1 - qm.w), -(lower + upper) * (1 + qm.w)


def off_diagonal_norm2(qm: QubitModel, tau: float) -> float:
    """||F_{1,0}^{OD}||^2, the squared off-diagonal part of F_{1,0}."""
    F10 = f10_closed(qm, tau)
    return float(abs(F10[0, 1]) ** 2 + abs(F10[1, 0]) ** 2)


def tbeta_restricted(qm: QubitModel, tau: float) -> np.ndarray:
    """T_beta on span{I/sqrt2, sigma_z/sqrt2}; the first column vanishes since T_beta(I) = 0."""
    mu, nu = _mu_nu(qm, tau)
    return np.array([[0.0, mu], [0.0, nu]])


def qubit_projectors(qm: QubitModel, tau: float) -> Tuple[np.ndarray, ...]:
    """Unperturbed eigenprojectors Pi_1 .. Pi_4 as superoperator matrices."""
    mu, nu = _mu_nu(qm, tau)
    if abs(nu) < DEGENERATE_COUPLING_TOL:
        logger.error(f"qubit_projectors: nu = {nu:.3e}, Pi_1 and Pi_2 undefined")
        raise DegenerateCouplingError(
            f"nu = -||F_10^OD||^2 (1 + e^(-beta delta)) = {nu:.3e} vanishes"
        )
    ratio = mu / nu
    pi1 = np.outer(V_I, (V_I - ratio * V_Z).conj())
    pi2 = np.outer(ratio * V_I + V_Z, V_Z.conj())
    pi3 = np.outer(V_PLUS, V_PLUS.conj())
    pi4 = np.outer(V_MINUS, V_MINUS.conj())
    return pi1, pi2, pi3, pi4


def _require_resolved(qm: QubitModel, tau: float, cluster_tol: float = CLUSTER_TOL) -> None:
    if 2 * abs(math.sin(qm.epsilon * tau)) < cluster_tol:
        logger.error(f"eps*tau = {qm.epsilon * tau} lies in pi*Z")
        raise QubitDegeneracyError(
            f"eps*tau = {qm.epsilon * tau} lies in pi*Z; the perturbation lemma needs eps*tau not in pi*Z"
        )


def sigma_branches_coincide(qm: QubitModel, tau: float, cluster_tol: float = CLUSTER_TOL) -> bool:
    """True when eps*tau lies in pi/2 + pi*Z, where sigma_+ and sigma_- share the eigenvalue -1 of U_00(0)."""
    return 2 * abs(math.sin(2 * qm.epsilon * tau)) < cluster_tol


def sigma_block(qm: QubitModel, tau: float, coupled: bool = False) -> np.ndarray:
    """T_beta on span{sigma_+, sigma_-} in the basis {vec(sigma_+), vec(sigma_-)}.

    The diagonal is Tr(sigma_- T_beta(sigma_+)), Tr(sigma_+ T_beta(sigma_-))
    from the closed forms. The off-diagonal couplings only enter when the two
    branches coincide; with ``coupled`` they are read from the generic T_beta,
    otherwise they are zero.
    """
    s_mp, s_pm = trace_sigma_t_sigma(qm, tau)
    block = np.diag([s_mp, s_pm])
    if coupled:
        T = t_beta(qm.to_model(), tau).matrix
        block[0, 1] = V_PLUS.conj() @ T @ V_MINUS
        block[1, 0] = V_MINUS.conj() @ T @ V_PLUS
    return block


def uzero_spectrum(qm: QubitModel, tau: float) -> SpectralDecomposition:
    """Spectral family of U_00(0) on the basis {I, sigma_z, sigma_-, sigma_+}.

    Eigenvalues 1 (twice), e^{-2i tau eps}, e^{2i tau eps}; coinciding values
    are merged into one projector.
    """
    phase = np.exp(2j * tau * qm.epsilon)
    values = np.array([1.0, 1.0, np.conj(phase), phase])
    basis = np.column_stack([V_I, V_Z, V_MINUS, V_PLUS])
    family = spectral_family(basis, values)
    if len(family) < 3:
        logger.warning(f"U_00(0) at eps*tau={qm.epsilon * tau} has only {len(family)} distinct eigenvalues")
    return family


def qubit_gamma_w_beta(qm: QubitModel, tau: float, cluster_tol: float = CLUSTER_TOL) -> SuperOperator:
    """Gamma^w_beta from its spectral form over Pi_2(0), Pi_3(0), Pi_4(0).

    When sigma_+ and sigma_- share an eigenvalue the averaging keeps the full
    2x2 block of T_beta on their span. The result is in the h0 eigenbasis; use
    ``QubitModel.in_model_frame`` to compare with the source model.
    """
    _require_resolved(qm, tau, cluster_tol)
    Z = qm.Z
    _, nu = _mu_nu(qm, tau)
    phase = np.exp(2j * tau * qm.epsilon)
    block = sigma_block(qm, tau, coupled=sigma_branches_coincide(qm, tau, cluster_tol))
    basis = np.column_stack([V_PLUS, V_MINUS])
    inverse_rotation = np.diag([np.conj(phase), phase])
    matrix = basis @ (inverse_rotation @ block / Z) @ dagger(basis)
    if abs(nu) >= DEGENERATE_COUPLING_TOL:
        matrix = matrix + (nu / Z) * qubit_projectors(qm, tau)[1]
    return SuperOperator(matrix=matrix, dim=2)


class PerturbedEigensystem(BaseModel):
    """Eigenvalue branches u_1..u_4 of U_beta(lambda) and their lambda^2 coefficients."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lambdas: np.ndarray
    eigenvalues: np.ndarray  # (len(lambdas), 4)
    zeroth_order: np.ndarray
    fitted_coefficients: np.ndarray
    expected_coefficients: np.ndarray
    projector_residual: float
    sigma_branches_coincide: bool = False

    def coefficient_errors(self) -> np.ndarray:
        """|fitted - expected| relative to max(|expected|, 1)."""
        scale = np.maximum(np.abs(self.expected_coefficients), 1.0)
        return np.abs(self.fitted_coefficients - self.expected_coefficients) / scale


def _eigenprojectors(M: np.ndarray) -> Tuple[np.ndarray, list]:
    values, right = np.linalg.eig(M)
    left = np.linalg.inv(right)
    return values, [np.outer(right[:, i], left[i, :]) for i in range(len(values))]


def _sigma_branches(qm: QubitModel, tau: float, coincide: bool) -> Tuple[np.ndarray, list]:
    """lambda^2 coefficients and unperturbed projectors of the u_3, u_4 branches.

    Apart, these are s_mp / Z, s_pm / Z on Pi_3(0), Pi_4(0). Coinciding, they
    are the eigenvalues and eigenprojectors of the sigma_+- block of T_beta / Z,
    the one closer to sigma_+ taken as u_3.
    """
    basis = np.column_stack([V_PLUS, V_MINUS])
    block = sigma_block(qm, tau, coupled=coincide) / qm.Z
    if not coincide:
        return np.diag(block), [np.outer(V_PLUS, V_PLUS.conj()), np.outer(V_MINUS, V_MINUS.conj())]

    values, projectors = _eigenprojectors(block)
    splitting = abs(values[0] - values[1])
    if splitting < BRANCH_SPLITTING_MIN:
        logger.error(f"sigma_+- block eigenvalues {values} split by only {splitting:.3e}")
        raise BranchTrackingError(
            f"eps*tau = {qm.epsilon * tau} merges the sigma_+- branches and the block of T_beta / Z "
            f"does not separate them (eigenvalues {values[0]:.6e}, {values[1]:.6e})"
        )
    order = np.argsort([-abs(P[0, 0]) for P in projectors], kind="stable")
    return values[order], [basis @ projectors[i] @ dagger(basis) for i in order]


def perturbed_eigensystem(
    qm: QubitModel, tau: float, lambdas=(0.01, 0.02, 0.04), cluster_tol: float = CLUSTER_TOL
) -> PerturbedEigensystem:
    """Diagonalize U_beta(lambda) over ``lambdas`` and fit u_j(lambda) - u_j(0) on [lambda^2, lambda^4].

    Branches follow maximal projector overlap with the unperturbed family; the
    two branches at eigenvalue 1 are separated through Pi_1(0), Pi_2(0). When
    eps*tau lies in pi/2 + pi*Z the sigma_+- branches are tracked through the
    eigenvectors of their block of T_beta.
    """
    _require_resolved(qm, tau, cluster_tol)
    lambdas = np.asarray(lambdas, dtype=float)
    model = qm.to_model()
    Z = qm.Z
    _, nu = _mu_nu(qm, tau)
    coincide = sigma_branches_coincide(qm, tau, cluster_tol)
    if coincide:
        logger.info(f"eps*tau = {qm.epsilon * tau} in pi/2 + pi*Z; tracking the degenerate sigma_+- block")
    sigma_coefficients, (pi_a, pi_b) = _sigma_branches(qm, tau, coincide)
    phase = np.exp(2j * tau * qm.epsilon)
    zeroth = np.array([1.0, 1.0, phase, np.conj(phase)])
    expected = np.array([0.0, nu / Z, *sigma_coefficients])

    separable = abs(nu) >= DEGENERATE_COUPLING_TOL
    group = np.outer(V_I, V_I.conj()) + np.outer(V_Z, V_Z.conj())
    references = [group, group, pi_a, pi_b]
    pi1, pi2 = qubit_projectors(qm, tau)[:2] if separable else (None, None)

    branches = np.zeros((len(lambdas), 4), dtype=complex)
    residual = 0.0
    for row, lam in enumerate(lambdas):
        values, projectors = _eigenprojectors(model_heisenberg_map(model, lam, tau).matrix)
        overlap = np.array([[abs(np.trace(P @ R)) for R in references] for P in projectors])
        rows, cols = linear_sum_assignment(-overlap)
        order = np.empty(4, dtype=int)
        order[cols] = rows
        if overlap[rows, cols].min() < BRANCH_OVERLAP_MIN:
            logger.error(f"perturbed_eigensystem: ambiguous branches at lambda={lam}")
            raise BranchTrackingError(
                f"eigenprojector overlap {overlap[rows, cols].min():.3f} at lambda={lam} is below {BRANCH_OVERLAP_MIN}"
            )
        if separable:
            first, second = order[0], order[1]
            if abs(np.trace(projectors[first] @ pi2)) > abs(np.trace(projectors[second] @ pi2)):
                order[0], order[1] = second, first
        branches[row] = values[order]

        if row == int(np.argmin(lambdas)):
            if separable:
                targets = [pi1, pi2, pi_a, pi_b]
                residual = max(np.linalg.norm(projectors[i] - t, 2) for i, t in zip(order, targets))
            else:
                merged = projectors[order[0]] + projectors[order[1]]
                residual = max(
                    np.linalg.norm(merged - group, 2),
                    np.linalg.norm(projectors[order[2]] - pi_a, 2),
                    np.linalg.norm(projectors[order[3]] - pi_b, 2),
                )

    design = np.column_stack([lambdas ** 2, lambdas ** 4])
    coeffs, *_ = np.linalg.lstsq(design, branches - zeroth[None, :], rcond=None)
    logger.info(f"Perturbed eigenvalue fit over {len(lambdas)} couplings, tau={tau}")
    return PerturbedEigensystem(
        lambdas=lambdas,
        eigenvalues=branches,
        zeroth_order=zeroth,
        fitted_coefficients=coeffs[0],
        expected_coefficients=expected,
        projector_residual=float(residual),
        sigma_branches_coincide=coincide,
    )
