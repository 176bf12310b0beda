"""
Perturbative Generators

Second-order expansion objects F(tau), G(tau) of the one-site propagator, the
sharp averaging over a spectral family and the effective generators built from
them: Gamma^w(tau), Gamma_0^#, T_beta, Gamma^w_beta, Gamma_beta and the
regime-A generator.

Every entry of F and G is evaluated in the eigenbasis of H(0) through closed
forms of the oscillatory integrals

    I1(alpha) = int_0^tau e^{i s alpha} ds
    I2(alpha, gamma) = int_0^tau ds1 e^{i s1 alpha} int_0^s1 ds2 e^{i s2 gamma}

A composite Gauss-Legendre quadrature of the defining integrals is available
as an independent check.
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .constants import (
    CLUSTER_TOL,
    FAMILY_TOL,
    QUADRATURE_ORDER,
    QUADRATURE_PANELS,
    TAYLOR_TERMS,
    TAYLOR_THRESHOLD,
)
from .densela import (
    ComplexMatrix,
    SpectralDecomposition,
    dagger,
    expm,
    hermitian_eig,
    left_right,
    op_norm,
    superop_spectrum,
    unitary_spectrum,
)
from .model import (
    InteractionModel,
    build_one_site,
    model_weights,
    projector_P,
)
from .reduced import BlockDecomposition, SuperOperator, free_heisenberg, model_heisenberg_map

logger = logging.getLogger(__name__)


class FamilyError(ValueError):
    """Raised when a projector family is not complete and orthogonal."""


class FGPair(BaseModel):
    """First and second order coefficients of exp(-i tau H(lambda)) in lambda."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    F: np.ndarray
    G: np.ndarray
    tau: float
    system_dim: int

    def blocks(self) -> Tuple[BlockDecomposition, BlockDecomposition]:
        return (
            BlockDecomposition.from_matrix(self.F, self.system_dim),
            BlockDecomposition.from_matrix(self.G, self.system_dim),
        )


class ProjectorFamily(BaseModel):
    """Orthogonal projectors P_j labelled by their eigenvalues."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    projectors: Tuple[np.ndarray, ...]
    labels: np.ndarray

    @classmethod
    def from_spectrum(cls, spectrum: SpectralDecomposition) -> "ProjectorFamily":
        return cls(projectors=spectrum.projectors, labels=spectrum.eigenvalues)

    @classmethod
    def trivial(cls, dim: int) -> "ProjectorFamily":
        return cls(projectors=(np.eye(dim, dtype=complex),), labels=np.array([1.0]))

    def __len__(self) -> int:
        return len(self.projectors)

    def residual(self) -> float:
        """Worst of completeness and pairwise orthogonality defects."""
        dim = self.projectors[0].shape[0]
        worst = float(np.linalg.norm(sum(self.projectors) - np.eye(dim)))
        for j, pj in enumerate(self.projectors):
            for k, pk in enumerate(self.projectors):
                target = pj if j == k else 0.0
                worst = max(worst, float(np.linalg.norm(pj @ pk - target)))
        return worst


# Oscillatory integrals

def _phi1(y) -> np.ndarray:
    """(e^{iy} - 1)/(iy) for real y, written without cancellation."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, y)
    closed = np.sin(safe) / safe + 1j * 2.0 * np.sin(safe / 2.0) ** 2 / safe
    series = sum((1j * y) ** k / math.factorial(k + 1) for k in range(TAYLOR_TERMS))
    return np.where(small, series, closed)


def oscillatory_integral(alpha, tau: float) -> np.ndarray:
    """int_0^tau e^{i s alpha} ds, valid for negative tau."""
    return tau * _phi1(np.asarray(alpha, dtype=float) * tau)


def oscillatory_integral2(alpha, gamma, tau: float) -> np.ndarray:
    """int_0^tau ds1 e^{i s1 alpha} int_0^s1 ds2 e^{i s2 gamma}.

    This is tau^2 times the divided difference of exp at (0, i alpha tau,
    i (alpha + gamma) tau). Of the three equivalent quotients the one with the
    largest denominator is used; when all three nodes are within
    TAYLOR_THRESHOLD of each other the divided difference is summed as a
    series instead.
    """
    a, b = np.broadcast_arrays(
        np.asarray(alpha, dtype=float) * tau, np.asarray(gamma, dtype=float) * tau
    )
    scalar = a.ndim == 0
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    c = a + b

    with np.errstate(divide="ignore", invalid="ignore"):
        shifted = np.exp(1j * a) * _phi1(b)
        by_c = (shifted - _phi1(a)) / (1j * c)
        by_b = (_phi1(c) - _phi1(a)) / (1j * b)
        by_a = (shifted - _phi1(c)) / (1j * a)

    x, y = 1j * a, 1j * c
    series = sum(
        sum(x ** j * y ** (m - j) for j in range(m + 1)) / math.factorial(m + 2)
        for m in range(TAYLOR_TERMS)
    )

    spread = np.stack([np.abs(c), np.abs(b), np.abs(a)])
    choice = np.where(spread.max(axis=0) < TAYLOR_THRESHOLD, 3, spread.argmax(axis=0))
    result = tau ** 2 * np.choose(choice, [by_c, by_b, by_a, series])
    return result[0] if scalar else result


def double_oscillatory_integral(alpha, tau: float) -> np.ndarray:
    """int_0^tau ds int_0^s dt e^{-i t alpha}; tau^2/2 at alpha = 0."""
    return oscillatory_integral2(0.0, -np.asarray(alpha, dtype=float), tau)


# F and G

def _free_eigenbasis(model: InteractionModel) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors of H(0) in the one-site layout."""
    energies, X_h = np.linalg.eigh(model.h0)
    X = np.kron(np.eye(model.site_dim), X_h)
    E = (model.delta_full[:, None] + energies[None, :]).ravel()
    return E, X


def compute_FG(model: InteractionModel, tau: float) -> FGPair:
    """Closed-form F(tau) and G(tau) with

        F = -i e^{-i tau H(0)} int_0^tau W(s) ds
        G = -e^{-i tau H(0)} int_0^tau ds1 int_0^s1 ds2 W(s1) W(s2)

    where W(s) = e^{i s H(0)} W e^{-i s H(0)}.
    """
    ops = build_one_site(model)
    E, X = _free_eigenbasis(model)
    Wt = dagger(X) @ ops.W @ X
    gap = E[:, None] - E[None, :]
    phase = np.exp(-1j * tau * E)[:, None]

    Ft = -1j * phase * Wt * oscillatory_integral(gap, tau)
    I2 = oscillatory_integral2(gap[:, :, None], gap[None, :, :], tau)
    Gt = -phase * np.einsum("pr,rq,prq->pq", Wt, Wt, I2)

    logger.debug(f"compute_FG: tau={tau}, one-site dimension {len(E)}")
    return FGPair(
        F=X @ Ft @ dagger(X),
        G=X @ Gt @ dagger(X),
        tau=tau,
        system_dim=model.system_dim,
    )


def quadrature_FG(
    model: InteractionModel,
    tau: float,
    panels: int = QUADRATURE_PANELS,
    order: int = QUADRATURE_ORDER,
) -> FGPair:
    """F and G by composite Gauss-Legendre quadrature of their defining integrals.

    The inner integral of G is accumulated panel by panel, with a fresh
    Gauss-Legendre rule on the partial panel ending at each outer node.
    """
    ops = build_one_site(model)
    E, X = _free_eigenbasis(model)
    Wt = dagger(X) @ ops.W @ X
    gap = E[:, None] - E[None, :]

    def rotated(s: np.ndarray) -> np.ndarray:
        return np.exp(1j * s[..., None, None] * gap) * Wt

    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, tau, panels + 1)
    start, half = edges[:-1], np.diff(edges) / 2.0
    nodes = start[:, None] + half[:, None] * (1.0 + x[None, :])  # (panels, order)

    W_nodes = rotated(nodes)
    panel_integrals = np.einsum("p,j,pjab->pab", half, w, W_nodes)
    before = np.cumsum(panel_integrals, axis=0) - panel_integrals

    inner_half = (nodes - start[:, None]) / 2.0
    inner_nodes = start[:, None, None] + inner_half[..., None] * (1.0 + x[None, None, :])
    partial = np.einsum("pj,l,pjlab->pjab", inner_half, w, rotated(inner_nodes))
    K = before[:, None] + partial

    phase = np.exp(-1j * tau * E)[:, None]
    Ft = -1j * phase * panel_integrals.sum(axis=0)
    Gt = -phase * np.einsum("p,j,pjab,pjbc->ac", half, w, W_nodes, K)
    return FGPair(
        F=X @ Ft @ dagger(X),
        G=X @ Gt @ dagger(X),
        tau=tau,
        system_dim=model.system_dim,
    )


def verify_expansion(model: InteractionModel, lam: float, tau: float) -> Tuple[float, float]:
    """Residuals r3 = ||U(lambda) - U(0) - lambda F - lambda^2 G|| and r4 = ||P (...) P||."""
    ops = build_one_site(model)
    fg = compute_FG(model, tau)
    full = expm(-1j * tau * (ops.H0 + lam * ops.W), structure="antihermitian")
    free = expm(-1j * tau * ops.H0, structure="antihermitian")
    remainder = full - free - lam * fg.F - lam ** 2 * fg.G
    P = projector_P(model)
    return op_norm(remainder), op_norm(P @ remainder @ P)


def verify_fg_identities(
    model: InteractionModel, tau: float, step: float = 1e-5
) -> Dict[str, float]:
    """Residuals of the identities satisfied by F and G.

    Covers reflection in tau, the block structure inherited from W, the
    derivative equations F' = -iH(0)F - iW e^{-i tau H(0)}, G' = -iH(0)G - iWF
    (central differences of width ``step``) and the order lambda^2 part of
    unitarity.
    """
    ops = build_one_site(model)
    fg = compute_FG(model, tau)
    reflected = compute_FG(model, -tau)
    ahead, behind = compute_FG(model, tau + step), compute_FG(model, tau - step)
    dF = (ahead.F - behind.F) / (2 * step)
    dG = (ahead.G - behind.G) / (2 * step)
    free = expm(-1j * tau * ops.H0, structure="antihermitian")
    P = projector_P(model)
    Q = np.eye(P.shape[0]) - P
    F, G = fg.F, fg.G
    return {
        "F(-tau) - F(tau)^dagger": op_norm(reflected.F - dagger(F)),
        "G(-tau) - G(tau)^dagger": op_norm(reflected.G - dagger(G)),
        "PFP": op_norm(P @ F @ P),
        "QFQ": op_norm(Q @ F @ Q),
        "PGQ": op_norm(P @ G @ Q),
        "QGP": op_norm(Q @ G @ P),
        "F' + iH(0)F + iWe^{-i tau H(0)}": op_norm(dF + 1j * ops.H0 @ F + 1j * ops.W @ free),
        "G' + iH(0)G + iWF": op_norm(dG + 1j * ops.H0 @ G + 1j * ops.W @ F),
        "U^dagger U at lambda^2": op_norm(dagger(free) @ G + dagger(G) @ free + dagger(F) @ F),
        "U U^dagger at lambda^2": op_norm(G @ dagger(free) + free @ dagger(G) + F @ dagger(F)),
    }


# Averaging and generators

Operator = Union[np.ndarray, SuperOperator]


def sharp(K: Operator, family: ProjectorFamily) -> Operator:
    """K^# = sum_j P_j K P_j."""
    defect = family.residual()
    if defect > FAMILY_TOL:
        logger.error(f"sharp: projector family defect {defect:.2e} exceeds {FAMILY_TOL:g}")
        raise FamilyError(f"projector family is not complete and orthogonal (defect {defect:.2e})")
    if isinstance(K, SuperOperator):
        return SuperOperator(matrix=sharp(K.matrix, family), dim=K.dim)
    K = np.asarray(K)
    return sum(P @ K @ P for P in family.projectors)


def schrodinger_family(
    model: InteractionModel, tau: float, cluster_tol: float = CLUSTER_TOL
) -> ProjectorFamily:
    """Spectral projectors of exp(-i tau h0); phases closer than ``cluster_tol`` share one."""
    return ProjectorFamily.from_spectrum(unitary_spectrum(model.h0, tau, cluster_tol))


def heisenberg_family(
    model: InteractionModel, tau: Optional[float] = None, cluster_tol: float = CLUSTER_TOL
) -> ProjectorFamily:
    """Spectral projectors of B -> e^{i tau h0} B e^{-i tau h0}, or of [h0, .] when tau is None."""
    return ProjectorFamily.from_spectrum(superop_spectrum(model.h0, tau, cluster_tol))


def averaged_generator(V0, R, family: ProjectorFamily) -> Operator:
    """(V0^{-1} R)^# for an invertible leading term V0."""
    if isinstance(R, SuperOperator):
        product = np.linalg.solve(np.asarray(V0), R.matrix)
        return sharp(SuperOperator(matrix=product, dim=R.dim), family)
    return sharp(np.linalg.solve(np.asarray(V0), np.asarray(R)), family)


def gamma_w_schrodinger(
    model: InteractionModel, tau: float, cluster_tol: float = CLUSTER_TOL
) -> ComplexMatrix:
    """Gamma^w(tau) = (e^{i tau h0} G_00(tau))^# over the spectral family of e^{-i tau h0}."""
    fg = compute_FG(model, tau)
    d1 = model.system_dim
    free = expm(-1j * tau * model.h0, structure="antihermitian")
    return averaged_generator(free, fg.G[:d1, :d1], schrodinger_family(model, tau, cluster_tol))


def gamma_w_double_integral(model: InteractionModel, tau: float) -> ComplexMatrix:
    """Gamma^w(tau) from the explicit double-integral formula.

    Only meaningful when exp(-i tau h0) keeps distinct h0 eigenvalues apart.
    """
    spectrum = hermitian_eig(model.h0)
    result = np.zeros((model.system_dim,) * 2, dtype=complex)
    for E_j, P_j in zip(spectrum.eigenvalues, spectrum.projectors):
        for delta_m, v in zip(model.delta, model.V):
            for E_k, P_k in zip(spectrum.eigenvalues, spectrum.projectors):
                weight = double_oscillatory_integral(E_k + delta_m - E_j, tau)
                result -= weight * (P_j @ dagger(v) @ P_k @ v @ P_j)
    return result


def gamma0_sharp(model: InteractionModel, cluster_tol: float = CLUSTER_TOL) -> ComplexMatrix:
    """Gamma_0^# with Gamma_0 = -1/2 sum_m V_m^dagger V_m, averaged over the h0 eigenprojectors.

    The ordering is V^dagger V because W_{m,0} = V_m acts while the chain
    element leaves level 0: for h0 = eps sigma_z and V = sigma_- = |omega><x|
    this gives -1/2 |x><x|, the decay of the excited level x.
    """
    gamma0 = -0.5 * sum(dagger(v) @ v for v in model.V)
    return sharp(gamma0, ProjectorFamily.from_spectrum(hermitian_eig(model.h0, cluster_tol)))


def regimeA_generator(
    model: InteractionModel, tau: float, cluster_tol: float = CLUSTER_TOL
) -> ComplexMatrix:
    """e^{i tau h0} G_00(tau)^# / tau^2."""
    if tau == 0:
        raise ValueError("regimeA_generator needs tau != 0")
    return gamma_w_schrodinger(model, tau, cluster_tol) / tau ** 2


def t_beta(model: InteractionModel, tau: float) -> SuperOperator:
    """Second order coefficient T_beta of U_beta(lambda) = U_00(0) + lambda^2 T_beta / Z + O(lambda^4)."""
    F, G = compute_FG(model, tau).blocks()
    boltzmann = model_weights(model).boltzmann
    d1 = model.system_dim
    free = [
        expm(-1j * tau * (model.h0 + delta_m * np.eye(d1)), structure="antihermitian")
        for delta_m in model.delta_full
    ]

    matrix = left_right(dagger(G[0, 0]), free[0]) + left_right(dagger(free[0]), G[0, 0])
    for m in range(1, model.site_dim):
        matrix += left_right(dagger(F[m, 0]), F[m, 0])
        if boltzmann[m] == 0:
            continue
        excited = (
            left_right(dagger(F[0, m]), F[0, m])
            + left_right(dagger(G[m, m]), free[m])
            + left_right(dagger(free[m]), G[m, m])
        )
        matrix += boltzmann[m] * excited
    return SuperOperator(matrix=matrix, dim=d1)


def heisenberg_expansion_residual(model: InteractionModel, lam: float, tau: float) -> float:
    """||U_beta(lambda) - U_00(0) - lambda^2 T_beta / Z||, of order lambda^4."""
    exact = model_heisenberg_map(model, lam, tau)
    approx = free_heisenberg(model, tau) + t_beta(model, tau).scaled(lam ** 2 / model_weights(model).Z)
    return (exact - approx).norm()


def gamma_w_heisenberg(
    model: InteractionModel, tau: float, cluster_tol: float = CLUSTER_TOL
) -> SuperOperator:
    """Gamma^w_beta(tau) = (U_00(0)^{-1} T_beta)^# / Z."""
    free = free_heisenberg(model, tau)
    family = heisenberg_family(model, tau, cluster_tol)
    generator = averaged_generator(free.matrix, t_beta(model, tau), family)
    return generator.scaled(1.0 / model_weights(model).Z)


def dissipator_term(L: np.ndarray) -> np.ndarray:
    """B -> L B L^dagger - 1/2 {L L^dagger, B}."""
    LLd = L @ dagger(L)
    identity = np.eye(L.shape[0])
    return left_right(L, dagger(L)) - 0.5 * (left_right(LLd, identity) + left_right(identity, LLd))


def gamma_beta(model: InteractionModel) -> SuperOperator:
    """Heisenberg-picture dissipator

        Gamma_beta(B) = sum_m [ p_m (V_m B V_m^dagger - 1/2 {V_m V_m^dagger, B})
                              + p_0 (V_m^dagger B V_m - 1/2 {V_m^dagger V_m, B}) ]
    """
    p = model_weights(model).p
    matrix = np.zeros((model.system_dim ** 2,) * 2, dtype=complex)
    for m, v in enumerate(model.V, start=1):
        matrix += p[m] * dissipator_term(v) + p[0] * dissipator_term(dagger(v))
    return SuperOperator(matrix=matrix, dim=model.system_dim)


def gamma_beta_sharp(model: InteractionModel, cluster_tol: float = CLUSTER_TOL) -> SuperOperator:
    """Gamma_beta averaged over the spectral family of [h0, .]."""
    return sharp(gamma_beta(model), heisenberg_family(model, None, cluster_tol))


def richardson_limit(samples: Callable[[float], np.ndarray], taus: Sequence[float]) -> np.ndarray:
    """Value at tau = 0 of the polynomial in tau interpolating samples(tau) entrywise."""
    taus = np.asarray(taus, dtype=float)
    values = np.stack([np.asarray(samples(t)) for t in taus])
    vandermonde = np.vander(taus, increasing=True)
    coeffs = np.linalg.solve(vandermonde, values.reshape(len(taus), -1))
    return coeffs[0].reshape(values.shape[1:])


def j_operator(h, R) -> ComplexMatrix:
    """J = sum_{j,k} alpha_jk P_j R P_k over the eigenprojectors of h, with

        alpha_jk = (E_j - E_k) / (e^{-i E_j} - e^{-i E_k})   (j != k)
        alpha_jj = i e^{i E_j}

    so that R + i e^{-ih} int_0^1 e^{ihs} J e^{-ihs} ds = 0.
    """
    spectrum = hermitian_eig(h)
    R = np.asarray(R, dtype=complex)
    J = np.zeros_like(R)
    for j, (E_j, P_j) in enumerate(zip(spectrum.eigenvalues, spectrum.projectors)):
        for k, (E_k, P_k) in enumerate(zip(spectrum.eigenvalues, spectrum.projectors)):
            if j == k:
                alpha = 1j * np.exp(1j * E_j)
            else:
                alpha = (E_j - E_k) / (np.exp(-1j * E_j) - np.exp(-1j * E_k))
            J += alpha * (P_j @ R @ P_k)
    return J
