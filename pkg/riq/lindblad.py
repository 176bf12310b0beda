"""
Lindblad Generator

Critical-regime generator i[h0, .] + Gamma_beta in the Heisenberg picture, its
jump-operator form, the semigroup it generates and complete-positivity
certificates computed on the dual (state) maps.
"""
import logging
import math
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .densela import ComplexMatrix, commutator_superop, dagger, expm, op_norm, vec
from .model import InteractionModel, model_weights
from .perturb import dissipator_term, gamma_beta
from .reduced import SuperOperator, contraction_check, dual

logger = logging.getLogger(__name__)

CHOI_TOL = 1e-9


class LindbladGenerator(BaseModel):
    """i[h0, .] plus a dissipator with its 2n jump operators."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hamiltonian_part: SuperOperator
    dissipator: SuperOperator
    jump_operators: Tuple[np.ndarray, ...]
    jump_weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.dissipator.dim

    def as_superoperator(self) -> SuperOperator:
        return self.hamiltonian_part + self.dissipator

    def jump_residual(self) -> float:
        """Distance between the stored dissipator and the one rebuilt from the jumps."""
        return (self.dissipator - jump_dissipator(self.jump_operators, self.dim)).norm()


def jump_dissipator(jumps: Sequence[np.ndarray], dim: int) -> SuperOperator:
    """B -> sum_j L_j B L_j^dagger - 1/2 {L_j L_j^dagger, B}."""
    matrix = np.zeros((dim * dim, dim * dim), dtype=complex)
    for L in jumps:
        matrix += dissipator_term(np.asarray(L, dtype=complex))
    return SuperOperator(matrix=matrix, dim=dim)


def build_lindblad(model: InteractionModel) -> LindbladGenerator:
    """Jumps L_j = sqrt(p_j) V_j and L_{n+j} = sqrt(p_0) V_j^dagger, p the Gibbs weights."""
    p = model_weights(model).p
    excited = np.sqrt(p[1:])
    jumps = [w * v for w, v in zip(excited, model.V)]
    jumps += [np.sqrt(p[0]) * dagger(v) for v in model.V]
    weights = np.concatenate([excited, np.full(model.n, np.sqrt(p[0]))])
    logger.info(f"Lindblad generator with {len(jumps)} jump operators, beta={model.beta}")
    return LindbladGenerator(
        hamiltonian_part=SuperOperator(
            matrix=1j * commutator_superop(model.h0), dim=model.system_dim
        ),
        dissipator=gamma_beta(model),
        jump_operators=tuple(jumps),
        jump_weights=weights,
    )


def semigroup(gen: Union[LindbladGenerator, SuperOperator], t: float) -> SuperOperator:
    """exp(t L) for the Heisenberg-picture generator L."""
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    generator = gen.as_superoperator() if isinstance(gen, LindbladGenerator) else gen
    return SuperOperator(matrix=expm(t * generator.matrix), dim=generator.dim)


def choi(superop: SuperOperator) -> ComplexMatrix:
    """C = sum_{ij} E_ij (x) map(E_ij); the map is CP iff C is PSD."""
    D = superop.dim
    C = np.zeros((D * D, D * D), dtype=complex)
    for i in range(D):
        for j in range(D):
            unit = np.zeros((D, D), dtype=complex)
            unit[i, j] = 1.0
            C += np.kron(unit, superop.apply(unit))
    return C


def min_choi_eigenvalue(superop: SuperOperator) -> float:
    C = choi(superop)
    return float(np.linalg.eigvalsh((C + dagger(C)) / 2).min())


def certify(
    gen: LindbladGenerator, times: Sequence[float] = (0.1, 1.0)
) -> Dict[str, float]:
    """Positivity, unitality, trace and semigroup-law residuals at the given times."""
    identity = np.eye(gen.dim)
    trace_row = vec(identity).conj()
    report = {
        "generator(I)": op_norm(gen.as_superoperator().apply(identity)),
        "jump reconstruction": gen.jump_residual(),
    }
    for t in times:
        heisenberg = semigroup(gen, t)
        state_map = dual(heisenberg)
        report[f"min choi eigenvalue t={t:g}"] = min_choi_eigenvalue(state_map)
        report[f"unitality t={t:g}"] = heisenberg.unitality_residual()
        report[f"trace preservation t={t:g}"] = float(
            np.linalg.norm(trace_row @ state_map.matrix - trace_row)
        )
        law = semigroup(gen, 2 * t) - heisenberg @ heisenberg
        report[f"semigroup law t={t:g}"] = law.norm()
        report[f"contraction t={t:g}"] = contraction_check(heisenberg)
    return report


def certificate_passed(report: Dict[str, float], tol: float = CHOI_TOL) -> bool:
    for name, value in report.items():
        if name.startswith("min choi"):
            if value < -tol:
                return False
        elif name.startswith("contraction"):
            if value > 1.0 + tol:
                return False
        elif value > tol:
            return False
    return True


def model_from_lindblad(
    h0, jumps: Sequence[np.ndarray], delta: Union[float, Sequence[float]] = 1.0
) -> InteractionModel:
    """Zero-temperature repeated interaction model whose generator has the given jumps.

    With beta = inf only the V_j^dagger terms survive, so V_j = L_j^dagger.
    """
    n = len(jumps)
    if n == 0:
        raise ValueError("model_from_lindblad needs at least one jump operator")
    h0 = np.asarray(h0, dtype=complex)
    deltas = np.full(n, delta, dtype=float) if np.isscalar(delta) else np.asarray(delta, float)
    return InteractionModel(
        d=h0.shape[0] - 1,
        n=n,
        h0=h0,
        delta=deltas,
        V=[dagger(np.asarray(L, dtype=complex)) for L in jumps],
        beta=math.inf,
    )
