"""
Repeated Interaction Model

Assembles the one-site operators of a small system h0 on C^{d+1} coupled to a
chain element C^{n+1}: the uncoupled Hamiltonian, the interaction, the one-step
unitary and the thermal (Gibbs) weights of the chain element.

One-site basis ordering: index m*(d+1)+i for system level i and chain level m,
ground block (m = 0) first. Operators are therefore built as kron(site, system).
"""
import logging
import math
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp, softmax
from scipy.stats import unitary_group

from .constants import BASIS_LAYOUT, HERMITIAN_TOL
from .densela import ComplexMatrix, dagger, expm, is_hermitian

logger = logging.getLogger(__name__)


def _complex_array(value: Any, ndim: int, field: str) -> np.ndarray:
    """Parse numbers or nested [re, im] pairs into a complex array of rank ``ndim``."""
    arr = np.asarray(value)
    if arr.dtype == object:
        raise ValueError(f"{field} entries must be numbers or [re, im] pairs")
    if arr.ndim == ndim + 1 and arr.shape[-1] == 2 and not np.iscomplexobj(arr):
        arr = arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim != ndim:
        raise ValueError(f"{field} must be a {ndim}-d array, got shape {arr.shape}")
    arr = arr.astype(complex)
    arr.setflags(write=False)
    return arr


def _pairs(M: np.ndarray) -> List:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)]


class InteractionModel(BaseModel):
    """Full model description: h0, chain energies, couplings and temperature.

    ``beta`` is ``math.inf`` for zero temperature; the JSON form accepts "inf".
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int = Field(ge=1)
    n: int = Field(ge=1)
    h0: np.ndarray
    delta: np.ndarray
    V: Tuple[np.ndarray, ...]
    beta: float = Field(default=1.0, ge=0)

    @field_validator("h0", mode="before")
    @classmethod
    def _parse_h0(cls, value):
        arr = _complex_array(value, 2, "h0")
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"h0 must be square, got shape {arr.shape}")
        if not is_hermitian(arr, HERMITIAN_TOL):
            raise ValueError(f"h0 is not Hermitian within {HERMITIAN_TOL:g}")
        return arr

    @field_validator("delta", mode="before")
    @classmethod
    def _parse_delta(cls, value):
        arr = np.array(value, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"delta must be a list of reals, got shape {arr.shape}")
        arr.setflags(write=False)
        return arr

    @field_validator("V", mode="before")
    @classmethod
    def _parse_couplings(cls, value):
        if isinstance(value, np.ndarray) and value.ndim == 2:
            value = [value]
        return tuple(_complex_array(v, 2, f"V[{j}]") for j, v in enumerate(value))

    @field_validator("beta", mode="before")
    @classmethod
    def _parse_beta(cls, value):
        if isinstance(value, str):
            if value.strip().lower() in ("inf", "+inf", "infinity"):
                return math.inf
            raise ValueError(f"beta must be a number or 'inf', got {value!r}")
        return value

    @model_validator(mode="after")
    def _check_dimensions(self):
        d1 = self.d + 1
        if self.h0.shape != (d1, d1):
            raise ValueError(f"h0 has shape {self.h0.shape}, expected ({d1}, {d1}) for d={self.d}")
        if len(self.delta) != self.n:
            raise ValueError(f"delta has {len(self.delta)} entries, expected n={self.n}")
        if len(self.V) != self.n:
            raise ValueError(f"V has {len(self.V)} coupling operators, expected n={self.n}")
        for j, v in enumerate(self.V):
            if v.shape != (d1, d1):
                raise ValueError(f"V[{j}] has shape {v.shape}, expected ({d1}, {d1})")
        if self.zero_temperature and np.any(self.delta < 0):
            logger.warning("beta = inf with negative delta: vacuum weights kept as (1, 0, ..., 0)")
        return self

    @property
    def system_dim(self) -> int:
        return self.d + 1

    @property
    def site_dim(self) -> int:
        return self.n + 1

    @property
    def delta_full(self) -> np.ndarray:
        """Chain level energies with delta_0 = 0 prepended."""
        return np.concatenate([[0.0], self.delta])

    @property
    def zero_temperature(self) -> bool:
        return math.isinf(self.beta)

    def with_couplings(self, V: Sequence[np.ndarray]) -> "InteractionModel":
        return InteractionModel(d=self.d, n=self.n, h0=self.h0, delta=self.delta, V=V, beta=self.beta)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "n": self.n,
            "h0": _pairs(self.h0),
            "delta": [float(x) for x in self.delta],
            "V": [_pairs(v) for v in self.V],
            "beta": "inf" if self.zero_temperature else float(self.beta),
        }


class OneSiteOperators(BaseModel):
    """Uncoupled one-site Hamiltonian H0 and interaction W on C^{(d+1)(n+1)}."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    H0: np.ndarray
    W: np.ndarray
    system_dim: int
    site_dim: int
    layout: str = BASIS_LAYOUT

    def block(self, M: np.ndarray, m: int, mp: int) -> ComplexMatrix:
        d1 = self.system_dim
        return M[m * d1:(m + 1) * d1, mp * d1:(mp + 1) * d1]


class GibbsWeights(BaseModel):
    """Thermal weights p_m = exp(-beta delta_m) / Z of the chain levels."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p: np.ndarray
    Z: float

    @property
    def boltzmann(self) -> np.ndarray:
        """exp(-beta delta_m), i.e. p_m * Z."""
        return self.p * self.Z


def site_unit(site_dim: int, m: int, mp: int) -> np.ndarray:
    """Chain matrix unit |m><mp|."""
    E = np.zeros((site_dim, site_dim))
    E[m, mp] = 1.0
    return E


def build_one_site(model: InteractionModel) -> OneSiteOperators:
    """Assemble H0 = h0 (x) I + I (x) delta a*a and W with W_{0,m} = V_m^dagger, W_{m,0} = V_m."""
    d1, n1 = model.system_dim, model.site_dim
    H0 = np.kron(np.eye(n1), model.h0) + np.kron(np.diag(model.delta_full), np.eye(d1))
    W = np.zeros((d1 * n1, d1 * n1), dtype=complex)
    for m, v in enumerate(model.V, start=1):
        W += np.kron(site_unit(n1, 0, m), dagger(v))
        W += np.kron(site_unit(n1, m, 0), v)
    return OneSiteOperators(H0=H0, W=W, system_dim=d1, site_dim=n1)


def projector_P(model: InteractionModel) -> ComplexMatrix:
    """P = I (x) |omega><omega| in the one-site layout."""
    return np.kron(site_unit(model.site_dim, 0, 0), np.eye(model.system_dim)).astype(complex)


def gibbs_weights(beta: float, delta: Sequence[float]) -> GibbsWeights:
    """Gibbs weights of the chain levels with delta_0 = 0 prepended."""
    delta_full = np.concatenate([[0.0], np.asarray(delta, dtype=float)])
    if math.isinf(beta):
        p = np.zeros(len(delta_full))
        p[0] = 1.0
        return GibbsWeights(p=p, Z=1.0)
    if beta < 0:
        raise ValueError(f"beta must be >= 0 or inf, got {beta}")
    log_w = -beta * delta_full
    return GibbsWeights(p=softmax(log_w), Z=float(np.exp(logsumexp(log_w))))


def model_weights(model: InteractionModel) -> GibbsWeights:
    return gibbs_weights(model.beta, model.delta)


def coupled_hamiltonian(model: InteractionModel, lam: float) -> ComplexMatrix:
    ops = build_one_site(model)
    return ops.H0 + lam * ops.W


def one_step_unitary(model: InteractionModel, lam: float, tau: float) -> ComplexMatrix:
    """U = exp(-i tau (H0 + lambda W))."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return expm(-1j * tau * coupled_hamiltonian(model, lam), structure="antihermitian")


def random_model(
    d: int = 1,
    n: int = 1,
    seed: int = 0,
    energy_scale: float = 1.0,
    coupling_scale: float = 0.5,
    beta: float = 1.0,
) -> InteractionModel:
    """Seeded random model with spread h0 energies and normalized couplings."""
    rng = np.random.default_rng(seed)
    d1 = d + 1
    energies = np.sort(rng.uniform(-energy_scale, energy_scale, d1))
    basis = unitary_group.rvs(d1, random_state=rng)
    h0 = (basis * energies) @ dagger(basis)
    delta = rng.uniform(0.5, 1.5, n)
    V = []
    for _ in range(n):
        G = rng.normal(size=(d1, d1)) + 1j * rng.normal(size=(d1, d1))
        V.append(coupling_scale * G / np.linalg.norm(G, 2))
    logger.info(f"Sampled random model d={d} n={n} seed={seed}")
    return InteractionModel(d=d, n=n, h0=(h0 + dagger(h0)) / 2, delta=delta, V=V, beta=beta)
