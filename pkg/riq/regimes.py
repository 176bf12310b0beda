"""
Convergence Regimes

Runs the exact discrete dynamics against the effective semigroup of each
scaling regime over a schedule of integer step counts, and fits the order of
convergence from the error norms.

    weak        k = t / lambda^2, tau fixed, renormalized by the free evolution
    regime2     k = t / (lambda tau)^2, lambda fixed, tau -> 0, renormalized
    critical    k = t / tau with lambda = 1 / sqrt(tau), no renormalization
    continuous  k = t / tau with lambda = 1, no renormalization
"""
import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .constants import (
    CLUSTER_RESOLUTION,
    CLUSTER_TOL,
    CONVERGENCE_COLUMNS,
    EXACT_ERROR_TOL,
    MIN_SCHEDULE_POINTS,
    ORDER_WINDOWS,
    THEORETICAL_ORDERS,
)
from .densela import (
    ComplexMatrix,
    SpectralDecomposition,
    commutator_superop,
    dagger,
    expm,
    op_norm,
    superop_spectrum,
    unitary_spectrum,
)
from .lindblad import build_lindblad
from .model import InteractionModel, model_weights, one_step_unitary
from .perturb import (
    gamma0_sharp,
    gamma_beta,
    gamma_beta_sharp,
    gamma_w_heisenberg,
    gamma_w_schrodinger,
    heisenberg_family,
    sharp,
)
from .reduced import SuperOperator, free_heisenberg, heisenberg_map, schrodinger_block

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Raised for schedules that break the integer step constraint or are too short."""


class ClusterDegeneracyError(ValueError):
    """Raised when distinct spectral clusters are too close to be resolved."""


class FitError(ValueError):
    """Raised when too few positive errors remain for an order fit."""


class ConvergencePoint(BaseModel):
    """One schedule point with its Schrodinger and Heisenberg errors."""
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    regime: str
    t: float
    tau: float
    lam: float = Field(alias="lambda")
    k: int = Field(ge=1)
    error_schrodinger: float
    error_heisenberg: float
    error_observable: float = 0.0


class ConvergenceReport(BaseModel):
    """Points of one sweep plus the fitted orders and verdict."""
    regime: str
    small_parameter: str
    points: List[ConvergencePoint]
    fitted_order: Optional[float] = None
    fitted_order_heisenberg: Optional[float] = None
    theoretical_order: float
    order_window: Tuple[float, float]
    status: str
    passed: bool
    off_block_norm: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        rows = [point.model_dump(by_alias=True) for point in self.points]
        return pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)

    def summary(self) -> Dict[str, Any]:
        low, high = self.order_window
        summary = {
            "regime": self.regime,
            "small_parameter": self.small_parameter,
            "fitted_order": self.fitted_order,
            "fitted_order_heisenberg": self.fitted_order_heisenberg,
            "theoretical_order": self.theoretical_order,
            "order_window": [low, None if math.isinf(high) else high],
            "pass": self.passed,
            "status": self.status,
            "observable_errors": [p.error_observable for p in self.points],
        }
        if self.off_block_norm is not None:
            summary["off_block_norm"] = self.off_block_norm
        return summary


def fit_order(parameters: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(parameter).

    Non-positive errors carry no order information and are dropped with a
    warning.

    Raises:
        FitError: fewer than three usable points remain.
    """
    parameters = np.asarray(parameters, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if not keep.all():
        logger.warning(f"fit_order: dropping {int((~keep).sum())} non-positive errors")
    if keep.sum() < MIN_SCHEDULE_POINTS:
        logger.error(f"fit_order: only {int(keep.sum())} positive errors")
        raise FitError(f"need at least {MIN_SCHEDULE_POINTS} positive errors, got {int(keep.sum())}")
    slope, _ = np.polyfit(np.log(parameters[keep]), np.log(errors[keep]), 1)
    return float(slope)


# Schedules: every point is (k, tau, lambda) with k an exact integer.

def _check_steps(k_list: Sequence[int]) -> List[int]:
    steps = []
    for k in k_list:
        if isinstance(k, bool) or int(k) != k or k < 1:
            logger.error(f"step count {k!r} is not a positive integer")
            raise ScheduleError(f"step count {k!r} is not a positive integer")
        steps.append(int(k))
    if len(set(steps)) < MIN_SCHEDULE_POINTS:
        raise ScheduleError(f"need at least {MIN_SCHEDULE_POINTS} distinct step counts, got {steps}")
    return steps


def _check_time(t: float) -> None:
    if not t > 0:
        raise ScheduleError(f"macroscopic time must be positive, got {t}")


def weak_schedule(t: float, tau: float, k_list: Sequence[int]) -> List[Tuple[int, float, float]]:
    """lambda = sqrt(t / k)."""
    _check_time(t)
    return [(k, tau, math.sqrt(t / k)) for k in _check_steps(k_list)]


def regime2_schedule(t: float, k_list: Sequence[int], lam: float = 1.0) -> List[Tuple[int, float, float]]:
    """tau = sqrt(t / k) / lambda at fixed lambda."""
    _check_time(t)
    if not lam > 0:
        raise ScheduleError(f"lambda must be positive, got {lam}")
    return [(k, math.sqrt(t / k) / lam, lam) for k in _check_steps(k_list)]


def critical_schedule(t: float, k_list: Sequence[int]) -> List[Tuple[int, float, float]]:
    """tau = t / k and lambda = 1 / sqrt(tau)."""
    _check_time(t)
    return [(k, t / k, math.sqrt(k / t)) for k in _check_steps(k_list)]


def continuous_schedule(t: float, k_list: Sequence[int]) -> List[Tuple[int, float, float]]:
    """tau = t / k at lambda = 1."""
    _check_time(t)
    return [(k, t / k, 1.0) for k in _check_steps(k_list)]


def steps_for_taus(t: float, taus: Sequence[float], rel_tol: float = 1e-9) -> List[int]:
    """Step counts k = t / tau, refusing taus that do not divide t."""
    steps = []
    for tau in taus:
        k = t / tau
        if tau <= 0 or abs(k - round(k)) > rel_tol * max(1.0, k):
            logger.error(f"t / tau = {k} is not an integer")
            raise ScheduleError(f"t / tau = {t} / {tau} is not an integer")
        steps.append(int(round(k)))
    return steps


def _minimal_separation(spectrum: SpectralDecomposition) -> float:
    values = spectrum.eigenvalues
    if len(values) < 2:
        return math.inf
    gaps = np.abs(values[:, None] - values[None, :])
    return float(gaps[~np.eye(len(values), dtype=bool)].min())


def check_cluster_resolution(spectrum: SpectralDecomposition, what: str) -> None:
    separation = _minimal_separation(spectrum)
    if separation < CLUSTER_RESOLUTION:
        logger.error(f"{what}: clusters only {separation:.2e} apart")
        raise ClusterDegeneracyError(
            f"{what} has distinct clusters {separation:.2e} apart, below the resolution "
            f"{CLUSTER_RESOLUTION:g}; raise cluster_tol to merge them or change tau"
        )


class BaseExperiment(ABC):
    """
    Template for one convergence sweep.

    Subclasses supply the schedule, the two limiting evolutions and how the
    discrete powers are renormalized; ``run`` evaluates every point and
    assembles the report.
    """

    regime: str = ""
    small_parameter: str = "tau"

    def __init__(
        self, model: InteractionModel, t: float, seed: int = 0, cluster_tol: float = CLUSTER_TOL
    ):
        """
        Args:
            model: Interaction model to sweep
            t: Macroscopic time
            seed: Seed of the fixed observable used for pointwise errors
            cluster_tol: Eigenvalues closer than this share one spectral projector
        """
        self.model = model
        self.t = t
        self.cluster_tol = cluster_tol
        rng = np.random.default_rng(seed)
        shape = (model.system_dim,) * 2
        self.observable = rng.normal(size=shape) + 1j * rng.normal(size=shape)

    @abstractmethod
    def schedule(self) -> List[Tuple[int, float, float]]:
        """
        Schedule points (k, tau, lambda) in sweep order.
        """

    @abstractmethod
    def schrodinger_limit(self, tau: float) -> ComplexMatrix:
        """
        Limiting operator on H0 for the Schrodinger track.
        """

    @abstractmethod
    def heisenberg_limit(self, tau: float) -> SuperOperator:
        """
        Limiting superoperator for the Heisenberg track.
        """

    def parameter(self, tau: float, lam: float) -> float:
        """Small parameter the order is fitted against."""
        return lam if self.small_parameter == "lambda" else tau

    def discrete_powers(self, k: int, tau: float, lam: float) -> Tuple[ComplexMatrix, SuperOperator]:
        """
        A^k and U_beta^k at one schedule point, renormalized if the regime asks for it.

        Args:
            k: Number of interactions
            tau: Interaction duration
            lam: Coupling strength

        Returns:
            Tuple of the Schrodinger and Heisenberg powers
        """
        U = one_step_unitary(self.model, lam, tau)
        A = schrodinger_block(U, self.model.system_dim)
        heis = heisenberg_map(U, model_weights(self.model), self.model.system_dim)
        return np.linalg.matrix_power(A, k), heis.power(k)

    def prepare(self) -> None:
        """Hook run once before the sweep; checks preconditions."""

    def finalize(self, report_fields: Dict[str, Any], finest_heisenberg: SuperOperator) -> None:
        """Hook to add regime-specific fields to the report."""

    def run(self) -> ConvergenceReport:
        """
        Evaluate every schedule point and fit the orders of both tracks.

        Returns:
            ConvergenceReport with status "exact" when every error is below
            EXACT_ERROR_TOL, otherwise "ok" or "failed" from the order window
            and the finest-versus-coarsest comparison.
        """
        self.prepare()
        points = []
        finest_heisenberg, finest_parameter = None, math.inf
        for k, tau, lam in self.schedule():
            schr, heis = self.discrete_powers(k, tau, lam)
            schr_limit = self.schrodinger_limit(tau)
            heis_limit = self.heisenberg_limit(tau)
            observable_error = op_norm(heis.apply(self.observable) - heis_limit.apply(self.observable))
            points.append(
                ConvergencePoint(
                    regime=self.regime,
                    t=self.t,
                    tau=tau,
                    lam=lam,
                    k=k,
                    error_schrodinger=op_norm(schr - schr_limit),
                    error_heisenberg=(heis - heis_limit).norm(),
                    error_observable=observable_error,
                )
            )
            if self.parameter(tau, lam) < finest_parameter:
                finest_heisenberg, finest_parameter = heis, self.parameter(tau, lam)
            logger.info(
                f"{self.regime}: k={k} tau={tau:.6g} lambda={lam:.6g} "
                f"errors {points[-1].error_schrodinger:.3e} / {points[-1].error_heisenberg:.3e}"
            )

        window = ORDER_WINDOWS[self.regime]
        params = [self.parameter(p.tau, p.lam) for p in points]
        fields: Dict[str, Any] = {}
        orders = []
        verdicts = []
        for name in ("error_schrodinger", "error_heisenberg"):
            errors = [getattr(p, name) for p in points]
            if max(errors) <= EXACT_ERROR_TOL:
                orders.append(None)
                verdicts.append(True)
                continue
            order = fit_order(params, errors)
            finest = errors[int(np.argmin(params))]
            coarsest = errors[int(np.argmax(params))]
            orders.append(order)
            verdicts.append(window[0] <= order <= window[1] and finest < coarsest)

        exact = all(order is None for order in orders)
        passed = all(verdicts)
        self.finalize(fields, finest_heisenberg)
        report = ConvergenceReport(
            regime=self.regime,
            small_parameter=self.small_parameter,
            points=points,
            fitted_order=orders[0],
            fitted_order_heisenberg=orders[1],
            theoretical_order=THEORETICAL_ORDERS[self.regime],
            order_window=window,
            status="exact" if exact else ("ok" if passed else "failed"),
            passed=passed,
            **fields,
        )
        logger.info(f"{self.regime}: status {report.status}, orders {orders}")
        return report


class WeakCouplingExperiment(BaseExperiment):
    """lambda -> 0 at fixed tau, compared with e^{t Gamma^w(tau)} and e^{t Gamma^w_beta}."""

    regime = "weak"
    small_parameter = "lambda"

    def __init__(self, model, tau: float, t: float, k_list: Sequence[int],
                 renormalize: bool = True, seed: int = 0, cluster_tol: float = CLUSTER_TOL):
        super().__init__(model, t, seed, cluster_tol)
        self.tau = tau
        self.k_list = k_list
        self.renormalize = renormalize
        self._limits = None

    def schedule(self):
        return weak_schedule(self.t, self.tau, self.k_list)

    def prepare(self):
        check_cluster_resolution(unitary_spectrum(self.model.h0, self.tau, self.cluster_tol), "exp(-i tau h0)")
        check_cluster_resolution(superop_spectrum(self.model.h0, self.tau, self.cluster_tol), "U_00(0)")
        self._limits = (
            expm(self.t * gamma_w_schrodinger(self.model, self.tau, self.cluster_tol)),
            SuperOperator(
                matrix=expm(self.t * gamma_w_heisenberg(self.model, self.tau, self.cluster_tol).matrix),
                dim=self.model.system_dim,
            ),
        )

    def discrete_powers(self, k, tau, lam):
        schr, heis = super().discrete_powers(k, tau, lam)
        if not self.renormalize:
            return schr, heis
        rotation = expm(1j * k * tau * self.model.h0, structure="antihermitian")
        back = free_heisenberg(self.model, -k * tau)
        return rotation @ schr, back @ heis

    def schrodinger_limit(self, tau):
        return self._limits[0]

    def heisenberg_limit(self, tau):
        return self._limits[1]


class Regime2Experiment(BaseExperiment):
    """tau -> 0 at fixed lambda with k = t / (lambda tau)^2, compared with e^{t Gamma_0^#}, e^{t Gamma_beta^#}."""

    regime = "regime2"

    def __init__(self, model, t: float, k_list: Sequence[int], lam: float = 1.0, seed: int = 0,
                 cluster_tol: float = CLUSTER_TOL):
        super().__init__(model, t, seed, cluster_tol)
        self.k_list = k_list
        self.lam = lam
        self._limits = None

    def schedule(self):
        return regime2_schedule(self.t, self.k_list, self.lam)

    def prepare(self):
        check_cluster_resolution(superop_spectrum(self.model.h0, None, self.cluster_tol), "[h0, .]")
        self._limits = (
            expm(self.t * gamma0_sharp(self.model, self.cluster_tol)),
            SuperOperator(
                matrix=expm(self.t * gamma_beta_sharp(self.model, self.cluster_tol).matrix),
                dim=self.model.system_dim,
            ),
        )

    def discrete_powers(self, k, tau, lam):
        schr, heis = super().discrete_powers(k, tau, lam)
        rotation = expm(1j * k * tau * self.model.h0, structure="antihermitian")
        back = free_heisenberg(self.model, -k * tau)
        return rotation @ schr, back @ heis

    def schrodinger_limit(self, tau):
        return self._limits[0]

    def heisenberg_limit(self, tau):
        return self._limits[1]

    def finalize(self, report_fields, finest_heisenberg):
        """Off-block part of the empirical Heisenberg limit at the finest point."""
        if finest_heisenberg is None:
            return
        averaged = sharp(finest_heisenberg, heisenberg_family(self.model, None, self.cluster_tol))
        report_fields["off_block_norm"] = (finest_heisenberg - averaged).norm()


class CriticalExperiment(BaseExperiment):
    """lambda^2 tau = 1, tau -> 0, compared with the full Lindblad semigroup."""

    regime = "critical"

    def __init__(self, model, t: float, k_list: Sequence[int], seed: int = 0,
                 cluster_tol: float = CLUSTER_TOL):
        super().__init__(model, t, seed, cluster_tol)
        self.k_list = k_list
        self._limits = None

    def schedule(self):
        return critical_schedule(self.t, self.k_list)

    def prepare(self):
        decay = 0.5 * sum(dagger(v) @ v for v in self.model.V)
        generator = build_lindblad(self.model).as_superoperator()
        self._limits = (
            expm(-self.t * (1j * self.model.h0 + decay)),
            SuperOperator(matrix=expm(self.t * generator.matrix), dim=self.model.system_dim),
        )

    def schrodinger_limit(self, tau):
        return self._limits[0]

    def heisenberg_limit(self, tau):
        return self._limits[1]


class ContinuousExperiment(BaseExperiment):
    """lambda = 1, tau -> 0: the coupling switches off and only the free evolution survives."""

    regime = "continuous"

    def __init__(self, model, t: float, k_list: Sequence[int], seed: int = 0,
                 cluster_tol: float = CLUSTER_TOL):
        super().__init__(model, t, seed, cluster_tol)
        self.k_list = k_list

    def schedule(self):
        return continuous_schedule(self.t, self.k_list)

    def schrodinger_limit(self, tau):
        return expm(-1j * self.t * self.model.h0, structure="antihermitian")

    def heisenberg_limit(self, tau):
        return free_heisenberg(self.model, self.t)


def weak_limit_experiment(
    model: InteractionModel,
    tau: float,
    t: float,
    k_schedule: Sequence[int],
    renormalize: bool = True,
    seed: int = 0,
    cluster_tol: float = CLUSTER_TOL,
) -> ConvergenceReport:
    return WeakCouplingExperiment(model, tau, t, k_schedule, renormalize, seed, cluster_tol).run()


def regime2_experiment(
    model: InteractionModel,
    t: float,
    k_schedule: Sequence[int],
    lam: float = 1.0,
    seed: int = 0,
    cluster_tol: float = CLUSTER_TOL,
) -> ConvergenceReport:
    return Regime2Experiment(model, t, k_schedule, lam, seed, cluster_tol).run()


def critical_experiment(
    model: InteractionModel,
    t: float,
    tau_schedule: Sequence[float],
    seed: int = 0,
    cluster_tol: float = CLUSTER_TOL,
) -> ConvergenceReport:
    """Sweep tau with lambda = 1 / sqrt(tau); every t / tau must be an integer."""
    return CriticalExperiment(model, t, steps_for_taus(t, tau_schedule), seed, cluster_tol).run()


def continuous_experiment(
    model: InteractionModel,
    t: float,
    tau_schedule: Sequence[float],
    seed: int = 0,
    cluster_tol: float = CLUSTER_TOL,
) -> ConvergenceReport:
    return ContinuousExperiment(model, t, steps_for_taus(t, tau_schedule), seed, cluster_tol).run()


def structural_dichotomy(
    model: InteractionModel, tau: float, cluster_tol: float = CLUSTER_TOL
) -> Dict[str, float]:
    """Commutators separating the perturbative and critical generators.

    Gamma^w_beta commutes with U_00(0); the critical generator
    i[h0, .] + Gamma_beta generally does not commute with i[h0, .].
    """
    free = free_heisenberg(model, tau)
    weak = gamma_w_heisenberg(model, tau, cluster_tol)
    rotation = SuperOperator(matrix=1j * commutator_superop(model.h0), dim=model.system_dim)
    critical = rotation + gamma_beta(model)
    return {
        "[Gamma^w_beta, U_00(0)]": (weak @ free - free @ weak).norm(),
        "[i ad h0 + Gamma_beta, i ad h0]": (critical @ rotation - rotation @ critical).norm(),
    }
