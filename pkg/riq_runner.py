#!/usr/bin/env python3
"""
Repeated Interaction Runner

Loads a model and run parameters, then validates the exact reductions,
writes the effective generators, runs convergence sweeps for one scaling
regime, cross-checks the two-level closed forms or evolves a reduced state.

Exit codes: 0 pass, 1 failed check, 2 usage or configuration error.
"""
import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator
from ruamel.yaml import YAML

from riq.constants import (
    CLUSTER_TOL,
    EVOLUTION_COLUMNS,
    EXACT_ERROR_TOL,
    REGIMES,
    TOOL_VERSION,
)
from riq.densela import LinearAlgebraError, dagger, op_norm, superop_spectrum, unitary_spectrum
from riq.lindblad import build_lindblad, certificate_passed, certify, semigroup
from riq.model import InteractionModel, random_model
from riq.perturb import (
    compute_FG,
    gamma0_sharp,
    gamma_beta,
    gamma_beta_sharp,
    gamma_w_heisenberg,
    gamma_w_schrodinger,
    heisenberg_family,
    quadrature_FG,
    sharp,
    t_beta,
    verify_fg_identities,
)
from riq.qubit import (
    V_I,
    V_Z,
    BranchTrackingError,
    QubitDegeneracyError,
    QubitModel,
    f10_closed,
    perturbed_eigensystem,
    qubit_gamma_w_beta,
    sigma_branches_coincide,
    tbeta_restricted,
)
from riq.reduced import (
    OracleSizeError,
    contraction_check,
    dual,
    markov_residuals,
    max_oracle_steps,
    model_heisenberg_map,
    reduced_state_trajectory,
)
from riq.regimes import (
    ClusterDegeneracyError,
    FitError,
    ScheduleError,
    check_cluster_resolution,
    continuous_experiment,
    critical_experiment,
    regime2_experiment,
    steps_for_taus,
    structural_dichotomy,
    weak_limit_experiment,
)
from riq.reporting import (
    matrix_to_pairs,
    residual_frame,
    worst_failure,
    write_csv,
    write_json,
    write_markdown_report,
)

logger = logging.getLogger(__name__)

SEED_ENV = "RIQ_SEED"
COMMANDS = ["validate", "generators", "converge", "qubit", "evolve"]

# Checks with their own tolerance; every other residual uses RunConfig.tol.
CHECK_TOLERANCES = {
    "F' + iH(0)F + iWe^{-i tau H(0)}": 1e-6,
    "G' + iH(0)G + iWF": 1e-6,
}

# Must stay above this lower bound; the critical generator does not commute with ad h0.
CRITICAL_COMMUTATOR = "critical_commutator"
CRITICAL_COMMUTATOR_MIN = 1e-3


class RandomModelConfig(BaseModel):
    """Seeded random model; ``seed`` defaults to the run seed."""

    d: PositiveInt = 1
    n: PositiveInt = 1
    seed: Optional[int] = None
    energy_scale: float = Field(default=1.0, gt=0)
    coupling_scale: float = Field(default=0.5, ge=0)
    beta: Union[float, str] = 1.0

    def build(self, run_seed: int) -> InteractionModel:
        seed = run_seed if self.seed is None else self.seed
        beta = math.inf if str(self.beta).strip().lower() == "inf" else float(self.beta)
        return random_model(self.d, self.n, seed, self.energy_scale, self.coupling_scale, beta)


class RegimeSettings(BaseModel):
    tau: Optional[float] = Field(default=None, gt=0)
    t: Optional[float] = Field(default=None, gt=0)
    k_list: Optional[List[PositiveInt]] = None
    tau_list: Optional[List[float]] = None
    lam: float = Field(default=1.0, gt=0)


class RunConfig(BaseModel):
    """Validated run parameters; schedules are checked before any computation."""
    model_config = ConfigDict(protected_namespaces=())

    model: Optional[InteractionModel] = None
    model_file: Optional[Path] = None
    random_model: Optional[RandomModelConfig] = None
    tau: float = Field(default=1.0, gt=0)
    t: float = Field(default=1.0, gt=0)
    lam: float = Field(default=0.5, gt=0)
    k_list: List[PositiveInt] = [64, 256, 1024]
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    tol: float = Field(default=1e-9, gt=0)
    coefficient_tol: float = Field(default=1e-4, gt=0)
    cluster_tol: float = Field(default=CLUSTER_TOL, gt=0)
    evolve_tau: float = Field(default=1.0 / 64, gt=0)
    out_dir: Path = Path("out")
    regimes: Dict[str, RegimeSettings] = {}

    @model_validator(mode="after")
    def _check_sources_and_schedules(self):
        sources = [s for s in (self.model, self.model_file, self.random_model) if s is not None]
        if len(sources) > 1:
            raise ValueError("give at most one of model, model_file, random_model")
        unknown = sorted(set(self.regimes) - set(REGIMES))
        if unknown:
            raise ValueError(f"regimes has unknown entries {unknown}; expected {REGIMES}")
        for name in REGIMES:
            self.schedule(name)
        return self

    def settings(self, regime: str) -> RegimeSettings:
        return self.regimes.get(regime, RegimeSettings())

    def schedule(self, regime: str) -> List[int]:
        """Integer step counts for ``regime``; tau lists are converted through t / tau."""
        settings = self.settings(regime)
        t = settings.t or self.t
        if settings.tau_list is not None and regime in ("critical", "continuous"):
            steps = steps_for_taus(t, settings.tau_list)
        else:
            steps = list(settings.k_list or self.k_list)
        if len(set(steps)) < 3:
            raise ScheduleError(f"{regime}: need at least 3 distinct step counts, got {steps}")
        return steps

    def build_model(self, base_dir: Path) -> InteractionModel:
        if self.model is not None:
            return self.model
        if self.model_file is not None:
            path = self.model_file if self.model_file.is_absolute() else base_dir / self.model_file
            return InteractionModel.model_validate(load_config(path))
        return (self.random_model or RandomModelConfig()).build(self.seed)


def load_config(config_path: Path) -> dict:
    """Load a YAML (or JSON) document."""
    yaml = YAML(typ="safe")
    with open(config_path) as f:
        return yaml.load(f) or {}


def parse_k_list(text: str) -> List[int]:
    try:
        values = [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k-list expects comma separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"--k-list entries must be positive, got {text!r}")
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values, then flags, then RIQ_SEED."""
    raw = load_config(args.config) if args.config is not None else {}
    for flag, key in (("out", "out_dir"), ("seed", "seed"), ("tau", "tau"), ("t", "t"),
                      ("k_list", "k_list"), ("tol", "tol")):
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        raw["seed"] = env_seed
        logger.info(f"Seed taken from {SEED_ENV}={env_seed}")
    if args.k_list is not None:
        # --k-list replaces every per-regime schedule
        for settings in raw.get("regimes", {}).values():
            if isinstance(settings, dict):
                settings.pop("k_list", None)
                settings.pop("tau_list", None)
    return RunConfig.model_validate(raw)


# Commands

def cmd_validate(model: InteractionModel, config: RunConfig) -> int:
    """Cross-module identity suite on one model."""
    tau, lam = config.tau, config.lam
    identity = np.eye(model.system_dim)
    rng = np.random.default_rng(config.seed)
    B = rng.normal(size=identity.shape) + 1j * rng.normal(size=identity.shape)

    residuals: Dict[str, float] = {}
    k_max = max_oracle_steps(model)
    if k_max:
        worst_s, worst_h = markov_residuals(model, lam, tau, k_max, seed=config.seed)
        residuals[f"P U(k,0) P - A^k, k<={k_max}"] = worst_s
        residuals[f"U_beta^k(B) - chain oracle, k<={k_max}"] = worst_h
    else:
        logger.warning("Full chain too large for even one step; Markov checks skipped")

    heisenberg = model_heisenberg_map(model, lam, tau)
    residuals["U_beta(I) - I"] = heisenberg.unitality_residual()
    residuals["sampled contraction excess"] = max(0.0, contraction_check(heisenberg, seed=config.seed) - 1.0)

    T = t_beta(model, tau)
    residuals["T_beta(I)"] = op_norm(T.apply(identity))
    residuals["T_beta(B^dagger) - T_beta(B)^dagger"] = op_norm(T.apply(dagger(B)) - dagger(T.apply(B)))

    closed, quadrature = compute_FG(model, tau), quadrature_FG(model, tau)
    residuals["F closed form - quadrature"] = op_norm(closed.F - quadrature.F)
    residuals["G closed form - quadrature"] = op_norm(closed.G - quadrature.G)
    residuals.update(verify_fg_identities(model, tau))

    family = heisenberg_family(model, tau, config.cluster_tol)
    residuals["sharp(dual(U_beta)) - dual(sharp(U_beta))"] = (
        sharp(dual(heisenberg), family) - dual(sharp(heisenberg, family))
    ).norm()

    dichotomy = structural_dichotomy(model, tau, config.cluster_tol)
    residuals["[Gamma^w_beta, U_00(0)]"] = dichotomy["[Gamma^w_beta, U_00(0)]"]
    lower_bounds = {}
    # Gamma_beta = Gamma_beta^# commutes with ad h0, so the bound only applies off that case
    off_block = (gamma_beta(model) - gamma_beta_sharp(model, config.cluster_tol)).norm()
    if off_block > config.tol:
        residuals[CRITICAL_COMMUTATOR] = dichotomy["[i ad h0 + Gamma_beta, i ad h0]"]
        lower_bounds[CRITICAL_COMMUTATOR] = CRITICAL_COMMUTATOR_MIN
    else:
        logger.info(f"Gamma_beta commutes with ad h0 (off-block norm {off_block:.2e}); {CRITICAL_COMMUTATOR} not bounded")

    certificate = certify(build_lindblad(model))
    for name, value in certificate.items():
        if name.startswith("min choi"):
            residuals[name] = max(0.0, -value)
        elif name.startswith("contraction"):
            residuals[name] = max(0.0, value - 1.0)
        else:
            residuals[name] = value
    if not certificate_passed(certificate, config.tol):
        logger.warning("Lindblad certificate failed")

    frame = residual_frame(residuals, CHECK_TOLERANCES, config.tol, lower_bounds)
    out = config.out_dir
    write_json(
        {
            "command": "validate",
            "tau": tau,
            "lambda": lam,
            "beta": model.beta,
            "checks": frame.to_dict(orient="records"),
            "diagnostics": dichotomy,
            "passed": bool(frame["passed"].all()),
        },
        out / "validate.json",
    )
    write_markdown_report(out / "validate.md", "Identity checks", {"Residuals": frame})
    print(f"  Wrote {out / 'validate.json'}")
    return _verdict(frame)


def _verdict(frame: pd.DataFrame) -> int:
    worst = worst_failure(frame)
    if worst is None:
        print(f"✅ All {len(frame)} checks passed")
        return 0
    failed = int((~frame["passed"]).sum())
    print(f"❌ {failed} of {len(frame)} checks failed; worst: {worst['check']} = "
          f"{worst['residual']:.3e} (tolerance {worst['tolerance']:.1e})")
    return 1


class _WarningCollector(logging.Handler):
    """Collects warning records emitted while one generator is built."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


def _qubit_cross_check(model: InteractionModel, tau: float, config: RunConfig) -> Dict[str, object]:
    """Closed-form Gamma^w_beta, carried back from the h0 eigenbasis, against the generic one."""
    try:
        qm = QubitModel.from_model(model)
        closed = qm.in_model_frame(qubit_gamma_w_beta(qm, tau, config.cluster_tol))
        residual = (closed - gamma_w_heisenberg(model, tau, config.cluster_tol)).norm()
    except ValueError as e:
        return {"applicable": False, "reason": str(e)}
    return {"applicable": True, "residual": residual, "passed": residual <= config.tol}


def cmd_generators(model: InteractionModel, config: RunConfig) -> int:
    """One JSON document per effective generator."""
    tau = config.tau
    lindblad = build_lindblad(model)
    builders = {
        "gamma_w": lambda: gamma_w_schrodinger(model, tau, config.cluster_tol),
        "gamma0_sharp": lambda: gamma0_sharp(model, config.cluster_tol),
        "gamma_w_beta": lambda: gamma_w_heisenberg(model, tau, config.cluster_tol).matrix,
        "gamma_beta": lambda: gamma_beta(model).matrix,
    }
    collector = _WarningCollector()
    root = logging.getLogger("riq")
    root.addHandler(collector)
    try:
        for name, builder in builders.items():
            collector.messages = []
            for what, spectrum in (
                ("exp(-i tau h0)", unitary_spectrum(model.h0, tau, config.cluster_tol)),
                ("U_00(0)", superop_spectrum(model.h0, tau, config.cluster_tol)),
            ):
                try:
                    check_cluster_resolution(spectrum, what)
                except ClusterDegeneracyError as e:
                    collector.messages.append(str(e))
            matrix = builder()
            metadata = {
                "name": name,
                "tau": tau,
                "beta": model.beta,
                "dim": int(matrix.shape[0]),
                "cluster_tol": config.cluster_tol,
                "matrix": matrix_to_pairs(matrix),
                "warnings": sorted(set(collector.messages)),
            }
            if name == "gamma_w_beta" and model.d == 1 and model.n == 1:
                metadata["qubit_cross_check"] = _qubit_cross_check(model, tau, config)
            path = write_json(metadata, config.out_dir / f"{name}.json")
            print(f"  Wrote {path}")
    finally:
        root.removeHandler(collector)

    jumps = {
        "name": "lindblad_jumps",
        "beta": model.beta,
        "jump_operators": [matrix_to_pairs(L) for L in lindblad.jump_operators],
        "jump_weights": lindblad.jump_weights,
        "jump_reconstruction_residual": lindblad.jump_residual(),
    }
    path = write_json(jumps, config.out_dir / "lindblad_jumps.json")
    print(f"  Wrote {path}")
    return 0


def run_regime(model: InteractionModel, config: RunConfig, regime: str):
    settings = config.settings(regime)
    t = settings.t or config.t
    steps = config.schedule(regime)
    if regime == "weak":
        return weak_limit_experiment(
            model, settings.tau or config.tau, t, steps, seed=config.seed, cluster_tol=config.cluster_tol
        )
    if regime == "regime2":
        return regime2_experiment(model, t, steps, settings.lam, seed=config.seed, cluster_tol=config.cluster_tol)
    taus = [t / k for k in steps]
    if regime == "critical":
        return critical_experiment(model, t, taus, seed=config.seed, cluster_tol=config.cluster_tol)
    return continuous_experiment(model, t, taus, seed=config.seed, cluster_tol=config.cluster_tol)


def cmd_converge(model: InteractionModel, config: RunConfig, regime: str) -> int:
    print(f"\n📈 Convergence sweep: {regime} ({len(config.schedule(regime))} points)")
    report = run_regime(model, config, regime)
    out = config.out_dir
    write_csv(report.to_frame(), out / f"converge_{regime}.csv")
    summary = report.summary()
    summary["seed"] = config.seed
    write_json(summary, out / f"converge_{regime}.json")
    print(f"  Wrote {out / f'converge_{regime}.csv'}")
    print(f"  Wrote {out / f'converge_{regime}.json'}")
    if report.status == "exact":
        print(f"✅ {regime}: all errors below {EXACT_ERROR_TOL:g} (exact)")
        return 0
    orders = f"{report.fitted_order:.3f} / {report.fitted_order_heisenberg:.3f}" if (
        report.fitted_order is not None and report.fitted_order_heisenberg is not None
    ) else f"{report.fitted_order} / {report.fitted_order_heisenberg}"
    low, high = report.order_window
    if report.passed:
        print(f"✅ {regime}: fitted orders {orders} within [{low}, {high}]")
        return 0
    print(f"❌ {regime}: fitted orders {orders} outside [{low}, {high}] or not decreasing")
    return 1


def cmd_qubit(model: InteractionModel, config: RunConfig) -> int:
    """Closed forms of the two-level model against the generic modules.

    The closed forms live in the eigenbasis of h0 without its trace; the
    generic checks run on that rotated model, and the Gamma^w_beta comparison
    is also made in the basis of the source model.
    """
    try:
        qm = QubitModel.from_model(model)
    except ValueError as e:
        print(f"Qubit checks need a two-level model: {e}")
        return 2
    tau = config.tau
    frame_model = qm.to_model()
    eigensystem = perturbed_eigensystem(qm, tau, cluster_tol=config.cluster_tol)

    F, _ = compute_FG(frame_model, tau).blocks()
    basis = np.column_stack([V_I, V_Z])
    restricted = dagger(basis) @ t_beta(frame_model, tau).matrix @ basis
    _, nu = tbeta_restricted(qm, tau)[:, 1]

    residuals = {
        "f10_closed - F_10": op_norm(f10_closed(qm, tau) - F[1, 0]),
        "tbeta_restricted - T_beta": op_norm(tbeta_restricted(qm, tau) - restricted),
        "eigenprojector residual": eigensystem.projector_residual,
        "Pi_2 eigenvalue coefficient (must be <= 0)": max(0.0, nu / qm.Z),
    }
    tolerances = {"eigenprojector residual": 10 * max(eigensystem.lambdas) ** 2}
    for j, error in enumerate(eigensystem.coefficient_errors(), start=1):
        residuals[f"u_{j} lambda^2 coefficient"] = error
        tolerances[f"u_{j} lambda^2 coefficient"] = config.coefficient_tol
    notes = []
    if sigma_branches_coincide(qm, tau, config.cluster_tol):
        notes.append(
            "eps*tau in pi/2 + pi*Z: sigma_+ and sigma_- share an eigenvalue; u_3, u_4 and Gamma^w_beta "
            "use the 2x2 sigma_+- block of T_beta"
        )
    closed = qm.in_model_frame(qubit_gamma_w_beta(qm, tau, config.cluster_tol))
    residuals["qubit_gamma_w_beta - Gamma^w_beta"] = (
        closed - gamma_w_heisenberg(model, tau, config.cluster_tol)
    ).norm()

    frame = residual_frame(residuals, tolerances, config.tol)
    coefficients = pd.DataFrame(
        {
            "branch": [f"u_{j}" for j in range(1, 5)],
            "zeroth_order": [f"{z:.6f}" for z in eigensystem.zeroth_order],
            "fitted": [f"{c:.6e}" for c in eigensystem.fitted_coefficients],
            "expected": [f"{c:.6e}" for c in eigensystem.expected_coefficients],
        }
    )
    out = config.out_dir
    write_json(
        {
            "command": "qubit",
            "epsilon": qm.epsilon,
            "delta": qm.delta,
            "beta": qm.beta,
            "tau": tau,
            "checks": frame.to_dict(orient="records"),
            "h0_eigenbasis": qm.frame,
            "sigma_branches_coincide": eigensystem.sigma_branches_coincide,
            "fitted_coefficients": eigensystem.fitted_coefficients,
            "expected_coefficients": eigensystem.expected_coefficients,
            "notes": notes,
            "passed": bool(frame["passed"].all()),
        },
        out / "qubit.json",
    )
    write_markdown_report(
        out / "qubit.md", "Two-level closed forms", {"Residuals": frame, "Perturbed eigenvalues": coefficients}, notes
    )
    print(f"  Wrote {out / 'qubit.json'}")
    return _verdict(frame)


def cmd_evolve(model: InteractionModel, config: RunConfig) -> int:
    """Reduced state after each interaction at lambda = 1/sqrt(tau), against the Lindblad semigroup."""
    tau = config.evolve_tau
    lam = 1.0 / math.sqrt(tau)
    steps = steps_for_taus(config.t, [tau])[0]
    rho0 = np.zeros((model.system_dim,) * 2, dtype=complex)
    rho0[-1, -1] = 1.0

    states = reduced_state_trajectory(model, lam, tau, rho0, steps)
    state_step = dual(semigroup(build_lindblad(model), tau))
    rows = []
    reference = rho0
    for step, rho in enumerate(states):
        if step:
            reference = state_step.apply(reference)
        rows.append(
            {
                "step": step,
                "t": step * tau,
                "population_ground": float(rho[0, 0].real),
                "population_excited": float(1.0 - rho[0, 0].real),
                "coherence_abs": float(abs(rho[0, 1])),
                "semigroup_population_ground": float(reference[0, 0].real),
                "trace_distance": 0.5 * float(np.linalg.norm(rho - reference, "nuc")),
            }
        )
    frame = pd.DataFrame(rows, columns=EVOLUTION_COLUMNS)
    path = write_csv(frame, config.out_dir / "evolve.csv")
    print(f"  Wrote {path}")
    print(f"  Final trace distance to the semigroup: {frame['trace_distance'].iloc[-1]:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Repeated quantum interaction models: limits and checks")
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", type=Path, default=None, help="Path to YAML/JSON run configuration")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help=f"64-bit seed ({SEED_ENV} takes precedence)")
    parser.add_argument("--regime", choices=REGIMES, default="weak", help="Scaling regime for converge")
    parser.add_argument("--tau", type=float, default=None, help="Interaction duration")
    parser.add_argument("--t", type=float, default=None, help="Macroscopic time")
    parser.add_argument("--k-list", type=parse_k_list, default=None, help="Comma separated step counts")
    parser.add_argument("--tol", type=float, default=None, help="Residual tolerance")
    parser.add_argument("--check-config", action="store_true", help="Validate the configuration and exit")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    log_level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(
        level=log_level,
        format='%(levelname)s: %(message)s',
        handlers=[logging.StreamHandler()]
    )

    if args.config is not None and not args.config.exists():
        print(f"Config file not found: {args.config}")
        return 2
    base_dir = args.config.parent if args.config is not None else Path.cwd()

    try:
        config = resolve_config(args)
        model = config.build_model(base_dir)
    except (ValidationError, ScheduleError, LinearAlgebraError) as e:
        print(f"Configuration error: {e}")
        return 2
    except FileNotFoundError as e:
        print(f"Model file not found: {e.filename}")
        return 2

    if args.check_config:
        print(f"Configuration OK: d={model.d}, n={model.n}, beta={model.beta}, seed={config.seed}")
        return 0

    print(f"\n🚀 {TOOL_VERSION}: {args.command} (d={model.d}, n={model.n}, seed={config.seed})")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "validate":
            return cmd_validate(model, config)
        if args.command == "generators":
            return cmd_generators(model, config)
        if args.command == "converge":
            return cmd_converge(model, config, args.regime)
        if args.command == "qubit":
            return cmd_qubit(model, config)
        return cmd_evolve(model, config)
    except (ScheduleError, QubitDegeneracyError) as e:
        print(f"Precondition failed: {e}")
        return 2
    except (FitError, ClusterDegeneracyError, OracleSizeError, BranchTrackingError) as e:
        print(f"❌ {args.command} failed: {e}")
        return 1
    except Exception as e:
        print(f"❌ Error in {args.command}: {e}")
        logger.error(f"Command {args.command} failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
