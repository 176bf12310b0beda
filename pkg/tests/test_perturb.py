"""
Tests for the perturbative constructions: F/G coefficients, spectral averaging
and the effective generators of every regime.
"""
import math

import numpy as np
import pytest

from riq.densela import commutator_superop, dagger, expm, hermitian_eig, op_norm
from riq.lindblad import semigroup
from riq.model import InteractionModel, model_weights, random_model
from riq.perturb import (
    FamilyError,
    ProjectorFamily,
    averaged_generator,
    compute_FG,
    double_oscillatory_integral,
    gamma0_sharp,
    gamma_beta,
    gamma_beta_sharp,
    gamma_w_double_integral,
    gamma_w_heisenberg,
    gamma_w_schrodinger,
    heisenberg_expansion_residual,
    heisenberg_family,
    j_operator,
    oscillatory_integral,
    oscillatory_integral2,
    quadrature_FG,
    regimeA_generator,
    richardson_limit,
    schrodinger_family,
    sharp,
    t_beta,
    verify_expansion,
    verify_fg_identities,
)
from riq.reduced import SuperOperator, contraction_check, dual, free_heisenberg
from riq.regimes import fit_order


def gauss(a, b, nodes=64):
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = (b - a) / 2
    return a + half * (1 + x), half * w


class TestOscillatoryIntegrals:
    def test_closed_form_and_zero_frequency(self):
        tau = 1.3
        assert oscillatory_integral(0.0, tau) == pytest.approx(tau)
        alpha = 0.8
        expected = (np.exp(1j * alpha * tau) - 1) / (1j * alpha)
        assert oscillatory_integral(alpha, tau) == pytest.approx(expected, abs=1e-14)
        assert oscillatory_integral(1e-9, tau) == pytest.approx(tau, abs=1e-8)

    @pytest.mark.parametrize("alpha,gamma", [(0.7, -0.3), (1.5, -1.5), (0.0, 2.0), (2.0, 0.0), (1e-8, 3e-8)])
    def test_double_integral_against_quadrature(self, alpha, gamma):
        tau = 1.1
        s, w = gauss(0.0, tau)
        inner = np.array([np.sum(wi * np.exp(1j * si * gamma)) for si, wi in (gauss(0.0, s1) for s1 in s)])
        expected = np.sum(w * np.exp(1j * s * alpha) * inner)
        assert oscillatory_integral2(alpha, gamma, tau) == pytest.approx(expected, abs=1e-12)

    def test_double_oscillatory_integral_at_zero(self):
        assert double_oscillatory_integral(0.0, 2.0) == pytest.approx(2.0)


class TestFG:
    """Second order coefficients of the one-step unitary."""

    @pytest.mark.parametrize("d,n,seed,tau", [(1, 1, 0, 1.0), (1, 1, 1, 0.3), (2, 2, 2, 1.0), (2, 1, 3, 2.5)])
    def test_closed_form_matches_quadrature(self, d, n, seed, tau):
        model = random_model(d=d, n=n, seed=seed)
        closed, quadrature = compute_FG(model, tau), quadrature_FG(model, tau)
        assert op_norm(closed.F - quadrature.F) <= 1e-9
        assert op_norm(closed.G - quadrature.G) <= 1e-9

    def test_identities(self):
        model = random_model(d=2, n=2, seed=4)
        residuals = verify_fg_identities(model, 0.9)
        for name, value in residuals.items():
            # derivative identities use central differences
            tol = 1e-6 if "'" in name else 1e-10
            assert value <= tol, name

    def test_block_structure(self):
        model = random_model(d=1, n=2, seed=5)
        F, G = compute_FG(model, 1.0).blocks()
        assert np.allclose(F[0, 0], 0.0)
        assert np.allclose(F[1, 2], 0.0)
        assert np.allclose(G[0, 1], 0.0)
        assert not np.allclose(G[1, 2], 0.0)

    def test_expansion_orders(self):
        model = random_model(d=1, n=1, seed=6)
        lambdas = [0.1, 0.05, 0.025]
        r3, r4 = zip(*(verify_expansion(model, lam, 1.0) for lam in lambdas))
        assert fit_order(lambdas, r3) >= 2.7
        assert fit_order(lambdas, r4) >= 3.7

    def test_heisenberg_expansion_is_fourth_order(self):
        model = random_model(d=1, n=1, seed=7)
        lambdas = [0.1, 0.05, 0.025]
        residuals = [heisenberg_expansion_residual(model, lam, 1.0) for lam in lambdas]
        assert fit_order(lambdas, residuals) >= 3.7


class TestSharp:
    """Spectral averaging K -> K^# over a projector family."""

    def test_equals_cesaro_mean_for_integer_gaps(self):
        h = np.diag([0.0, 1.0, 3.0])
        rng = np.random.default_rng(0)
        K = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        s, w = gauss(0.0, 2 * np.pi, nodes=64)
        mean = sum(wi * expm(1j * si * h) @ K @ expm(-1j * si * h) for si, wi in zip(s, w)) / (2 * np.pi)
        family = ProjectorFamily.from_spectrum(hermitian_eig(h))
        assert op_norm(sharp(K, family) - mean) <= 1e-6
        assert np.allclose(sharp(K, family), np.diag(np.diag(K)))

    def test_rejects_incomplete_family(self):
        family = ProjectorFamily(projectors=(np.diag([1.0, 0.0]),), labels=np.array([1.0]))
        with pytest.raises(FamilyError):
            sharp(np.eye(2), family)

    def test_commutes_with_dual(self):
        model = random_model(d=1, n=1, seed=8)
        family = heisenberg_family(model, 1.0)
        K = SuperOperator(matrix=np.random.default_rng(1).normal(size=(4, 4)) + 0j, dim=2)
        assert (sharp(dual(K), family) - dual(sharp(K, family))).norm() < 1e-12

    def test_averaged_generator_with_trivial_family(self):
        V0 = np.diag([2.0, 4.0])
        R = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(averaged_generator(V0, R, ProjectorFamily.trivial(2)), np.linalg.solve(V0, R))

    def test_j_operator_identity(self):
        rng = np.random.default_rng(16)
        h = np.diag([0.3, 1.1, 2.0])
        R = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        J = j_operator(h, R)
        s, w = gauss(0.0, 1.0)
        integral = sum(wi * expm(1j * si * h) @ J @ expm(-1j * si * h) for si, wi in zip(s, w))
        assert op_norm(R + 1j * expm(-1j * h) @ integral) <= 1e-10

        family = ProjectorFamily.from_spectrum(hermitian_eig(h))
        assert op_norm(-1j * sharp(J, family) - sharp(expm(1j * h) @ R, family)) <= 1e-12


    def test_cluster_tol_controls_the_family(self):
        rng = np.random.default_rng(17)
        V = 0.3 * (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
        model = InteractionModel(d=2, n=1, h0=np.diag([0.0, 1e-7, 1.0]), delta=[1.0], V=[V], beta=1.0)
        assert len(schrodinger_family(model, 1.0, cluster_tol=1e-9)) == 3
        assert len(schrodinger_family(model, 1.0, cluster_tol=1e-6)) == 2
        assert len(heisenberg_family(model, 1.0, cluster_tol=1e-9)) == 7
        assert len(heisenberg_family(model, 1.0, cluster_tol=1e-6)) == 3
        # merging levels 0 and 1 keeps their coherences in Gamma_0^#
        fine, coarse = gamma0_sharp(model, cluster_tol=1e-9), gamma0_sharp(model, cluster_tol=1e-6)
        assert abs(fine[0, 1]) == 0.0
        assert abs(coarse[0, 1]) > 1e-3
        assert op_norm(gamma_w_schrodinger(model, 1.0, 1e-6) - gamma_w_schrodinger(model, 1.0, 1e-9)) > 1e-6


class TestSchrodingerGenerators:
    def test_gamma_w_double_integral_route(self):
        model = random_model(d=2, n=2, seed=9)
        assert op_norm(gamma_w_schrodinger(model, 1.0) - gamma_w_double_integral(model, 1.0)) <= 1e-10

    def test_regime_a_generator_tends_to_gamma0(self):
        model = random_model(d=1, n=1, seed=10)
        limit = richardson_limit(lambda tau: regimeA_generator(model, tau), (0.02, 0.01, 0.005))
        assert op_norm(limit - gamma0_sharp(model)) <= 1e-5
        with pytest.raises(ValueError):
            regimeA_generator(model, 0.0)

    def test_gamma0_is_averaged_decay(self):
        model = random_model(d=2, n=1, seed=11)
        gamma0 = gamma0_sharp(model)
        spectrum = hermitian_eig(model.h0)
        expected = sum(-0.5 * P @ dagger(model.V[0]) @ model.V[0] @ P for P in spectrum.projectors)
        assert np.allclose(gamma0, expected)

    def test_richardson_limit_recovers_polynomial_constant(self):
        coefficients = np.array([[1.0, 2.0], [3.0, 4.0]])
        samples = lambda tau: coefficients + tau * np.eye(2) - 3 * tau ** 2
        assert np.allclose(richardson_limit(samples, (0.1, 0.2, 0.4)), coefficients)


    @pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
    def test_gamma_w_semigroup_is_contractive(self, t):
        model = random_model(d=2, n=2, seed=18)
        assert op_norm(expm(t * gamma_w_schrodinger(model, 1.0))) <= 1.0 + 1e-12


class TestHeisenbergGenerators:
    def test_t_beta_kills_identity_and_vanishes_without_coupling(self):
        model = random_model(d=1, n=2, seed=12)
        assert op_norm(t_beta(model, 1.0).apply(np.eye(2))) <= 1e-12
        uncoupled = model.with_couplings([np.zeros((2, 2))] * 2)
        assert t_beta(uncoupled, 1.0).norm() == 0.0

    def test_gamma_w_heisenberg_commutes_with_free_evolution(self):
        model = random_model(d=2, n=1, seed=13)
        generator = gamma_w_heisenberg(model, 1.0)
        free = free_heisenberg(model, 1.0)
        assert (generator @ free - free @ generator).norm() <= 1e-10
        assert op_norm(generator.apply(np.eye(3))) <= 1e-12

    def test_gamma_beta_zero_temperature_form(self):
        model = random_model(d=1, n=1, seed=14, beta=math.inf)
        V = model.V[0]
        B = np.array([[0.3, 1.0 - 0.5j], [0.2j, -1.0]])
        expected = dagger(V) @ B @ V - 0.5 * (dagger(V) @ V @ B + B @ dagger(V) @ V)
        assert np.allclose(gamma_beta(model).apply(B), expected)
        assert op_norm(gamma_beta(model).apply(np.eye(2))) <= 1e-14

    def test_gamma_beta_sharp_commutes_with_commutator(self):
        model = random_model(d=2, n=2, seed=15)
        averaged = gamma_beta_sharp(model).matrix
        ad = commutator_superop(model.h0)
        assert op_norm(averaged @ ad - ad @ averaged) <= 1e-10

    def test_t_beta_trace_symmetry(self):
        model = random_model(d=2, n=1, seed=19)
        T = t_beta(model, 0.7)
        B = np.random.default_rng(3).normal(size=(3, 3)) + 1j * np.random.default_rng(4).normal(size=(3, 3))
        lhs = np.trace(B @ T.apply(dagger(B)))
        rhs = np.conj(np.trace(dagger(B) @ T.apply(B)))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_t_beta_is_second_order_in_tau(self):
        model = random_model(d=1, n=2, seed=20)
        ratios = [t_beta(model, tau).norm() / tau ** 2 for tau in (0.01, 0.005)]
        assert ratios[1] == pytest.approx(ratios[0], rel=0.05)

    def test_t_beta_tends_to_gamma_beta(self):
        model = random_model(d=1, n=2, seed=21)
        Z = model_weights(model).Z
        limit = richardson_limit(lambda tau: t_beta(model, tau).matrix / (Z * tau ** 2), (0.01, 0.005, 0.0025))
        assert op_norm(limit - gamma_beta(model).matrix) <= 1e-6

    @pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
    def test_gamma_w_beta_semigroup_contracts_observables(self, t):
        model = random_model(d=1, n=1, seed=22)
        evolution = semigroup(gamma_w_heisenberg(model, 1.0), t)
        assert contraction_check(evolution, seed=5) <= 1.0 + 1e-12
        assert op_norm(evolution.apply(np.eye(2)) - np.eye(2)) <= 1e-12
