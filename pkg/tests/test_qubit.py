"""
Tests for the two-level closed forms.
Each closed form is compared against the generic construction on seeded models.
"""
import logging
import math

import numpy as np
import pytest

from riq import qubit
from riq.densela import dagger, op_norm
from riq.model import random_model
from riq.perturb import compute_FG, gamma_w_heisenberg, t_beta
from riq.qubit import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_Z,
    V_I,
    V_Z,
    BranchTrackingError,
    DegenerateCouplingError,
    QubitDegeneracyError,
    QubitModel,
    f01_closed,
    f10_closed,
    g00_diagonal,
    g11_diagonal,
    off_diagonal_norm2,
    perturbed_eigensystem,
    qubit_gamma_w_beta,
    qubit_projectors,
    random_qubit_model,
    sigma_block,
    sigma_branches_coincide,
    tbeta_restricted,
    trace_sigma_t_sigma,
    uzero_spectrum,
)

SEEDS = range(50)


class TestClosedForms:
    """Closed forms against compute_FG, t_beta and gamma_w_heisenberg."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_match_generic_modules(self, seed):
        qm = random_qubit_model(seed)
        model = qm.to_model()
        tau = 1.0
        F, G = compute_FG(model, tau).blocks()
        assert op_norm(f10_closed(qm, tau) - F[1, 0]) <= 1e-9
        assert op_norm(f01_closed(qm, tau) - F[0, 1]) <= 1e-9
        assert np.allclose(g00_diagonal(qm, tau), np.diag(G[0, 0]), atol=1e-9)
        assert np.allclose(g11_diagonal(qm, tau), np.diag(G[1, 1]), atol=1e-9)

        basis = np.column_stack([V_I, V_Z])
        restricted = dagger(basis) @ t_beta(model, tau).matrix @ basis
        assert op_norm(tbeta_restricted(qm, tau) - restricted) <= 1e-9
        assert (qubit_gamma_w_beta(qm, tau) - gamma_w_heisenberg(model, tau)).norm() <= 1e-9

    def test_pi2_coefficient_is_off_diagonal_norm(self):
        qm = random_qubit_model(7)
        _, nu = tbeta_restricted(qm, 1.0)[:, 1]
        assert nu == pytest.approx(-off_diagonal_norm2(qm, 1.0) * (1 + qm.w))

    def test_trace_sigma_t_sigma(self):
        """Matches the generic T_beta and is conjugate symmetric."""
        qm = random_qubit_model(3)
        T = t_beta(qm.to_model(), 0.8)
        s_mp, s_pm = trace_sigma_t_sigma(qm, 0.8)
        assert s_mp == pytest.approx(np.trace(SIGMA_MINUS @ T.apply(SIGMA_PLUS)), abs=1e-10)
        assert s_pm == pytest.approx(np.trace(SIGMA_PLUS @ T.apply(SIGMA_MINUS)), abs=1e-10)
        assert s_pm == pytest.approx(np.conj(s_mp))


class TestPerturbedEigensystem:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_second_order_coefficients(self, seed):
        qm = random_qubit_model(seed)
        eigensystem = perturbed_eigensystem(qm, 1.0)
        assert eigensystem.coefficient_errors().max() <= 1e-4
        # Pi_2 eigenvalue of Gamma^w_beta
        assert eigensystem.expected_coefficients[1].real <= 0.0
        assert eigensystem.expected_coefficients[0] == 0.0

    def test_projectors_form_a_complete_family(self):
        qm = random_qubit_model(4)
        projectors = qubit_projectors(qm, 1.0)
        assert np.allclose(sum(projectors), np.eye(4))
        for i, P in enumerate(projectors):
            for j, Q in enumerate(projectors):
                assert np.allclose(P @ Q, P if i == j else 0.0)

    def test_zero_coupling_has_no_pi1_pi2_split(self):
        qm = QubitModel(epsilon=0.6, delta=1.0, V=np.zeros((2, 2)), beta=1.0)
        with pytest.raises(DegenerateCouplingError):
            qubit_projectors(qm, 1.0)

    def test_uzero_spectrum_clusters(self, caplog):
        """At half period sigma_+ and sigma_- share an eigenvalue."""
        qm = random_qubit_model(5)
        assert len(uzero_spectrum(qm, 1.0)) == 3
        caplog.set_level(logging.WARNING)
        half = uzero_spectrum(qm, math.pi / (2 * abs(qm.epsilon)))
        assert len(half) == 2
        assert any("distinct eigenvalues" in rec.message for rec in caplog.records)

    def test_degenerate_times_are_rejected(self):
        qm = QubitModel(epsilon=1.0, delta=1.0, V=[[0.2, 0.3], [0.1, -0.2]], beta=1.0)
        with pytest.raises(QubitDegeneracyError):
            perturbed_eigensystem(qm, math.pi)
        with pytest.raises(QubitDegeneracyError):
            qubit_gamma_w_beta(qm, math.pi)


class TestHalfPeriod:
    """eps * tau = pi/2, where sigma_+ and sigma_- share the eigenvalue -1 of U_00(0)."""

    def setup_method(self):
        V = [[0.2 + 0.1j, 0.3 - 0.1j], [0.25 + 0.05j, -0.15 + 0.2j]]
        self.qm = QubitModel(epsilon=0.7, delta=1.0, V=V, beta=1.0)
        self.tau = math.pi / 1.4

    def test_branches_coincide_only_at_half_period(self):
        assert sigma_branches_coincide(self.qm, self.tau)
        assert not sigma_branches_coincide(self.qm, 1.0)

    def test_sigma_block_matches_generic_t_beta(self):
        block = sigma_block(self.qm, self.tau, coupled=True)
        T = t_beta(self.qm.to_model(), self.tau)
        for i, X in enumerate((SIGMA_PLUS, SIGMA_MINUS)):
            for j, Y in enumerate((SIGMA_PLUS, SIGMA_MINUS)):
                assert block[i, j] == pytest.approx(np.trace(dagger(X) @ T.apply(Y)), abs=1e-10)
        assert sigma_block(self.qm, self.tau)[0, 1] == 0.0

    def test_coefficients_follow_the_sigma_block(self):
        eigensystem = perturbed_eigensystem(self.qm, self.tau)
        assert eigensystem.sigma_branches_coincide
        block_values = np.linalg.eigvals(sigma_block(self.qm, self.tau, coupled=True) / self.qm.Z)
        assert np.allclose(np.sort_complex(eigensystem.expected_coefficients[2:]), np.sort_complex(block_values))
        assert np.allclose(eigensystem.zeroth_order[2:], -1.0)
        assert eigensystem.coefficient_errors().max() <= 1e-4
        assert eigensystem.projector_residual <= 10 * 0.04 ** 2

    def test_gamma_w_beta_keeps_the_full_block(self):
        generic = gamma_w_heisenberg(self.qm.to_model(), self.tau)
        assert (qubit_gamma_w_beta(self.qm, self.tau) - generic).norm() <= 1e-9

    def test_unsplit_block_cannot_be_tracked(self, monkeypatch):
        monkeypatch.setattr(qubit, "sigma_block", lambda qm, tau, coupled=False: np.eye(2, dtype=complex))
        with pytest.raises(BranchTrackingError):
            perturbed_eigensystem(self.qm, self.tau)


class TestQubitModel:
    def test_model_conversion(self):
        qm = QubitModel(epsilon=0.7, delta=1.2, V=[[0.1, 0.2j], [0.3, 0.0]], beta=math.inf)
        model = qm.to_model()
        assert np.allclose(model.h0, 0.7 * SIGMA_Z)
        assert qm.w == 0.0 and qm.Z == 1.0
        again = QubitModel.from_model(model)
        assert again.epsilon == pytest.approx(0.7)
        assert np.allclose(again.V, qm.V)
        assert np.allclose(again.frame, np.eye(2))

    def test_rejects_non_qubit_models(self):
        with pytest.raises(ValueError):
            QubitModel.from_model(random_model(d=2, n=1))

    @pytest.mark.parametrize("seed", range(5))
    def test_rotates_random_models_into_h0_eigenbasis(self, seed):
        model = random_model(d=1, n=1, seed=seed)
        qm = QubitModel.from_model(model)
        U = qm.frame
        assert np.allclose(dagger(U) @ U, np.eye(2))
        shift = np.trace(model.h0).real / 2
        assert np.allclose(dagger(U) @ model.h0 @ U, qm.epsilon * SIGMA_Z + shift * np.eye(2))
        assert np.allclose(U @ qm.V @ dagger(U), model.V[0])

        closed = qm.in_model_frame(qubit_gamma_w_beta(qm, 1.0))
        assert (closed - gamma_w_heisenberg(model, 1.0)).norm() <= 1e-9
