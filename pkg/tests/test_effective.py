from dataclasses import replace

import numpy as np
import pytest

from parity_qst.effective import (
    REDUCED_LAYOUT,
    ResonanceError,
    SearchWindowError,
    build_effective,
    effective_params,
    hybridization_check,
    reduced_ket,
)
from parity_qst.dynamics import evolve_unitary, von_neumann_entropy
from parity_qst.models import FullModelParams, QrsParams, build_full
from parity_qst.qops import hermitian_eigendecomposition, kron, pauli


@pytest.fixture(scope="module")
def ref_params(qrs_es, ref_model):
    return effective_params(qrs_es, ref_model.omega_ext, ref_model.lam, channels="doublet")


@pytest.fixture(scope="module")
def ref_allowed(qrs_es, ref_model):
    return effective_params(qrs_es, ref_model.omega_ext, ref_model.lam, channels="allowed")


class TestParams:
    def test_reference_detunings(self, ref_params):
        assert ref_params.delta[0] == pytest.approx(0.7141, abs=5e-4)
        assert ref_params.mu[0] == pytest.approx(1.7632, abs=5e-4)
        assert abs(ref_params.chi10) == pytest.approx(1.0325, abs=5e-4)
        assert min(ref_params.mu) > 0

    def test_closed_form_coupling(self, ref_params):
        p = ref_params
        expected = abs(p.chi10) ** 2 * p.lam[0] * p.lam[1] * (
            1 / p.mu[0] + 1 / p.mu[1] - 1 / p.delta[0] - 1 / p.delta[1])
        assert p.j_eff == pytest.approx(expected, rel=1e-14)

    def test_zero_coupling(self, qrs_es):
        p = effective_params(qrs_es, (1.24, 1.24), (0.0, 0.02))
        assert p.j_eff == 0.0
        assert p.half_period == float("inf")

    @pytest.mark.parametrize("channels", ["doublet", "allowed"])
    def test_bilinear(self, qrs_es, channels):
        a = effective_params(qrs_es, (1.24, 1.24), (0.01, 0.02), channels=channels)
        b = effective_params(qrs_es, (1.24, 1.24), (0.02, 0.02), channels=channels)
        assert b.j_eff == 2 * a.j_eff
        assert b.exchange == pytest.approx(2 * a.exchange, rel=1e-14)

    def test_resonance_rejected(self, qrs_es):
        with pytest.raises(ResonanceError):
            effective_params(qrs_es, (qrs_es.nu(1) + 0.01, 1.24), (0.02, 0.02))

    def test_unknown_channels(self, qrs_es):
        with pytest.raises(ValueError):
            effective_params(qrs_es, (1.24, 1.24), (0.02, 0.02), channels="all")

    def test_doublet_exchange_sign_and_channel_sum(self, ref_params, ref_allowed):
        # near the forbidden resonance the psi0 -> psi4 channel dominates the sum
        p = ref_params
        assert p.exchange == pytest.approx(0.5 * p.j_eff * -1, rel=1e-12)
        assert ref_allowed.exchange != pytest.approx(p.exchange, rel=0.1)

    def test_allowed_exchange_matches_exact_gap(self, ref_model, qrs_es, ref_allowed):
        rep = hybridization_check(build_full(ref_model), qrs_es)
        assert 2 * abs(ref_allowed.exchange) == pytest.approx(rep.gap, rel=0.02)

    def test_stark_shifts_against_diagonalization(self, qrs_es):
        w, lam = (1.62, 1.71), (0.004, 0.006)
        ep = effective_params(qrs_es, w, lam, channels="allowed")
        p = FullModelParams(qrs=QrsParams(n_fock=16), omega_ext=w, lam=lam)
        E, V = hermitian_eigendecomposition(build_full(p))
        for s1 in (0, 1):
            for s2 in (0, 1):
                a = np.zeros(2)
                b = np.zeros(2)
                a[s1] = b[s2] = 1
                bare = np.kron(qrs_es.state(0), np.kron(a, b))
                k = int(np.argmax(np.abs(V.conj().T @ bare)))
                zeeman = 0.5 * (w[0] * (1 - 2 * s1) + w[1] * (1 - 2 * s2))
                exact = E[k] - qrs_es.freqs[0] - zeeman
                pert = sum((ep.stark_up if s else ep.stark_down)[0, j] for j, s in enumerate((s1 == 0, s2 == 0)))
                assert exact == pytest.approx(pert, abs=1e-7)


class TestHamiltonian:
    def test_structure(self, ref_allowed):
        h = build_effective(ref_allowed)
        H = h.operator
        assert H.is_hermitian()
        assert H.layout == REDUCED_LAYOUT
        blocks = H.data.reshape(2, 4, 2, 4)
        assert np.max(np.abs(blocks[0, :, 1, :])) == 0
        assert np.max(np.abs(blocks[1, :, 0, :])) == 0

    def test_exchange_element(self, ref_params):
        H = build_effective(ref_params).operator
        p = ref_params
        expected = 0.5 * abs(p.chi10) ** 2 * p.lam[0] * p.lam[1] * abs(
            1 / p.mu[0] + 1 / p.mu[1] - 1 / p.delta[0] - 1 / p.delta[1])
        assert abs(reduced_ket(0, 0, 1).conj() @ H.data @ reduced_ket(0, 1, 0)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("channels", ["doublet", "allowed"])
    def test_commutes_with_pair_parity(self, qrs_es, ref_model, channels):
        H = build_effective(effective_params(qrs_es, ref_model.omega_ext, ref_model.lam, channels=channels)).operator
        zz = kron(np.eye(2), pauli("z").data, pauli("z").data)
        assert np.max(np.abs(H.data @ zz - zz @ H.data)) < 1e-12

    @pytest.mark.parametrize("channels", ["doublet", "allowed"])
    def test_swap_contract(self, qrs_es, ref_model, channels):
        ep = effective_params(qrs_es, ref_model.omega_ext, ref_model.lam, channels=channels)
        tr = evolve_unitary(build_effective(ep).operator, reduced_ket(0, 0, 1), [0.0, ep.half_period])
        assert abs(np.vdot(reduced_ket(0, 1, 0), tr.states[-1])) ** 2 > 0.999

    def test_mediator_stationary(self, ref_allowed):
        times = np.linspace(0, 2 * ref_allowed.half_period, 101)
        tr = evolve_unitary(build_effective(ref_allowed).operator, reduced_ket(0, 0, 1), times)
        ent = [von_neumann_entropy(np.einsum("ia,ja->ij", s.reshape(2, 4), s.reshape(2, 4).conj()))
               for s in tr.states]
        assert max(ent) - ent[0] < 1e-10


class TestHybridization:
    def test_reference_pair(self, ref_model, qrs_es, ref_params):
        rep = hybridization_check(build_full(ref_model), qrs_es)
        assert rep.overlap_antisymmetric > 0.99
        # the symmetric state is dressed by |psi4, dd>; first-order weight estimate
        from parity_qst.spectral import qrs_quadrature

        X04 = abs(qrs_es.matrix(qrs_quadrature(qrs_es.layout), 6)[0, 4])
        detuning = ref_model.omega_ext[0] - qrs_es.nu(4)
        dressing = 2 * (ref_model.lam[0] * X04 / detuning) ** 2
        assert 1 - rep.overlap_symmetric == pytest.approx(dressing, rel=0.15)
        assert rep.gap == pytest.approx(2 * abs(ref_params.j_eff), rel=0.3)
        assert not rep.degenerate
        assert rep.as_dict()["gap"] == rep.gap

    def test_uncoupled_limit_degenerate(self, ref_model, qrs_es):
        rep = hybridization_check(build_full(replace(ref_model, lam=(0.0, 0.0))), qrs_es)
        assert rep.degenerate

    def test_window_error(self, ref_model, qrs_es):
        with pytest.raises(SearchWindowError):
            hybridization_check(build_full(ref_model), qrs_es, target=50.0)
