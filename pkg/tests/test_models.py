from dataclasses import replace
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parity_qst.models import (
    DickeParams,
    DriveParams,
    FullModelParams,
    InvalidParametersError,
    QrsParams,
    build_dicke,
    build_dicke_mediator,
    build_full,
    build_parity,
    build_qrs,
    dicke_as_full,
    drive_term,
    transmon_ops,
)
from parity_qst.qops import SubsystemLayout, hermitian_eigendecomposition, ket
from parity_qst.dynamics import evolve_unitary


def _comm(A, B):
    return np.max(np.abs(A.data @ B.data - B.data @ A.data))


class TestParams:
    @pytest.mark.parametrize("kw", [dict(omega_cav=0.0), dict(omega_q=(1.0, -1.0)), dict(g=(-0.1, 0.3)),
                                    dict(n_fock=1), dict(g=(0.1, 0.2, 0.3))])
    def test_invalid_qrs(self, kw):
        with pytest.raises(InvalidParametersError):
            QrsParams(**kw)

    def test_invalid_full(self):
        with pytest.raises(InvalidParametersError):
            FullModelParams(lam=(-0.1, 0.0))
        with pytest.raises(InvalidParametersError):
            FullModelParams(omega_ext=(0.0, 1.0))

    def test_invalid_dicke(self):
        with pytest.raises(InvalidParametersError):
            DickeParams(mode_freqs=())
        with pytest.raises(InvalidParametersError):
            DickeParams(external_levels=4)
        with pytest.raises(InvalidParametersError):
            DickeParams(g_matrix=((0.1, 0.1),))

    def test_drive_params(self):
        with pytest.raises(InvalidParametersError):
            DriveParams(amplitude=-1.0)

    def test_degenerate_defaults_flagged(self):
        p = DickeParams.degenerate()
        assert p.defaults_flagged
        assert np.allclose(p.g_matrix, 0.3 / np.sqrt(2))


class TestQrs:
    def test_uncoupled_ground(self):
        vals, V = hermitian_eigendecomposition(build_qrs(QrsParams(g=0.0, n_fock=6)))
        lay = QrsParams(n_fock=6).layout
        assert vals[0] == pytest.approx(-1.0)
        assert abs(V[:, 0] @ ket(lay, 0, 1, 1)) == pytest.approx(1.0)

    def test_uncoupled_spectrum_matches_enumeration(self):
        p = QrsParams(omega_q=(0.7, 1.3), g=0.0, n_fock=8)
        vals = hermitian_eigendecomposition(build_qrs(p))[0]
        bare = sorted(n + 0.5 * (s1 * 0.7 + s2 * 1.3) for n, s1, s2 in product(range(8), (1, -1), (1, -1)))
        assert np.max(np.abs(vals - bare)) < 1e-10

    def test_reference_transitions(self, qrs_es):
        assert qrs_es.nu(1) == pytest.approx(0.52455, abs=5e-4)
        assert qrs_es.nu(3) == pytest.approx(1.23865, abs=5e-4)

    def test_hermitian(self):
        assert build_qrs(QrsParams(g=(0.2, 0.7))).hermiticity_error() < 1e-12


class TestFull:
    def test_hermitian(self, ref_model):
        assert build_full(ref_model).hermiticity_error() == 0.0

    def test_uncoupled_sum_spectrum(self):
        q = QrsParams(n_fock=8)
        p = FullModelParams(qrs=q, omega_ext=(1.1, 0.9), lam=0.0)
        vals = hermitian_eigendecomposition(build_full(p))[0]
        nu = hermitian_eigendecomposition(build_qrs(q))[0]
        ext = [0.5 * (s1 * 1.1 + s2 * 0.9) for s1, s2 in product((1, -1), (1, -1))]
        assert np.max(np.abs(vals - np.sort(np.add.outer(nu, ext).ravel()))) < 1e-10

    def test_avoided_crossing_location(self, ref_model):
        vals = hermitian_eigendecomposition(build_full(ref_model))[0]
        rel = vals - vals[0]
        near = rel[np.abs(rel - 1.2386) < 5e-3]
        assert len(near) >= 2


class TestParity:
    def test_ground_parity(self):
        lay = QrsParams(n_fock=4).layout
        assert build_parity(lay).expect(ket(lay, 0, 1, 1)).real == 1.0

    def test_involution(self, ref_model):
        P = build_parity(ref_model.layout, "full").data
        assert np.allclose(P @ P, np.eye(len(P)))
        assert np.allclose(P, P.conj().T)

    def test_layout_mismatch(self):
        with pytest.raises(InvalidParametersError):
            build_parity(QrsParams(n_fock=4).layout, "full")
        with pytest.raises(InvalidParametersError):
            build_parity(FullModelParams(qrs=QrsParams(n_fock=4)).layout, "qrs")
        with pytest.raises(ValueError):
            build_parity(QrsParams(n_fock=4).layout, "other")

    @settings(max_examples=10, deadline=None)
    @given(st.tuples(*[st.floats(0.2, 2.0)] * 2), st.tuples(*[st.floats(0.0, 1.0)] * 2),
           st.tuples(*[st.floats(0.2, 2.0)] * 2), st.tuples(*[st.floats(0.0, 0.1)] * 2))
    def test_commutes_with_every_builder(self, wq, g, wext, lam):
        q = QrsParams(omega_q=wq, g=g, n_fock=6)
        assert _comm(build_qrs(q), build_parity(q.layout, "qrs")) < 1e-10
        f = FullModelParams(qrs=q, omega_ext=wext, lam=lam)
        assert _comm(build_full(f), build_parity(f.layout, "full")) < 1e-10
        d = DickeParams(g_matrix=(g, g), lambda_matrix=((lam[0],) * 2, (lam[1],) * 2), omega_q=wq,
                        omega_ext=wext, n_fock=3)
        assert _comm(build_dicke(d), build_parity(d.layout, "dicke")) < 1e-10
        assert _comm(build_dicke_mediator(d), build_parity(d.mediator_layout, "dicke")) < 1e-10
        t = replace(d, external_levels=3, anharmonicity=0.2)
        assert _comm(build_dicke(t), build_parity(t.layout, "dicke")) < 1e-10


class TestDicke:
    def test_single_mode_equals_full(self):
        f = FullModelParams(qrs=QrsParams(g=(0.3, 0.25), n_fock=6), omega_ext=(1.2, 1.1), lam=(0.02, 0.03))
        assert np.array_equal(build_dicke(dicke_as_full(f)).data, build_full(f).data)

    def test_uncoupled_external_energies(self):
        d = DickeParams.degenerate(lam=0.0, n_fock=3, omega_ext=(1.1, 0.8))
        med = hermitian_eigendecomposition(build_dicke_mediator(d))[0]
        vals = hermitian_eigendecomposition(build_dicke(d))[0]
        ext = [0.5 * (s1 * 1.1 + s2 * 0.8) for s1, s2 in product((1, -1), (1, -1))]
        assert np.max(np.abs(vals - np.sort(np.add.outer(med, ext).ravel()))) < 1e-10

    def test_hermitian(self, ref_dicke):
        assert build_dicke(ref_dicke).hermiticity_error() < 1e-12

    def test_qutrit_truncation_reduces_to_qubit(self):
        h, n, par = transmon_ops(1.3, 0.25)
        assert np.allclose(h[:2, :2], 0.5 * 1.3 * np.diag([1, -1]))
        assert np.allclose(n[:2, :2], [[0, 1], [1, 0]])
        assert np.allclose(par[:2, :2], np.diag([1, -1]))
        assert h[2, 2] == pytest.approx(1.5 * 1.3 - 0.25)


class TestDrive:
    lay = FullModelParams(qrs=QrsParams(n_fock=2)).layout

    def test_zero_amplitude(self):
        assert np.all(drive_term(DriveParams(0.0), 1.3, self.lay).data == 0)

    def test_zero_phase_point(self):
        assert np.max(np.abs(drive_term(DriveParams(0.5, phase=np.pi / 2), 0.0, self.lay).data)) < 1e-16

    def test_pi_pulse_against_two_level_oracle(self):
        omega, amp = 1.3, 0.005
        p = FullModelParams(qrs=QrsParams(g=0.0, n_fock=2), omega_ext=(omega, 1.0), lam=0.0)
        H0 = build_full(p).data
        drive = DriveParams(amp, frequency=omega)
        start = ket(p.layout, 0, 1, 1, 1, 1)
        target = ket(p.layout, 0, 1, 1, 0, 1)
        t_end = np.pi / amp
        tr = evolve_unitary(lambda t: H0 + drive_term(drive, t, p.layout).data, start, [0.0, t_end])
        pop = abs(np.vdot(target, tr.states[-1])) ** 2
        assert pop > 0.99

        # fixed-step RK4 on the bare two-level problem
        sx = np.array([[0, 1], [1, 0]], complex)
        sz = np.diag([1.0, -1.0]).astype(complex)

        def f(t, y):
            return -1j * ((0.5 * omega * sz + amp * np.cos(omega * t) * sx) @ y)

        y = np.array([0, 1], complex)
        n = 60000
        h = t_end / n
        t = 0.0
        for _ in range(n):
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        assert pop == pytest.approx(abs(y[0]) ** 2, abs=1e-6)

    def test_layout_without_sites(self):
        with pytest.raises(InvalidParametersError):
            drive_term(DriveParams(0.1), 0.0, SubsystemLayout((4, 2, 2), ("cavity", "rabi-qubit", "rabi-qubit")))
