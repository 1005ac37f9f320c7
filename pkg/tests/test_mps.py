import math

import numpy as np
import pytest

from spinwell import ed, mps, vbs
from spinwell.errors import TruncationBudgetError, UnsupportedRepresentationError
from spinwell.model import (
    InitialStateSpec,
    LatticeSpec,
    ProtocolKind,
    ProtocolSpec,
    StateKind,
    build_schedule,
)

from conftest import T_S

TRIPLET = InitialStateSpec(StateKind.TRIPLET_PRODUCT)
SINGLET = InitialStateSpec(StateKind.SINGLET_PRODUCT)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128
)


def homogeneous(total_time, J=1.0):
    return build_schedule(
        ProtocolSpec(ProtocolKind.HOMOGENEOUS_SWITCH, coupling_J=J, total_time=total_time)
    )


def single_switch(total_time):
    return build_schedule(
        ProtocolSpec(ProtocolKind.SINGLE_SWITCH, coupling_J=1.0, total_time=total_time)
    )


class TestProductMps:
    def test_triplet_schmidt_spectra(self):
        m = mps.mps_from_product(TRIPLET, LatticeSpec(num_sites=8), chi_max=16)
        s = 1 / math.sqrt(2)
        for bond in (0, 2, 4, 6):  # intra-well bonds
            assert np.allclose(sorted(m.lambdas[bond + 1]), [s, s])
        for bond in (1, 3, 5):  # inter-well bonds
            assert np.allclose(m.lambdas[bond + 1], [1.0])

    def test_singlet_same_spectra(self):
        m = mps.mps_from_product(SINGLET, LatticeSpec(num_sites=8), chi_max=16)
        assert np.allclose(sorted(m.lambdas[1]), [1 / math.sqrt(2)] * 2)
        assert m.bond_entropy(0) == pytest.approx(1.0)

    def test_single_flip_is_product(self):
        m = mps.mps_from_product(
            InitialStateSpec(StateKind.SINGLE_FLIP, flip_site=3),
            LatticeSpec(num_sites=8),
            chi_max=16,
        )
        assert all(len(lam) == 1 for lam in m.lambdas)

    def test_matches_exact_vector(self):
        lat = LatticeSpec(num_sites=6)
        for spec in (TRIPLET, SINGLET):
            m = mps.mps_from_product(spec, lat, chi_max=8)
            ref = ed.encode_product_state(spec, lat).to_full()
            assert np.max(np.abs(m.to_state_vector() - ref)) < 1e-14

    def test_nonadjacent_vbs_rejected(self):
        spec = InitialStateSpec(
            StateKind.EXPLICIT_VBS, bonds=((0, 2), (1, 3)), labels=("triplet_z",) * 2
        )
        with pytest.raises(UnsupportedRepresentationError):
            mps.mps_from_product(spec, LatticeSpec(num_sites=4), chi_max=8)


class TestBondGate:
    def test_zero_coupling_is_identity(self):
        assert np.max(np.abs(mps.bond_gate(0.0, 0.7) - np.eye(4))) == 0.0

    def test_swap_at_pi(self):
        g = mps.bond_gate(1.0, math.pi)
        phase = np.trace(SWAP.conj().T @ g) / 4
        assert abs(abs(phase) - 1.0) < 1e-14
        assert np.max(np.abs(g - phase * SWAP)) < 1e-13

    def test_unitary_and_reversible(self):
        g = mps.bond_gate(1.3, 0.37)
        assert np.max(np.abs(g @ g.conj().T - np.eye(4))) < 1e-14
        assert np.max(np.abs(g @ mps.bond_gate(1.3, -0.37) - np.eye(4))) < 1e-13

    def test_matches_dense_bond_propagator(self):
        from scipy.linalg import expm

        hbond = -1.0 * (
            0.25 * np.diag([1.0, -1.0, -1.0, 1.0])
            + 0.5
            * np.array([[0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]])
        )
        ref = expm(-1j * 0.9 * hbond)
        assert np.max(np.abs(mps.bond_gate(1.0, 0.9) - ref)) < 1e-14


class TestTebd:
    def test_zero_couplings_leave_state(self):
        lat = LatticeSpec(num_sites=6)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=8)
        sched = build_schedule(
            ProtocolSpec(ProtocolKind.HOMOGENEOUS_SWITCH, coupling_J=0.0, total_time=1.0)
        )
        out = mps.tebd_evolve(m, sched, 1.0, dt_trotter=0.1)
        assert np.max(np.abs(out.to_state_vector() - m.to_state_vector())) < 1e-14
        assert out.cumulative_truncation_error == 0.0

    def test_single_switch_populations_at_ts(self):
        from spinwell.observables import rdm_populations

        lat = LatticeSpec(num_sites=8)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=8)
        out = mps.tebd_evolve(m, single_switch(T_S), T_S, dt_trotter=T_S / 100)
        ref = vbs.single_switch_observables(T_S)
        for bond in ((0, 1), (2, 3), (4, 5), (6, 7)):
            pops = rdm_populations(out.two_site_rdm(*bond))
            assert pops["tz"] == pytest.approx(ref["pop_even_tz"], abs=1e-6)
            assert pops["s"] == pytest.approx(ref["pop_even_s"], abs=1e-6)

    def test_matches_ed_on_homogeneous_quench(self):
        lat = LatticeSpec(num_sites=8)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=64)
        out = mps.tebd_evolve(m, homogeneous(1.0), 1.0, dt_trotter=0.01)
        psi = ed.propagate(
            ed.encode_product_state(TRIPLET, lat), homogeneous(1.0), 0.0, 1.0
        )
        overlap = abs(np.vdot(out.to_state_vector(), psi.to_full()))
        assert overlap > 1 - 1e-7

    def test_entropy_agrees_with_dense_rdm(self):
        # same state, two entropy routes: Schmidt spectrum vs dense eigenvalues
        lat = LatticeSpec(num_sites=8)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=64)
        out = mps.tebd_evolve(m, homogeneous(1.5), 1.5, dt_trotter=0.05)
        state = ed.StateVector(
            out.to_state_vector()[ed.get_basis(8, 4).states],
            lat,
            ed.get_basis(8, 4),
        )
        for l in range(1, 8):
            assert out.block_entropy(l) == pytest.approx(
                state.block_entropy(l), abs=1e-6
            )

    def test_trotter_error_is_second_order(self):
        lat = LatticeSpec(num_sites=6)
        psi = ed.propagate(
            ed.encode_product_state(TRIPLET, lat), homogeneous(1.0), 0.0, 1.0
        ).to_full()

        def deviation(dt):
            m = mps.mps_from_product(TRIPLET, lat, chi_max=64, sv_cutoff=0.0)
            out = mps.tebd_evolve(m, homogeneous(1.0), 1.0, dt_trotter=dt)
            assert out.cumulative_truncation_error == 0.0
            return np.linalg.norm(out.to_state_vector() - psi * _align(out, psi))

        def _align(out, ref):
            ov = np.vdot(out.to_state_vector(), ref)
            return (ov / abs(ov)).conjugate()

        ratio = deviation(0.1) / deviation(0.05)
        assert 3.0 < ratio < 5.0

    def test_truncation_budget_enforced(self):
        lat = LatticeSpec(num_sites=12)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=4)  # aggressive truncation
        with pytest.raises(TruncationBudgetError):
            mps.tebd_evolve(
                m, homogeneous(4.0), 4.0, dt_trotter=0.05,
                truncation_budget_per_time=1e-9,
            )

    def test_chi_convergence_monotone(self):
        lat = LatticeSpec(num_sites=8)
        sched = homogeneous(2.0)
        psi = ed.propagate(ed.encode_product_state(TRIPLET, lat), sched, 0.0, 2.0)
        ref = psi.to_full()
        errors = []
        for chi in (16, 32, 64, 128):
            m = mps.mps_from_product(TRIPLET, lat, chi_max=chi)
            out = mps.tebd_evolve(m, sched, 2.0, dt_trotter=0.02)
            vec = out.to_state_vector()
            errors.append(1.0 - abs(np.vdot(vec, ref)))
        for a, b in zip(errors, errors[1:]):
            assert b <= a * (1 + 1e-6) + 1e-12

    def test_observer_fires_at_step_boundaries(self):
        lat = LatticeSpec(num_sites=6)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=16)
        seen = []
        mps.tebd_evolve(
            m, homogeneous(0.5), 0.5, dt_trotter=0.1,
            observer=lambda t, st: seen.append(t),
        )
        assert seen == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4, 0.5])


class TestItebd:
    def test_infinite_unit_cell_spectra(self):
        m = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=16)
        assert m.unit_cell_entropies() == pytest.approx((1.0, 0.0))

    def test_single_switch_even_entropy_constant(self):
        m = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=16)
        records = []
        mps.itebd_evolve(
            m, single_switch(2 * T_S), 2 * T_S, dt_trotter=T_S / 50,
            observer=lambda t, st: records.append(st.unit_cell_entropies()),
        )
        evens = [r[0] for r in records]
        assert max(abs(e - 1.0) for e in evens) < 1e-6

    def test_single_switch_odd_entropy_oscillates(self):
        m = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=16)
        times, odds = [], []

        def watch(t, st):
            times.append(t)
            odds.append(st.unit_cell_entropies()[1])

        mps.itebd_evolve(
            m, single_switch(2 * T_S), 2 * T_S, dt_trotter=T_S / 50, observer=watch
        )
        odd_at = dict(zip(np.round(times, 9), odds))
        assert odd_at[round(T_S, 9)] == pytest.approx(2.0, abs=1e-6)
        assert odd_at[round(2 * T_S, 9)] == pytest.approx(0.0, abs=1e-6)

    def test_single_switch_populations_track_closed_forms(self):
        from spinwell.observables import population_channels

        m = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=16)
        worst = [0.0]

        def watch(t, st):
            pops = population_channels(st)
            ref = vbs.single_switch_observables(t)
            worst[0] = max(
                worst[0], max(abs(pops[k] - ref[k]) for k in pops)
            )

        mps.itebd_evolve(
            m, single_switch(2 * T_S), 2 * T_S, dt_trotter=T_S / 50, observer=watch
        )
        assert worst[0] < 1e-6

    def test_homogeneous_singlet_energy_per_site(self):
        # conserved at 3/8 J from the initial singlet product
        m = mps.mps_from_product(SINGLET, LatticeSpec(infinite=True), chi_max=64)
        sched = homogeneous(1.0)
        out = mps.itebd_evolve(m, sched, 1.0, dt_trotter=0.02)
        dot = 0.25 * np.diag([1.0, -1.0, -1.0, 1.0]) + 0.5 * np.array(
            [[0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]]
        )
        e = -0.5 * float(
            np.real(
                np.trace(out.bond_rdm("even") @ dot) + np.trace(out.bond_rdm("odd") @ dot)
            )
        )
        assert e == pytest.approx(0.375, abs=2e-4)  # Trotter-limited

    def test_finite_lattice_rejected(self):
        m = mps.mps_from_product(TRIPLET, LatticeSpec(num_sites=6), chi_max=8)
        with pytest.raises(UnsupportedRepresentationError):
            mps.itebd_evolve(m, homogeneous(1.0), 1.0, dt_trotter=0.1)

    @pytest.mark.slow
    def test_homogeneous_quench_matches_ed_bulk(self):
        # before the light cone reaches the chain ends, the center of a 16-site
        # chain is indistinguishable from the infinite system
        from spinwell.observables import rdm_populations

        t_end = 2.0
        dt = 0.01
        lat = LatticeSpec(num_sites=16)
        sched = homogeneous(t_end)
        psi = ed.propagate(ed.encode_product_state(TRIPLET, lat), sched, 0.0, t_end)
        m = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=64)
        out = mps.itebd_evolve(m, sched, t_end, dt_trotter=dt)
        for parity, bond in (("even", (8, 9)), ("odd", (7, 8))):
            pops_inf = rdm_populations(out.bond_rdm(parity))
            pops_ed = rdm_populations(psi.two_site_rdm(*bond))
            for key in pops_inf:
                assert pops_inf[key] == pytest.approx(pops_ed[key], abs=2e-5)
        assert out.pair_spin_dot(3) == pytest.approx(
            0.5 * (psi.spin_dot(8, 11) + psi.spin_dot(7, 10)), abs=2e-5
        )


class TestSchmidtEntropyApi:
    def test_bond_index_and_unit_cell_forms(self):
        fin = mps.mps_from_product(TRIPLET, LatticeSpec(num_sites=6), chi_max=8)
        assert mps.schmidt_entropy(fin, 0) == pytest.approx(1.0)
        assert mps.schmidt_entropy(fin, 1) == pytest.approx(0.0)
        inf = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=8)
        assert mps.schmidt_entropy(inf, "even") == pytest.approx(1.0)
        assert mps.schmidt_entropy(inf, "odd") == pytest.approx(0.0)


class TestCorrelators:
    def test_two_site_rdm_matches_ed(self, rng):
        lat = LatticeSpec(num_sites=8)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=64)
        out = mps.tebd_evolve(m, homogeneous(1.2), 1.2, dt_trotter=0.01)
        psi = ed.propagate(
            ed.encode_product_state(TRIPLET, lat), homogeneous(1.2), 0.0, 1.2
        )
        for (i, j) in ((0, 1), (2, 5), (1, 6), (0, 7)):
            assert np.max(
                np.abs(out.two_site_rdm(i, j) - psi.two_site_rdm(i, j))
            ) < 1e-5

    def test_splus_sminus_matches_ed(self):
        lat = LatticeSpec(num_sites=8)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=64)
        out = mps.tebd_evolve(m, homogeneous(1.2), 1.2, dt_trotter=0.01)
        psi = ed.propagate(
            ed.encode_product_state(TRIPLET, lat), homogeneous(1.2), 0.0, 1.2
        )
        for (i, j) in ((0, 3), (5, 2), (1, 1)):
            assert out.splus_sminus(i, j) == pytest.approx(
                ed.splus_sminus(psi, i, j), abs=1e-5
            )

    def test_canonical_residual_small(self):
        lat = LatticeSpec(num_sites=10)
        m = mps.mps_from_product(TRIPLET, lat, chi_max=32)
        out = mps.tebd_evolve(m, homogeneous(2.0), 2.0, dt_trotter=0.02)
        assert out.canonical_residual() < 1e-8


def test_checkpoint_rejects_foreign_files(tmp_path):
    bad = tmp_path / "not_a_checkpoint.swmps"
    bad.write_bytes(b'{"format": "something-else", "version": 9}\n')
    with pytest.raises(ValueError):
        mps.load_mps(bad)


def test_checkpoint_roundtrip(tmp_path):
    lat = LatticeSpec(num_sites=6)
    m = mps.mps_from_product(TRIPLET, lat, chi_max=16)
    out = mps.tebd_evolve(m, homogeneous(0.8), 0.8, dt_trotter=0.02)
    path = tmp_path / "ckpt.swmps"
    mps.dump_mps(out, path)
    loaded = mps.load_mps(path)
    assert loaded.chi_max == out.chi_max
    assert loaded.cumulative_truncation_error == out.cumulative_truncation_error
    assert np.max(np.abs(loaded.to_state_vector() - out.to_state_vector())) == 0.0
    inf = mps.mps_from_product(TRIPLET, LatticeSpec(infinite=True), chi_max=8)
    mps.dump_mps(inf, tmp_path / "inf.swmps")
    loaded_inf = mps.load_mps(tmp_path / "inf.swmps")
    assert loaded_inf.is_infinite
    assert loaded_inf.unit_cell_entropies() == pytest.approx((1.0, 0.0))
