import math

import numpy as np
import pytest
from scipy.linalg import expm

from spinwell import ed
from spinwell.errors import UnsupportedRepresentationError
from spinwell.model import (
    InitialStateSpec,
    LatticeSpec,
    ProtocolKind,
    ProtocolSpec,
    StateKind,
    build_schedule,
)

from conftest import T_S, dense_hamiltonian

TRIPLET = InitialStateSpec(StateKind.TRIPLET_PRODUCT)
SINGLET = InitialStateSpec(StateKind.SINGLET_PRODUCT)


def single_switch(total_time):
    return build_schedule(
        ProtocolSpec(ProtocolKind.SINGLE_SWITCH, coupling_J=1.0, total_time=total_time)
    )


def homogeneous(total_time):
    return build_schedule(
        ProtocolSpec(ProtocolKind.HOMOGENEOUS_SWITCH, coupling_J=1.0, total_time=total_time)
    )


class TestEncode:
    def test_triplet_two_site_amplitudes(self):
        # basis order by bit string: (dd, ud, du, uu); the triplet weights the
        # two antiparallel strings equally
        lat = LatticeSpec(num_sites=4)
        state = ed.encode_product_state(TRIPLET, lat)
        full = state.to_full()
        pair = full.reshape(4, 4)[0b01]  # second well fixed to (up at 2, down at 3)
        s = 1 / math.sqrt(2)
        assert pair == pytest.approx(np.array([0, s, s, 0]) * s)

    def test_singlet_sign(self):
        lat = LatticeSpec(num_sites=4)
        full = ed.encode_product_state(SINGLET, lat).to_full()
        # amplitude of |up0 down1> has opposite sign to |down0 up1>
        s = 0.5
        assert full[0b0101] == pytest.approx(s)
        assert full[0b0110] == pytest.approx(-s)

    def test_triplet_product_is_tensor_product(self):
        lat2 = LatticeSpec(num_sites=4)
        full = ed.encode_product_state(TRIPLET, lat2).to_full()
        one = np.array([0, 1, 1, 0]) / math.sqrt(2)
        assert np.max(np.abs(full - np.kron(one, one))) < 1e-14

    def test_sectors(self):
        lat = LatticeSpec(num_sites=6)
        assert ed.encode_product_state(TRIPLET, lat).sz_sector == 0
        assert ed.encode_product_state(SINGLET, lat).sz_sector == 0
        flip = ed.encode_product_state(
            InitialStateSpec(StateKind.SINGLE_FLIP, flip_site=2), lat
        )
        assert flip.sz_sector == 1 - 3
        assert flip.basis.dim == 6

    def test_infinite_rejected(self):
        with pytest.raises(UnsupportedRepresentationError):
            ed.encode_product_state(TRIPLET, LatticeSpec(infinite=True))

    def test_explicit_vbs_matching_validated(self):
        lat = LatticeSpec(num_sites=4)
        bad = InitialStateSpec(StateKind.EXPLICIT_VBS, bonds=((0, 1), (1, 2)))
        with pytest.raises(ValueError):
            ed.encode_product_state(bad, lat)


class TestPropagate:
    def test_decoupled_well_triplet_only_dephases(self):
        # |t^z> is an S.S eigenstate of its own well: with the inter-well
        # coupling off, populations must not move for any evolution time
        from spinwell.model import CouplingSchedule, Segment

        lat = LatticeSpec(num_sites=4)
        state = ed.encode_product_state(TRIPLET, lat)
        sched = CouplingSchedule((Segment(0.0, 3.0, 1.7, 0.0),))
        out = ed.propagate(state, sched, 0.0, 3.0)
        rho = out.two_site_rdm(0, 1)
        tz = np.array([0, 1, 1, 0]) / math.sqrt(2)
        assert np.real(tz @ rho @ tz) == pytest.approx(1.0, abs=1e-10)

    def test_matches_dense_expm(self, rng):
        lat = LatticeSpec(num_sites=6)
        state = ed.encode_product_state(TRIPLET, lat)
        out = ed.propagate(state, homogeneous(2.5), 0.0, 2.5)
        ref = expm(-1j * 2.5 * dense_hamiltonian(6, 1.0, 1.0)) @ state.to_full()
        assert np.max(np.abs(out.to_full() - ref)) < 1e-9

    def test_forward_backward_roundtrip(self):
        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        fwd = ed.propagate(state, homogeneous(4.0), 0.0, 4.0)
        # reversed sign via a negative-J schedule over the same duration
        back_sched = build_schedule(
            ProtocolSpec(ProtocolKind.HOMOGENEOUS_SWITCH, coupling_J=-1.0, total_time=4.0)
        )
        back = ed.propagate(fwd, back_sched, 0.0, 4.0)
        assert state.fidelity(back) >= 1 - 1e-9

    def test_norm_and_sz_conserved(self):
        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        out = ed.propagate(state, homogeneous(5.0), 0.0, 5.0)
        assert abs(out.norm() - 1.0) < 1e-10
        assert abs(ed.total_sz(out)) < 1e-10

    def test_energy_conserved_within_segment(self):
        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        e0 = ed.energy(state, 1.0, 1.0)
        out = ed.propagate(state, homogeneous(5.0), 0.0, 5.0)
        assert abs(ed.energy(out, 1.0, 1.0) - e0) < 1e-8 * lat.num_sites

    def test_single_switch_period_two_ts(self):
        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        sched = single_switch(3 * T_S)
        a = ed.propagate(state, sched, 0.0, 0.4)
        b = ed.propagate(state, sched, 0.0, 0.4 + 2 * T_S)
        from spinwell.observables import population_channels

        pa, pb = population_channels(a), population_channels(b)
        assert max(abs(pa[k] - pb[k]) for k in pa) < 1e-8

    def test_single_switch_reaches_length3_vbs(self):
        from spinwell import vbs

        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        evolved = ed.propagate(state, single_switch(T_S), 0.0, T_S)
        target = vbs.to_state_vector(
            vbs.apply_switch_layer(vbs.initial_vbs(TRIPLET, lat), "odd")
        )
        assert evolved.fidelity(target) >= 1 - 1e-8

    def test_out_of_support_rejected(self):
        lat = LatticeSpec(num_sites=4)
        state = ed.encode_product_state(TRIPLET, lat)
        with pytest.raises(ValueError):
            ed.propagate(state, homogeneous(1.0), 0.0, 2.0)


class TestMeasurements:
    def test_rdm_pure_triplet_bond(self):
        lat = LatticeSpec(num_sites=6)
        state = ed.encode_product_state(TRIPLET, lat)
        rho = state.two_site_rdm(0, 1)
        tz = np.array([0, 1, 1, 0]) / math.sqrt(2)
        assert np.max(np.abs(rho - np.outer(tz, tz))) < 1e-12

    def test_rdm_cross_bond_maximally_mixed(self):
        lat = LatticeSpec(num_sites=6)
        state = ed.encode_product_state(TRIPLET, lat)
        assert np.max(np.abs(state.two_site_rdm(1, 2) - np.eye(4) / 4)) < 1e-12

    def test_rdm_pure_singlet_bond(self):
        lat = LatticeSpec(num_sites=6)
        state = ed.encode_product_state(SINGLET, lat)
        s = np.array([0, 1, -1, 0]) / math.sqrt(2)
        assert np.max(np.abs(state.two_site_rdm(0, 1) - np.outer(s, s))) < 1e-12

    def test_block_entropy_examples(self):
        lat = LatticeSpec(num_sites=8)
        state = ed.encode_product_state(TRIPLET, lat)
        assert state.block_entropy(2) == pytest.approx(0.0, abs=1e-10)
        assert state.block_entropy(1) == pytest.approx(1.0, abs=1e-10)

    def test_periodic_switch_saturates_half_chain_entropy(self):
        # 2N=10: after N-1 = 4 swap layers the middle cut carries N = 5 bits
        lat = LatticeSpec(num_sites=10)
        proto = ProtocolSpec(
            ProtocolKind.PERIODIC_SWITCH, coupling_J=1.0, switch_time_ts=T_S, num_switches=4
        )
        state = ed.encode_product_state(TRIPLET, lat)
        out = ed.propagate(state, build_schedule(proto), 0.0, 4 * T_S)
        assert out.block_entropy(5) == pytest.approx(5.0, abs=1e-8)

    def test_spin_correlators_match_dense(self, rng):
        lat = LatticeSpec(num_sites=6)
        basis = ed.get_basis(6, 3)
        v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
        v /= np.linalg.norm(v)
        state = ed.StateVector(v, lat, basis)
        full = state.to_full()
        from conftest import SX, SY, SZ, site_operator

        sp = site_operator(6, 1, SX + 1j * SY)
        sm = site_operator(6, 4, SX - 1j * SY)
        ref = np.vdot(full, sp @ sm @ full)
        assert ed.splus_sminus(state, 1, 4) == pytest.approx(ref, abs=1e-12)
        dot = sum(
            site_operator(6, 1, op) @ site_operator(6, 4, op) for op in (SX, SY, SZ)
        )
        assert ed.spin_dot(state, 1, 4) == pytest.approx(
            np.real(np.vdot(full, dot @ full)), abs=1e-12
        )


def test_dump_rejects_foreign_files(tmp_path):
    bad = tmp_path / "junk.swsv"
    bad.write_bytes(b"NOPE" + bytes(17))
    with pytest.raises(ValueError):
        ed.load_state(bad)


def test_dump_load_roundtrip(tmp_path):
    lat = LatticeSpec(num_sites=8)
    state = ed.encode_product_state(TRIPLET, lat)
    out = ed.propagate(state, homogeneous(1.0), 0.0, 1.0)
    path = tmp_path / "state.swsv"
    ed.dump_state(out, path)
    loaded = ed.load_state(path)
    assert loaded.sz_sector == 0
    assert np.max(np.abs(loaded.amplitudes - out.amplitudes)) == 0.0


def test_size_cap():
    with pytest.raises(UnsupportedRepresentationError):
        ed.SpinBasis(26)
