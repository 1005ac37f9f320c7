"""Matrix-product-state engine: TEBD for finite open chains and iTEBD for the
infinite two-site unit cell.

States are stored in right-canonical form (B tensors, physical index 0 = up)
together with the Schmidt vector of every bond, so each bond's entanglement
entropy reads directly off the stored spectra. Two-site updates use the
inverse-free scheme: theta is built as Lambda_left * B * B, and the new left
tensor is recovered as (C V) / norm, which avoids dividing by small Schmidt
values.

Second-order Trotter stepping applies even (intra-well) half-steps around a
full odd (inter-well) step, so every intermediate state sampled by observers
carries the full second-order accuracy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import TruncationBudgetError, UnsupportedRepresentationError
from .model import CouplingSchedule, InitialStateSpec, LatticeSpec, StateKind

_SQRT_HALF = 1.0 / np.sqrt(2.0)

SP = np.array([[0, 1], [0, 0]], dtype=np.complex128)  # S+ (index 0 = up)
SM = np.array([[0, 0], [1, 0]], dtype=np.complex128)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=np.complex128)
ID2 = np.eye(2, dtype=np.complex128)

_SINGLET = np.array([0, 1, -1, 0], dtype=np.complex128) / np.sqrt(2.0)
_P_SINGLET = np.outer(_SINGLET, _SINGLET.conj())


def bond_gate(J: float, dt: float) -> np.ndarray:
    """exp(+i J dt S_i.S_j) as an exact 4x4 unitary in the (uu, ud, du, dd) basis.

    This is the propagator of one bond of H = -J S_i.S_j over time dt: phase
    e^{i J dt / 4} on the triplet sector and e^{-3 i J dt / 4} on the singlet.
    At J dt = pi it reduces to the swap operator 1/2 + 2 S_i.S_j up to a
    global phase.
    """
    return np.exp(0.25j * J * dt) * (np.eye(4) - _P_SINGLET) + np.exp(
        -0.75j * J * dt
    ) * _P_SINGLET


def _svd(mat: np.ndarray):
    try:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def schmidt_entropy_of(spectrum: np.ndarray) -> float:
    """S = -sum lambda^2 log2 lambda^2 of a Schmidt vector."""
    p = np.asarray(spectrum) ** 2
    p = p[p > 1e-30]
    return float(-np.sum(p * np.log2(p)))


@dataclass
class MpsState:
    """MPS in right-canonical B form with explicit per-bond Schmidt vectors.

    Finite chains: ``tensors[i]`` has shape (chi_left, 2, chi_right) for sites
    i = 0..2N-1 and ``lambdas[i]`` is the Schmidt vector on the bond left of
    site i (lambdas[0] and lambdas[2N] are the trivial boundary [1]).

    Infinite chains: a two-site unit cell [A, B]; ``lambdas[0]`` lives on the
    inter-cell (odd) bond left of A and ``lambdas[1]`` on the intra-cell
    (even) bond between A and B.
    """

    tensors: list
    lambdas: list
    lattice: LatticeSpec
    chi_max: int
    sv_cutoff: float = 1e-10
    cumulative_truncation_error: float = 0.0
    gauge: str = "right-canonical"

    @property
    def is_infinite(self) -> bool:
        return self.lattice.infinite

    @property
    def num_sites(self) -> int:
        return self.lattice.num_sites

    def copy(self) -> "MpsState":
        return MpsState(
            list(self.tensors),
            list(self.lambdas),
            self.lattice,
            self.chi_max,
            self.sv_cutoff,
            self.cumulative_truncation_error,
            self.gauge,
        )

    def bond_dimensions(self) -> list[int]:
        return [len(lam) for lam in self.lambdas]

    # --- entropies ---

    def bond_entropy(self, bond: int) -> float:
        """Entropy of the cut at bond (bond, bond+1) of a finite chain."""
        if self.is_infinite:
            raise ValueError("use unit_cell_entropies for the infinite chain")
        return schmidt_entropy_of(self.lambdas[bond + 1])

    def block_entropy(self, block_len: int) -> float:
        """Edge-block entropy: the cut left of site block_len."""
        return schmidt_entropy_of(self.lambdas[block_len])

    def unit_cell_entropies(self) -> tuple[float, float]:
        """(S_even_inf, S_odd_inf): intra-well and inter-well bond entropies."""
        if not self.is_infinite:
            raise ValueError("unit-cell entropies need the infinite chain")
        return schmidt_entropy_of(self.lambdas[1]), schmidt_entropy_of(self.lambdas[0])

    def max_bond_entropy(self) -> float:
        lams = self.lambdas[1:-1] if not self.is_infinite else self.lambdas
        return max(schmidt_entropy_of(lam) for lam in lams)

    def is_trusted(self) -> bool:
        """Conservative reliability bound: S_max < log2(chi_max) - 1."""
        return bool(self.max_bond_entropy() < np.log2(self.chi_max) - 1.0)

    def canonical_residual(self) -> float:
        """Largest deviation of sum_p B_p B_p^dagger from the identity."""
        worst = 0.0
        for B in self.tensors:
            acc = np.tensordot(B, B.conj(), axes=([1, 2], [1, 2]))
            worst = max(worst, float(np.max(np.abs(acc - np.eye(B.shape[0])))))
        return worst

    # --- local measurements ---

    def _site_tensor(self, i: int) -> np.ndarray:
        if self.is_infinite:
            return self.tensors[i % 2]
        return self.tensors[i]

    def _left_weights(self, i: int) -> np.ndarray:
        lam = self.lambdas[i % 2] if self.is_infinite else self.lambdas[i]
        return lam**2

    def two_site_rdm(self, i: int, j: int) -> np.ndarray:
        """4x4 RDM of sites (i, j), i < j, in the (uu, ud, du, dd) basis."""
        if j < i:
            raise ValueError("need i < j")
        if not self.is_infinite and not (0 <= i < j < self.num_sites):
            raise ValueError("sites out of range")
        Bl = self._site_tensor(i)
        env = np.diag(self._left_weights(i)).astype(np.complex128)
        # open physical leg at i: T[p, p', x, x']
        T = np.einsum("ab,apx,bqy->pqxy", env, Bl, Bl.conj(), optimize=True)
        for k in range(i + 1, j):
            Bk = self._site_tensor(k)
            T = np.einsum("pqxy,xsu,ysv->pquv", T, Bk, Bk.conj(), optimize=True)
        Bj = self._site_tensor(j)
        rho = np.einsum("pqxy,xsu,ytu->psqt", T, Bj, Bj.conj(), optimize=True)
        return rho.reshape(4, 4)

    def bond_rdm(self, parity: str) -> np.ndarray:
        """Unit-cell bond RDM of the infinite chain ("even" intra, "odd" inter)."""
        if not self.is_infinite:
            raise ValueError("bond_rdm addresses the infinite unit cell")
        start = 0 if parity == "even" else 1
        return self.two_site_rdm(start, start + 1)

    def _two_point_row(
        self, op_a: np.ndarray, op_b: np.ndarray, i: int, l_max: int
    ) -> np.ndarray:
        """<op_a(i) op_b(i+l)> for l = 1..l_max from one environment sweep.

        Operator matrix elements are <bra|O|ket>, so the first operator index
        contracts with the conjugated tensor.
        """
        Bi = self._site_tensor(i)
        w = self._left_weights(i).astype(np.complex128)
        env = np.einsum("a,apx,qp,aqy->xy", w, Bi, op_a, Bi.conj(), optimize=True)
        out = np.empty(l_max, dtype=np.complex128)
        for l in range(1, l_max + 1):
            Bk = self._site_tensor(i + l)
            out[l - 1] = np.einsum(
                "xy,xpu,qp,yqu->", env, Bk, op_b, Bk.conj(), optimize=True
            )
            if l < l_max:
                env = np.einsum("xy,xpu,ypv->uv", env, Bk, Bk.conj(), optimize=True)
        return out

    def splus_sminus(self, i: int, j: int) -> complex:
        if i == j:
            rho1 = np.einsum(
                "a,apx,aqx->pq",
                self._left_weights(i).astype(np.complex128),
                self._site_tensor(i),
                self._site_tensor(i).conj(),
                optimize=True,
            )
            return complex(rho1[0, 0])
        if j < i:
            # operators on distinct sites commute: <S+_i S-_j> = <S-_j S+_i>
            return complex(self._two_point_row(SM, SP, j, i - j)[-1])
        return complex(self._two_point_row(SP, SM, i, j - i)[-1])

    def splus_sminus_row(self, i: int, l_max: int) -> np.ndarray:
        return self._two_point_row(SP, SM, i, l_max)

    def spin_dot_row(self, i: int, l_max: int) -> np.ndarray:
        zz = self._two_point_row(SZ, SZ, i, l_max)
        pm = self._two_point_row(SP, SM, i, l_max)
        return np.real(zz) + np.real(pm)

    def spin_dot(self, i: int, j: int) -> float:
        if j < i:
            i, j = j, i
        return float(self.spin_dot_row(i, j - i)[-1])

    def pair_splus_sminus(self, start: int, l: int) -> complex:
        """<S+_s S-_{s+l}> of the infinite chain, s = 0 (A site) or 1 (B site)."""
        return complex(self._two_point_row(SP, SM, start, l)[-1])

    def pair_spin_dot(self, l: int) -> float:
        """Unit-cell averaged <S_0 . S_l> of the infinite chain."""
        vals = [self.spin_dot_row(s, l)[-1] for s in (0, 1)]
        return float(0.5 * (vals[0] + vals[1]))

    def to_state_vector(self) -> np.ndarray:
        """Dense amplitudes over bit strings (site 0 = LSB, bit 1 = up).

        Test helper for small finite chains.
        """
        if self.is_infinite:
            raise UnsupportedRepresentationError("dense vector needs a finite chain")
        n = self.num_sites
        acc = np.ones((1, 1), dtype=np.complex128)
        # build with site 0 as the slowest tensor index, then transpose bits
        psi = np.tensordot(acc, self.tensors[0], axes=(1, 0))  # (1, p0, chi)
        for i in range(1, n):
            psi = np.tensordot(psi, self.tensors[i], axes=(psi.ndim - 1, 0))
        psi = psi.reshape((2,) * n)
        # physical index 0 = up; bit index: amplitude[s] with bit_i = 1 - p_i
        psi = psi.transpose(tuple(reversed(range(n))))  # site 0 fastest axis
        flat = psi.flatten()
        out = np.zeros_like(flat)
        bits = np.arange(1 << n)
        # map physical (0=up) to bit (1=up): reverse each site's index
        idx = (~bits) & ((1 << n) - 1)
        out[idx] = flat
        return out


# ---------------------------------------------------------------------------
# construction


def _pair_matrix(label: str) -> np.ndarray:
    """Two-site wavefunction M[p_left, p_right], physical index 0 = up."""
    m = np.zeros((2, 2), dtype=np.complex128)
    if label == "triplet_z":
        m[0, 1] = _SQRT_HALF
        m[1, 0] = _SQRT_HALF
    elif label == "singlet":
        m[0, 1] = _SQRT_HALF
        m[1, 0] = -_SQRT_HALF
    else:
        raise ValueError(f"unknown bond label {label!r}")
    return m


def _split_pair(m: np.ndarray):
    u, s, vh = _svd(m)
    keep = s > 1e-14
    u, s, vh = u[:, keep], s[keep], vh[keep]
    left = (u * s)[None, :, :].astype(np.complex128)  # (1, d, k)
    right = vh[:, :, None].astype(np.complex128)  # (k, d, 1)
    return left, s, right


def mps_from_product(
    spec: InitialStateSpec, lattice: LatticeSpec, chi_max: int, sv_cutoff: float = 1e-10
) -> MpsState:
    """Exact MPS (bond dimension <= 2) for a product of one- and two-site factors.

    Explicit matchings are supported only when every bond is nearest-neighbor;
    longer bonds are not exactly representable by this constructor.
    """
    if spec.kind in (StateKind.TRIPLET_PRODUCT, StateKind.SINGLET_PRODUCT):
        label = "triplet_z" if spec.kind is StateKind.TRIPLET_PRODUCT else "singlet"
        left, s, right = _split_pair(_pair_matrix(label))
        if lattice.infinite:
            return MpsState(
                [left, right],
                [np.array([1.0]), s.copy()],
                lattice,
                chi_max,
                sv_cutoff,
            )
        tensors, lambdas = [], [np.array([1.0])]
        for _ in range(lattice.num_wells):
            tensors.extend([left.copy(), right.copy()])
            lambdas.extend([s.copy(), np.array([1.0])])
        return MpsState(tensors, lambdas, lattice, chi_max, sv_cutoff)

    if lattice.infinite:
        raise UnsupportedRepresentationError(
            "infinite MPS supports only the triplet/singlet unit-cell products"
        )

    if spec.kind is StateKind.SINGLE_FLIP:
        spec.validate_for(lattice)
        tensors = []
        for i in range(lattice.num_sites):
            vec = np.zeros((1, 2, 1), dtype=np.complex128)
            vec[0, 0 if i == spec.flip_site else 1, 0] = 1.0
            tensors.append(vec)
        lambdas = [np.array([1.0]) for _ in range(lattice.num_sites + 1)]
        return MpsState(tensors, lambdas, lattice, chi_max, sv_cutoff)

    if spec.kind is StateKind.EXPLICIT_VBS:
        spec.validate_for(lattice)
        for (a, b) in spec.bonds:
            if b - a != 1:
                raise UnsupportedRepresentationError(
                    "explicit VBS with non-adjacent bonds has no exact product MPS"
                )
        tensors = [None] * lattice.num_sites
        lambdas = [np.array([1.0]) for _ in range(lattice.num_sites + 1)]
        for (a, b), label in zip(spec.bonds, spec.labels):
            left, s, right = _split_pair(_pair_matrix(label))
            tensors[a], tensors[b] = left.copy(), right.copy()
            lambdas[b] = s.copy()
        return MpsState(tensors, lambdas, lattice, chi_max, sv_cutoff)

    raise ValueError(f"unsupported initial state {spec.kind}")


# ---------------------------------------------------------------------------
# TEBD updates


def _apply_gate_bond(state: MpsState, left_idx: int, right_idx: int, lam_idx: int,
                     out_lam_idx: int, gate: np.ndarray) -> None:
    """Inverse-free two-site update; writes tensors and the middle Schmidt vector."""
    Bl = state.tensors[left_idx]
    Br = state.tensors[right_idx]
    lam = state.lambdas[lam_idx]
    cl, d, _ = Bl.shape
    cr = Br.shape[2]
    C = np.tensordot(Bl, Br, axes=(2, 0))  # (cl, d, d, cr)
    G = gate.reshape(d, d, d, d)
    C = np.tensordot(G, C, axes=([2, 3], [1, 2])).transpose(2, 0, 1, 3)
    theta = lam[:, None, None, None] * C
    u, s, vh = _svd(theta.reshape(cl * d, d * cr))
    total = float(np.sum(s**2))
    keep = max(1, min(state.chi_max, int(np.sum(s > state.sv_cutoff))))
    discarded = float(np.sum(s[keep:] ** 2)) / total if total > 0 else 0.0
    s_kept = s[:keep]
    norm = float(np.linalg.norm(s_kept))
    state.lambdas[out_lam_idx] = s_kept / norm
    state.tensors[right_idx] = vh[:keep].reshape(keep, d, cr)
    w = C.reshape(cl * d, d * cr) @ vh[:keep].conj().T
    state.tensors[left_idx] = (w / norm).reshape(cl, d, keep)
    state.cumulative_truncation_error += discarded


def _finite_sweep(state: MpsState, parity: int, gate: np.ndarray) -> None:
    n = state.num_sites
    for b in range(parity, n - 1, 2):
        _apply_gate_bond(state, b, b + 1, b, b + 1, gate)


def _infinite_update(state: MpsState, bond: str, gate: np.ndarray) -> None:
    if bond == "even":  # A-B intra-cell bond; left weights live on the odd bond
        _apply_gate_bond(state, 0, 1, 0, 1, gate)
    else:  # B-A inter-cell bond
        Bb, Ba = state.tensors[1], state.tensors[0]
        lam_e = state.lambdas[1]
        tmp = MpsState(
            [Bb, Ba],
            [lam_e, state.lambdas[0]],
            state.lattice,
            state.chi_max,
            state.sv_cutoff,
            0.0,
        )
        _apply_gate_bond(tmp, 0, 1, 0, 1, gate)
        state.tensors[1], state.tensors[0] = tmp.tensors[0], tmp.tensors[1]
        state.lambdas[0] = tmp.lambdas[1]
        state.cumulative_truncation_error += tmp.cumulative_truncation_error


def _segment_steps(duration: float, dt_trotter: float) -> tuple[int, float]:
    n = max(1, round(duration / dt_trotter))
    if abs(n * dt_trotter - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(
            f"dt_trotter={dt_trotter} does not divide a segment of length {duration}"
        )
    return n, duration / n


Observer = Callable[[float, MpsState], None]


def _evolve(
    state: MpsState,
    schedule: CouplingSchedule,
    t_to: float,
    dt_trotter: float,
    observer: Optional[Observer],
    truncation_budget_per_time: float,
    t_from: float,
    stepper,
) -> MpsState:
    state = state.copy()
    if observer is not None and t_from == 0.0:
        observer(0.0, state)
    t = t_from
    for seg in schedule.slice(t_from, t_to):
        n_steps, dt = _segment_steps(seg.duration, dt_trotter)
        for _ in range(n_steps):
            stepper(state, seg.J1, seg.J2, dt)
            t += dt
            if state.cumulative_truncation_error > truncation_budget_per_time * max(t, dt):
                raise TruncationBudgetError(
                    state.cumulative_truncation_error,
                    truncation_budget_per_time * max(t, dt),
                    t,
                )
            if observer is not None:
                observer(t, state)
    return state


def _finite_step(state: MpsState, J1: float, J2: float, dt: float) -> None:
    if J1 != 0.0:
        half = bond_gate(J1, dt / 2.0)
        _finite_sweep(state, 0, half)
    if J2 != 0.0:
        _finite_sweep(state, 1, bond_gate(J2, dt))
    if J1 != 0.0:
        _finite_sweep(state, 0, half)


def _infinite_step(state: MpsState, J1: float, J2: float, dt: float) -> None:
    if J1 != 0.0:
        half = bond_gate(J1, dt / 2.0)
        _infinite_update(state, "even", half)
    if J2 != 0.0:
        _infinite_update(state, "odd", bond_gate(J2, dt))
    if J1 != 0.0:
        _infinite_update(state, "even", half)


def tebd_evolve(
    state: MpsState,
    schedule: CouplingSchedule,
    t_to: float,
    dt_trotter: float = 0.02,
    observer: Optional[Observer] = None,
    truncation_budget_per_time: float = 1e-6,
    t_from: float = 0.0,
) -> MpsState:
    """Second-order Trotter evolution of a finite chain through the schedule.

    The observer callback (if given) fires at t=0 and after every Trotter step
    with the live state; exceeding the truncation budget raises
    TruncationBudgetError instead of silently continuing.
    """
    if state.is_infinite:
        raise UnsupportedRepresentationError("tebd_evolve needs a finite chain")
    return _evolve(
        state, schedule, t_to, dt_trotter, observer, truncation_budget_per_time,
        t_from, _finite_step,
    )


def itebd_evolve(
    state: MpsState,
    schedule: CouplingSchedule,
    t_to: float,
    dt_trotter: float = 0.02,
    observer: Optional[Observer] = None,
    truncation_budget_per_time: float = 1e-6,
    t_from: float = 0.0,
) -> MpsState:
    """Second-order Trotter evolution of the infinite two-site unit cell."""
    if not state.is_infinite:
        raise UnsupportedRepresentationError("itebd_evolve needs the infinite lattice")
    return _evolve(
        state, schedule, t_to, dt_trotter, observer, truncation_budget_per_time,
        t_from, _infinite_step,
    )


def schmidt_entropy(state: MpsState, bond) -> float:
    """Entropy at a finite-chain bond index, or "even"/"odd" for the unit cell."""
    if isinstance(bond, str):
        s_even, s_odd = state.unit_cell_entropies()
        return s_even if bond == "even" else s_odd
    return state.bond_entropy(bond)


# ---------------------------------------------------------------------------
# checkpoint format: one JSON header line, then little-endian array blocks
# (dtype tag byte, ndim uint8, shape int64s, raw data)


def _write_array(fh, arr: np.ndarray) -> None:
    if np.iscomplexobj(arr):
        tag, dt = b"c", "<c16"
    else:
        tag, dt = b"d", "<f8"
    fh.write(tag)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def _read_array(fh) -> np.ndarray:
    tag = fh.read(1)
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    if tag == b"c":
        data = np.frombuffer(fh.read(16 * count), dtype="<c16").astype(np.complex128)
    else:
        data = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)
    return data.reshape(shape)


def dump_mps(state: MpsState, path) -> None:
    header = {
        "format": "spinwell-mps",
        "version": 1,
        "infinite": state.is_infinite,
        "num_sites": None if state.is_infinite else state.num_sites,
        "spacing_a": state.lattice.spacing_a,
        "chi_max": state.chi_max,
        "sv_cutoff": state.sv_cutoff,
        "cumulative_truncation_error": state.cumulative_truncation_error,
        "gauge": state.gauge,
        "num_tensors": len(state.tensors),
        "num_lambdas": len(state.lambdas),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for arr in state.tensors:
            _write_array(fh, arr)
        for lam in state.lambdas:
            _write_array(fh, lam)


def load_mps(path) -> MpsState:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != "spinwell-mps" or header.get("version") != 1:
            raise ValueError("not a spinwell MPS checkpoint")
        tensors = [_read_array(fh) for _ in range(header["num_tensors"])]
        lambdas = [_read_array(fh) for _ in range(header["num_lambdas"])]
    if header["infinite"]:
        lattice = LatticeSpec(infinite=True, spacing_a=header["spacing_a"])
    else:
        lattice = LatticeSpec(num_sites=header["num_sites"], spacing_a=header["spacing_a"])
    return MpsState(
        tensors,
        lambdas,
        lattice,
        header["chi_max"],
        header["sv_cutoff"],
        header["cumulative_truncation_error"],
        header["gauge"],
    )
