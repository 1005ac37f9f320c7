"""One recurrence step of entanglement purification on abstract qubit pairs.

The two-qubit gate is compiled from the physically available primitives: an
Ising ZZ interaction plus single-qubit rotations. One purification round
applies per-pair local rotations, a bilateral compiled CNOT (controls on the
pair that is kept), a Z-basis measurement of the sacrificed pair, and
post-selection on parallel outcomes. All measurement branches are tracked
exactly in the density matrix; nothing is sampled.

The round targets the singlet |s> = (ud - du)/sqrt(2). The local-rotation
dictionary: each pair is first mapped singlet -> Phi+ by a Y on its second
qubit; the phase-balancing rotations exp(-i pi X / 4) (first qubit of each
pair) and exp(+i pi X / 4) (second qubit) keep the iterated map converging
without any twirling step; the kept pair is rotated back at the end. To
target a different Bell state, replace the Y frame rotation by the Pauli that
maps that state to Phi+.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
ID2 = np.eye(2, dtype=np.complex128)

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)

SINGLET = np.array([0, 1, -1, 0], dtype=np.complex128) / math.sqrt(2)
PHI_PLUS = np.array([1, 0, 0, 1], dtype=np.complex128) / math.sqrt(2)


def _rz(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def _rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def cnot_from_ising(
    ising_phase: float, local_rotations: Sequence[tuple[np.ndarray, np.ndarray]]
) -> np.ndarray:
    """Compose exp(-i * ising_phase * Z x Z) with single-qubit rotation layers.

    ``local_rotations`` holds (u_first, u_second) layers; the first layer acts
    before the Ising evolution, the remaining layers after it, in order. With
    the canonical recipe (see :func:`canonical_cnot_recipe`) the result equals
    CNOT up to a global phase.
    """
    gate = np.kron(*local_rotations[0]) if local_rotations else np.eye(4)
    zz = np.diag(np.exp(-1j * ising_phase * np.array([1.0, -1.0, -1.0, 1.0])))
    gate = zz @ gate
    for u0, u1 in local_rotations[1:]:
        gate = np.kron(u0, u1) @ gate
    return gate


def canonical_cnot_recipe() -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Ising phase and rotation layers compiling CNOT (control = first qubit).

    CNOT = e^{i pi/4} (1 x H) e^{-i pi/4 ZZ} (Rz(-pi/2) x Rz(-pi/2) H).
    """
    pre = (_rz(-math.pi / 2), _rz(-math.pi / 2) @ HADAMARD)
    post = (ID2, HADAMARD)
    return math.pi / 4, [pre, post]


def compiled_cnot() -> np.ndarray:
    phase, layers = canonical_cnot_recipe()
    return cnot_from_ising(phase, layers)


def phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Operator distance min_phi || u - e^{i phi} v ||_2."""
    tr = np.trace(v.conj().T @ u)
    phase = tr / abs(tr) if abs(tr) > 0 else 1.0
    return float(np.linalg.norm(u - phase * v, ord=2))


def werner_pair(fidelity: float, target: np.ndarray = SINGLET) -> np.ndarray:
    """Werner state: F on the target Bell projector, (1-F)/3 on its complement."""
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("fidelity must lie in [0, 1]")
    proj = np.outer(target, target.conj())
    return fidelity * proj + (1.0 - fidelity) / 3.0 * (np.eye(4) - proj)


def pair_fidelity(rho: np.ndarray, target: np.ndarray = SINGLET) -> float:
    return float(np.real(target.conj() @ rho @ target))


def check_pair_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> None:
    if rho.shape != (4, 4):
        raise ValueError("pair density matrix must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
        raise ValueError("density matrix has a negative eigenvalue")


def _kron4(a, b, c, d) -> np.ndarray:
    return np.kron(np.kron(a, b), np.kron(c, d))


def _build_round_operator() -> np.ndarray:
    """Unitary of one round on qubits (A_keep, B_keep, A_meas, B_meas)."""
    cnot = compiled_cnot()
    # embed CNOT(control=q0, target=q2) and CNOT(control=q1, target=q3)
    def embed(control: int, target: int) -> np.ndarray:
        u = np.eye(16, dtype=np.complex128)
        cn = cnot.reshape(2, 2, 2, 2)
        out = np.zeros((16, 16), dtype=np.complex128)
        for idx in range(16):
            bits = [(idx >> (3 - k)) & 1 for k in range(4)]
            for c_out in range(2):
                for t_out in range(2):
                    amp = cn[c_out, t_out, bits[control], bits[target]]
                    if amp == 0:
                        continue
                    new = bits.copy()
                    new[control], new[target] = c_out, t_out
                    j = sum(v << (3 - k) for k, v in enumerate(new))
                    out[j, idx] += amp
        return out

    bilateral = embed(1, 3) @ embed(0, 2)
    sq = math.sqrt(0.5)
    rot_a = _rx(math.pi / 2)   # exp(-i pi X / 4) on A-side qubits
    rot_b = _rx(-math.pi / 2)  # exp(+i pi X / 4) on B-side qubits
    frame = _kron4(ID2, PAULI_Y, ID2, PAULI_Y)          # singlet -> Phi+ per pair
    balance = _kron4(rot_a, rot_b, rot_a, rot_b)
    return bilateral @ balance @ frame


_ROUND_OP = _build_round_operator()
_UNFRAME_KEEP = np.kron(ID2, PAULI_Y)  # undo the frame rotation on the kept pair


def purification_step(pair_a: np.ndarray, pair_b: np.ndarray) -> tuple[float, np.ndarray]:
    """One purification round: measure pair_a, keep pair_b.

    Returns (success_probability, purified state of pair_b). The kept pair's
    state is conditioned on the two Z measurements of pair_a coming out
    parallel; both parallel branches are summed exactly.
    """
    check_pair_density_matrix(pair_a)
    check_pair_density_matrix(pair_b)
    rho = np.kron(pair_b, pair_a)  # qubit order (A_keep, B_keep, A_meas, B_meas)
    rho = _ROUND_OP @ rho @ _ROUND_OP.conj().T
    rho4 = rho.reshape(4, 4, 4, 4)  # (keep_ket, meas_ket, keep_bra, meas_bra)
    kept = rho4[:, 0, :, 0] + rho4[:, 3, :, 3]  # meas outcomes uu and dd
    p_success = float(np.real(np.trace(kept)))
    if p_success < 1e-15:
        raise ValueError("post-selection has zero success probability")
    kept = kept / p_success
    kept = _UNFRAME_KEEP @ kept @ _UNFRAME_KEEP.conj().T
    kept = 0.5 * (kept + kept.conj().T)
    return p_success, kept


def recurrence_fidelity(f: float) -> float:
    """Closed-form fidelity map of one round on Werner inputs."""
    rest = (1.0 - f) / 3.0
    num = f**2 + rest**2
    den = (f + rest) ** 2 + (2.0 * rest) ** 2
    return num / den


def recurrence_success(f: float) -> float:
    rest = (1.0 - f) / 3.0
    return (f + rest) ** 2 + (2.0 * rest) ** 2
