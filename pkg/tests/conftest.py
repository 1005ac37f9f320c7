import math

import numpy as np
import pytest

# single-site matrices in the bit-aligned basis (index 0 = bit 0 = down)
SX = np.array([[0, 0.5], [0.5, 0]], dtype=np.complex128)
SY = np.array([[0, 0.5j], [-0.5j, 0]], dtype=np.complex128)
SZ = np.diag([-0.5, 0.5]).astype(np.complex128)
T_S = math.pi  # swap time for J = 1, hbar = 1


def site_operator(num_sites: int, site: int, op: np.ndarray) -> np.ndarray:
    """Dense operator acting on one site (site 0 = least significant bit)."""
    mats = [np.eye(2, dtype=np.complex128)] * num_sites
    mats[num_sites - 1 - site] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def dense_hamiltonian(num_sites: int, J1: float, J2: float) -> np.ndarray:
    """Brute-force H = -J1 sum_even S.S - J2 sum_odd S.S via Kronecker products."""
    dim = 1 << num_sites
    H = np.zeros((dim, dim), dtype=np.complex128)
    bonds = [((i, i + 1), J1) for i in range(0, num_sites - 1, 2)]
    bonds += [((i, i + 1), J2) for i in range(1, num_sites - 1, 2)]
    for (i, j), J in bonds:
        for op in (SX, SY, SZ):
            H -= J * site_operator(num_sites, i, op) @ site_operator(num_sites, j, op)
    return H


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
