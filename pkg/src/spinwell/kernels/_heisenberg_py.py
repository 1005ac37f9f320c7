"""Pure-numpy Heisenberg bond kernel.

Same contract as the compiled extension: y += sum_b c_b * (S_i . S_j)_b applied
to a state vector over an Sz-restricted (or full) bit-string basis. Site 0 is
the least significant bit and bit value 1 means spin up.

The vectorized form gathers exchange partners through the full-size index
table, so it trades memory traffic for the compiled version's tight loop.
"""

import numpy as np

IMPLEMENTATION = "python"


def apply_bond_terms(states, index, bond_sites, bond_coeffs, v, out):
    """Accumulate sum_b c_b (S_i . S_j) |v> into ``out``.

    states:      int64[D]   sorted basis bit strings
    index:       int32[2^(2N)]  bit string -> basis position (-1 outside basis)
    bond_sites:  int32[B,2] site pairs
    bond_coeffs: float64[B] coefficient c_b multiplying S_i . S_j
    v, out:      complex128[D]
    """
    for (i, j), c in zip(bond_sites, bond_coeffs):
        if c == 0.0:
            continue
        mask = (np.int64(1) << int(i)) | (np.int64(1) << int(j))
        bi = (states >> np.int64(i)) & 1
        bj = (states >> np.int64(j)) & 1
        anti = bi != bj
        # SzSz: +1/4 parallel, -1/4 antiparallel
        out += (c * 0.25) * v
        out[anti] -= (c * 0.5) * v[anti]
        partners = index[states[anti] ^ mask]
        out[anti] += (c * 0.5) * v[partners]
    return out
