"""Spin-1/2 chain dynamics in double-well superlattices.

Three cross-validating engines (exact Krylov propagation, TEBD/iTEBD matrix
product states, combinatorial valence-bond tracking) for the single, periodic
and homogeneous switching protocols, with a shared observable layer and a
config-driven CLI.
"""

__version__ = "0.1.0"

from .model import (
    CouplingSchedule,
    InitialStateSpec,
    LatticeSpec,
    ProtocolKind,
    ProtocolSpec,
    StateKind,
    build_schedule,
    couplings_from_hubbard,
)

__all__ = [
    "CouplingSchedule",
    "InitialStateSpec",
    "LatticeSpec",
    "ProtocolKind",
    "ProtocolSpec",
    "StateKind",
    "build_schedule",
    "couplings_from_hubbard",
    "__version__",
]
