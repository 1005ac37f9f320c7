"""Chain geometry, switching protocols, coupling schedules and initial states.

Conventions used throughout the package:

* hbar = 1; energies in units of J, times in units of hbar/J.
* Sites are numbered 0 .. 2N-1. "Even" bonds (2j, 2j+1) are the intra-well
  bonds and carry J1; "odd" bonds (2j+1, 2j+2) are the inter-well bonds and
  carry J2.
* The Hamiltonian is H = -J1 * sum_even S.S - J2 * sum_odd S.S, so positive
  J couplings give the ferromagnet and negative ones the antiferromagnet.
* Global phases of evolved states are never exposed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence


SWITCH_ANGLE = math.pi  # J * t_s = pi * hbar defines the swap time t_s


class ProtocolKind(Enum):
    SINGLE_SWITCH = "single"
    PERIODIC_SWITCH = "periodic"
    HOMOGENEOUS_SWITCH = "homogeneous"


class StateKind(Enum):
    TRIPLET_PRODUCT = "triplet"
    SINGLET_PRODUCT = "singlet"
    SINGLE_FLIP = "single_flip"
    EXPLICIT_VBS = "explicit_vbs"


@dataclass(frozen=True)
class LatticeSpec:
    """Chain of 2N sites with open boundaries, or an infinite two-site unit cell."""

    num_sites: Optional[int] = None
    infinite: bool = False
    spacing_a: float = 1.0

    def __post_init__(self):
        if self.spacing_a <= 0:
            raise ValueError("lattice spacing must be positive")
        if self.infinite:
            if self.num_sites is not None:
                raise ValueError("infinite lattice takes no site count (two-site unit cell)")
        else:
            n = self.num_sites
            if n is None or n < 4 or n % 2 != 0:
                raise ValueError("finite lattice needs an even number of sites >= 4")

    @property
    def num_wells(self) -> int:
        if self.infinite:
            raise ValueError("infinite lattice has no well count")
        return self.num_sites // 2

    def even_bonds(self) -> list[tuple[int, int]]:
        """Intra-well bonds (2j, 2j+1)."""
        return [(i, i + 1) for i in range(0, self.num_sites - 1, 2)]

    def odd_bonds(self) -> list[tuple[int, int]]:
        """Inter-well bonds (2j+1, 2j+2)."""
        return [(i, i + 1) for i in range(1, self.num_sites - 1, 2)]

    def bonds(self, parity: str) -> list[tuple[int, int]]:
        if parity == "even":
            return self.even_bonds()
        if parity == "odd":
            return self.odd_bonds()
        raise ValueError(f"unknown bond parity {parity!r}")


@dataclass(frozen=True)
class ProtocolSpec:
    """One of the three switching protocols applied at t=0.

    For the periodic switch the couplings alternate every t_s between
    (J1, J2) = (0, J) and (J, 0); the swap condition J * t_s = pi * hbar is
    enforced to 1e-12 relative unless ``timing_override`` is set (used for
    timing-noise studies).
    """

    kind: ProtocolKind
    coupling_J: float = 1.0
    switch_time_ts: Optional[float] = None
    num_switches: Optional[int] = None
    total_time: Optional[float] = None
    timing_override: bool = False

    def __post_init__(self):
        if self.kind is ProtocolKind.PERIODIC_SWITCH:
            if self.switch_time_ts is None or self.num_switches is None:
                raise ValueError("periodic switch needs switch_time_ts and num_switches")
            if self.num_switches < 1:
                raise ValueError("periodic switch needs at least one switch interval")
            if self.switch_time_ts <= 0:
                raise ValueError("switch time must be positive")
            if not self.timing_override:
                target = SWITCH_ANGLE / abs(self.coupling_J)
                if abs(self.switch_time_ts - target) > 1e-12 * target:
                    raise ValueError(
                        "periodic switch requires J * t_s = pi (got J*t_s = "
                        f"{abs(self.coupling_J) * self.switch_time_ts:.12g}); "
                        "set timing_override to study deliberate timing noise"
                    )
            implied = self.num_switches * self.switch_time_ts
            if self.total_time is None:
                object.__setattr__(self, "total_time", implied)
            elif abs(self.total_time - implied) > 1e-9 * max(implied, 1.0):
                raise ValueError("total_time must equal num_switches * switch_time_ts")
        else:
            if self.total_time is None:
                raise ValueError(f"{self.kind.value} switch needs total_time")
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")

    @property
    def spin_wave_velocity(self) -> float:
        """v_s = |J| pi / 2 for the homogeneous Heisenberg chain."""
        return abs(self.coupling_J) * math.pi / 2.0


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    J1: float
    J2: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class CouplingSchedule:
    """Piecewise-constant (J1(t), J2(t)) covering [0, total_time] without gaps."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        t = 0.0
        for seg in self.segments:
            if seg.duration <= 0:
                raise ValueError("segments must have positive duration")
            if abs(seg.t_start - t) > 1e-12 * max(1.0, abs(t)):
                raise ValueError("segments must be contiguous from t=0")
            t = seg.t_end

    @property
    def total_time(self) -> float:
        return self.segments[-1].t_end

    def couplings_at(self, t: float) -> tuple[float, float]:
        """(J1, J2) on the segment containing t (right-continuous)."""
        if t < -1e-12 or t > self.total_time + 1e-12:
            raise ValueError(f"t={t} outside schedule support [0, {self.total_time}]")
        for seg in self.segments:
            if t < seg.t_end - 1e-12:
                return seg.J1, seg.J2
        return self.segments[-1].J1, self.segments[-1].J2

    def slice(self, t_from: float, t_to: float) -> list[Segment]:
        """Segments clipped to [t_from, t_to], in order."""
        if t_to < t_from:
            raise ValueError("t_to must be >= t_from")
        out = []
        for seg in self.segments:
            lo = max(seg.t_start, t_from)
            hi = min(seg.t_end, t_to)
            if hi - lo > 1e-14:
                out.append(Segment(lo, hi, seg.J1, seg.J2))
        return out


@dataclass(frozen=True)
class InitialStateSpec:
    """Product-state preparation: triplets or singlets on the intra-well bonds,
    a single flipped spin on a polarized background, or an explicit valence-bond
    matching with per-bond labels ("triplet_z" | "singlet")."""

    kind: StateKind
    flip_site: Optional[int] = None
    bonds: Optional[tuple[tuple[int, int], ...]] = None
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind is StateKind.SINGLE_FLIP and self.flip_site is None:
            raise ValueError("single-flip state needs flip_site")
        if self.kind is StateKind.EXPLICIT_VBS:
            if not self.bonds:
                raise ValueError("explicit VBS needs a bond list")
            bonds = tuple(tuple(sorted(b)) for b in self.bonds)
            object.__setattr__(self, "bonds", bonds)
            if self.labels is None:
                object.__setattr__(self, "labels", ("triplet_z",) * len(bonds))
            if len(self.labels) != len(bonds):
                raise ValueError("need one label per bond")
            for lab in self.labels:
                if lab not in ("triplet_z", "singlet"):
                    raise ValueError(f"unknown bond label {lab!r}")

    def validate_for(self, lattice: LatticeSpec) -> None:
        if self.kind is StateKind.SINGLE_FLIP and not lattice.infinite:
            if not 0 <= self.flip_site < lattice.num_sites:
                raise ValueError("flip site out of range")
        if self.kind is StateKind.EXPLICIT_VBS:
            if lattice.infinite:
                raise ValueError("explicit VBS matchings are finite-chain only")
            seen = [s for b in self.bonds for s in b]
            if sorted(seen) != list(range(lattice.num_sites)):
                raise ValueError("explicit VBS must be a perfect matching of all sites")


def couplings_from_hubbard(t_in: float, t_out: float, U: float) -> tuple[float, float]:
    """Superexchange couplings (J1, J2) = (4 t_in^2 / U, 4 t_out^2 / U).

    Warns when max(t_in, t_out)/U > 0.2, where the second-order strong-coupling
    mapping stops being quantitative.
    """
    if U <= 0:
        raise ValueError("on-site interaction U must be positive")
    if t_in < 0 or t_out < 0:
        raise ValueError("hopping amplitudes must be non-negative")
    if max(t_in, t_out) / U > 0.2:
        warnings.warn(
            "hopping/U exceeds 0.2: the superexchange description is unreliable",
            UserWarning,
            stacklevel=2,
        )
    return 4.0 * t_in**2 / U, 4.0 * t_out**2 / U


def build_schedule(protocol: ProtocolSpec) -> CouplingSchedule:
    """Expand a protocol into explicit (t_start, t_end, J1, J2) segments.

    Single switch:      one segment (0, T, 0, J) -- intra-well coupling off.
    Periodic switch:    alternating t_s segments, starting with (0, J).
    Homogeneous switch: one segment (0, T, J, J).
    """
    J = protocol.coupling_J
    if protocol.kind is ProtocolKind.SINGLE_SWITCH:
        return CouplingSchedule((Segment(0.0, protocol.total_time, 0.0, J),))
    if protocol.kind is ProtocolKind.HOMOGENEOUS_SWITCH:
        return CouplingSchedule((Segment(0.0, protocol.total_time, J, J),))
    ts = protocol.switch_time_ts
    segs = []
    for k in range(protocol.num_switches):
        if k % 2 == 0:
            segs.append(Segment(k * ts, (k + 1) * ts, 0.0, J))
        else:
            segs.append(Segment(k * ts, (k + 1) * ts, J, 0.0))
    return CouplingSchedule(tuple(segs))


def noisy_periodic_schedule(
    J: float, durations: Sequence[float]
) -> CouplingSchedule:
    """Periodic-switch schedule with explicit per-interval durations (timing noise)."""
    segs = []
    t = 0.0
    for k, dur in enumerate(durations):
        if dur <= 0:
            raise ValueError("interval durations must be positive")
        J1, J2 = (0.0, J) if k % 2 == 0 else (J, 0.0)
        segs.append(Segment(t, t + dur, J1, J2))
        t += dur
    return CouplingSchedule(tuple(segs))
