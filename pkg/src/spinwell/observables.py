"""Engine-agnostic measurement layer.

Every engine exposes the same small query surface (two-site RDMs, bond/block
entropies, pair correlators, an ``is_infinite`` flag); the functions here turn
those queries into the named observable channels: bond populations, the
noise-correlation structure factor, transverse real-space correlators, block
entropies, quasistationary window averages and light-cone front detection.

Conventions: two-site RDMs are 4x4 in the basis (uu, ud, du, dd) for sites
(i, j). Finite-chain sums are normalized per contributing bond/pair so values
are comparable across system sizes; infinite-chain structure factors are
reported in the size-independent form N*Delta(q).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_SQ2 = np.sqrt(2.0)

# bond eigenstates in the (uu, ud, du, dd) basis
BOND_STATES = {
    "tx": np.array([1, 0, 0, -1], dtype=np.complex128) / _SQ2,
    "ty": np.array([1, 0, 0, 1], dtype=np.complex128) * (1j / _SQ2),
    "tz": np.array([0, 1, 1, 0], dtype=np.complex128) / _SQ2,
    "s": np.array([0, 1, -1, 0], dtype=np.complex128) / _SQ2,
}

POPULATION_KEYS = ("tx", "ty", "tz", "s")


def rdm_populations(rho: np.ndarray) -> dict[str, float]:
    """Triplet/singlet projector expectations of a two-site RDM."""
    return {
        key: float(np.real(np.conj(vec) @ rho @ vec)) for key, vec in BOND_STATES.items()
    }


def check_rdm(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Validate Hermiticity, positivity and unit trace of a 4x4 RDM."""
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("RDM is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("RDM trace differs from 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
        raise ValueError("RDM has a negative eigenvalue")


@dataclass
class ObservableSeries:
    """Time-stamped named measurement channels (times in units of hbar/J)."""

    times: np.ndarray
    channels: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name, vals in self.channels.items():
            vals = np.asarray(vals)
            if len(vals) != len(self.times):
                raise ValueError(f"channel {name!r} length does not match times")
            self.channels[name] = vals

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise KeyError(f"series has no channel {name!r}")
        return self.channels[name]


class SeriesRecorder:
    """Accumulates per-time measurement rows and finalizes an ObservableSeries."""

    def __init__(self, metadata: Optional[dict] = None):
        self._times: list[float] = []
        self._rows: list[dict[str, float]] = []
        self.metadata = dict(metadata or {})

    def record(self, t: float, values: dict[str, float]) -> None:
        self._times.append(float(t))
        self._rows.append(dict(values))

    def finalize(self) -> ObservableSeries:
        names: list[str] = []
        for row in self._rows:
            for key in row:
                if key not in names:
                    names.append(key)
        channels = {
            name: np.array([row.get(name, np.nan) for row in self._rows]) for name in names
        }
        return ObservableSeries(np.array(self._times), channels, self.metadata)


# ---------------------------------------------------------------------------
# bond-local populations


def bond_populations(state, parity: str) -> dict[str, float]:
    """Average triplet/singlet populations over all bonds of one parity.

    The four channels sum to 1 (two-site completeness) up to numerical error.
    """
    if getattr(state, "is_infinite", False):
        rho = state.bond_rdm(parity)
        return rdm_populations(rho)
    bonds = state.lattice.bonds(parity)
    acc = {key: 0.0 for key in POPULATION_KEYS}
    for (i, j) in bonds:
        pops = rdm_populations(state.two_site_rdm(i, j))
        for key in POPULATION_KEYS:
            acc[key] += pops[key]
    return {key: val / len(bonds) for key, val in acc.items()}


def population_channels(state) -> dict[str, float]:
    out = {}
    for parity in ("even", "odd"):
        pops = bond_populations(state, parity)
        for key in POPULATION_KEYS:
            out[f"pop_{parity}_{key}"] = pops[key]
    return out


# ---------------------------------------------------------------------------
# noise-correlation structure factor


@dataclass
class NoiseSpectrum:
    q_values: np.ndarray
    delta: np.ndarray
    G: Optional[np.ndarray] = None
    scaled_by_N: bool = False


def default_q_grid(num_sites: int, spacing: float = 1.0) -> np.ndarray:
    """q_k = 2 pi k / (2N a), k = 0 .. 2N-1."""
    return 2.0 * np.pi * np.arange(num_sites) / (num_sites * spacing)


def noise_correlations(state, q_grid: Optional[Sequence[float]] = None, l_max: int = 30):
    """Momentum-space density correlations.

    Finite chains: the exact double sum
    G(q) = (1/(2 N^2)) sum_{i != j} e^{i q a (i-j)} (1/4 + <S_i . S_j>),
    Delta(q) = G(q) - delta_{q,0}/2. Note the exact sum sits an O(1/N)
    offset below the closed-form (1/(4N))(1 + cos(q a l)) oscillation of
    uniform bond states, because the latter counts the i = j shot-noise terms.

    Infinite chains: the size-independent form
    N*Delta(q) = -1/4 + 2 sum_{l>=1} cos(q a l) C(l) with C(l) the unit-cell
    averaged correlator, truncated at l_max.
    """
    if getattr(state, "is_infinite", False):
        a = state.lattice.spacing_a
        if q_grid is None:
            q_grid = np.linspace(0.0, 2.0 * np.pi / a, 128, endpoint=False)
        q = np.asarray(q_grid, dtype=np.float64)
        ndelta = np.full(len(q), -0.25)
        for l in range(1, l_max + 1):
            corr = state.pair_spin_dot(l)
            ndelta += 2.0 * np.cos(q * a * l) * corr
        return NoiseSpectrum(q, ndelta, G=None, scaled_by_N=True)

    n_sites = state.num_sites
    n_wells = n_sites // 2
    a = state.lattice.spacing_a
    if q_grid is None:
        q_grid = default_q_grid(n_sites, a)
    q = np.asarray(q_grid, dtype=np.float64)
    f = np.exp(1j * np.outer(q, a * np.arange(n_sites))).sum(axis=1)
    total = (np.abs(f) ** 2 - n_sites) / 4.0
    for i in range(n_sites):
        for j in range(i + 1, n_sites):
            corr = state.spin_dot(i, j)
            total = total + 2.0 * np.cos(q * a * (i - j)) * corr
    g = total / (2.0 * n_wells**2)
    delta = np.where(np.abs(q) < 1e-12, g - 0.5, g)
    return NoiseSpectrum(q, delta, G=g, scaled_by_N=False)


# ---------------------------------------------------------------------------
# transverse real-space correlators


def transverse_correlations(state, l_max: int) -> dict[str, np.ndarray]:
    """Distance-resolved G+-(l) and staggered Q+-(l).

    Pairs (i, i+l) are grouped by the parity of the starting site i and each
    class is averaged per pair; G is the mean of the two class averages and Q
    their half-difference (the (-1)^i staggering with i the smaller site of
    the pair). This matches the two-offset unit-cell average of the infinite
    chain, so finite and infinite values are directly comparable. Only the
    magnitude of Q is meaningful for symmetry-restoration checks.
    """
    ls = np.arange(1, l_max + 1)
    gpm = np.zeros(l_max)
    qpm = np.zeros(l_max)
    if getattr(state, "is_infinite", False):
        for idx, l in enumerate(ls):
            vals = [np.real(state.pair_splus_sminus(s, l)) for s in (0, 1)]
            gpm[idx] = 0.5 * (vals[0] + vals[1])
            qpm[idx] = 0.5 * (vals[0] - vals[1])
        return {"l": ls, "gpm": gpm, "qpm": qpm}
    n = state.num_sites
    if l_max > n - 2:
        raise ValueError("l_max exceeds the available pair range")
    if hasattr(state, "splus_sminus_row"):
        rows = {
            i: np.real(state.splus_sminus_row(i, min(l_max, n - 1 - i)))
            for i in range(n - 1)
        }

        def corr(i, l):
            return rows[i][l - 1]

    else:

        def corr(i, l):
            return float(np.real(state.splus_sminus(i, i + l)))

    for idx, l in enumerate(ls):
        even = np.array([corr(i, l) for i in range(0, n - l, 2)])
        odd = np.array([corr(i, l) for i in range(1, n - l, 2)])
        gpm[idx] = 0.5 * (even.mean() + odd.mean())
        qpm[idx] = 0.5 * (even.mean() - odd.mean())
    return {"l": ls, "gpm": gpm, "qpm": qpm}


# ---------------------------------------------------------------------------
# entropies


def entropy_channels(state, block_sizes: Sequence[int] = ()) -> dict[str, float]:
    """Edge-block entropies for finite chains; unit-cell bond entropies for
    infinite ones."""
    if getattr(state, "is_infinite", False):
        s_even, s_odd = state.unit_cell_entropies()
        return {"S_even_inf": s_even, "S_odd_inf": s_odd}
    return {f"S_block_{l}": state.block_entropy(l) for l in block_sizes}


def delta_block_entropy(
    finite: ObservableSeries, infinite: ObservableSeries, block_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Delta S_l(t) = S_inf(t) - S_l(t) on the common time grid.

    The infinite-chain reference has the parity of the cut at the block edge:
    a block of l sites ends at bond (l-1, l), which is intra-well (even) for
    odd l and inter-well (odd) for even l.
    """
    ref_name = "S_even_inf" if block_len % 2 == 1 else "S_odd_inf"
    s_inf = infinite.channel(ref_name)
    s_l = finite.channel(f"S_block_{block_len}")
    common, ia, ib = np.intersect1d(
        np.round(finite.times, 9), np.round(infinite.times, 9), return_indices=True
    )
    if len(common) == 0:
        raise ValueError("series share no sample times")
    return common, s_inf[ib] - s_l[ia]


def crossover_time(times: np.ndarray, delta_s: np.ndarray, threshold: float = 0.02) -> float:
    """First time the finite-block entropy deficit exceeds the threshold (bits).

    The default departure threshold sits an order of magnitude above the
    cross-engine numerical floor and an order below the saturated deficit, so
    it detects where the block stops tracking the bulk entropy growth.
    """
    above = np.nonzero(delta_s > threshold)[0]
    if len(above) == 0:
        raise ValueError("entropy deficit never exceeds the threshold")
    k = above[0]
    if k == 0:
        return float(times[0])
    # linear interpolation between the bracketing samples
    t0, t1 = times[k - 1], times[k]
    d0, d1 = delta_s[k - 1], delta_s[k]
    return float(t0 + (threshold - d0) * (t1 - t0) / (d1 - d0))


# ---------------------------------------------------------------------------
# time-series analysis


def quasistationary_average(
    series: ObservableSeries, channel: str, t_relax: float, t_rec: float
) -> float:
    """Trapezoidal time average of a channel over [t_relax, t_rec]."""
    if t_relax >= t_rec:
        raise ValueError("t_relax must be below t_rec")
    t = series.times
    if t_relax < t[0] - 1e-9 or t_rec > t[-1] + 1e-9:
        raise ValueError("averaging window outside the recorded series")
    y = series.channel(channel)
    grid = t[(t > t_relax) & (t < t_rec)]
    grid = np.concatenate(([t_relax], grid, [t_rec]))
    vals = np.interp(grid, t, y)
    return float(np.trapezoid(vals, grid) / (t_rec - t_relax))


def horizon_front(
    times: np.ndarray,
    distances: np.ndarray,
    gpm: np.ndarray,
    epsilon: float = 1e-4,
) -> tuple[np.ndarray, float]:
    """Front distance l*(t) and a fitted front speed from G+-(l, t).

    l*(t) is the largest l whose changes relative to the t=0 baseline exceed
    epsilon contiguously from the smallest distance. The speed is the
    least-squares slope of l*(t) over the window where the front is growing
    (0 < l* < max distance).
    """
    times = np.asarray(times)
    distances = np.asarray(distances)
    gpm = np.asarray(gpm)
    if gpm.shape != (len(times), len(distances)):
        raise ValueError("gpm must have shape (num_times, num_distances)")
    if abs(times[0]) > 1e-12:
        raise ValueError("series must include the t=0 baseline")
    diff = np.abs(gpm - gpm[0])
    front = np.zeros(len(times))
    for k in range(len(times)):
        above = diff[k] > epsilon
        stop = np.argmin(above) if not above.all() else len(distances)
        front[k] = distances[stop - 1] if stop > 0 else 0.0
    moving = (front > 0) & (front < distances[-1])
    if np.count_nonzero(moving) < 2:
        return front, 0.0
    t_fit = times[moving]
    l_fit = front[moving]
    slope = float(np.polyfit(t_fit, l_fit, 1)[0])
    return front, slope
