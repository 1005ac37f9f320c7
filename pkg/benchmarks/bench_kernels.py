#!/usr/bin/env python3
"""Benchmark the Heisenberg bond kernel: compiled extension vs numpy fallback.

The kernel is the inner loop of Krylov propagation (one H|v> per Lanczos
vector), so its throughput sets the wall time of the large exact-engine runs.

Usage: python benchmarks/bench_kernels.py [--sites 12 16 20 22] [--repeats 5]
"""

import argparse
import time

import numpy as np

from spinwell import ed
from spinwell.kernels import available_implementations, get_implementation
from spinwell.model import LatticeSpec


def bench(num_sites: int, repeats: int):
    lattice = LatticeSpec(num_sites=num_sites)
    basis = ed.get_basis(num_sites, num_sites // 2)
    rng = np.random.default_rng(1)
    v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    v /= np.linalg.norm(v)
    sites, coeffs = ed.bond_coefficients(lattice, 1.0, 1.0)
    results = {}
    for name in available_implementations():
        impl = get_implementation(name)
        out = np.zeros_like(v)
        impl.apply_bond_terms(basis.states, basis.index, sites, coeffs, v, out)  # warm up
        best = np.inf
        for _ in range(repeats):
            out[:] = 0
            t0 = time.perf_counter()
            impl.apply_bond_terms(basis.states, basis.index, sites, coeffs, v, out)
            best = min(best, time.perf_counter() - t0)
        results[name] = best
    return basis.dim, results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sites", type=int, nargs="+", default=[12, 16, 20, 22])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = available_implementations()
    print(f"kernels available: {', '.join(names)}")
    header = f"{'2N':>4} {'dim':>10} " + " ".join(f"{n:>12}" for n in names)
    if len(names) > 1:
        header += f" {'speedup':>9}"
    print(header)
    for n in args.sites:
        dim, results = bench(n, args.repeats)
        row = f"{n:>4} {dim:>10} " + " ".join(f"{results[k]*1e3:>10.1f}ms" for k in names)
        if len(names) > 1:
            row += f" {results['python'] / results['cython']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
