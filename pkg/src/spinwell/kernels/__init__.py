"""Hot-loop kernel selection: compiled Cython extension when available, pure
numpy otherwise. Set SPINWELL_PURE_PYTHON=1 to force the fallback (used by the
benchmark and the kernel-equivalence tests)."""

import os

if os.environ.get("SPINWELL_PURE_PYTHON", "") not in ("", "0"):
    from . import _heisenberg_py as _impl
else:
    try:
        from . import _heisenberg as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _heisenberg_py as _impl

apply_bond_terms = _impl.apply_bond_terms
IMPLEMENTATION = _impl.IMPLEMENTATION


def available_implementations():
    """Names of kernel implementations importable in this environment."""
    names = ["python"]
    try:
        from . import _heisenberg  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_implementation(name: str):
    """Fetch a specific kernel module ("cython" or "python")."""
    if name == "python":
        from . import _heisenberg_py
        return _heisenberg_py
    if name == "cython":
        from . import _heisenberg
        return _heisenberg
    raise ValueError(f"unknown kernel implementation {name!r}")
