"""Hot-kernel backend selection: compiled extension if available, numpy twin
otherwise. ``BACKEND`` names the active implementation; both satisfy the same
contract and agree bitwise (see tests/test_kernels.py and
benchmarks/bench_kernels.py)."""

from . import _numpy

try:
    from . import _fvcore

    hll_fluxes = _fvcore.hll_fluxes
    BACKEND = "cython"
except ImportError:      # pragma: no cover - depends on the build environment
    hll_fluxes = _numpy.hll_fluxes
    BACKEND = "numpy"

hll_fluxes_numpy = _numpy.hll_fluxes

__all__ = ["hll_fluxes", "hll_fluxes_numpy", "BACKEND"]
